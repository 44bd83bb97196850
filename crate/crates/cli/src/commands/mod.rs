mod a2p;
mod fit;
mod render;
mod stability;
mod synth;

use std::path::{Path, PathBuf};

use anyhow::Result;
use headsplat::codecs::{head, obj};
use headsplat::head_model::HeadRig;
use serde_json::Value;

use crate::args::{Cli, Command};
use crate::Usage;

/// Run one subcommand; the returned JSON summary goes to stdout.
pub fn dispatch(cli: Cli) -> Result<Value> {
    match cli.command {
        Command::Synth(a) => synth::run(a, cli.seed),
        Command::Fit(a) => fit::run(a, cli.seed),
        Command::Render(a) => render::run(a),
        Command::TrainA2p(a) => a2p::train(a, cli.seed),
        Command::Animate(a) => a2p::animate(a),
        Command::Stability(a) => stability::run(a),
    }
}

pub fn load_rig(template: &Path, basis: &Path) -> Result<HeadRig> {
    Ok(HeadRig::new(obj::read_template(template)?, head::read_basis(basis)?)?)
}

/// `r,g,b` in [0, 1]; black when absent.
pub fn parse_background(flag: &str, value: Option<&str>) -> Result<[f64; 3]> {
    let Some(s) = value else { return Ok([0.0; 3]) };
    let parts: Vec<f64> = s.split(',').map(|p| p.trim().parse::<f64>()).collect::<Result<_, _>>().map_err(|_| bad_background(flag, s))?;
    match parts[..] {
        [r, g, b] if parts.iter().all(|c| (0.0..=1.0).contains(c)) => Ok([r, g, b]),
        _ => Err(bad_background(flag, s)),
    }
}

fn bad_background(flag: &str, s: &str) -> anyhow::Error {
    Usage::flag(flag, format!("{flag} expects r,g,b in [0, 1], got {s:?}")).into()
}

/// `<path>` with `suffix` appended to its file stem, e.g. `avatar.ply` to `avatar.loss.csv`.
pub fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}{suffix}"))
}

pub fn create_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    Ok(())
}

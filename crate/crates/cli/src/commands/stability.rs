use std::path::Path;

use anyhow::Result;
use headsplat::codecs::{trajectory, write_json};
use headsplat::stability::{stability_score, track_centroid, KeypointTrajectory, Roi, StabilityConfig};
use serde_json::{json, Value};

use super::create_parent;
use crate::args::StabilityArgs;
use crate::frames;
use crate::Usage;

fn parse_roi(s: &str) -> Result<Roi> {
    let v: Vec<usize> = s
        .split(',')
        .map(|p| p.trim().parse::<usize>())
        .collect::<Result<_, _>>()
        .map_err(|_| Usage::flag("--roi", format!("--roi expects x,y,width,height, got {s:?}")))?;
    match v[..] {
        [x, y, width, height] => Ok(Roi { x, y, width, height }),
        _ => Err(Usage::flag("--roi", format!("--roi expects four values, got {s:?}")).into()),
    }
}

fn track_dir(dir: &Path, roi: Roi, fps: Option<f64>) -> Result<KeypointTrajectory> {
    let loaded = frames::load(dir)?;
    let fps = fps
        .or(loaded.fps)
        .ok_or_else(|| Usage::flag("--fps", format!("{} has no frame rate; pass --fps", dir.display())))?;
    let images: Vec<_> = loaded.frames.into_iter().map(|f| f.image).collect();
    Ok(track_centroid(&images, roi, fps)?)
}

pub fn run(a: StabilityArgs) -> Result<Value> {
    if a.gt.is_none() && a.gt_frames.is_none() && !a.no_gt {
        return Err(Usage::flag("--gt", "give --gt, --gt-frames or --no-gt").into());
    }
    let roi = a.roi.as_deref().map(parse_roi).transpose()?;
    let load = |csv: &Option<std::path::PathBuf>, dir: &Option<std::path::PathBuf>| -> Result<Option<KeypointTrajectory>> {
        match (csv, dir, roi) {
            (Some(p), _, _) => Ok(Some(trajectory::read_trajectory(p)?)),
            (None, Some(d), Some(r)) => Ok(Some(track_dir(d, r, a.fps)?)),
            _ => Ok(None),
        }
    };
    let gen = load(&a.gen, &a.gen_frames)?.ok_or_else(|| Usage::flag("--gen", "no generated trajectory"))?;
    let gt = load(&a.gt, &a.gt_frames)?;
    let config = StabilityConfig {
        cutoff_fraction: a.cutoff,
        detrend: !a.no_detrend,
    };
    let report = stability_score(&gen, gt.as_ref(), &config)?;
    if let Some(dir) = &a.trajectories_out {
        std::fs::create_dir_all(dir)?;
        trajectory::write_trajectory(&gen, dir.join("gen.csv"))?;
        if let Some(gt) = &gt {
            trajectory::write_trajectory(gt, dir.join("gt.csv"))?;
        }
    }
    create_parent(&a.out)?;
    write_json(&report, &a.out)?;
    Ok(json!({ "report": a.out, "score": report.score, "reference": report.reference }))
}

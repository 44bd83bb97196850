use anyhow::{Context, Result};
use headsplat::binding::initialize_binding;
use headsplat::codecs::{avatar, head, read_json};
use headsplat::fitter::{self, FitConfig, TrainingFrame};
use serde_json::{json, Value};

use super::{create_parent, load_rig, parse_background, sibling};
use crate::args::FitArgs;
use crate::frames;
use crate::Usage;

fn build_config(a: &FitArgs, seed: u64) -> Result<FitConfig> {
    let mut cfg: FitConfig = match &a.fit_config {
        Some(p) => read_json(p)?,
        None => FitConfig::default(),
    };
    cfg.seed = seed;
    if let Some(v) = a.iterations {
        cfg.iterations = v;
    }
    if let Some(v) = a.lambda_l1 {
        cfg.lambda_l1 = v;
    }
    if let Some(v) = a.lambda_ssim {
        cfg.lambda_ssim = v;
    }
    if let Some(s) = a.lr_scale {
        if !(s.is_finite() && s > 0.0) {
            return Err(Usage::flag("--lr-scale", "--lr-scale must be positive").into());
        }
        let lr = &mut cfg.learning_rates;
        for v in [
            &mut lr.position,
            &mut lr.scale,
            &mut lr.rotation,
            &mut lr.opacity,
            &mut lr.sh,
            &mut lr.translation,
            &mut lr.pose,
            &mut lr.jaw,
            &mut lr.expression,
        ] {
            *v *= s;
        }
    }
    if a.no_head_param_opt {
        cfg.optimize_head_params = false;
    }
    if a.no_densify {
        cfg.densify.enabled = false;
    }
    if let Some(v) = a.densify_interval {
        cfg.densify.interval = v;
    }
    if let Some(v) = a.densify_start {
        cfg.densify.start = v;
    }
    if let Some(v) = a.densify_stop {
        cfg.densify.stop = v;
    }
    if let Some(v) = a.head_fd_step {
        cfg.head_fd_step = v;
    }
    if a.background.is_some() {
        cfg.background = parse_background("--background", a.background.as_deref())?;
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn run(a: FitArgs, seed: u64) -> Result<Value> {
    let cfg = build_config(&a, seed)?;
    let rig = load_rig(&a.template, &a.basis)?;
    let dir = frames::load(&a.frames)?;
    let params = dir
        .params
        .ok_or_else(|| Usage::flag("--frames", "frame manifest names no head-parameter file"))?;
    let training = dir
        .frames
        .into_iter()
        .enumerate()
        .map(|(i, f)| {
            let camera = f
                .camera
                .ok_or_else(|| Usage::flag("--frames", format!("frame {i} has no camera")))?;
            Ok(TrainingFrame {
                target: f.image,
                camera,
                params: params[f.params_index].clone(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let neutral = rig.pose(&rig.neutral_params())?;
    let init = match &a.init {
        Some(p) => avatar::read_avatar(p)?,
        None => initialize_binding(&neutral, a.sh_degree)?,
    };

    let result = fitter::fit(&training, &rig, &init, &cfg)?;

    create_parent(&a.out)?;
    avatar::write_avatar(&result.scene, &neutral, &a.out)?;
    let loss_path = a.loss_csv.clone().unwrap_or_else(|| sibling(&a.out, ".loss.csv"));
    let mut csv = String::from("iteration,l1,ssim,total\n");
    for r in &result.loss_curve {
        csv.push_str(&format!("{},{:e},{:e},{:e}\n", r.iteration, r.l1, r.ssim, r.total));
    }
    create_parent(&loss_path)?;
    std::fs::write(&loss_path, csv).with_context(|| format!("writing {}", loss_path.display()))?;
    let params_path = a.params_out.clone().unwrap_or_else(|| sibling(&a.out, ".params.bin"));
    create_parent(&params_path)?;
    head::write_params(&result.params, &params_path)?;

    let first = result.loss_curve.first().map(|r| r.total);
    let last = result.loss_curve.last().map(|r| r.total);
    Ok(json!({
        "avatar": a.out,
        "loss_csv": loss_path,
        "params": params_path,
        "gaussians": result.scene.len(),
        "initial_loss": first,
        "final_loss": last,
        "rejected_steps": result.rejected_steps,
        "optimize_head_params": cfg.optimize_head_params,
    }))
}

use anyhow::Result;
use headsplat::audio2param::synthetic_features;
use headsplat::codecs::{audio, avatar, camera, head, obj, trajectory, write_json};
use headsplat::fitter::render_avatar;
use headsplat::head_model::{synthetic_head, SyntheticHeadConfig};
use headsplat::rasterizer::Renderer;
use headsplat::stability::track_centroid;
use headsplat::synth::{self, IdentityConfig};
use serde_json::{json, Value};

use crate::args::{SynthArgs, SynthCase};
use crate::frames;
use crate::Usage;

/// Half-size of the tracking window around the projected nose.
const NOSE_HALF: usize = 6;

pub fn run(a: SynthArgs, seed: u64) -> Result<Value> {
    if a.frames == 0 || a.width == 0 || a.height == 0 {
        return Err(Usage::new("--frames, --width and --height must be positive").into());
    }
    if !(a.fps.is_finite() && a.fps > 0.0) {
        return Err(Usage::flag("--fps", "--fps must be positive").into());
    }
    std::fs::create_dir_all(&a.out)?;
    match a.case {
        SynthCase::Identity => identity(&a, seed),
        SynthCase::Multiview => multiview(&a, seed),
        SynthCase::Wobble => wobble(&a, seed),
        SynthCase::Features => {
            let (f, _) = synthetic_features(a.frames, a.audio_dim, a.fps, seed)?;
            let path = a.out.join("features.bin");
            audio::write_features(&f, &path)?;
            Ok(json!({ "case": "features", "features": path }))
        }
    }
}

fn identity(a: &SynthArgs, seed: u64) -> Result<Value> {
    let d = IdentityConfig::default();
    let cfg = IdentityConfig {
        frames: a.frames,
        fps: a.fps,
        width: a.width,
        height: a.height,
        audio_dim: a.audio_dim,
        extra_gaussians: a.extra_gaussians.unwrap_or(d.extra_gaussians),
        seed,
        ..d
    };
    let id = synth::synthetic_identity(&cfg)?;
    let out = &a.out;
    obj::write_template(&id.rig.template, out.join("template.obj"))?;
    head::write_basis(&id.rig.basis, out.join("basis.bin"))?;
    head::write_params(&id.gt_params, out.join("gt_params.bin"))?;
    head::write_params(&id.tracked_params, out.join("tracked_params.bin"))?;
    audio::write_features(&id.audio, out.join("audio.bin"))?;
    camera::write_camera(&id.camera, out.join("camera.json"))?;
    avatar::write_avatar(&id.avatar, &id.rig.pose(&id.rig.neutral_params())?, out.join("gt_avatar.ply"))?;
    // the fitter sees the mis-tracked parameters, as a tracker would deliver them
    frames::save(&out.join("frames"), &id.frames, Some(&id.tracked_params), std::slice::from_ref(&id.camera), Some(cfg.fps))?;
    let roi = synth::nose_roi(&id.rig, &id.gt_params, &id.camera, NOSE_HALF)?;
    let nose = track_centroid(&id.frames, roi, cfg.fps)?;
    trajectory::write_trajectory(&nose, out.join("nose_gt.csv"))?;
    let bundle = json!({
        "frames": cfg.frames,
        "fps": cfg.fps,
        "width": cfg.width,
        "height": cfg.height,
        "gaussians": id.avatar.len(),
        "nose_roi": [roi.x, roi.y, roi.width, roi.height],
        "background": id.background,
    });
    write_json(&bundle, out.join("bundle.json"))?;
    Ok(json!({ "case": "identity", "out": out, "bundle": bundle }))
}

fn multiview(a: &SynthArgs, seed: u64) -> Result<Value> {
    if a.views == 0 {
        return Err(Usage::flag("--views", "--views must be positive").into());
    }
    let rig = synthetic_head(&SyntheticHeadConfig {
        rings: 2,
        segments: 6,
        seed,
        ..Default::default()
    })?;
    let gt = synth::gt_avatar(&rig, a.extra_gaussians.unwrap_or(8), 1, seed.wrapping_add(1))?;
    let init = synth::perturb_avatar(&gt, a.perturb, seed.wrapping_add(2))?;
    let cams = synth::orbit_cameras(a.views, a.width, a.height, 0.5, 1.6);
    let neutral = rig.neutral_params();
    let renderer = Renderer::default();
    let images = cams
        .iter()
        .map(|c| render_avatar(&renderer, &gt, &rig, &neutral, c, [0.0; 3]))
        .collect::<headsplat::Result<Vec<_>>>()?;
    let out = &a.out;
    let mesh = rig.pose(&neutral)?;
    obj::write_template(&rig.template, out.join("template.obj"))?;
    head::write_basis(&rig.basis, out.join("basis.bin"))?;
    avatar::write_avatar(&gt, &mesh, out.join("gt_avatar.ply"))?;
    avatar::write_avatar(&init, &mesh, out.join("init_avatar.ply"))?;
    let params = vec![neutral; cams.len()];
    frames::save(&out.join("frames"), &images, Some(&params), &cams, None)?;
    Ok(json!({ "case": "multiview", "out": out, "views": cams.len(), "gaussians": gt.len() }))
}

fn wobble(a: &SynthArgs, seed: u64) -> Result<Value> {
    if !(a.amplitude.is_finite() && a.amplitude >= 0.0) {
        return Err(Usage::flag("--amplitude", "--amplitude must be non-negative").into());
    }
    if a.keypoints == 0 {
        return Err(Usage::flag("--keypoints", "--keypoints must be positive").into());
    }
    let (gen, gt) = synth::wobble_pair(a.amplitude, a.frames, a.keypoints, a.fps, seed)?;
    trajectory::write_trajectory(&gen, a.out.join("gen.csv"))?;
    trajectory::write_trajectory(&gt, a.out.join("gt.csv"))?;
    Ok(json!({ "case": "wobble", "out": a.out, "amplitude": a.amplitude }))
}

use anyhow::{Context, Result};
use headsplat::audio2param::{self, A2PConfig, A2PSample, A2PWeights, TrainConfig};
use headsplat::codecs::{audio, avatar, camera, head, obj};
use headsplat::head_model::{compute_template, Mesh};
use serde_json::{json, Value};

use super::{create_parent, load_rig, parse_background, sibling};
use crate::args::{AnimateArgs, TrainA2pArgs};
use crate::frames;
use crate::Usage;

pub fn train(a: TrainA2pArgs, seed: u64) -> Result<Value> {
    let n = a.features.len();
    if a.gt_params.len() != n {
        return Err(Usage::flag("--gt-params", format!("{n} --features files but {} --gt-params files", a.gt_params.len())).into());
    }
    if a.template.len() != 1 && a.template.len() != n {
        return Err(Usage::flag("--template", format!("give one --template or one per sequence ({n})")).into());
    }
    let basis = head::read_basis(&a.basis)?;
    let templates = a
        .template
        .iter()
        .map(|p| obj::read_template(p).map_err(anyhow::Error::from))
        .collect::<Result<Vec<_>>>()?;
    for t in &templates {
        basis.validate(t)?;
    }
    let mut dataset = Vec::with_capacity(n);
    for (i, (f, g)) in a.features.iter().zip(&a.gt_params).enumerate() {
        dataset.push(A2PSample {
            audio: audio::read_features(f)?,
            gt_params: head::read_params(g)?,
            template: templates[i % templates.len()].clone(),
        });
    }
    let mean_head = match &a.mean_head {
        Some(p) => obj::read_template(p)?,
        None => {
            let meshes: Vec<Mesh> = templates
                .iter()
                .map(|t| Mesh {
                    vertices: t.vertices.clone(),
                    triangles: t.triangles.clone(),
                })
                .collect();
            compute_template(&meshes)?
        }
    };
    let config = A2PConfig {
        audio_dim: dataset[0].audio.dim(),
        model_dim: a.model_dim,
        layers: a.layers,
        heads: a.heads,
        period: a.period,
        ff_dim: a.ff_dim.unwrap_or(2 * a.model_dim),
        style_hidden: a.style_hidden,
        expression_dim: basis.expression_dim,
        num_vertices: mean_head.num_vertices(),
    };
    let init = A2PWeights::init(config, &mean_head, seed)?;
    let result = audio2param::train(
        init,
        &dataset,
        &basis,
        &TrainConfig {
            steps: a.steps,
            learning_rate: a.lr,
        },
    )?;

    create_parent(&a.out)?;
    audio::write_weights(&result.weights, &a.out)?;
    let loss_path = a.loss_csv.clone().unwrap_or_else(|| sibling(&a.out, ".loss.csv"));
    let mut csv = String::from("step,loss\n");
    for (i, l) in result.loss_curve.iter().enumerate() {
        csv.push_str(&format!("{i},{l:e}\n"));
    }
    create_parent(&loss_path)?;
    std::fs::write(&loss_path, csv).with_context(|| format!("writing {}", loss_path.display()))?;
    Ok(json!({
        "weights": a.out,
        "loss_csv": loss_path,
        "parameters": result.weights.num_parameters(),
        "steps": result.weights.steps_trained,
        "initial_loss": result.loss_curve.first(),
        "final_loss": result.loss_curve.last(),
    }))
}

pub fn animate(a: AnimateArgs) -> Result<Value> {
    let rig = load_rig(&a.template, &a.basis)?;
    let weights = audio::read_weights(&a.weights)?;
    let scene = avatar::read_avatar(&a.avatar)?;
    let features = audio::read_features(&a.audio_features)?;
    let reference = head::read_params(&a.ref_motion)?;
    let cam = camera::read_camera(&a.camera)?;
    let background = parse_background("--background", a.background.as_deref())?;
    let (params, images) = audio2param::animate(&features, &rig, &weights, &scene, &reference, std::slice::from_ref(&cam), background, a.lip_only)?;
    let manifest = frames::save(&a.out, &images, Some(&params), std::slice::from_ref(&cam), Some(features.frame_rate))?;
    Ok(json!({ "out": a.out, "manifest": manifest, "frames": images.len(), "lip_only": a.lip_only }))
}

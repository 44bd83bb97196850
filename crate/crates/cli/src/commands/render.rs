use anyhow::Result;
use headsplat::codecs::{avatar, camera, head, image_io, ply};
use headsplat::fitter::render_avatar;
use headsplat::rasterizer::Renderer;
use serde_json::{json, Value};

use super::{create_parent, load_rig, parse_background};
use crate::args::RenderArgs;
use crate::Usage;

pub fn run(a: RenderArgs) -> Result<Value> {
    let cam = camera::read_camera(&a.camera)?;
    let background = parse_background("--background", a.background.as_deref())?;
    let renderer = Renderer::default();
    let (image, gaussians) = match (&a.template, &a.basis) {
        (Some(t), Some(b)) => {
            let rig = load_rig(t, b)?;
            let scene = avatar::read_avatar(&a.avatar)?;
            let params = match &a.params {
                Some(p) => {
                    let seq = head::read_params(p)?;
                    seq.get(a.frame)
                        .cloned()
                        .ok_or_else(|| Usage::flag("--frame", format!("--frame {} but the sequence has {} rows", a.frame, seq.len())))?
                }
                None => rig.neutral_params(),
            };
            (render_avatar(&renderer, &scene, &rig, &params, &cam, background)?, scene.len())
        }
        _ => {
            let scene = ply::read_scene(&a.avatar)?;
            (renderer.render(&scene.gaussians, &cam, background)?, scene.gaussians.len())
        }
    };
    create_parent(&a.out)?;
    image_io::write_image(&image, &a.out)?;
    Ok(json!({ "out": a.out, "width": image.width, "height": image.height, "gaussians": gaussians }))
}

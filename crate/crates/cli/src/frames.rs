//! Frame directories: PNG images plus a `manifest.json` naming, for each frame,
//! its image, its camera file and the row of the directory's head-parameter
//! file it was captured under. Paths are relative to the directory.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use headsplat::codecs::{camera, head, image_io, read_json, write_json};
use headsplat::head_model::HeadParams;
use headsplat::rasterizer::{Camera, Image};
use serde::{Deserialize, Serialize};

use crate::Usage;

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fps: Option<f64>,
    /// Head-parameter sequence file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub params: Option<String>,
    pub frames: Vec<FrameEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameEntry {
    pub image: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub camera: Option<String>,
    /// Defaults to the frame's position in the list.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub params_index: Option<usize>,
}

pub struct LoadedFrame {
    pub image: Image,
    pub camera: Option<Camera>,
    pub params_index: usize,
}

pub struct FrameDir {
    pub fps: Option<f64>,
    pub params: Option<Vec<HeadParams>>,
    pub frames: Vec<LoadedFrame>,
}

pub fn frame_name(i: usize) -> String {
    format!("frame_{i:04}.png")
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    Ok(read_json(dir.join(MANIFEST))?)
}

pub fn load(dir: &Path) -> Result<FrameDir> {
    let m = read_manifest(dir)?;
    if m.frames.is_empty() {
        return Err(Usage::new(format!("{} lists no frames", dir.join(MANIFEST).display())).into());
    }
    let params = match &m.params {
        Some(p) => Some(head::read_params(dir.join(p))?),
        None => None,
    };
    let mut frames = Vec::with_capacity(m.frames.len());
    for (i, f) in m.frames.iter().enumerate() {
        let image = image_io::read_image(dir.join(&f.image))?;
        let camera = match &f.camera {
            Some(c) => Some(camera::read_camera(dir.join(c))?),
            None => None,
        };
        let params_index = f.params_index.unwrap_or(i);
        if let Some(p) = &params {
            if params_index >= p.len() {
                return Err(Usage::new(format!(
                    "frame {i} uses parameter row {params_index} but {} has {} rows",
                    m.params.as_deref().unwrap_or_default(),
                    p.len()
                ))
                .into());
            }
        }
        frames.push(LoadedFrame {
            image,
            camera,
            params_index,
        });
    }
    Ok(FrameDir {
        fps: m.fps,
        params,
        frames,
    })
}

/// Write `images` as `frame_NNNN.png` with a manifest. `params` and `cameras`
/// are written as `params.bin` and `camera_NN.json` when given; cameras are
/// assigned to frames cyclically.
pub fn save(dir: &Path, images: &[Image], params: Option<&[HeadParams]>, cameras: &[Camera], fps: Option<f64>) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let cam_names: Vec<String> = (0..cameras.len()).map(|i| format!("camera_{i:02}.json")).collect();
    for (c, name) in cameras.iter().zip(&cam_names) {
        camera::write_camera(c, dir.join(name))?;
    }
    let params_name = match params {
        Some(p) => {
            head::write_params(p, dir.join("params.bin"))?;
            Some("params.bin".to_string())
        }
        None => None,
    };
    let mut entries = Vec::with_capacity(images.len());
    for (i, img) in images.iter().enumerate() {
        let name = frame_name(i);
        image_io::write_image(img, dir.join(&name))?;
        entries.push(FrameEntry {
            image: name,
            camera: (!cam_names.is_empty()).then(|| cam_names[i % cam_names.len()].clone()),
            params_index: None,
        });
    }
    let manifest = Manifest {
        fps,
        params: params_name,
        frames: entries,
    };
    let path = dir.join(MANIFEST);
    write_json(&manifest, &path)?;
    Ok(path)
}

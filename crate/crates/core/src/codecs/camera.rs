//! Camera JSON: intrinsics, row-major 4x4 world-to-camera extrinsic, size.
//!
//! ```json
//! {"fx": 100.0, "fy": 100.0, "cx": 32.0, "cy": 32.0,
//!  "width": 64, "height": 64, "world_to_cam": [16 numbers, row-major]}
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rasterizer::Camera;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraFile {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    pub world_to_cam: [f64; 16],
}

impl From<&Camera> for CameraFile {
    fn from(c: &Camera) -> Self {
        CameraFile {
            fx: c.fx,
            fy: c.fy,
            cx: c.cx,
            cy: c.cy,
            width: c.width,
            height: c.height,
            world_to_cam: c.extrinsic_row_major(),
        }
    }
}

impl CameraFile {
    pub fn to_camera(&self) -> Result<Camera> {
        Camera::from_extrinsic_row_major(self.fx, self.fy, self.cx, self.cy, &self.world_to_cam, self.width, self.height)
    }
}

pub fn write_camera(cam: &Camera, path: impl AsRef<Path>) -> Result<()> {
    super::write_json(&CameraFile::from(cam), path)
}

pub fn read_camera(path: impl AsRef<Path>) -> Result<Camera> {
    let path = path.as_ref();
    let f: CameraFile = super::read_json(path)?;
    f.to_camera().map_err(|e| Error::input(format!("{path:?}: {e}")))
}

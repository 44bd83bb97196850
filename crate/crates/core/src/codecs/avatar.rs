//! Mesh-bound avatars: the Gaussians globalized on a mesh as PLY, plus a
//! `<file>.binding.json` sidecar with the triangle binding and local parameters.
//!
//! The sidecar is authoritative when reading; the PLY is a viewable snapshot
//! and is only checked for a matching Gaussian count.

use std::path::{Path, PathBuf};

use super::{ply, read_json, write_json};
use crate::binding::{BindingSidecar, BoundScene};
use crate::error::{Error, Result};
use crate::head_model::Mesh;

pub fn sidecar_path(ply_path: &Path) -> PathBuf {
    let mut s = ply_path.as_os_str().to_owned();
    s.push(".binding.json");
    PathBuf::from(s)
}

pub fn write_avatar(scene: &BoundScene, mesh: &Mesh, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    ply::write_scene(&scene.globalize(mesh)?, path)?;
    write_json(&BindingSidecar::from_scene(scene), sidecar_path(path))
}

pub fn read_avatar(path: impl AsRef<Path>) -> Result<BoundScene> {
    let path = path.as_ref();
    let side: BindingSidecar = read_json(sidecar_path(path))?;
    let snapshot = ply::read_scene(path)?;
    if snapshot.gaussians.len() != side.gaussians.len() {
        return Err(Error::input(format!(
            "{}: PLY has {} Gaussians, binding sidecar has {}",
            path.display(),
            snapshot.gaussians.len(),
            side.gaussians.len()
        )));
    }
    side.into_scene()
}

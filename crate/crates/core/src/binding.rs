//! Gaussians rigged to mesh triangles through per-triangle local frames.

use nalgebra::{Matrix3, Quaternion, Rotation3, UnitQuaternion, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian_scene::{sh_coeff_count, GaussianPrimitive, Scene};
use crate::head_model::Mesh;
use crate::par;

pub const MIN_FRAME_AREA: f64 = 1e-12;
/// Scale divisor applied to both children of a split.
pub const SPLIT_SCALE_DIVISOR: f64 = 1.6;
pub const DEFAULT_MIN_OPACITY: f64 = 0.005;
pub const INIT_LOCAL_SCALE: [f64; 3] = [0.5, 0.5, 0.01];
pub const INIT_OPACITY: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TriangleFrame {
    pub origin: Vector3<f64>,
    pub rotation: UnitQuaternion<f64>,
    pub tri_scale: f64,
}

impl TriangleFrame {
    pub fn identity() -> Self {
        TriangleFrame {
            origin: Vector3::zeros(),
            rotation: UnitQuaternion::identity(),
            tri_scale: 1.0,
        }
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        self.rotation.to_rotation_matrix().into_inner()
    }
}

/// Frame at the centroid: x along `v1 - v0`, z along the normal,
/// `tri_scale = sqrt(2 * area)`.
pub fn triangle_frame(mesh: &Mesh, tri: usize) -> Result<TriangleFrame> {
    let t = mesh
        .triangles
        .get(tri)
        .ok_or_else(|| Error::param(format!("triangle {tri} out of range")))?;
    let [v0, v1, v2] = t.map(|i| mesh.vertices[i]);
    let e1 = v1 - v0;
    let cross = e1.cross(&(v2 - v0));
    let area2 = cross.norm();
    if !(0.5 * area2 >= MIN_FRAME_AREA) {
        return Err(Error::Geometry(format!("triangle {tri} is degenerate")));
    }
    let x = e1.normalize();
    let z = cross / area2;
    let y = z.cross(&x);
    let rot = Rotation3::from_matrix_unchecked(Matrix3::from_columns(&[x, y, z]));
    Ok(TriangleFrame {
        origin: (v0 + v1 + v2) / 3.0,
        rotation: UnitQuaternion::from_rotation_matrix(&rot),
        tri_scale: area2.sqrt(),
    })
}

pub fn triangle_frames(mesh: &Mesh) -> Result<Vec<TriangleFrame>> {
    par::map_range(mesh.triangles.len(), |f| triangle_frame(mesh, f))
        .into_iter()
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundGaussian {
    pub triangle_id: usize,
    /// In units of the triangle's `tri_scale`.
    pub local_mu: Vector3<f64>,
    pub local_scale: Vector3<f64>,
    pub local_rotation: UnitQuaternion<f64>,
    pub opacity: f64,
    pub sh: Vec<[f64; 3]>,
}

/// Map a triangle-local Gaussian into world space.
pub fn globalize(b: &BoundGaussian, frame: &TriangleFrame) -> GaussianPrimitive {
    let rotation = frame.rotation * b.local_rotation;
    GaussianPrimitive {
        mu: frame.origin + frame.rotation * b.local_mu * frame.tri_scale,
        scale: b.local_scale * frame.tri_scale,
        rotation: *rotation.quaternion(),
        opacity: b.opacity,
        sh: b.sh.clone(),
    }
}

/// Inverse of [`globalize`] for a fixed frame.
pub fn localize(g: &GaussianPrimitive, frame: &TriangleFrame, triangle_id: usize) -> BoundGaussian {
    let inv = frame.rotation.inverse();
    BoundGaussian {
        triangle_id,
        local_mu: inv * (g.mu - frame.origin) / frame.tri_scale,
        local_scale: g.scale / frame.tri_scale,
        local_rotation: inv * UnitQuaternion::new_normalize(g.rotation),
        opacity: g.opacity,
        sh: g.sh.clone(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundScene {
    pub bound: Vec<BoundGaussian>,
    pub per_triangle_count: Vec<usize>,
    pub sh_degree: usize,
}

impl BoundScene {
    /// Build from a Gaussian list, recounting per-triangle membership and
    /// enforcing the at-least-one-per-triangle floor.
    pub fn new(bound: Vec<BoundGaussian>, num_triangles: usize, sh_degree: usize) -> Result<Self> {
        let n_sh = sh_coeff_count(sh_degree);
        let mut counts = vec![0usize; num_triangles];
        for (i, b) in bound.iter().enumerate() {
            if b.triangle_id >= num_triangles {
                return Err(Error::param(format!(
                    "gaussian {i} bound to triangle {} of {num_triangles}",
                    b.triangle_id
                )));
            }
            if b.sh.len() != n_sh {
                return Err(Error::param(format!("gaussian {i} has wrong SH count")));
            }
            counts[b.triangle_id] += 1;
        }
        if let Some(f) = counts.iter().position(|&c| c == 0) {
            return Err(Error::param(format!("triangle {f} has no gaussian")));
        }
        Ok(BoundScene {
            bound,
            per_triangle_count: counts,
            sh_degree,
        })
    }

    pub fn len(&self) -> usize {
        self.bound.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bound.is_empty()
    }

    pub fn num_triangles(&self) -> usize {
        self.per_triangle_count.len()
    }

    pub fn globalize_with(&self, frames: &[TriangleFrame]) -> Scene {
        let gaussians = par::map_slice(&self.bound, |b| globalize(b, &frames[b.triangle_id]));
        Scene {
            gaussians,
            sh_degree: self.sh_degree,
        }
    }

    /// World-space scene for a posed mesh.
    pub fn globalize(&self, mesh: &Mesh) -> Result<Scene> {
        if mesh.triangles.len() != self.num_triangles() {
            return Err(Error::param("mesh triangle count does not match binding"));
        }
        Ok(self.globalize_with(&triangle_frames(mesh)?))
    }
}

/// One Gaussian at every triangle centroid, thin along the normal.
pub fn initialize_binding(mesh: &Mesh, sh_degree: usize) -> Result<BoundScene> {
    let frames = triangle_frames(mesh)?;
    let bound = (0..frames.len())
        .map(|f| BoundGaussian {
            triangle_id: f,
            local_mu: Vector3::zeros(),
            local_scale: Vector3::from(INIT_LOCAL_SCALE),
            local_rotation: UnitQuaternion::identity(),
            opacity: INIT_OPACITY,
            sh: vec![[0.0; 3]; sh_coeff_count(sh_degree)],
        })
        .collect();
    BoundScene::new(bound, frames.len(), sh_degree)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DensifyParams {
    /// Gaussians whose view-space positional gradient norm exceeds this are densified.
    pub grad_threshold: f64,
    /// Largest local scale above which a Gaussian is split instead of cloned.
    pub size_split: f64,
    pub seed: u64,
}

/// Split large high-gradient Gaussians into two children sampled from the
/// parent, clone small ones in place.
pub fn densify(scene: &BoundScene, grad_norms: &[f64], params: &DensifyParams) -> Result<BoundScene> {
    if grad_norms.len() != scene.len() {
        return Err(Error::param(format!(
            "{} gradient norms for {} gaussians",
            grad_norms.len(),
            scene.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut out = Vec::with_capacity(scene.len() + scene.len() / 4);
    for (b, &g) in scene.bound.iter().zip(grad_norms) {
        if !(g > params.grad_threshold) {
            out.push(b.clone());
            continue;
        }
        if b.local_scale.max() > params.size_split {
            let child_scale = b.local_scale / SPLIT_SCALE_DIVISOR;
            for _ in 0..2 {
                let z = Vector3::from_fn(|_, _| StandardNormal.sample(&mut rng));
                let offset = b.local_rotation * b.local_scale.component_mul(&z);
                out.push(BoundGaussian {
                    local_mu: b.local_mu + offset,
                    local_scale: child_scale,
                    ..b.clone()
                });
            }
        } else {
            out.push(b.clone());
            out.push(b.clone());
        }
    }
    BoundScene::new(out, scene.num_triangles(), scene.sh_degree)
}

/// Drop Gaussians with opacity below `min_opacity`, always keeping the most
/// opaque Gaussian of each triangle (lowest index on ties).
pub fn prune(scene: &BoundScene, min_opacity: f64) -> Result<BoundScene> {
    let mut keeper: Vec<Option<usize>> = vec![None; scene.num_triangles()];
    for (i, b) in scene.bound.iter().enumerate() {
        let slot = &mut keeper[b.triangle_id];
        match slot {
            Some(j) if scene.bound[*j].opacity >= b.opacity => {}
            _ => *slot = Some(i),
        }
    }
    let bound = scene
        .bound
        .iter()
        .enumerate()
        .filter(|(i, b)| b.opacity >= min_opacity || keeper[b.triangle_id] == Some(*i))
        .map(|(_, b)| b.clone())
        .collect();
    BoundScene::new(bound, scene.num_triangles(), scene.sh_degree)
}

/// Sidecar record of one bound Gaussian.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BindingRecord {
    pub index: usize,
    pub triangle_id: usize,
    pub local_mu: [f64; 3],
    pub local_scale: [f64; 3],
    /// `(w, x, y, z)`.
    pub local_rotation: [f64; 4],
    pub opacity: f64,
    pub sh: Vec<[f64; 3]>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BindingSidecar {
    pub sh_degree: usize,
    pub num_triangles: usize,
    pub gaussians: Vec<BindingRecord>,
}

impl BindingSidecar {
    pub fn from_scene(scene: &BoundScene) -> Self {
        BindingSidecar {
            sh_degree: scene.sh_degree,
            num_triangles: scene.num_triangles(),
            gaussians: scene
                .bound
                .iter()
                .enumerate()
                .map(|(index, b)| {
                    let q = b.local_rotation.quaternion();
                    BindingRecord {
                        index,
                        triangle_id: b.triangle_id,
                        local_mu: b.local_mu.into(),
                        local_scale: b.local_scale.into(),
                        local_rotation: [q.w, q.i, q.j, q.k],
                        opacity: b.opacity,
                        sh: b.sh.clone(),
                    }
                })
                .collect(),
        }
    }

    pub fn into_scene(self) -> Result<BoundScene> {
        let mut bound = Vec::with_capacity(self.gaussians.len());
        for (i, r) in self.gaussians.into_iter().enumerate() {
            if r.index != i {
                return Err(Error::input(format!("binding record {i} has index {}", r.index)));
            }
            let q = Quaternion::new(r.local_rotation[0], r.local_rotation[1], r.local_rotation[2], r.local_rotation[3]);
            if (q.norm() - 1.0).abs() > 1e-6 {
                return Err(Error::input(format!("binding record {i} rotation is not unit")));
            }
            bound.push(BoundGaussian {
                triangle_id: r.triangle_id,
                local_mu: r.local_mu.into(),
                local_scale: r.local_scale.into(),
                local_rotation: UnitQuaternion::new_unchecked(q),
                opacity: r.opacity,
                sh: r.sh,
            });
        }
        BoundScene::new(bound, self.num_triangles, self.sh_degree)
    }
}

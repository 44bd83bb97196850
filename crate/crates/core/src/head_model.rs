//! Linear parametric head: template mesh, shape/expression blendshapes and a
//! jaw rotation blended over a weighted vertex region.

use std::sync::Arc;

use nalgebra::{UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::axis_angle_matrix;

pub type Triangle = [usize; 3];

/// Default blendshape basis sizes.
pub const DEFAULT_SHAPE_DIM: usize = 16;
pub const DEFAULT_EXPRESSION_DIM: usize = 16;

const MIN_TRIANGLE_AREA: f64 = 1e-12;

/// Neutral mesh of one identity.
#[derive(Debug, Clone, PartialEq)]
pub struct TemplateMesh {
    pub vertices: Vec<Vector3<f64>>,
    pub triangles: Arc<[Triangle]>,
}

/// A posed mesh sharing the template's topology.
#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    pub vertices: Vec<Vector3<f64>>,
    pub triangles: Arc<[Triangle]>,
}

pub(crate) fn triangle_area(a: &Vector3<f64>, b: &Vector3<f64>, c: &Vector3<f64>) -> f64 {
    0.5 * (b - a).cross(&(c - a)).norm()
}

impl TemplateMesh {
    pub fn new(vertices: Vec<Vector3<f64>>, triangles: Vec<Triangle>) -> Result<Self> {
        let mesh = TemplateMesh {
            vertices,
            triangles: triangles.into(),
        };
        mesh.validate()?;
        Ok(mesh)
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.vertices.len();
        if v < 4 || self.triangles.is_empty() {
            return Err(Error::input(format!(
                "template needs >= 4 vertices and >= 1 triangle, got {v} / {}",
                self.triangles.len()
            )));
        }
        if self.vertices.iter().any(|p| !p.iter().all(|x| x.is_finite())) {
            return Err(Error::input("template has non-finite vertices"));
        }
        for (f, tri) in self.triangles.iter().enumerate() {
            if tri.iter().any(|&i| i >= v) {
                return Err(Error::input(format!("triangle {f} indexes past {v} vertices")));
            }
            let [a, b, c] = tri.map(|i| self.vertices[i]);
            if triangle_area(&a, &b, &c) <= MIN_TRIANGLE_AREA {
                return Err(Error::Geometry(format!("triangle {f} is degenerate")));
            }
        }
        Ok(())
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn as_mesh(&self) -> Mesh {
        Mesh {
            vertices: self.vertices.clone(),
            triangles: self.triangles.clone(),
        }
    }

    /// Vertex positions flattened as `[x0, y0, z0, x1, ...]`.
    pub fn flat_vertices(&self) -> Vec<f64> {
        self.vertices.iter().flat_map(|v| [v.x, v.y, v.z]).collect()
    }
}

impl Mesh {
    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn same_topology(&self, other: &Mesh) -> bool {
        self.vertices.len() == other.vertices.len() && self.triangles == other.triangles
    }
}

/// Blendshape bases, stored row-major as `[vertex][axis][coefficient]`.
#[derive(Debug, Clone, PartialEq)]
pub struct BlendshapeBasis {
    pub shape_basis: Vec<f64>,
    pub shape_dim: usize,
    pub expression_basis: Vec<f64>,
    pub expression_dim: usize,
    pub jaw_joint: Vector3<f64>,
    pub jaw_weight: Vec<f64>,
}

impl BlendshapeBasis {
    pub fn num_vertices(&self) -> usize {
        self.jaw_weight.len()
    }

    /// Check the basis against a template. The up axis is +y.
    pub fn validate(&self, template: &TemplateMesh) -> Result<()> {
        let v = template.num_vertices();
        if self.jaw_weight.len() != v
            || self.shape_basis.len() != v * 3 * self.shape_dim
            || self.expression_basis.len() != v * 3 * self.expression_dim
        {
            return Err(Error::param(format!(
                "basis sized for {} vertices does not match template with {v}",
                self.jaw_weight.len()
            )));
        }
        let finite = self
            .shape_basis
            .iter()
            .chain(&self.expression_basis)
            .chain(self.jaw_joint.iter())
            .all(|x| x.is_finite());
        if !finite {
            return Err(Error::param("basis has non-finite entries"));
        }
        for (i, (&w, p)) in self.jaw_weight.iter().zip(&template.vertices).enumerate() {
            if !(0.0..=1.0).contains(&w) {
                return Err(Error::param(format!("jaw weight {w} of vertex {i} outside [0,1]")));
            }
            if p.y > self.jaw_joint.y && w != 0.0 {
                return Err(Error::param(format!(
                    "vertex {i} lies above the jaw joint but has jaw weight {w}"
                )));
            }
        }
        Ok(())
    }

    fn offset(basis: &[f64], dim: usize, vertex: usize, coeffs: &[f64]) -> Vector3<f64> {
        let mut out = Vector3::zeros();
        if dim == 0 {
            return out;
        }
        for axis in 0..3 {
            let row = &basis[(vertex * 3 + axis) * dim..(vertex * 3 + axis + 1) * dim];
            out[axis] = row.iter().zip(coeffs).map(|(b, c)| b * c).sum();
        }
        out
    }

    pub fn shape_offset(&self, vertex: usize, coeffs: &[f64]) -> Vector3<f64> {
        Self::offset(&self.shape_basis, self.shape_dim, vertex, coeffs)
    }

    pub fn expression_offset(&self, vertex: usize, coeffs: &[f64]) -> Vector3<f64> {
        Self::offset(&self.expression_basis, self.expression_dim, vertex, coeffs)
    }

    /// Displacement of `vertex` per unit of expression coefficient `k`.
    pub fn expression_column(&self, vertex: usize, k: usize) -> Vector3<f64> {
        let d = self.expression_dim;
        Vector3::new(
            self.expression_basis[(vertex * 3) * d + k],
            self.expression_basis[(vertex * 3 + 1) * d + k],
            self.expression_basis[(vertex * 3 + 2) * d + k],
        )
    }
}

/// Low-dimensional face state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadParams {
    pub shape: Vec<f64>,
    pub expression: Vec<f64>,
    /// Axis-angle, radians.
    pub jaw: Vector3<f64>,
    pub global_rotation: UnitQuaternion<f64>,
    /// Meters.
    pub translation: Vector3<f64>,
}

impl HeadParams {
    pub fn zeros(shape_dim: usize, expression_dim: usize) -> Self {
        HeadParams {
            shape: vec![0.0; shape_dim],
            expression: vec![0.0; expression_dim],
            jaw: Vector3::zeros(),
            global_rotation: UnitQuaternion::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn flat_len(shape_dim: usize, expression_dim: usize) -> usize {
        shape_dim + expression_dim + 3 + 4 + 3
    }

    /// Layout: shape, expression, jaw (3), rotation (w, x, y, z), translation (3).
    pub fn to_flat(&self) -> Vec<f64> {
        let q = self.global_rotation.quaternion();
        let mut out = Vec::with_capacity(Self::flat_len(self.shape.len(), self.expression.len()));
        out.extend_from_slice(&self.shape);
        out.extend_from_slice(&self.expression);
        out.extend(self.jaw.iter());
        out.extend([q.w, q.i, q.j, q.k]);
        out.extend(self.translation.iter());
        out
    }

    pub fn from_flat(flat: &[f64], shape_dim: usize, expression_dim: usize) -> Result<Self> {
        if flat.len() != Self::flat_len(shape_dim, expression_dim) {
            return Err(Error::param(format!(
                "flat params have {} entries, expected {}",
                flat.len(),
                Self::flat_len(shape_dim, expression_dim)
            )));
        }
        let (shape, rest) = flat.split_at(shape_dim);
        let (expression, rest) = rest.split_at(expression_dim);
        let q = nalgebra::Quaternion::new(rest[3], rest[4], rest[5], rest[6]);
        if (q.norm() - 1.0).abs() > 1e-6 {
            return Err(Error::param(format!("rotation norm {} is not unit", q.norm())));
        }
        let params = HeadParams {
            shape: shape.to_vec(),
            expression: expression.to_vec(),
            jaw: Vector3::new(rest[0], rest[1], rest[2]),
            global_rotation: UnitQuaternion::new_unchecked(q),
            translation: Vector3::new(rest[7], rest[8], rest[9]),
        };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        let q = self.global_rotation.quaternion();
        if (q.norm() - 1.0).abs() > 1e-6 {
            return Err(Error::param("global rotation is not unit"));
        }
        let finite = self
            .shape
            .iter()
            .chain(&self.expression)
            .chain(self.jaw.iter())
            .chain(q.coords.iter())
            .chain(self.translation.iter())
            .all(|x| x.is_finite());
        if finite {
            Ok(())
        } else {
            Err(Error::param("head params contain non-finite values"))
        }
    }
}

/// Vertex position before the global rigid transform, for one vertex.
fn local_vertex(
    template: &TemplateMesh,
    basis: &BlendshapeBasis,
    params: &HeadParams,
    vertex: usize,
) -> Vector3<f64> {
    let mut p = template.vertices[vertex]
        + basis.shape_offset(vertex, &params.shape)
        + basis.expression_offset(vertex, &params.expression);
    let w = basis.jaw_weight[vertex];
    if w > 0.0 {
        let r = axis_angle_matrix(&(params.jaw * w));
        let d = p - basis.jaw_joint;
        p += r * d - d;
    }
    p
}

/// Pose the template: blendshapes, weighted jaw rotation about the joint,
/// then the global rotation and translation.
pub fn pose_mesh(
    template: &TemplateMesh,
    basis: &BlendshapeBasis,
    params: &HeadParams,
) -> Result<Mesh> {
    if params.shape.len() != basis.shape_dim || params.expression.len() != basis.expression_dim {
        return Err(Error::param(format!(
            "params have {}/{} shape/expression coefficients, basis has {}/{}",
            params.shape.len(),
            params.expression.len(),
            basis.shape_dim,
            basis.expression_dim
        )));
    }
    if basis.num_vertices() != template.num_vertices() {
        return Err(Error::param("basis and template vertex counts differ"));
    }
    let rot = params.global_rotation.to_rotation_matrix();
    let vertices = (0..template.num_vertices())
        .map(|v| rot * local_vertex(template, basis, params, v) + params.translation)
        .collect();
    Ok(Mesh {
        vertices,
        triangles: template.triangles.clone(),
    })
}

/// Per-vertex mean of a tracked mesh sequence.
pub fn compute_template(meshes: &[Mesh]) -> Result<TemplateMesh> {
    let first = meshes
        .first()
        .ok_or_else(|| Error::input("cannot average an empty mesh sequence"))?;
    if let Some(i) = meshes.iter().position(|m| !m.same_topology(first)) {
        return Err(Error::input(format!("mesh {i} has a different topology")));
    }
    let n = meshes.len() as f64;
    let vertices = (0..first.num_vertices())
        .map(|v| meshes.iter().map(|m| m.vertices[v]).sum::<Vector3<f64>>() / n)
        .collect();
    Ok(TemplateMesh {
        vertices,
        triangles: first.triangles.clone(),
    })
}

/// Template plus basis; everything needed to pose meshes for one identity.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadRig {
    pub template: TemplateMesh,
    pub basis: BlendshapeBasis,
}

impl HeadRig {
    pub fn new(template: TemplateMesh, basis: BlendshapeBasis) -> Result<Self> {
        template.validate()?;
        basis.validate(&template)?;
        Ok(HeadRig { template, basis })
    }

    pub fn pose(&self, params: &HeadParams) -> Result<Mesh> {
        pose_mesh(&self.template, &self.basis, params)
    }

    pub fn neutral_params(&self) -> HeadParams {
        HeadParams::zeros(self.basis.shape_dim, self.basis.expression_dim)
    }

    /// Index of the front-most vertex near the vertical center (the nose tip
    /// on synthetic heads).
    pub fn nose_vertex(&self) -> usize {
        let t = &self.template.vertices;
        let ys: Vec<f64> = t.iter().map(|v| v.y).collect();
        let (lo, hi) = ys
            .iter()
            .fold((f64::MAX, f64::MIN), |(a, b), &y| (a.min(y), b.max(y)));
        let band = 0.25 * (hi - lo);
        let mid = 0.5 * (hi + lo);
        (0..t.len())
            .filter(|&i| (t[i].y - mid).abs() <= band)
            .max_by(|&a, &b| t[a].z.total_cmp(&t[b].z))
            .unwrap_or(0)
    }
}

/// Options for the deterministic synthetic head.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SyntheticHeadConfig {
    /// Latitude bands between the two poles (>= 2).
    pub rings: usize,
    /// Vertices per latitude ring (>= 3).
    pub segments: usize,
    pub shape_dim: usize,
    pub expression_dim: usize,
    /// Use a 0/1 jaw mask instead of a linear ramp below the joint.
    pub binary_jaw: bool,
    /// Identity coefficients drawn for the template (0 gives the mean head).
    pub identity_scale: f64,
    pub seed: u64,
}

impl Default for SyntheticHeadConfig {
    fn default() -> Self {
        SyntheticHeadConfig {
            rings: 6,
            segments: 10,
            shape_dim: DEFAULT_SHAPE_DIM,
            expression_dim: DEFAULT_EXPRESSION_DIM,
            binary_jaw: false,
            identity_scale: 1.0,
            seed: 0,
        }
    }
}

const HEAD_RADII: [f64; 3] = [0.08, 0.11, 0.09];
const NOSE_PROTRUSION: f64 = 1.25;
const JAW_RAMP: f64 = 0.03;

/// Seed-independent ellipsoidal mean head (poles along y, front is +z).
pub fn mean_head(rings: usize, segments: usize) -> Result<TemplateMesh> {
    if rings < 2 || segments < 3 {
        return Err(Error::param("synthetic head needs rings >= 2 and segments >= 3"));
    }
    let [rx, ry, rz] = HEAD_RADII;
    let mut vertices = vec![Vector3::new(0.0, ry, 0.0)];
    for r in 1..rings {
        let theta = std::f64::consts::PI * r as f64 / rings as f64;
        for s in 0..segments {
            let phi = 2.0 * std::f64::consts::PI * s as f64 / segments as f64;
            vertices.push(Vector3::new(
                rx * theta.sin() * phi.sin(),
                ry * theta.cos(),
                rz * theta.sin() * phi.cos(),
            ));
        }
    }
    vertices.push(Vector3::new(0.0, -ry, 0.0));
    let bottom = vertices.len() - 1;
    let ring = |r: usize, s: usize| 1 + (r - 1) * segments + (s % segments);

    // nose: push the front vertex of the ring closest to the equator forward
    let mid_ring = 1 + (rings - 1) / 2;
    let nose = ring(mid_ring, 0);
    vertices[nose].z *= NOSE_PROTRUSION;

    // outward-facing (counter-clockwise seen from outside)
    let mut triangles = Vec::new();
    for s in 0..segments {
        triangles.push([0, ring(1, s + 1), ring(1, s)]);
    }
    for r in 1..rings - 1 {
        for s in 0..segments {
            let (a, b) = (ring(r, s), ring(r, s + 1));
            let (c, d) = (ring(r + 1, s), ring(r + 1, s + 1));
            triangles.push([a, b, d]);
            triangles.push([a, d, c]);
        }
    }
    for s in 0..segments {
        triangles.push([bottom, ring(rings - 1, s), ring(rings - 1, s + 1)]);
    }
    TemplateMesh::new(vertices, triangles)
}

fn smooth_field(rng: &mut ChaCha8Rng, amplitude: f64) -> impl Fn(&Vector3<f64>) -> Vector3<f64> {
    let freq: Vec<Vector3<f64>> = (0..3)
        .map(|_| Vector3::new(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)))
        .collect();
    let phase: Vec<f64> = (0..3).map(|_| rng.random_range(0.0..std::f64::consts::TAU)).collect();
    let gain: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
    move |p: &Vector3<f64>| {
        let u = Vector3::new(p.x / HEAD_RADII[0], p.y / HEAD_RADII[1], p.z / HEAD_RADII[2]);
        Vector3::new(
            gain[0] * (freq[0].dot(&u) + phase[0]).sin(),
            gain[1] * (freq[1].dot(&u) + phase[1]).sin(),
            gain[2] * (freq[2].dot(&u) + phase[2]).sin(),
        ) * amplitude
    }
}

/// Deterministic synthetic identity: template (mean head plus a seeded shape
/// offset) and its blendshape basis.
pub fn synthetic_head(config: &SyntheticHeadConfig) -> Result<HeadRig> {
    let mean = mean_head(config.rings, config.segments)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let v = mean.num_vertices();

    // the basis depends only on the topology, never on the identity seed
    let mut basis_rng = ChaCha8Rng::seed_from_u64(0x5eed_ba5e ^ (config.rings * 1000 + config.segments) as u64);
    let mut shape_basis = vec![0.0; v * 3 * config.shape_dim];
    for k in 0..config.shape_dim {
        let field = smooth_field(&mut basis_rng, 0.006);
        for (i, p) in mean.vertices.iter().enumerate() {
            let d = field(p);
            for axis in 0..3 {
                shape_basis[(i * 3 + axis) * config.shape_dim + k] = d[axis];
            }
        }
    }
    let mut expression_basis = vec![0.0; v * 3 * config.expression_dim];
    for k in 0..config.expression_dim {
        let field = smooth_field(&mut basis_rng, 0.004);
        for (i, p) in mean.vertices.iter().enumerate() {
            let lower = if p.y < 0.0 { 1.0 } else { 0.3 };
            let d = field(p) * lower;
            for axis in 0..3 {
                expression_basis[(i * 3 + axis) * config.expression_dim + k] = d[axis];
            }
        }
    }

    let jaw_joint = Vector3::new(0.0, -0.2 * HEAD_RADII[1], -0.3 * HEAD_RADII[2]);
    let identity: Vec<f64> = (0..config.shape_dim)
        .map(|_| config.identity_scale * rng.random_range(-1.0..1.0))
        .collect();
    let mut basis = BlendshapeBasis {
        shape_basis,
        shape_dim: config.shape_dim,
        expression_basis,
        expression_dim: config.expression_dim,
        jaw_joint,
        jaw_weight: vec![0.0; v],
    };
    let vertices: Vec<Vector3<f64>> = (0..v)
        .map(|i| mean.vertices[i] + basis.shape_offset(i, &identity))
        .collect();
    basis.jaw_weight = vertices
        .iter()
        .map(|p| {
            let below = jaw_joint.y - p.y;
            if below <= 0.0 {
                0.0
            } else if config.binary_jaw {
                1.0
            } else {
                (below / JAW_RAMP).min(1.0)
            }
        })
        .collect();
    let template = TemplateMesh::new(vertices, mean.triangles.to_vec())?;
    HeadRig::new(template, basis)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn small_rig(binary: bool) -> HeadRig {
        synthetic_head(&SyntheticHeadConfig {
            rings: 3,
            segments: 4,
            binary_jaw: binary,
            seed: 7,
            ..Default::default()
        })
        .unwrap()
    }

    fn rodrigues_oracle(axis_angle: [f64; 3], u: [f64; 3]) -> [f64; 3] {
        let theta = (axis_angle[0].powi(2) + axis_angle[1].powi(2) + axis_angle[2].powi(2)).sqrt();
        if theta == 0.0 {
            return u;
        }
        let k = axis_angle.map(|a| a / theta);
        let kxu = [
            k[1] * u[2] - k[2] * u[1],
            k[2] * u[0] - k[0] * u[2],
            k[0] * u[1] - k[1] * u[0],
        ];
        let kdu = k[0] * u[0] + k[1] * u[1] + k[2] * u[2];
        let (s, c) = theta.sin_cos();
        [0, 1, 2].map(|i| u[i] * c + kxu[i] * s + k[i] * kdu * (1.0 - c))
    }

    #[test]
    fn synthetic_head_sizes() {
        let rig = small_rig(true);
        assert_eq!(rig.template.num_vertices(), 10);
        assert_eq!(rig.template.triangles.len(), 16);
        let rig = synthetic_head(&SyntheticHeadConfig {
            rings: 2,
            segments: 6,
            ..Default::default()
        })
        .unwrap();
        assert_eq!(rig.template.triangles.len(), 12);
        let nose = rig.nose_vertex();
        assert!(rig.template.vertices[nose].z > 0.1);
    }

    #[test]
    fn identity_pose_returns_template() {
        let rig = small_rig(false);
        let mesh = rig.pose(&rig.neutral_params()).unwrap();
        assert_eq!(mesh.vertices, rig.template.vertices);
    }

    #[test]
    fn translation_only_shifts() {
        let rig = small_rig(false);
        let mut p = rig.neutral_params();
        p.translation = Vector3::new(0.0, 0.0, 0.1);
        let mesh = rig.pose(&p).unwrap();
        for (a, b) in mesh.vertices.iter().zip(&rig.template.vertices) {
            assert_relative_eq!(*a, b + Vector3::new(0.0, 0.0, 0.1), epsilon = 1e-15);
        }
    }

    #[test]
    fn jaw_matches_brute_force_rotation() {
        let rig = small_rig(true);
        let mut p = rig.neutral_params();
        p.jaw = Vector3::new(0.3, 0.0, 0.0);
        let mesh = rig.pose(&p).unwrap();
        let joint = rig.basis.jaw_joint;
        let mut masked = 0;
        for (i, (out, t)) in mesh.vertices.iter().zip(&rig.template.vertices).enumerate() {
            if rig.basis.jaw_weight[i] == 1.0 {
                masked += 1;
                let u = t - joint;
                let r = rodrigues_oracle([0.3, 0.0, 0.0], [u.x, u.y, u.z]);
                let expect = Vector3::new(r[0], r[1], r[2]) + joint;
                assert_relative_eq!(*out, expect, epsilon = 1e-14);
            } else {
                assert_eq!(rig.basis.jaw_weight[i], 0.0);
                assert_eq!(out, t);
            }
        }
        assert_eq!(masked, 5);
    }

    #[test]
    fn dimension_mismatch_is_parameter_error() {
        let rig = small_rig(false);
        let mut p = rig.neutral_params();
        p.expression.pop();
        assert!(matches!(rig.pose(&p), Err(Error::Parameter(_))));
    }

    #[test]
    fn template_of_single_and_pair() {
        let rig = small_rig(false);
        let m = rig.template.as_mesh();
        assert_eq!(compute_template(std::slice::from_ref(&m)).unwrap(), rig.template);
        let d = Vector3::new(0.01, -0.02, 0.04);
        let mut m2 = m.clone();
        m2.vertices.iter_mut().for_each(|v| *v += d);
        let t = compute_template(&[m.clone(), m2]).unwrap();
        for (a, b) in t.vertices.iter().zip(&m.vertices) {
            assert_relative_eq!(*a, b + d / 2.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn template_of_seven_matches_accumulation() {
        let rig = small_rig(false);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let meshes: Vec<Mesh> = (0..7)
            .map(|_| {
                let mut m = rig.template.as_mesh();
                for v in &mut m.vertices {
                    *v += Vector3::new(rng.random(), rng.random(), rng.random());
                }
                m
            })
            .collect();
        let t = compute_template(&meshes).unwrap();
        for i in 0..t.num_vertices() {
            for axis in 0..3 {
                let mut acc = 0.0;
                for m in &meshes {
                    acc += m.vertices[i][axis];
                }
                assert!((t.vertices[i][axis] - acc / 7.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn template_errors() {
        assert!(matches!(compute_template(&[]), Err(Error::Input(_))));
        let rig = small_rig(false);
        let a = rig.template.as_mesh();
        let other = synthetic_head(&SyntheticHeadConfig::default()).unwrap();
        assert!(matches!(
            compute_template(&[a, other.template.as_mesh()]),
            Err(Error::Input(_))
        ));
    }

    #[test]
    fn degenerate_template_rejected() {
        let v = vec![Vector3::zeros(), Vector3::x(), Vector3::x() * 2.0, Vector3::y()];
        assert!(matches!(
            TemplateMesh::new(v, vec![[0, 1, 2]]),
            Err(Error::Geometry(_))
        ));
    }

    #[test]
    fn flat_round_trip() {
        let rig = small_rig(false);
        let mut p = rig.neutral_params();
        p.jaw = Vector3::new(0.1, 0.2, -0.3);
        p.global_rotation = UnitQuaternion::from_euler_angles(0.1, 0.2, 0.3);
        p.expression[3] = 0.7;
        let back = HeadParams::from_flat(&p.to_flat(), 16, 16).unwrap();
        assert_eq!(back.expression, p.expression);
        assert!((back.global_rotation.angle_to(&p.global_rotation)).abs() < 1e-12);
    }
}

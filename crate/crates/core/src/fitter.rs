//! Joint optimization of a bound avatar and per-frame head parameters
//! against target images.
//!
//! Gaussian parameters get exact gradients from the renderer chained through
//! the triangle binding. Head parameters get central finite differences of the
//! pose → frames → globalize map, contracted with the same analytic render
//! gradients, so a head-parameter step costs no extra renders.

use nalgebra::{UnitQuaternion, Vector3, Vector4};
use serde::{Deserialize, Serialize};

use crate::binding::{densify, prune, triangle_frames, BoundGaussian, BoundScene, DensifyParams, DEFAULT_MIN_OPACITY};
use crate::error::{Error, Result};
use crate::gaussian_scene::{sh_coeff_count, GaussianPrimitive};
use crate::geometry::quat_left_matrix;
use crate::head_model::{HeadParams, HeadRig};
use crate::par;
use crate::rasterizer::{Camera, GaussianGrad, Image, RasterConfig, Renderer};

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;

fn ssim_kernel() -> [f64; SSIM_WINDOW] {
    let half = (SSIM_WINDOW / 2) as f64;
    let mut k = [0.0; SSIM_WINDOW];
    for (i, v) in k.iter_mut().enumerate() {
        let d = i as f64 - half;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = k.iter().sum();
    k.map(|v| v / s)
}

/// Separable Gaussian blur, zero padded, same size. Symmetric, hence self-adjoint.
fn blur(src: &[f64], w: usize, h: usize, k: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let half = (SSIM_WINDOW / 2) as isize;
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (i, kv) in k.iter().enumerate() {
                let xx = x as isize + i as isize - half;
                if xx >= 0 && (xx as usize) < w {
                    acc += kv * src[y * w + xx as usize];
                }
            }
            tmp[y * w + x] = acc;
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (i, kv) in k.iter().enumerate() {
                let yy = y as isize + i as isize - half;
                if yy >= 0 && (yy as usize) < h {
                    acc += kv * tmp[yy as usize * w + x];
                }
            }
            out[y * w + x] = acc;
        }
    }
    out
}

/// Mean SSIM over pixels of one channel plane and its gradient with respect to `x`.
fn ssim_plane(x: &[f64], y: &[f64], w: usize, h: usize) -> (f64, Vec<f64>) {
    let k = ssim_kernel();
    let n = x.len();
    let sq = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| p * q).collect::<Vec<_>>();
    let mx = blur(x, w, h, &k);
    let my = blur(y, w, h, &k);
    let exx = blur(&sq(x, x), w, h, &k);
    let eyy = blur(&sq(y, y), w, h, &k);
    let exy = blur(&sq(x, y), w, h, &k);
    let mut sum = 0.0;
    let mut g_m = vec![0.0; n];
    let mut g_xx = vec![0.0; n];
    let mut g_xy = vec![0.0; n];
    for i in 0..n {
        let a1 = 2.0 * mx[i] * my[i] + SSIM_C1;
        let a2 = 2.0 * (exy[i] - mx[i] * my[i]) + SSIM_C2;
        let b1 = mx[i] * mx[i] + my[i] * my[i] + SSIM_C1;
        let b2 = exx[i] - mx[i] * mx[i] + eyy[i] - my[i] * my[i] + SSIM_C2;
        let s = a1 * a2 / (b1 * b2);
        sum += s;
        g_m[i] = s * (2.0 * my[i] / a1 - 2.0 * my[i] / a2 - 2.0 * mx[i] / b1 + 2.0 * mx[i] / b2);
        g_xx[i] = -s / b2;
        g_xy[i] = 2.0 * s / a2;
    }
    let bm = blur(&g_m, w, h, &k);
    let bxx = blur(&g_xx, w, h, &k);
    let bxy = blur(&g_xy, w, h, &k);
    let grad = (0..n).map(|i| (bm[i] + 2.0 * x[i] * bxx[i] + y[i] * bxy[i]) / n as f64).collect();
    (sum / n as f64, grad)
}

/// Loss value and its gradient with respect to the rendered image.
#[derive(Debug, Clone)]
pub struct PhotometricLoss {
    /// Mean absolute RGB difference.
    pub l1: f64,
    /// Mean SSIM over pixels and RGB channels.
    pub ssim: f64,
    pub total: f64,
    /// Gradient of `total`; the alpha channel is zero.
    pub grad: Image,
}

/// `λ_l1 · mean|rendered − target| + λ_ssim · (1 − SSIM)` over RGB, with an
/// 11×11 Gaussian window (σ = 1.5).
pub fn photometric_loss(rendered: &Image, target: &Image, lambda_l1: f64, lambda_ssim: f64) -> Result<PhotometricLoss> {
    if !rendered.same_shape(target) {
        return Err(Error::param(format!(
            "image shapes differ: {}x{} vs {}x{}",
            rendered.width, rendered.height, target.width, target.height
        )));
    }
    if !(lambda_l1 >= 0.0 && lambda_ssim >= 0.0) {
        return Err(Error::param("loss weights must be non-negative"));
    }
    let (w, h) = (rendered.width, rendered.height);
    let n = (w * h * 3) as f64;
    let mut grad = rendered.zeros_like();
    let mut l1 = 0.0;
    for i in 0..w * h {
        for c in 0..3 {
            let d = rendered.data[i * 4 + c] - target.data[i * 4 + c];
            l1 += d.abs();
            let s = if d > 0.0 {
                1.0
            } else if d < 0.0 {
                -1.0
            } else {
                0.0
            };
            grad.data[i * 4 + c] = lambda_l1 * s / n;
        }
    }
    l1 /= n;
    let mut ssim = 0.0;
    for c in 0..3 {
        let x: Vec<f64> = (0..w * h).map(|i| rendered.data[i * 4 + c]).collect();
        let y: Vec<f64> = (0..w * h).map(|i| target.data[i * 4 + c]).collect();
        let (s, g) = ssim_plane(&x, &y, w, h);
        ssim += s / 3.0;
        if lambda_ssim > 0.0 {
            for i in 0..w * h {
                grad.data[i * 4 + c] -= lambda_ssim * g[i] / 3.0;
            }
        }
    }
    Ok(PhotometricLoss {
        l1,
        ssim,
        total: lambda_l1 * l1 + lambda_ssim * (1.0 - ssim),
        grad,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearningRates {
    /// Local position, in triangle-scale units.
    pub position: f64,
    /// Log of the local scale.
    pub scale: f64,
    pub rotation: f64,
    /// Logit of the opacity.
    pub opacity: f64,
    pub sh: f64,
    /// Meters.
    pub translation: f64,
    /// Radians, global rotation.
    pub pose: f64,
    pub jaw: f64,
    pub expression: f64,
}

impl Default for LearningRates {
    fn default() -> Self {
        LearningRates {
            position: 2e-3,
            scale: 5e-3,
            rotation: 2e-3,
            opacity: 2e-2,
            sh: 5e-3,
            translation: 1e-4,
            pose: 1e-3,
            jaw: 1e-3,
            expression: 1e-2,
        }
    }
}

impl LearningRates {
    fn validate(&self) -> Result<()> {
        let all = [
            self.position,
            self.scale,
            self.rotation,
            self.opacity,
            self.sh,
            self.translation,
            self.pose,
            self.jaw,
            self.expression,
        ];
        if all.iter().all(|v| v.is_finite() && *v > 0.0) {
            Ok(())
        } else {
            Err(Error::param("learning rates must be positive"))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DensifySchedule {
    pub enabled: bool,
    pub interval: usize,
    pub start: usize,
    pub stop: usize,
    /// Threshold on the mean view-space gradient norm per 100 px of image width.
    pub grad_threshold_per_100px: f64,
    /// Largest local scale above which a Gaussian is split rather than cloned.
    pub size_split: f64,
    pub min_opacity: f64,
}

impl Default for DensifySchedule {
    fn default() -> Self {
        DensifySchedule {
            enabled: true,
            interval: 200,
            start: 500,
            stop: 5000,
            grad_threshold_per_100px: 2e-4,
            size_split: 0.25,
            min_opacity: DEFAULT_MIN_OPACITY,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    pub iterations: usize,
    pub learning_rates: LearningRates,
    pub lambda_l1: f64,
    pub lambda_ssim: f64,
    pub densify: DensifySchedule,
    pub optimize_head_params: bool,
    pub seed: u64,
    pub background: [f64; 3],
    /// Central-difference step for head parameters.
    pub head_fd_step: f64,
    /// A step is rejected when the loss exceeds this multiple of the running median.
    pub divergence_factor: f64,
    pub raster: RasterConfig,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            iterations: 2000,
            learning_rates: LearningRates::default(),
            lambda_l1: 0.8,
            lambda_ssim: 0.2,
            densify: DensifySchedule::default(),
            optimize_head_params: true,
            seed: 0,
            background: [0.0; 3],
            head_fd_step: 1e-4,
            divergence_factor: 10.0,
            raster: RasterConfig::default(),
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        self.learning_rates.validate()?;
        if !(self.lambda_l1 >= 0.0 && self.lambda_ssim >= 0.0) {
            return Err(Error::param("loss weights must be non-negative"));
        }
        if !(self.head_fd_step > 0.0 && self.divergence_factor > 1.0) {
            return Err(Error::param("head_fd_step must be positive and divergence_factor > 1"));
        }
        if self.densify.enabled && self.densify.interval == 0 {
            return Err(Error::param("densify interval must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingFrame {
    pub target: Image,
    pub camera: Camera,
    pub params: HeadParams,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub iteration: usize,
    pub l1: f64,
    pub ssim: f64,
    pub total: f64,
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub scene: BoundScene,
    pub params: Vec<HeadParams>,
    /// Loss before each accepted step, then once more at the final iterate.
    pub loss_curve: Vec<LossRecord>,
    pub rejected_steps: usize,
}

/// Globalize `scene` on the mesh posed by `params`.
pub fn posed_gaussians(scene: &BoundScene, rig: &HeadRig, params: &HeadParams) -> Result<Vec<GaussianPrimitive>> {
    Ok(scene.globalize(&rig.pose(params)?)?.gaussians)
}

/// Render the avatar for one set of head parameters.
pub fn render_avatar(
    renderer: &Renderer,
    scene: &BoundScene,
    rig: &HeadRig,
    params: &HeadParams,
    cam: &Camera,
    background: [f64; 3],
) -> Result<Image> {
    renderer.render(&posed_gaussians(scene, rig, params)?, cam, background)
}

/// Packed Gaussian parameters: local mu (3), log scale (3), raw quaternion
/// wxyz (4), opacity logit (1), SH (3 per coefficient).
#[derive(Debug, Clone)]
struct Packed {
    data: Vec<f64>,
    triangle_ids: Vec<usize>,
    stride: usize,
    num_triangles: usize,
    sh_degree: usize,
}

fn logit(p: f64) -> f64 {
    let p = p.clamp(1e-12, 1.0 - 1e-12);
    (p / (1.0 - p)).ln()
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

impl Packed {
    fn from_scene(scene: &BoundScene) -> Self {
        let stride = 11 + 3 * sh_coeff_count(scene.sh_degree);
        let mut data = Vec::with_capacity(stride * scene.len());
        for b in &scene.bound {
            data.extend(b.local_mu.iter());
            data.extend(b.local_scale.iter().map(|s| s.ln()));
            let q = b.local_rotation.quaternion();
            data.extend([q.w, q.i, q.j, q.k]);
            data.push(logit(b.opacity));
            data.extend(b.sh.iter().flatten());
        }
        Packed {
            data,
            triangle_ids: scene.bound.iter().map(|b| b.triangle_id).collect(),
            stride,
            num_triangles: scene.num_triangles(),
            sh_degree: scene.sh_degree,
        }
    }

    fn to_scene(&self) -> Result<BoundScene> {
        let bound = self
            .data
            .chunks_exact(self.stride)
            .zip(&self.triangle_ids)
            .map(|(p, &triangle_id)| BoundGaussian {
                triangle_id,
                local_mu: Vector3::new(p[0], p[1], p[2]),
                local_scale: Vector3::new(p[3].exp(), p[4].exp(), p[5].exp()),
                local_rotation: UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(p[6], p[7], p[8], p[9])),
                opacity: sigmoid(p[10]),
                sh: p[11..].chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect(),
            })
            .collect();
        BoundScene::new(bound, self.num_triangles, self.sh_degree)
    }

    fn learning_rates(&self, lr: &LearningRates) -> Vec<f64> {
        let mut one = vec![lr.position; 3];
        one.extend([lr.scale; 3]);
        one.extend([lr.rotation; 4]);
        one.push(lr.opacity);
        one.extend(vec![lr.sh; self.stride - 11]);
        one.iter().copied().cycle().take(self.data.len()).collect()
    }

    /// Renormalize the stored quaternions after a step.
    fn normalize_rotations(&mut self) {
        for p in self.data.chunks_exact_mut(self.stride) {
            let n = (p[6] * p[6] + p[7] * p[7] + p[8] * p[8] + p[9] * p[9]).sqrt();
            for v in &mut p[6..10] {
                *v /= n;
            }
        }
    }
}

/// Chain world-space Gaussian gradients to packed local parameters.
fn chain_to_local(
    packed: &Packed,
    scene: &BoundScene,
    frames: &[crate::binding::TriangleFrame],
    world: &[GaussianPrimitive],
    grads: &[GaussianGrad],
    out: &mut [f64],
) {
    for (i, ((b, g), gw)) in scene.bound.iter().zip(grads).zip(world).enumerate() {
        let f = &frames[b.triangle_id];
        let o = &mut out[i * packed.stride..(i + 1) * packed.stride];
        let d_mu = f.matrix().transpose() * g.mu * f.tri_scale;
        let d_log_scale = g.scale.component_mul(&gw.scale);
        let d_q = quat_left_matrix(f.rotation.quaternion()).transpose() * g.rotation;
        let d_logit = g.opacity * b.opacity * (1.0 - b.opacity);
        o[0..3].copy_from_slice(d_mu.as_slice());
        o[3..6].copy_from_slice(d_log_scale.as_slice());
        o[6..10].copy_from_slice(d_q.as_slice());
        o[10] = d_logit;
        for (k, c) in g.sh.iter().enumerate() {
            o[11 + 3 * k..14 + 3 * k].copy_from_slice(c);
        }
    }
}

/// Head parameters of one frame in optimization coordinates: translation (3),
/// rotation-vector delta left-multiplied onto the initial rotation (3), jaw (3),
/// expression.
#[derive(Debug, Clone)]
struct HeadVars {
    base: HeadParams,
    vars: Vec<f64>,
}

impl HeadVars {
    fn new(p: &HeadParams) -> Self {
        let mut vars = p.translation.as_slice().to_vec();
        vars.extend([0.0; 3]);
        vars.extend(p.jaw.iter());
        vars.extend(&p.expression);
        HeadVars { base: p.clone(), vars }
    }

    fn params_at(&self, vars: &[f64]) -> HeadParams {
        let delta = UnitQuaternion::from_scaled_axis(Vector3::new(vars[3], vars[4], vars[5]));
        HeadParams {
            shape: self.base.shape.clone(),
            expression: vars[9..].to_vec(),
            jaw: Vector3::new(vars[6], vars[7], vars[8]),
            global_rotation: delta * self.base.global_rotation,
            translation: Vector3::new(vars[0], vars[1], vars[2]),
        }
    }

    fn params(&self) -> HeadParams {
        self.params_at(&self.vars)
    }

    fn learning_rates(&self, lr: &LearningRates) -> Vec<f64> {
        let mut out = vec![lr.translation; 3];
        out.extend([lr.pose; 3]);
        out.extend([lr.jaw; 3]);
        out.extend(vec![lr.expression; self.vars.len() - 9]);
        out
    }
}

fn quat_vec(q: &nalgebra::Quaternion<f64>) -> Vector4<f64> {
    Vector4::new(q.w, q.i, q.j, q.k)
}

/// Gradient of a frame's loss with respect to its head variables: central
/// differences of the posed Gaussians, contracted with the render gradients.
fn head_gradient(
    scene: &BoundScene,
    rig: &HeadRig,
    head: &HeadVars,
    base_world: &[GaussianPrimitive],
    grads: &[GaussianGrad],
    step: f64,
) -> Result<Vec<f64>> {
    let mut out = vec![0.0; head.vars.len()];
    for (k, o) in out.iter_mut().enumerate() {
        let mut plus = head.vars.clone();
        let mut minus = head.vars.clone();
        plus[k] += step;
        minus[k] -= step;
        let gp = posed_gaussians(scene, rig, &head.params_at(&plus))?;
        let gm = posed_gaussians(scene, rig, &head.params_at(&minus))?;
        let mut acc = 0.0;
        for (((p, m), b), g) in gp.iter().zip(&gm).zip(base_world).zip(grads) {
            let qb = quat_vec(&b.rotation);
            let align = |q: &nalgebra::Quaternion<f64>| {
                let v = quat_vec(q);
                if v.dot(&qb) < 0.0 {
                    -v
                } else {
                    v
                }
            };
            acc += g.mu.dot(&(p.mu - m.mu));
            acc += g.scale.dot(&(p.scale - m.scale));
            acc += g.rotation.dot(&(align(&p.rotation) - align(&m.rotation)));
        }
        *o = acc / (2.0 * step);
    }
    Ok(out)
}

/// First and second moment estimates with per-entry learning rates.
#[derive(Debug, Clone)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(n: usize) -> Self {
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-15,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn reset(&mut self, n: usize) {
        *self = Adam { beta1: self.beta1, beta2: self.beta2, eps: self.eps, ..Adam::new(n) };
    }

    /// Descend: `x -= lr * m̂ / (sqrt(v̂) + eps)`.
    pub fn step(&mut self, x: &mut [f64], grad: &[f64], lr: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..x.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            x[i] -= lr[i] * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + self.eps);
        }
    }
}

struct FrameEval {
    l1: f64,
    ssim: f64,
    total: f64,
    local_grad: Vec<f64>,
    view_norms: Vec<f64>,
    head_grad: Vec<f64>,
}

struct Evaluator<'a> {
    frames: &'a [TrainingFrame],
    rig: &'a HeadRig,
    config: &'a FitConfig,
    renderer: Renderer,
}

impl Evaluator<'_> {
    fn eval_frame(&self, f: usize, packed: &Packed, scene: &BoundScene, head: &HeadVars, with_grad: bool) -> Result<FrameEval> {
        let frame = &self.frames[f];
        let mesh = self.rig.pose(&head.params())?;
        let tri_frames = triangle_frames(&mesh)?;
        let world = scene.globalize_with(&tri_frames).gaussians;
        let cfg = self.config;
        let bg = cfg.background;
        let img = self.renderer.render(&world, &frame.camera, bg)?;
        let loss = photometric_loss(&img, &frame.target, cfg.lambda_l1, cfg.lambda_ssim)?;
        let mut local_grad = Vec::new();
        let mut view_norms = Vec::new();
        let mut head_grad = Vec::new();
        if with_grad {
            let grads = self.renderer.render_backward(&world, &frame.camera, bg, &loss.grad)?;
            local_grad = vec![0.0; packed.data.len()];
            chain_to_local(packed, scene, &tri_frames, &world, &grads.gaussians, &mut local_grad);
            if cfg.optimize_head_params {
                head_grad = head_gradient(scene, self.rig, head, &world, &grads.gaussians, cfg.head_fd_step)?;
            }
            view_norms = grads.view_space_grad_norm;
        }
        Ok(FrameEval {
            l1: loss.l1,
            ssim: loss.ssim,
            total: loss.total,
            local_grad,
            view_norms,
            head_grad,
        })
    }

    fn eval_all(&self, packed: &Packed, heads: &[HeadVars], with_grad: bool) -> Result<Vec<FrameEval>> {
        let scene = packed.to_scene()?;
        par::map_range(self.frames.len(), |f| self.eval_frame(f, packed, &scene, &heads[f], with_grad))
            .into_iter()
            .collect()
    }
}

fn mean_record(iteration: usize, evals: &[FrameEval]) -> LossRecord {
    let n = evals.len() as f64;
    LossRecord {
        iteration,
        l1: evals.iter().map(|e| e.l1).sum::<f64>() / n,
        ssim: evals.iter().map(|e| e.ssim).sum::<f64>() / n,
        total: evals.iter().map(|e| e.total).sum::<f64>() / n,
    }
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    s[s.len() / 2]
}

fn state_dump(iteration: usize, record: &LossRecord, packed: &Packed, heads: &[HeadVars]) -> String {
    serde_json::json!({
        "iteration": iteration,
        "loss": record,
        "num_gaussians": packed.triangle_ids.len(),
        "gaussian_params": packed.data.iter().map(|v| if v.is_finite() { serde_json::json!(v) } else { serde_json::json!(v.to_string()) }).collect::<Vec<_>>(),
        "head_params": heads.iter().map(|h| h.params()).collect::<Vec<_>>(),
    })
    .to_string()
}

/// Optimize `init` and, when enabled, each frame's head parameters against
/// the target images.
pub fn fit(frames: &[TrainingFrame], rig: &HeadRig, init: &BoundScene, config: &FitConfig) -> Result<FitResult> {
    config.validate()?;
    if frames.is_empty() {
        return Err(Error::input("fit needs at least one training frame"));
    }
    if init.num_triangles() != rig.template.triangles.len() {
        return Err(Error::param("binding and head model triangle counts differ"));
    }
    for (i, f) in frames.iter().enumerate() {
        f.camera.validate()?;
        if f.target.width != f.camera.width || f.target.height != f.camera.height {
            return Err(Error::param(format!("frame {i}: image size does not match its camera")));
        }
        f.params.validate()?;
        if f.params.shape.len() != rig.basis.shape_dim || f.params.expression.len() != rig.basis.expression_dim {
            return Err(Error::param(format!("frame {i}: head parameters do not match the model")));
        }
    }
    if config.iterations == 0 {
        return Ok(FitResult {
            scene: init.clone(),
            params: frames.iter().map(|f| f.params.clone()).collect(),
            loss_curve: Vec::new(),
            rejected_steps: 0,
        });
    }

    let eval = Evaluator {
        frames,
        rig,
        config,
        renderer: Renderer::new(config.raster),
    };
    let lr = &config.learning_rates;
    let mut packed = Packed::from_scene(init);
    let mut heads: Vec<HeadVars> = frames.iter().map(|f| HeadVars::new(&f.params)).collect();
    let mut adam = Adam::new(packed.data.len());
    let mut head_adam: Vec<Adam> = heads.iter().map(|h| Adam::new(h.vars.len())).collect();
    let mut lr_packed = packed.learning_rates(lr);
    let head_lrs: Vec<Vec<f64>> = heads.iter().map(|h| h.learning_rates(lr)).collect();

    let width = frames[0].camera.width as f64;
    let mut grad_sum = vec![0.0; packed.triangle_ids.len()];
    let mut grad_count = vec![0usize; packed.triangle_ids.len()];
    let mut snapshot: Option<(Packed, Vec<HeadVars>)> = None;
    let mut curve = Vec::with_capacity(config.iterations + 1);
    let mut accepted: Vec<f64> = Vec::new();
    let mut rejected_steps = 0;

    for it in 0..config.iterations {
        let evals = eval.eval_all(&packed, &heads, true)?;
        let record = mean_record(it, &evals);
        if !record.total.is_finite() {
            return Err(Error::NonFinite {
                step: it,
                message: format!("photometric loss is {}", record.total),
                dump: state_dump(it, &record, &packed, &heads),
            });
        }
        let recent = &accepted[accepted.len().saturating_sub(50)..];
        if recent.len() >= 5 && record.total > config.divergence_factor * median(recent) {
            if let Some((p, h)) = snapshot.take() {
                log::warn!("iteration {it}: loss {} rejected, reverting the last step", record.total);
                packed = p;
                heads = h;
                adam.reset(packed.data.len());
                for (a, h) in head_adam.iter_mut().zip(&heads) {
                    a.reset(h.vars.len());
                }
                rejected_steps += 1;
                continue;
            }
        }
        accepted.push(record.total);
        curve.push(record);

        let n = evals.len() as f64;
        let mut grad = vec![0.0; packed.data.len()];
        for e in &evals {
            for (g, v) in grad.iter_mut().zip(&e.local_grad) {
                *g += v / n;
            }
            for (i, &v) in e.view_norms.iter().enumerate() {
                if v > 0.0 {
                    grad_sum[i] += v;
                    grad_count[i] += 1;
                }
            }
        }
        snapshot = Some((packed.clone(), heads.clone()));
        adam.step(&mut packed.data, &grad, &lr_packed);
        packed.normalize_rotations();
        if config.optimize_head_params {
            for (f, e) in evals.iter().enumerate() {
                let g: Vec<f64> = e.head_grad.iter().map(|v| v / n).collect();
                head_adam[f].step(&mut heads[f].vars, &g, &head_lrs[f]);
            }
        }

        let done = it + 1;
        let ds = &config.densify;
        if ds.enabled && done % ds.interval == 0 && done >= ds.start && done <= ds.stop {
            let norms: Vec<f64> = grad_sum
                .iter()
                .zip(&grad_count)
                .map(|(s, &c)| if c > 0 { s / c as f64 } else { 0.0 })
                .collect();
            let params = DensifyParams {
                grad_threshold: ds.grad_threshold_per_100px * width / 100.0,
                size_split: ds.size_split,
                seed: config.seed.wrapping_add(done as u64),
            };
            let scene = prune(&densify(&packed.to_scene()?, &norms, &params)?, ds.min_opacity)?;
            packed = Packed::from_scene(&scene);
            lr_packed = packed.learning_rates(lr);
            adam.reset(packed.data.len());
            grad_sum = vec![0.0; packed.triangle_ids.len()];
            grad_count = vec![0; packed.triangle_ids.len()];
            snapshot = None;
            // the loss level shifts with the new Gaussian set
            accepted.clear();
            log::debug!("iteration {done}: {} gaussians after densify/prune", scene.len());
        }
    }

    let evals = eval.eval_all(&packed, &heads, false)?;
    let record = mean_record(config.iterations, &evals);
    if !record.total.is_finite() {
        return Err(Error::NonFinite {
            step: config.iterations,
            message: format!("photometric loss is {}", record.total),
            dump: state_dump(config.iterations, &record, &packed, &heads),
        });
    }
    curve.push(record);
    Ok(FitResult {
        scene: packed.to_scene()?,
        params: heads.iter().map(HeadVars::params).collect(),
        loss_curve: curve,
        rejected_steps,
    })
}

/// Mean photometric loss of `scene` over `frames` at the frames' own head parameters.
pub fn evaluate(frames: &[TrainingFrame], rig: &HeadRig, scene: &BoundScene, config: &FitConfig) -> Result<LossRecord> {
    if frames.is_empty() {
        return Err(Error::input("no frames to evaluate"));
    }
    let eval = Evaluator {
        frames,
        rig,
        config,
        renderer: Renderer::new(config.raster),
    };
    let packed = Packed::from_scene(scene);
    let heads: Vec<HeadVars> = frames.iter().map(|f| HeadVars::new(&f.params)).collect();
    Ok(mean_record(0, &eval.eval_all(&packed, &heads, false)?))
}

/// Analytic-chain gradient of one frame's loss with respect to its head
/// variables (translation, rotation-vector delta, jaw, expression).
pub fn head_param_gradient(frame: &TrainingFrame, rig: &HeadRig, scene: &BoundScene, config: &FitConfig) -> Result<Vec<f64>> {
    let frames = std::slice::from_ref(frame);
    let cfg = FitConfig {
        optimize_head_params: true,
        ..*config
    };
    let eval = Evaluator {
        frames,
        rig,
        config: &cfg,
        renderer: Renderer::new(cfg.raster),
    };
    let packed = Packed::from_scene(scene);
    Ok(eval.eval_frame(0, &packed, scene, &HeadVars::new(&frame.params), true)?.head_grad)
}

/// Frame loss with head variables displaced from the frame's parameters.
/// Rotation entries are a rotation vector applied on the left.
pub fn loss_at_head_offset(frame: &TrainingFrame, rig: &HeadRig, scene: &BoundScene, config: &FitConfig, offset: &[f64]) -> Result<f64> {
    let head = HeadVars::new(&frame.params);
    if offset.len() != head.vars.len() {
        return Err(Error::param("offset length does not match head variables"));
    }
    let vars: Vec<f64> = head.vars.iter().zip(offset).map(|(a, b)| a + b).collect();
    let img = render_avatar(&Renderer::new(config.raster), scene, rig, &head.params_at(&vars), &frame.camera, config.background)?;
    Ok(photometric_loss(&img, &frame.target, config.lambda_l1, config.lambda_ssim)?.total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(w: usize, h: usize, rng: &mut ChaCha8Rng) -> Image {
        let mut img = Image::new(w, h, [0.0; 3]);
        for px in img.data.chunks_exact_mut(4) {
            for c in 0..3 {
                px[c] = rng.random_range(0.0..1.0);
            }
            px[3] = 1.0;
        }
        img
    }

    #[test]
    fn identical_images_give_zero_loss_and_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_image(9, 7, &mut rng);
        let l = photometric_loss(&a, &a, 0.8, 0.2).unwrap();
        assert!(l.total.abs() < 1e-12);
        assert!(l.grad.data.iter().all(|g| g.abs() < 1e-12));
    }

    #[test]
    fn constant_offset_is_pure_l1() {
        let a = Image::new(6, 6, [0.3, 0.4, 0.5]);
        let b = Image::new(6, 6, [0.4, 0.5, 0.6]);
        let l = photometric_loss(&a, &b, 0.8, 0.0).unwrap();
        assert!((l.total - 0.08).abs() < 1e-12);
    }

    #[test]
    fn loss_gradient_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a = random_image(13, 12, &mut rng);
        let b = random_image(13, 12, &mut rng);
        let l = photometric_loss(&a, &b, 0.8, 0.2).unwrap();
        let h = 1e-6;
        for i in (0..a.data.len()).filter(|i| i % 4 != 3).step_by(7) {
            let mut p = a.clone();
            let mut m = a.clone();
            p.data[i] += h;
            m.data[i] -= h;
            let fd = (photometric_loss(&p, &b, 0.8, 0.2).unwrap().total - photometric_loss(&m, &b, 0.8, 0.2).unwrap().total) / (2.0 * h);
            let an = l.grad.data[i];
            assert!((fd - an).abs() <= 1e-3 * fd.abs().max(an.abs()) + 1e-9, "{i}: {fd} vs {an}");
        }
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let a = Image::new(4, 4, [0.0; 3]);
        let b = Image::new(4, 5, [0.0; 3]);
        assert!(photometric_loss(&a, &b, 1.0, 0.0).is_err());
        assert!(photometric_loss(&a, &a, -1.0, 0.0).is_err());
    }

    #[test]
    fn adam_first_step_has_learning_rate_magnitude() {
        let mut adam = Adam::new(2);
        let mut x = [1.0, 1.0];
        adam.step(&mut x, &[3.0, -0.001], &[0.1, 0.1]);
        assert!((x[0] - 0.9).abs() < 1e-9 && (x[1] - 1.1).abs() < 1e-9);
    }
}

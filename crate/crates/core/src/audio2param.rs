//! Causal transformer decoder from per-frame audio features to jaw and
//! expression parameters, with a style embedding of the identity template.
//!
//! Forward pass:
//!
//! ```text
//! C    = A W_a + b_a                          audio projection, T x d_m
//! X    = C + PPE(t mod p)
//! X   += SelfAttn(LN(X))                      causal mask
//! X   += CrossAttn(LN(X), C)                  alignment mask
//! X   += FFN(LN(X))                           per layer, L layers
//! O_v  = LN(X)
//! O_sv = O_v + S                              S = style(template - mean head)
//! M    = tanh(O_sv) W_o + b_o                 (jaw axis-angle, expression)
//! ```
//!
//! Gradients are hand-written reverse mode, checked against central
//! differences in the tests.

use nalgebra::{Matrix3, Vector3};
use ndarray::{s, Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::binding::BoundScene;
use crate::fitter::{render_avatar, Adam};
use crate::geometry::{axis_angle_matrix, d_rotate_d_axis_angle};
use crate::head_model::{pose_mesh, BlendshapeBasis, HeadParams, HeadRig, Mesh, TemplateMesh};
use crate::rasterizer::{Camera, Image, Renderer};

pub const DEFAULT_FRAME_RATE: f64 = 25.0;
pub const DEFAULT_LEARNING_RATE: f64 = 1e-4;
/// Template displacements are divided by this (meters) before the style encoder.
pub const STYLE_INPUT_SCALE: f64 = 0.01;
const LN_EPS: f64 = 1e-5;
const PPE_BASE: f64 = 10000.0;

/// Per-frame audio features, T x d_a.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioFeatureSequence {
    pub features: Array2<f64>,
    pub frame_rate: f64,
}

impl AudioFeatureSequence {
    pub fn new(features: Array2<f64>, frame_rate: f64) -> Result<Self> {
        if features.nrows() == 0 || features.ncols() == 0 {
            return Err(Error::param("audio features need at least one frame and one dimension"));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::param("audio features contain non-finite values"));
        }
        if !(frame_rate.is_finite() && frame_rate > 0.0) {
            return Err(Error::param(format!("frame rate must be positive, got {frame_rate}")));
        }
        Ok(Self { features, frame_rate })
    }

    pub fn len(&self) -> usize {
        self.features.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.features.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }
}

/// Jaw axis-angle (T x 3) and expression (T x B_e) per frame.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictedMotion {
    pub jaw: Array2<f64>,
    pub expression: Array2<f64>,
}

impl PredictedMotion {
    pub fn len(&self) -> usize {
        self.jaw.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.jaw.nrows() == 0
    }

    pub fn zeros(frames: usize, expression_dim: usize) -> Self {
        PredictedMotion {
            jaw: Array2::zeros((frames, 3)),
            expression: Array2::zeros((frames, expression_dim)),
        }
    }

    fn from_output(m: &Array2<f64>) -> Self {
        PredictedMotion {
            jaw: m.slice(s![.., 0..3]).to_owned(),
            expression: m.slice(s![.., 3..]).to_owned(),
        }
    }

    fn jaw_at(&self, t: usize) -> Vector3<f64> {
        Vector3::new(self.jaw[[t, 0]], self.jaw[[t, 1]], self.jaw[[t, 2]])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct A2PConfig {
    pub audio_dim: usize,
    pub model_dim: usize,
    pub layers: usize,
    pub heads: usize,
    /// Period of the positional encoding, frames.
    pub period: usize,
    pub ff_dim: usize,
    pub style_hidden: usize,
    pub expression_dim: usize,
    /// Number of template vertices the style encoder expects.
    pub num_vertices: usize,
}

impl Default for A2PConfig {
    fn default() -> Self {
        A2PConfig {
            audio_dim: 29,
            model_dim: 64,
            layers: 4,
            heads: 4,
            period: 30,
            ff_dim: 128,
            style_hidden: 64,
            expression_dim: crate::head_model::DEFAULT_EXPRESSION_DIM,
            num_vertices: 0,
        }
    }
}

impl A2PConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            self.audio_dim,
            self.model_dim,
            self.layers,
            self.heads,
            self.period,
            self.ff_dim,
            self.style_hidden,
            self.num_vertices,
        ];
        if dims.contains(&0) {
            return Err(Error::param("audio2param dimensions must be positive"));
        }
        if !self.model_dim.is_multiple_of(self.heads) {
            return Err(Error::param(format!(
                "model_dim {} is not divisible by {} heads",
                self.model_dim, self.heads
            )));
        }
        Ok(())
    }

    pub fn output_dim(&self) -> usize {
        3 + self.expression_dim
    }
}

/// Affine map `x W + b`, `b` stored as a 1 x out row.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub w: Array2<f64>,
    pub b: Array2<f64>,
}

impl Linear {
    fn init(inp: usize, out: usize, gain: f64, rng: &mut ChaCha8Rng) -> Self {
        let normal = Normal::new(0.0, gain / (inp as f64).sqrt()).expect("valid std");
        Linear {
            w: Array2::from_shape_fn((inp, out), |_| normal.sample(rng)),
            b: Array2::zeros((1, out)),
        }
    }

    fn zeros_like(&self) -> Self {
        Linear {
            w: Array2::zeros(self.w.raw_dim()),
            b: Array2::zeros(self.b.raw_dim()),
        }
    }

    fn forward(&self, x: &Array2<f64>) -> Array2<f64> {
        x.dot(&self.w) + &self.b
    }

    /// Accumulate parameter gradients, return the input gradient.
    fn backward(&self, x: &Array2<f64>, dy: &Array2<f64>, grad: &mut Linear) -> Array2<f64> {
        grad.w += &x.t().dot(dy);
        grad.b += &dy.sum_axis(Axis(0)).insert_axis(Axis(0));
        dy.dot(&self.w.t())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm {
    pub gain: Array2<f64>,
    pub bias: Array2<f64>,
}

struct LnCache {
    xhat: Array2<f64>,
    inv_std: Vec<f64>,
}

impl LayerNorm {
    fn new(d: usize) -> Self {
        LayerNorm {
            gain: Array2::ones((1, d)),
            bias: Array2::zeros((1, d)),
        }
    }

    fn zeros_like(&self) -> Self {
        LayerNorm {
            gain: Array2::zeros(self.gain.raw_dim()),
            bias: Array2::zeros(self.bias.raw_dim()),
        }
    }

    fn forward(&self, x: &Array2<f64>) -> (Array2<f64>, LnCache) {
        let d = x.ncols() as f64;
        let mut xhat = x.clone();
        let mut inv_std = Vec::with_capacity(x.nrows());
        for mut row in xhat.rows_mut() {
            let mean = row.sum() / d;
            row.mapv_inplace(|v| v - mean);
            let var = row.iter().map(|v| v * v).sum::<f64>() / d;
            let inv = 1.0 / (var + LN_EPS).sqrt();
            row.mapv_inplace(|v| v * inv);
            inv_std.push(inv);
        }
        let y = &xhat * &self.gain + &self.bias;
        (y, LnCache { xhat, inv_std })
    }

    fn backward(&self, dy: &Array2<f64>, cache: &LnCache, grad: &mut LayerNorm) -> Array2<f64> {
        grad.gain += &(dy * &cache.xhat).sum_axis(Axis(0)).insert_axis(Axis(0));
        grad.bias += &dy.sum_axis(Axis(0)).insert_axis(Axis(0));
        let dxhat = dy * &self.gain;
        let d = dy.ncols() as f64;
        let mut dx = Array2::zeros(dy.raw_dim());
        for i in 0..dy.nrows() {
            let g = dxhat.row(i);
            let xh = cache.xhat.row(i);
            let sum_g = g.sum();
            let sum_gx = g.dot(&xh);
            let inv = cache.inv_std[i];
            for j in 0..dy.ncols() {
                dx[[i, j]] = inv / d * (d * g[j] - sum_g - xh[j] * sum_gx);
            }
        }
        dx
    }
}

/// Multi-head attention without projection biases.
#[derive(Debug, Clone, PartialEq)]
pub struct Attention {
    pub wq: Array2<f64>,
    pub wk: Array2<f64>,
    pub wv: Array2<f64>,
    pub wo: Array2<f64>,
}

struct AttnCache {
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    /// Per head, T x T attention weights.
    probs: Vec<Array2<f64>>,
    concat: Array2<f64>,
}

impl Attention {
    fn init(d: usize, rng: &mut ChaCha8Rng) -> Self {
        let normal = Normal::new(0.0, 1.0 / (d as f64).sqrt()).expect("valid std");
        let mut m = || Array2::from_shape_fn((d, d), |_| normal.sample(rng));
        Attention {
            wq: m(),
            wk: m(),
            wv: m(),
            wo: m(),
        }
    }

    fn zeros_like(&self) -> Self {
        let z = Array2::zeros(self.wq.raw_dim());
        Attention {
            wq: z.clone(),
            wk: z.clone(),
            wv: z.clone(),
            wo: z,
        }
    }

    /// Query row `i` attends to key rows `j <= i`.
    fn forward(&self, xq: &Array2<f64>, y: &Array2<f64>, heads: usize) -> (Array2<f64>, AttnCache) {
        let q = xq.dot(&self.wq);
        let k = y.dot(&self.wk);
        let v = y.dot(&self.wv);
        let (t, d) = (q.nrows(), q.ncols());
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut concat = Array2::zeros((t, d));
        let mut probs = Vec::with_capacity(heads);
        for h in 0..heads {
            let cols = s![.., h * dh..(h + 1) * dh];
            let qh = q.slice(cols);
            let kh = k.slice(cols);
            let vh = v.slice(cols);
            let scores = qh.dot(&kh.t()) * scale;
            let mut p = Array2::zeros((t, t));
            for i in 0..t {
                let row = scores.row(i);
                let max = (0..=i).map(|j| row[j]).fold(f64::NEG_INFINITY, f64::max);
                let mut z = 0.0;
                for j in 0..=i {
                    let e = (row[j] - max).exp();
                    p[[i, j]] = e;
                    z += e;
                }
                for j in 0..=i {
                    p[[i, j]] /= z;
                }
            }
            concat.slice_mut(cols).assign(&p.dot(&vh));
            probs.push(p);
        }
        let out = concat.dot(&self.wo);
        (out, AttnCache { q, k, v, probs, concat })
    }

    /// Returns (d xq, d y).
    fn backward(&self, xq: &Array2<f64>, y: &Array2<f64>, dout: &Array2<f64>, cache: &AttnCache, heads: usize, grad: &mut Attention) -> (Array2<f64>, Array2<f64>) {
        grad.wo += &cache.concat.t().dot(dout);
        let dconcat = dout.dot(&self.wo.t());
        let (t, d) = (cache.q.nrows(), cache.q.ncols());
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut dq = Array2::zeros((t, d));
        let mut dk = Array2::zeros((t, d));
        let mut dv = Array2::zeros((t, d));
        for h in 0..heads {
            let cols = s![.., h * dh..(h + 1) * dh];
            let p = &cache.probs[h];
            let doh = dconcat.slice(cols);
            let dp = doh.dot(&cache.v.slice(cols).t());
            dv.slice_mut(cols).assign(&p.t().dot(&doh));
            let mut ds = Array2::zeros((t, t));
            for i in 0..t {
                let dot: f64 = (0..=i).map(|j| dp[[i, j]] * p[[i, j]]).sum();
                for j in 0..=i {
                    ds[[i, j]] = p[[i, j]] * (dp[[i, j]] - dot) * scale;
                }
            }
            dq.slice_mut(cols).assign(&ds.dot(&cache.k.slice(cols)));
            dk.slice_mut(cols).assign(&ds.t().dot(&cache.q.slice(cols)));
        }
        grad.wq += &xq.t().dot(&dq);
        grad.wk += &y.t().dot(&dk);
        grad.wv += &y.t().dot(&dv);
        let dxq = dq.dot(&self.wq.t());
        let dy = dk.dot(&self.wk.t()) + dv.dot(&self.wv.t());
        (dxq, dy)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecoderLayer {
    pub ln_self: LayerNorm,
    pub self_attn: Attention,
    pub ln_cross: LayerNorm,
    pub cross_attn: Attention,
    pub ln_ff: LayerNorm,
    pub ff1: Linear,
    pub ff2: Linear,
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + 0.044715 * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}

struct LayerCache {
    ln_self: LnCache,
    h_self: Array2<f64>,
    self_attn: AttnCache,
    ln_cross: LnCache,
    h_cross: Array2<f64>,
    cross_attn: AttnCache,
    ln_ff: LnCache,
    h_ff: Array2<f64>,
    pre_act: Array2<f64>,
    act: Array2<f64>,
}

impl DecoderLayer {
    fn init(cfg: &A2PConfig, rng: &mut ChaCha8Rng) -> Self {
        let d = cfg.model_dim;
        DecoderLayer {
            ln_self: LayerNorm::new(d),
            self_attn: Attention::init(d, rng),
            ln_cross: LayerNorm::new(d),
            cross_attn: Attention::init(d, rng),
            ln_ff: LayerNorm::new(d),
            ff1: Linear::init(d, cfg.ff_dim, 1.0, rng),
            ff2: Linear::init(cfg.ff_dim, d, 1.0, rng),
        }
    }

    fn zeros_like(&self) -> Self {
        DecoderLayer {
            ln_self: self.ln_self.zeros_like(),
            self_attn: self.self_attn.zeros_like(),
            ln_cross: self.ln_cross.zeros_like(),
            cross_attn: self.cross_attn.zeros_like(),
            ln_ff: self.ln_ff.zeros_like(),
            ff1: self.ff1.zeros_like(),
            ff2: self.ff2.zeros_like(),
        }
    }

    fn forward(&self, x: &Array2<f64>, c: &Array2<f64>, heads: usize) -> (Array2<f64>, LayerCache) {
        let (h_self, ln_self) = self.ln_self.forward(x);
        let (a, self_attn) = self.self_attn.forward(&h_self, &h_self, heads);
        let x_mid = x + &a;
        let (h_cross, ln_cross) = self.ln_cross.forward(&x_mid);
        let (b, cross_attn) = self.cross_attn.forward(&h_cross, c, heads);
        let x_ff = &x_mid + &b;
        let (h_ff, ln_ff) = self.ln_ff.forward(&x_ff);
        let pre_act = self.ff1.forward(&h_ff);
        let act = pre_act.mapv(gelu);
        let out = &x_ff + &self.ff2.forward(&act);
        let cache = LayerCache {
            ln_self,
            h_self,
            self_attn,
            ln_cross,
            h_cross,
            cross_attn,
            ln_ff,
            h_ff,
            pre_act,
            act,
        };
        (out, cache)
    }

    /// Returns (d x, d c).
    fn backward(&self, dout: &Array2<f64>, c: &Array2<f64>, cache: &LayerCache, heads: usize, grad: &mut DecoderLayer) -> (Array2<f64>, Array2<f64>) {
        let d_act = self.ff2.backward(&cache.act, dout, &mut grad.ff2);
        let d_pre = d_act * &cache.pre_act.mapv(gelu_grad);
        let d_hff = self.ff1.backward(&cache.h_ff, &d_pre, &mut grad.ff1);
        let dx_ff = dout + &self.ln_ff.backward(&d_hff, &cache.ln_ff, &mut grad.ln_ff);

        let (d_hcross, dc) = self
            .cross_attn
            .backward(&cache.h_cross, c, &dx_ff, &cache.cross_attn, heads, &mut grad.cross_attn);
        let dx_mid = &dx_ff + &self.ln_cross.backward(&d_hcross, &cache.ln_cross, &mut grad.ln_cross);

        let (dq, dkv) = self
            .self_attn
            .backward(&cache.h_self, &cache.h_self, &dx_mid, &cache.self_attn, heads, &mut grad.self_attn);
        let d_hself = dq + dkv;
        let dx = &dx_mid + &self.ln_self.backward(&d_hself, &cache.ln_self, &mut grad.ln_self);
        (dx, dc)
    }
}

/// All trainable tensors plus the mean head the style encoder is centered on.
#[derive(Debug, Clone, PartialEq)]
pub struct A2PWeights {
    pub config: A2PConfig,
    /// Flattened mean-head vertices, 1 x 3V.
    pub mean_head: Array2<f64>,
    pub audio_proj: Linear,
    pub style1: Linear,
    pub style2: Linear,
    pub layers: Vec<DecoderLayer>,
    pub ln_final: LayerNorm,
    pub motion: Linear,
    /// Optimizer steps applied so far; zero means untrained.
    pub steps_trained: usize,
}

impl A2PWeights {
    /// Random initialization from `seed`.
    pub fn init(config: A2PConfig, mean_head: &TemplateMesh, seed: u64) -> Result<Self> {
        config.validate()?;
        if mean_head.num_vertices() != config.num_vertices {
            return Err(Error::param(format!(
                "mean head has {} vertices, config expects {}",
                mean_head.num_vertices(),
                config.num_vertices
            )));
        }
        Self::init_flat(config, mean_head.flat_vertices(), seed)
    }

    /// All-zero weights for `config`, with `steps_trained` zero.
    pub fn zeros(config: A2PConfig, mean_head: Vec<f64>) -> Result<Self> {
        config.validate()?;
        Ok(Self::init_flat(config, mean_head, 0)?.zeros_like())
    }

    fn init_flat(config: A2PConfig, mean_head: Vec<f64>, seed: u64) -> Result<Self> {
        let style_in = 3 * config.num_vertices;
        let mean_head = Array2::from_shape_vec((1, style_in), mean_head)
            .map_err(|_| Error::param(format!("mean head needs {style_in} coordinates")))?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = config.model_dim;
        Ok(A2PWeights {
            config,
            mean_head,
            audio_proj: Linear::init(config.audio_dim, d, 1.0, &mut rng),
            style1: Linear::init(style_in, config.style_hidden, 1.0, &mut rng),
            style2: Linear::init(config.style_hidden, d, 1.0, &mut rng),
            layers: (0..config.layers).map(|_| DecoderLayer::init(&config, &mut rng)).collect(),
            ln_final: LayerNorm::new(d),
            motion: Linear::init(d, config.output_dim(), 0.1, &mut rng),
            steps_trained: 0,
        })
    }

    /// Same structure, all tensors zero.
    pub fn zeros_like(&self) -> Self {
        A2PWeights {
            config: self.config,
            mean_head: self.mean_head.clone(),
            audio_proj: self.audio_proj.zeros_like(),
            style1: self.style1.zeros_like(),
            style2: self.style2.zeros_like(),
            layers: self.layers.iter().map(DecoderLayer::zeros_like).collect(),
            ln_final: self.ln_final.zeros_like(),
            motion: self.motion.zeros_like(),
            steps_trained: self.steps_trained,
        }
    }

    /// Trainable tensors in a fixed order with stable names.
    pub fn tensors(&self) -> Vec<(String, &Array2<f64>)> {
        let mut out: Vec<(String, &Array2<f64>)> = vec![
            ("audio_proj.w".into(), &self.audio_proj.w),
            ("audio_proj.b".into(), &self.audio_proj.b),
            ("style1.w".into(), &self.style1.w),
            ("style1.b".into(), &self.style1.b),
            ("style2.w".into(), &self.style2.w),
            ("style2.b".into(), &self.style2.b),
        ];
        for (i, l) in self.layers.iter().enumerate() {
            let p = format!("layers.{i}");
            out.extend([
                (format!("{p}.ln_self.gain"), &l.ln_self.gain),
                (format!("{p}.ln_self.bias"), &l.ln_self.bias),
                (format!("{p}.self_attn.wq"), &l.self_attn.wq),
                (format!("{p}.self_attn.wk"), &l.self_attn.wk),
                (format!("{p}.self_attn.wv"), &l.self_attn.wv),
                (format!("{p}.self_attn.wo"), &l.self_attn.wo),
                (format!("{p}.ln_cross.gain"), &l.ln_cross.gain),
                (format!("{p}.ln_cross.bias"), &l.ln_cross.bias),
                (format!("{p}.cross_attn.wq"), &l.cross_attn.wq),
                (format!("{p}.cross_attn.wk"), &l.cross_attn.wk),
                (format!("{p}.cross_attn.wv"), &l.cross_attn.wv),
                (format!("{p}.cross_attn.wo"), &l.cross_attn.wo),
                (format!("{p}.ln_ff.gain"), &l.ln_ff.gain),
                (format!("{p}.ln_ff.bias"), &l.ln_ff.bias),
                (format!("{p}.ff1.w"), &l.ff1.w),
                (format!("{p}.ff1.b"), &l.ff1.b),
                (format!("{p}.ff2.w"), &l.ff2.w),
                (format!("{p}.ff2.b"), &l.ff2.b),
            ]);
        }
        out.extend([
            ("ln_final.gain".to_string(), &self.ln_final.gain),
            ("ln_final.bias".to_string(), &self.ln_final.bias),
            ("motion.w".to_string(), &self.motion.w),
            ("motion.b".to_string(), &self.motion.b),
        ]);
        out
    }

    /// Mutable view of [`tensors`](Self::tensors), same order.
    pub fn tensors_mut(&mut self) -> Vec<&mut Array2<f64>> {
        let mut out: Vec<&mut Array2<f64>> = vec![
            &mut self.audio_proj.w,
            &mut self.audio_proj.b,
            &mut self.style1.w,
            &mut self.style1.b,
            &mut self.style2.w,
            &mut self.style2.b,
        ];
        for l in &mut self.layers {
            out.extend([
                &mut l.ln_self.gain,
                &mut l.ln_self.bias,
                &mut l.self_attn.wq,
                &mut l.self_attn.wk,
                &mut l.self_attn.wv,
                &mut l.self_attn.wo,
                &mut l.ln_cross.gain,
                &mut l.ln_cross.bias,
                &mut l.cross_attn.wq,
                &mut l.cross_attn.wk,
                &mut l.cross_attn.wv,
                &mut l.cross_attn.wo,
                &mut l.ln_ff.gain,
                &mut l.ln_ff.bias,
                &mut l.ff1.w,
                &mut l.ff1.b,
                &mut l.ff2.w,
                &mut l.ff2.b,
            ]);
        }
        out.extend([
            &mut self.ln_final.gain,
            &mut self.ln_final.bias,
            &mut self.motion.w,
            &mut self.motion.b,
        ]);
        out
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        if let Some((name, _)) = self.tensors().into_iter().find(|(_, t)| t.iter().any(|v| !v.is_finite())) {
            return Err(Error::param(format!("weight tensor {name} is not finite")));
        }
        Ok(())
    }
}

/// Sinusoidal encoding at `t mod period`: sine on even, cosine on odd dimensions.
pub fn ppe(t: usize, model_dim: usize, period: usize) -> Vec<f64> {
    let pos = (t % period.max(1)) as f64;
    (0..model_dim)
        .map(|i| {
            let freq = PPE_BASE.powf(-((i - i % 2) as f64) / model_dim as f64);
            if i % 2 == 0 {
                (pos * freq).sin()
            } else {
                (pos * freq).cos()
            }
        })
        .collect()
}

pub fn ppe_table(frames: usize, model_dim: usize, period: usize) -> Array2<f64> {
    let mut out = Array2::zeros((frames, model_dim));
    for t in 0..frames {
        for (j, v) in ppe(t, model_dim, period).into_iter().enumerate() {
            out[[t, j]] = v;
        }
    }
    out
}

/// `mask[i][j]` is true when position `i` may attend to `j`, i.e. `j <= i`.
pub fn alignment_mask(frames: usize) -> Vec<Vec<bool>> {
    (0..frames).map(|i| (0..frames).map(|j| j <= i).collect()).collect()
}

/// Rowwise `O_v + S`.
pub fn combine_style(offsets: &Array2<f64>, style: &[f64]) -> Result<Array2<f64>> {
    if offsets.ncols() != style.len() {
        return Err(Error::param(format!(
            "latent width {} does not match style width {}",
            offsets.ncols(),
            style.len()
        )));
    }
    let s = Array2::from_shape_vec((1, style.len()), style.to_vec()).expect("row");
    Ok(offsets + &s)
}

fn style_input(template: &TemplateMesh, weights: &A2PWeights) -> Result<Array2<f64>> {
    if template.num_vertices() != weights.config.num_vertices {
        return Err(Error::param(format!(
            "template has {} vertices, model expects {}",
            template.num_vertices(),
            weights.config.num_vertices
        )));
    }
    let flat = Array2::from_shape_vec((1, 3 * template.num_vertices()), template.flat_vertices()).expect("3V entries");
    Ok((flat - &weights.mean_head) / STYLE_INPUT_SCALE)
}

/// Identity embedding `S` of a template.
pub fn style_encode(template: &TemplateMesh, weights: &A2PWeights) -> Result<Vec<f64>> {
    let x = style_input(template, weights)?;
    let h = weights.style1.forward(&x).mapv(f64::tanh);
    Ok(weights.style2.forward(&h).row(0).to_vec())
}

struct ForwardCache {
    audio: Array2<f64>,
    c: Array2<f64>,
    layers: Vec<LayerCache>,
    ln_final: LnCache,
    style_x: Array2<f64>,
    style_h: Array2<f64>,
    z: Array2<f64>,
}

fn check_audio(audio: &AudioFeatureSequence, weights: &A2PWeights) -> Result<()> {
    if audio.dim() != weights.config.audio_dim {
        return Err(Error::param(format!(
            "audio features have {} dimensions, model expects {}",
            audio.dim(),
            weights.config.audio_dim
        )));
    }
    Ok(())
}

fn forward(audio: &AudioFeatureSequence, template: &TemplateMesh, weights: &A2PWeights) -> Result<(Array2<f64>, ForwardCache)> {
    check_audio(audio, weights)?;
    let cfg = &weights.config;
    let a = audio.features.clone();
    let c = weights.audio_proj.forward(&a);
    let mut x = &c + &ppe_table(a.nrows(), cfg.model_dim, cfg.period);
    let mut caches = Vec::with_capacity(weights.layers.len());
    for layer in &weights.layers {
        let (y, cache) = layer.forward(&x, &c, cfg.heads);
        x = y;
        caches.push(cache);
    }
    let (o_v, ln_final) = weights.ln_final.forward(&x);
    let style_x = style_input(template, weights)?;
    let style_h = weights.style1.forward(&style_x).mapv(f64::tanh);
    let s = weights.style2.forward(&style_h);
    let z = (o_v + &s).mapv(f64::tanh);
    let out = weights.motion.forward(&z);
    Ok((
        out,
        ForwardCache {
            audio: a,
            c,
            layers: caches,
            ln_final,
            style_x,
            style_h,
            z,
        },
    ))
}

fn backward(weights: &A2PWeights, cache: &ForwardCache, d_out: &Array2<f64>) -> A2PWeights {
    let cfg = &weights.config;
    let mut g = weights.zeros_like();
    let dz = weights.motion.backward(&cache.z, d_out, &mut g.motion);
    let d_osv = dz * &cache.z.mapv(|z| 1.0 - z * z);
    let ds = d_osv.sum_axis(Axis(0)).insert_axis(Axis(0));
    let dh = weights.style2.backward(&cache.style_h, &ds, &mut g.style2);
    let du = dh * &cache.style_h.mapv(|h| 1.0 - h * h);
    weights.style1.backward(&cache.style_x, &du, &mut g.style1);

    let mut dx = weights.ln_final.backward(&d_osv, &cache.ln_final, &mut g.ln_final);
    let mut dc = Array2::zeros(cache.c.raw_dim());
    for ((layer, lc), lg) in weights.layers.iter().zip(&cache.layers).zip(g.layers.iter_mut()).rev() {
        let (dxi, dci) = layer.backward(&dx, &cache.c, lc, cfg.heads, lg);
        dx = dxi;
        dc += &dci;
    }
    dc += &dx;
    weights.audio_proj.backward(&cache.audio, &dc, &mut g.audio_proj);
    g
}

/// Teacher-forced decoding of jaw and expression for every audio frame.
pub fn predict(audio: &AudioFeatureSequence, template: &TemplateMesh, weights: &A2PWeights) -> Result<PredictedMotion> {
    let (out, _) = forward(audio, template, weights)?;
    Ok(PredictedMotion::from_output(&out))
}

/// Ground-truth meshes rebuilt from the jaw parameters alone.
pub fn jaw_isolated_gt(gt_params: &[HeadParams], template: &TemplateMesh, basis: &BlendshapeBasis) -> Result<Vec<Mesh>> {
    gt_params
        .iter()
        .map(|p| {
            let mut only_jaw = HeadParams::zeros(basis.shape_dim, basis.expression_dim);
            only_jaw.jaw = p.jaw;
            pose_mesh(template, basis, &only_jaw)
        })
        .collect()
}

/// Head parameters with the predicted jaw and expression of frame `t`, everything else neutral.
pub fn motion_params(pred: &PredictedMotion, t: usize, basis: &BlendshapeBasis) -> HeadParams {
    let mut p = HeadParams::zeros(basis.shape_dim, basis.expression_dim);
    p.jaw = pred.jaw_at(t);
    p.expression = pred.expression.row(t).to_vec();
    p
}

/// `Σ_t ‖M_gt′^t − M_pred^t‖_F` and its gradient with respect to the
/// predicted motion (T x (3 + B_e), jaw first).
pub fn vertex_loss(pred: &PredictedMotion, gt_meshes: &[Mesh], template: &TemplateMesh, basis: &BlendshapeBasis) -> Result<(f64, Array2<f64>)> {
    if pred.len() != gt_meshes.len() {
        return Err(Error::param(format!(
            "{} predicted frames for {} ground-truth meshes",
            pred.len(),
            gt_meshes.len()
        )));
    }
    if pred.expression.ncols() != basis.expression_dim {
        return Err(Error::param("predicted expression width does not match the basis"));
    }
    let be = basis.expression_dim;
    let nv = template.num_vertices();
    if let Some(i) = gt_meshes.iter().position(|m| m.num_vertices() != nv) {
        return Err(Error::param(format!("ground-truth mesh {i} has the wrong vertex count")));
    }
    let j = basis.jaw_joint;
    let mut total = 0.0;
    let mut grad = Array2::zeros((pred.len(), 3 + be));
    for t in 0..pred.len() {
        let omega = pred.jaw_at(t);
        let expr = pred.expression.row(t);
        let expr = expr.as_slice().map(<[f64]>::to_vec).unwrap_or_else(|| expr.to_vec());
        let mut resid = Vec::with_capacity(nv);
        let mut rots = Vec::with_capacity(nv);
        let mut sq = 0.0;
        for v in 0..nv {
            let p0 = template.vertices[v] + basis.expression_offset(v, &expr);
            let w = basis.jaw_weight[v];
            let d = p0 - j;
            let (p, r) = if w > 0.0 {
                let r = axis_angle_matrix(&(omega * w));
                (p0 + r * d - d, r)
            } else {
                (p0, Matrix3::identity())
            };
            let e = gt_meshes[t].vertices[v] - p;
            sq += e.norm_squared();
            resid.push(e);
            rots.push(r);
        }
        let norm = sq.sqrt();
        total += norm;
        if norm == 0.0 {
            continue;
        }
        // d norm / d p_v = -e_v / norm
        for v in 0..nv {
            let dp = -resid[v] / norm;
            let w = basis.jaw_weight[v];
            if w > 0.0 {
                let p0 = template.vertices[v] + basis.expression_offset(v, &expr);
                let jac = d_rotate_d_axis_angle(&(omega * w), &(p0 - j)) * w;
                let d_omega = jac.transpose() * dp;
                for a in 0..3 {
                    grad[[t, a]] += d_omega[a];
                }
            }
            let dp0 = rots[v].transpose() * dp;
            for k in 0..be {
                grad[[t, 3 + k]] += basis.expression_column(v, k).dot(&dp0);
            }
        }
    }
    Ok((total, grad))
}

/// One training sequence: audio, its tracked head parameters and the identity template.
#[derive(Debug, Clone)]
pub struct A2PSample {
    pub audio: AudioFeatureSequence,
    pub gt_params: Vec<HeadParams>,
    pub template: TemplateMesh,
}

/// Vertex loss of `weights` on a sample, and the weight gradient.
pub fn loss_and_gradient(weights: &A2PWeights, sample: &A2PSample, gt_meshes: &[Mesh], basis: &BlendshapeBasis) -> Result<(f64, A2PWeights)> {
    let (out, cache) = forward(&sample.audio, &sample.template, weights)?;
    let pred = PredictedMotion::from_output(&out);
    let (loss, d_out) = vertex_loss(&pred, gt_meshes, &sample.template, basis)?;
    Ok((loss, backward(weights, &cache, &d_out)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub steps: usize,
    pub learning_rate: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 5000,
            learning_rate: DEFAULT_LEARNING_RATE,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainResult {
    pub weights: A2PWeights,
    /// Summed vertex loss before each step.
    pub loss_curve: Vec<f64>,
}

/// Full-batch first-order training on the summed vertex loss of all samples.
pub fn train(init: A2PWeights, dataset: &[A2PSample], basis: &BlendshapeBasis, config: &TrainConfig) -> Result<TrainResult> {
    if dataset.is_empty() {
        return Err(Error::input("training needs at least one sequence"));
    }
    if !(config.learning_rate > 0.0 && config.learning_rate.is_finite()) {
        return Err(Error::param("learning rate must be positive"));
    }
    init.validate()?;
    if basis.expression_dim != init.config.expression_dim {
        return Err(Error::param("basis expression width does not match the model"));
    }
    let mut gts = Vec::with_capacity(dataset.len());
    for (i, s) in dataset.iter().enumerate() {
        check_audio(&s.audio, &init)?;
        if s.gt_params.len() != s.audio.len() {
            return Err(Error::param(format!(
                "sequence {i}: {} parameter frames for {} audio frames",
                s.gt_params.len(),
                s.audio.len()
            )));
        }
        gts.push(jaw_isolated_gt(&s.gt_params, &s.template, basis)?);
    }
    let mut weights = init;
    let sizes: Vec<usize> = weights.tensors().iter().map(|(_, t)| t.len()).collect();
    let n: usize = sizes.iter().sum();
    let mut adam = Adam::new(n);
    let lr = vec![config.learning_rate; n];
    let mut curve = Vec::with_capacity(config.steps);
    let mut flat = vec![0.0; n];
    let mut flat_grad = vec![0.0; n];
    for step in 0..config.steps {
        let mut loss = 0.0;
        flat_grad.iter_mut().for_each(|g| *g = 0.0);
        for (s, gt) in dataset.iter().zip(&gts) {
            let (l, g) = loss_and_gradient(&weights, s, gt, basis)?;
            loss += l;
            let mut off = 0;
            for (_, t) in g.tensors() {
                for (dst, v) in flat_grad[off..off + t.len()].iter_mut().zip(t.iter()) {
                    *dst += v;
                }
                off += t.len();
            }
        }
        if !loss.is_finite() || flat_grad.iter().any(|g| !g.is_finite()) {
            let dump = serde_json::json!({
                "step": step,
                "loss": loss.to_string(),
                "loss_curve_tail": &curve[curve.len().saturating_sub(10)..],
                "num_parameters": n,
            });
            return Err(Error::NonFinite {
                step,
                message: format!("vertex loss is {loss}"),
                dump: dump.to_string(),
            });
        }
        curve.push(loss);
        let mut off = 0;
        for t in weights.tensors_mut() {
            for (dst, v) in flat[off..off + t.len()].iter_mut().zip(t.iter()) {
                *dst = *v;
            }
            off += t.len();
        }
        adam.step(&mut flat, &flat_grad, &lr);
        let mut off = 0;
        for t in weights.tensors_mut() {
            let len = t.len();
            for (v, src) in t.iter_mut().zip(&flat[off..off + len]) {
                *v = *src;
            }
            off += len;
        }
        weights.steps_trained += 1;
    }
    Ok(TrainResult { weights, loss_curve: curve })
}

/// Per-frame head parameters for animation: reference pose, translation and
/// shape (cycled when shorter than the audio) with predicted jaw and expression.
/// `lip_only` zeroes the predicted expression and freezes pose and translation
/// at the first reference frame.
pub fn animate_params(pred: &PredictedMotion, reference: &[HeadParams], lip_only: bool) -> Result<Vec<HeadParams>> {
    if reference.is_empty() {
        return Err(Error::input("reference motion is empty"));
    }
    if let Some(r) = reference.iter().find(|r| r.expression.len() != pred.expression.ncols()) {
        return Err(Error::param(format!(
            "reference expression width {} does not match prediction width {}",
            r.expression.len(),
            pred.expression.ncols()
        )));
    }
    Ok((0..pred.len())
        .map(|t| {
            let r = if lip_only { &reference[0] } else { &reference[t % reference.len()] };
            HeadParams {
                shape: r.shape.clone(),
                expression: if lip_only {
                    vec![0.0; pred.expression.ncols()]
                } else {
                    pred.expression.row(t).to_vec()
                },
                jaw: pred.jaw_at(t),
                global_rotation: r.global_rotation,
                translation: r.translation,
            }
        })
        .collect())
}

/// Predict motion for `audio` and merge it with the reference motion.
/// Refuses weights that have never been trained.
pub fn animate_motion(
    audio: &AudioFeatureSequence,
    template: &TemplateMesh,
    weights: &A2PWeights,
    reference: &[HeadParams],
    lip_only: bool,
) -> Result<Vec<HeadParams>> {
    if weights.steps_trained == 0 {
        return Err(Error::State("audio2param weights are untrained".into()));
    }
    let pred = predict(audio, template, weights)?;
    animate_params(&pred, reference, lip_only)
}

/// Animated head parameters and the avatar rendered under them. Cameras are
/// used cyclically, one per frame.
#[allow(clippy::too_many_arguments)]
pub fn animate(
    audio: &AudioFeatureSequence,
    rig: &HeadRig,
    weights: &A2PWeights,
    avatar: &BoundScene,
    reference: &[HeadParams],
    cameras: &[Camera],
    background: [f64; 3],
    lip_only: bool,
) -> Result<(Vec<HeadParams>, Vec<Image>)> {
    if cameras.is_empty() {
        return Err(Error::input("animation needs at least one camera"));
    }
    let params = animate_motion(audio, &rig.template, weights, reference, lip_only)?;
    let renderer = Renderer::default();
    let frames = crate::par::map_range(params.len(), |t| {
        render_avatar(&renderer, avatar, rig, &params[t], &cameras[t % cameras.len()], background)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    Ok((params, frames))
}

/// Deterministic stand-in for speech features: a seeded syllable-modulated
/// harmonic waveform analysed by a linear filterbank, one row per video frame.
/// Returns the features and the per-frame amplitude envelope in [0, 1].
pub fn synthetic_features(frames: usize, dim: usize, frame_rate: f64, seed: u64) -> Result<(AudioFeatureSequence, Vec<f64>)> {
    use rand::Rng;
    if frames == 0 || dim == 0 {
        return Err(Error::param("synthetic features need frames and dimensions"));
    }
    const SAMPLE_RATE: f64 = 16000.0;
    const MAX_FREQ: f64 = 4000.0;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let hop = (SAMPLE_RATE / frame_rate).round() as usize;
    let n = frames * hop;

    // syllables: raised-cosine bumps of random length and height
    let mut env = vec![0.0; n];
    let mut pos = 0usize;
    while pos < n {
        let len = (rng.random_range(0.12..0.35) * SAMPLE_RATE) as usize;
        let gap = (rng.random_range(0.0..0.15) * SAMPLE_RATE) as usize;
        let height = rng.random_range(0.3..1.0);
        for i in 0..len.min(n - pos) {
            env[pos + i] = height * 0.5 * (1.0 - (std::f64::consts::TAU * i as f64 / len as f64).cos());
        }
        pos += len + gap;
    }
    let f0 = rng.random_range(110.0..180.0);
    let formant = rng.random_range(600.0..1200.0);
    let wave: Vec<f64> = (0..n)
        .map(|i| {
            let t = i as f64 / SAMPLE_RATE;
            let vibrato = 1.0 + 0.03 * (std::f64::consts::TAU * 3.0 * t).sin();
            let mut s = 0.0;
            for h in 1..=12 {
                let f = f0 * h as f64 * vibrato;
                let g = 1.0 / (1.0 + ((f - formant * (1.0 + 0.5 * env[i])) / 400.0).powi(2));
                s += g * (std::f64::consts::TAU * f * t).sin();
            }
            env[i] * s + 0.01 * rng.random_range(-1.0..1.0)
        })
        .collect();

    let mut planner = rustfft::FftPlanner::new();
    let fft = planner.plan_fft_forward(hop);
    let mut features = Array2::zeros((frames, dim));
    let mut envelope = Vec::with_capacity(frames);
    for t in 0..frames {
        let chunk = &wave[t * hop..(t + 1) * hop];
        let mut buf: Vec<rustfft::num_complex::Complex<f64>> = chunk
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let hann = 0.5 - 0.5 * (std::f64::consts::TAU * i as f64 / hop as f64).cos();
                rustfft::num_complex::Complex::new(x * hann, 0.0)
            })
            .collect();
        fft.process(&mut buf);
        let bin_hz = SAMPLE_RATE / hop as f64;
        for band in 0..dim {
            let lo = MAX_FREQ * band as f64 / dim as f64;
            let hi = MAX_FREQ * (band + 1) as f64 / dim as f64;
            let (mut e, mut count) = (0.0, 0usize);
            for (k, c) in buf.iter().enumerate().take(hop / 2) {
                let f = k as f64 * bin_hz;
                if f >= lo && f < hi {
                    e += c.norm_sqr();
                    count += 1;
                }
            }
            let e = if count > 0 { e / count as f64 } else { 0.0 };
            features[[t, band]] = (e / hop as f64 + 1e-6).ln() / 5.0 + 1.0;
        }
        envelope.push(env[t * hop..(t + 1) * hop].iter().sum::<f64>() / hop as f64);
    }
    Ok((AudioFeatureSequence::new(features, frame_rate)?, envelope))
}

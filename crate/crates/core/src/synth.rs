//! Deterministic synthetic data: a ground-truth avatar on a synthetic head,
//! talking-head motion driven by synthetic audio, mis-tracked parameters,
//! rendered frames, and wobbling keypoint clips.

use nalgebra::{UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::audio2param::{synthetic_features, AudioFeatureSequence};
use crate::binding::{BoundGaussian, BoundScene};
use crate::error::{Error, Result};
use crate::gaussian_scene::{rgb_to_sh_dc, sh_coeff_count};
use crate::head_model::{synthetic_head, HeadParams, HeadRig, SyntheticHeadConfig};
use crate::rasterizer::{Camera, Image, Renderer};
use crate::stability::{KeypointTrajectory, Roi};

const SKIN: [f64; 3] = [0.62, 0.45, 0.38];
const NOSE: [f64; 3] = [0.98, 0.95, 0.9];
/// Peak jaw opening, radians, at full audio envelope.
pub const JAW_GAIN: f64 = 0.3;

/// Ground-truth avatar: one Gaussian per triangle plus `extra` on random
/// triangles. Triangles touching the nose vertex are bright.
pub fn gt_avatar(rig: &HeadRig, extra: usize, sh_degree: usize, seed: u64) -> Result<BoundScene> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tris = &rig.template.triangles;
    let nose = rig.nose_vertex();
    let n_sh = sh_coeff_count(sh_degree);
    let make = |f: usize, rng: &mut ChaCha8Rng| {
        let base = if tris[f].contains(&nose) { NOSE } else { SKIN };
        let tint = rng.random_range(-0.08..0.08);
        let rgb = base.map(|c| (c + tint).clamp(0.0, 1.0));
        let mut sh = vec![[0.0; 3]; n_sh];
        sh[0] = rgb_to_sh_dc(rgb);
        for coef in sh.iter_mut().skip(1) {
            *coef = [0.0; 3].map(|_: f64| rng.random_range(-0.03..0.03));
        }
        BoundGaussian {
            triangle_id: f,
            local_mu: Vector3::new(rng.random_range(-0.15..0.15), rng.random_range(-0.15..0.15), rng.random_range(-0.02..0.02)),
            local_scale: Vector3::new(rng.random_range(0.3..0.5), rng.random_range(0.3..0.5), rng.random_range(0.02..0.05)),
            local_rotation: UnitQuaternion::from_axis_angle(&Vector3::z_axis(), rng.random_range(-0.5..0.5)),
            opacity: rng.random_range(0.75..0.95),
            sh,
        }
    };
    let mut bound: Vec<BoundGaussian> = (0..tris.len()).map(|f| make(f, &mut rng)).collect();
    for _ in 0..extra {
        let f = rng.random_range(0..tris.len());
        bound.push(make(f, &mut rng));
    }
    BoundScene::new(bound, tris.len(), sh_degree)
}

/// Jitter every local parameter of an avatar; used as a fitting start point.
pub fn perturb_avatar(scene: &BoundScene, amount: f64, seed: u64) -> Result<BoundScene> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, amount).map_err(|e| Error::param(e.to_string()))?;
    let mut n = || normal.sample(&mut rng);
    let bound = scene
        .bound
        .iter()
        .map(|b| {
            let mut b = b.clone();
            b.local_mu += Vector3::new(n(), n(), n() * 0.2);
            b.local_scale = b.local_scale.map(|s| s * (n()).exp());
            b.local_rotation = UnitQuaternion::from_scaled_axis(Vector3::new(n(), n(), n()) * 0.5) * b.local_rotation;
            b.opacity = (b.opacity + n() * 0.5).clamp(0.05, 0.99);
            for c in &mut b.sh {
                for v in c.iter_mut() {
                    *v += n();
                }
            }
            b
        })
        .collect();
    BoundScene::new(bound, scene.num_triangles(), scene.sh_degree)
}

/// Focal length that frames a head of about 0.24 m at `distance`.
pub fn head_focal(width: usize, distance: f64) -> f64 {
    0.8 * width as f64 * distance / 0.24
}

/// `n` cameras on a horizontal arc in front of the head, all aimed at the origin.
pub fn orbit_cameras(n: usize, width: usize, height: usize, distance: f64, spread: f64) -> Vec<Camera> {
    (0..n)
        .map(|i| {
            let u = if n > 1 { i as f64 / (n - 1) as f64 - 0.5 } else { 0.0 };
            let yaw = u * spread;
            let pitch = 0.15 * ((i % 3) as f64 - 1.0);
            let eye = Vector3::new(distance * yaw.sin() * pitch.cos(), distance * pitch.sin(), distance * yaw.cos() * pitch.cos());
            Camera::look_at(eye, Vector3::zeros(), Vector3::y(), head_focal(width, distance), width, height)
        })
        .collect()
}

pub fn front_camera(width: usize, height: usize, distance: f64) -> Camera {
    orbit_cameras(1, width, height, distance, 0.0).remove(0)
}

/// Smooth talking-head motion: slow head rotation and translation, jaw
/// opening following the audio envelope, slowly varying expression.
pub fn talking_motion(rig: &HeadRig, envelope: &[f64], fps: f64, seed: u64) -> Vec<HeadParams> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tau = std::f64::consts::TAU;
    let mut wave = |amp: f64, lo: f64, hi: f64| {
        let f = rng.random_range(lo..hi);
        let ph = rng.random_range(0.0..tau);
        move |t: f64| amp * (tau * f * t + ph).sin()
    };
    let yaw = wave(0.15, 0.15, 0.35);
    let pitch = wave(0.08, 0.1, 0.3);
    let roll = wave(0.04, 0.1, 0.3);
    let tx = wave(0.004, 0.1, 0.3);
    let ty = wave(0.003, 0.1, 0.3);
    let tz = wave(0.003, 0.1, 0.3);
    let expr: Vec<_> = (0..rig.basis.expression_dim).map(|_| wave(0.4, 0.2, 0.8)).collect();
    envelope
        .iter()
        .enumerate()
        .map(|(i, &e)| {
            let t = i as f64 / fps;
            let mut p = rig.neutral_params();
            p.global_rotation = UnitQuaternion::from_euler_angles(pitch(t), yaw(t), roll(t));
            p.translation = Vector3::new(tx(t), ty(t), tz(t));
            p.jaw = Vector3::new(JAW_GAIN * e, 0.0, 0.0);
            p.expression = expr.iter().map(|w| w(t)).collect();
            p
        })
        .collect()
}

/// Tracker errors: independent per-frame noise on translation (meters) and
/// global rotation (radians).
pub fn mis_track(params: &[HeadParams], translation_sigma: f64, rotation_sigma: f64, seed: u64) -> Vec<HeadParams> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let nt = Normal::new(0.0, translation_sigma.max(0.0)).expect("finite sigma");
    let nr = Normal::new(0.0, rotation_sigma.max(0.0)).expect("finite sigma");
    params
        .iter()
        .map(|p| {
            let mut q = p.clone();
            q.translation += Vector3::new(nt.sample(&mut rng), nt.sample(&mut rng), nt.sample(&mut rng));
            let d = Vector3::new(nr.sample(&mut rng), nr.sample(&mut rng), nr.sample(&mut rng));
            q.global_rotation = UnitQuaternion::from_scaled_axis(d) * q.global_rotation;
            q
        })
        .collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IdentityConfig {
    pub head: SyntheticHeadConfig,
    pub frames: usize,
    pub fps: f64,
    pub width: usize,
    pub height: usize,
    pub camera_distance: f64,
    pub audio_dim: usize,
    pub extra_gaussians: usize,
    pub sh_degree: usize,
    pub mis_track_translation: f64,
    pub mis_track_rotation: f64,
    pub seed: u64,
}

impl Default for IdentityConfig {
    fn default() -> Self {
        IdentityConfig {
            head: SyntheticHeadConfig::default(),
            frames: 100,
            fps: 25.0,
            width: 64,
            height: 64,
            camera_distance: 0.5,
            audio_dim: 29,
            extra_gaussians: 20,
            sh_degree: 1,
            mis_track_translation: 0.004,
            mis_track_rotation: 0.03,
            seed: 0,
        }
    }
}

/// Everything the pipeline needs for one synthetic speaker.
#[derive(Debug, Clone)]
pub struct SyntheticIdentity {
    pub rig: HeadRig,
    pub avatar: BoundScene,
    pub camera: Camera,
    pub background: [f64; 3],
    pub gt_params: Vec<HeadParams>,
    pub tracked_params: Vec<HeadParams>,
    pub frames: Vec<Image>,
    pub audio: AudioFeatureSequence,
    pub envelope: Vec<f64>,
}

pub fn synthetic_identity(cfg: &IdentityConfig) -> Result<SyntheticIdentity> {
    if cfg.frames < 2 {
        return Err(Error::param("synthetic identity needs at least 2 frames"));
    }
    let head = SyntheticHeadConfig {
        seed: cfg.head.seed ^ cfg.seed,
        ..cfg.head.clone()
    };
    let rig = synthetic_head(&head)?;
    let avatar = gt_avatar(&rig, cfg.extra_gaussians, cfg.sh_degree, cfg.seed.wrapping_add(1))?;
    let (audio, envelope) = synthetic_features(cfg.frames, cfg.audio_dim, cfg.fps, cfg.seed.wrapping_add(2))?;
    let gt_params = talking_motion(&rig, &envelope, cfg.fps, cfg.seed.wrapping_add(3));
    let tracked_params = mis_track(&gt_params, cfg.mis_track_translation, cfg.mis_track_rotation, cfg.seed.wrapping_add(4));
    let camera = front_camera(cfg.width, cfg.height, cfg.camera_distance);
    let background = [0.0; 3];
    let renderer = Renderer::default();
    let frames = crate::par::map_slice(&gt_params, |p| {
        crate::fitter::render_avatar(&renderer, &avatar, &rig, p, &camera, background)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    Ok(SyntheticIdentity {
        rig,
        avatar,
        camera,
        background,
        gt_params,
        tracked_params,
        frames,
        audio,
        envelope,
    })
}

/// Pixel position of the nose vertex for one set of head parameters.
pub fn project_nose(rig: &HeadRig, params: &HeadParams, cam: &Camera) -> Result<[f64; 2]> {
    let mesh = rig.pose(params)?;
    let p = cam.world_to_cam * nalgebra::Point3::from(mesh.vertices[rig.nose_vertex()]);
    if p.z <= 0.0 {
        return Err(Error::Geometry("nose is behind the camera".into()));
    }
    Ok([cam.fx * p.x / p.z + cam.cx, cam.fy * p.y / p.z + cam.cy])
}

/// Square region of half-size `half` around the mean projected nose position,
/// clipped to the image.
pub fn nose_roi(rig: &HeadRig, params: &[HeadParams], cam: &Camera, half: usize) -> Result<Roi> {
    if params.is_empty() {
        return Err(Error::input("no head parameters"));
    }
    let mut c = [0.0; 2];
    for p in params {
        let q = project_nose(rig, p, cam)?;
        c[0] += q[0] / params.len() as f64;
        c[1] += q[1] / params.len() as f64;
    }
    let clip = |v: f64, max: usize| (v.round() as i64).clamp(0, max as i64) as usize;
    let x0 = clip(c[0] - half as f64, cam.width - 1);
    let y0 = clip(c[1] - half as f64, cam.height - 1);
    let x1 = clip(c[0] + half as f64 + 1.0, cam.width);
    let y1 = clip(c[1] + half as f64 + 1.0, cam.height);
    Ok(Roi {
        x: x0,
        y: y0,
        width: x1.saturating_sub(x0).max(1),
        height: y1.saturating_sub(y0).max(1),
    })
}

/// Ground-truth keypoints drifting on slow circles, and a generated copy with
/// per-keypoint sinusoidal jitter of `amplitude` pixels at 0.8 × Nyquist.
pub fn wobble_pair(amplitude: f64, frames: usize, keypoints: usize, fps: f64, seed: u64) -> Result<(KeypointTrajectory, KeypointTrajectory)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tau = std::f64::consts::TAU;
    let kp: Vec<([f64; 2], f64, f64, [f64; 2])> = (0..keypoints)
        .map(|_| {
            (
                [rng.random_range(16.0..48.0), rng.random_range(16.0..48.0)],
                rng.random_range(0.2..0.5),
                rng.random_range(0.0..tau),
                [rng.random_range(0.0..tau), rng.random_range(0.0..tau)],
            )
        })
        .collect();
    let jitter_hz = 0.8 * fps / 2.0;
    let mut gt = Vec::with_capacity(frames * keypoints);
    let mut gen = Vec::with_capacity(frames * keypoints);
    for t in 0..frames {
        let time = t as f64 / fps;
        for (base, f, ph, jph) in &kp {
            let a = tau * f * time + ph;
            let p = [base[0] + 3.0 * a.cos(), base[1] + 3.0 * a.sin()];
            gt.push(p);
            gen.push([
                p[0] + amplitude * (tau * jitter_hz * time + jph[0]).sin(),
                p[1] + amplitude * (tau * jitter_hz * time + jph[1]).sin(),
            ]);
        }
    }
    Ok((
        KeypointTrajectory::new(gen, frames, keypoints, fps)?,
        KeypointTrajectory::new(gt, frames, keypoints, fps)?,
    ))
}

/// Frames showing an isotropic bright blob at every keypoint on black.
pub fn blob_frames(traj: &KeypointTrajectory, width: usize, height: usize, sigma: f64) -> Vec<Image> {
    (0..traj.num_frames())
        .map(|t| {
            let mut img = Image::new(width, height, [0.0; 3]);
            for y in 0..height {
                for x in 0..width {
                    let mut v = 0.0;
                    for k in 0..traj.num_keypoints() {
                        let c = traj.point(t, k);
                        let d2 = (x as f64 - c[0]).powi(2) + (y as f64 - c[1]).powi(2);
                        v += (-d2 / (2.0 * sigma * sigma)).exp();
                    }
                    let v = v.min(1.0);
                    let i = (y * width + x) * 4;
                    img.data[i..i + 4].copy_from_slice(&[v, v, v, 1.0]);
                }
            }
            img
        })
        .collect()
}

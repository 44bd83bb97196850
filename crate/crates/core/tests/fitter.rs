use headsplat::binding::{BoundGaussian, BoundScene};
use headsplat::fitter::*;
use headsplat::head_model::{BlendshapeBasis, HeadParams, HeadRig, TemplateMesh};
use headsplat::rasterizer::{psnr, Camera, Image, RasterConfig, Renderer};
use headsplat::synth::{gt_avatar, orbit_cameras, perturb_avatar};
use headsplat::head_model::{synthetic_head, SyntheticHeadConfig};
use nalgebra::{UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn one_triangle_rig(rng: &mut ChaCha8Rng) -> HeadRig {
    let template = TemplateMesh::new(
        vec![
            Vector3::new(-0.03, -0.02, 0.0),
            Vector3::new(0.03, -0.02, 0.0),
            Vector3::new(0.0, 0.03, 0.0),
            Vector3::new(0.0, 0.0, -0.02),
        ],
        vec![[0, 1, 2]],
    )
    .unwrap();
    let (bs, be) = (2, 3);
    let basis = BlendshapeBasis {
        shape_basis: (0..4 * 3 * bs).map(|_| rng.random_range(-0.003..0.003)).collect(),
        shape_dim: bs,
        expression_basis: (0..4 * 3 * be).map(|_| rng.random_range(-0.004..0.004)).collect(),
        expression_dim: be,
        jaw_joint: Vector3::new(0.0, 0.01, -0.03),
        jaw_weight: vec![1.0, 0.7, 0.0, 0.5],
    };
    HeadRig::new(template, basis).unwrap()
}

fn random_target(w: usize, h: usize, rng: &mut ChaCha8Rng) -> Image {
    let mut img = Image::new(w, h, [0.0; 3]);
    for px in img.data.chunks_exact_mut(4) {
        for c in px[..3].iter_mut() {
            *c = rng.random_range(0.0..1.0);
        }
        px[3] = 1.0;
    }
    img
}

#[test]
fn head_gradient_matches_full_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let rig = one_triangle_rig(&mut rng);
    let scene = BoundScene::new(
        vec![BoundGaussian {
            triangle_id: 0,
            local_mu: Vector3::new(0.05, -0.03, 0.01),
            local_scale: Vector3::new(0.25, 0.18, 0.05),
            local_rotation: UnitQuaternion::from_euler_angles(0.2, -0.1, 0.4),
            opacity: 0.8,
            sh: vec![[0.1, -0.1, 0.05], [0.02, 0.01, -0.02], [0.03, 0.0, 0.01], [-0.01, 0.02, 0.0]],
        }],
        1,
        1,
    )
    .unwrap();
    // a wide footprint keeps the loss smooth where the FD probes it
    let config = FitConfig { raster: RasterConfig { sigma_extent: 7.0, ..Default::default() }, ..Default::default() };
    for trial in 0..3 {
        let mut params = HeadParams::zeros(2, 3);
        params.translation = Vector3::new(rng.random_range(-0.003..0.003), rng.random_range(-0.003..0.003), 0.0);
        params.global_rotation = UnitQuaternion::from_euler_angles(rng.random_range(-0.2..0.2), rng.random_range(-0.2..0.2), 0.0);
        params.jaw = Vector3::new(rng.random_range(0.0..0.2), 0.0, 0.0);
        params.expression = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
        let camera = Camera::look_at(Vector3::new(0.0, 0.0, 0.3), Vector3::zeros(), Vector3::y(), 150.0, 32, 32);
        let frame = TrainingFrame { target: random_target(32, 32, &mut rng), camera, params };
        let g = head_param_gradient(&frame, &rig, &scene, &config).unwrap();
        assert_eq!(g.len(), 12);
        let h = 1e-5;
        for i in 0..g.len() {
            let mut e = vec![0.0; g.len()];
            e[i] = h;
            let lp = loss_at_head_offset(&frame, &rig, &scene, &config, &e).unwrap();
            e[i] = -h;
            let lm = loss_at_head_offset(&frame, &rig, &scene, &config, &e).unwrap();
            let fd = (lp - lm) / (2.0 * h);
            assert!((fd - g[i]).abs() <= 5e-3 * fd.abs().max(g[i].abs()) + 1e-9, "trial {trial} var {i}: fd {fd} analytic {}", g[i]);
        }
    }
}

fn small_problem() -> (HeadRig, Vec<TrainingFrame>, BoundScene, BoundScene) {
    let rig = synthetic_head(&SyntheticHeadConfig { rings: 2, segments: 6, ..Default::default() }).unwrap();
    let gt = gt_avatar(&rig, 8, 1, 3).unwrap();
    let r = Renderer::default();
    let mut p = rig.neutral_params();
    p.jaw = Vector3::new(0.1, 0.0, 0.0);
    let frames: Vec<TrainingFrame> = orbit_cameras(3, 32, 32, 0.5, 1.2)
        .into_iter()
        .map(|c| TrainingFrame { target: render_avatar(&r, &gt, &rig, &p, &c, [0.0; 3]).unwrap(), camera: c, params: p.clone() })
        .collect();
    let init = perturb_avatar(&gt, 0.05, 9).unwrap();
    (rig, frames, gt, init)
}

#[test]
fn fitting_is_bit_identical_across_thread_counts() {
    let (rig, frames, _, init) = small_problem();
    let config = FitConfig {
        iterations: 40,
        densify: DensifySchedule { interval: 10, start: 10, stop: 30, grad_threshold_per_100px: 1e-6, ..Default::default() },
        ..Default::default()
    };
    let run = |threads: usize| {
        rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap().install(|| fit(&frames, &rig, &init, &config).unwrap())
    };
    let a = run(1);
    let b = run(3);
    assert!(a.scene.len() > init.len(), "densification ran");
    assert!(a.scene.per_triangle_count.iter().all(|&c| c >= 1));
    assert_eq!(a.loss_curve, b.loss_curve);
    assert_eq!(a.scene, b.scene);
    assert_eq!(a.params, b.params);
}

#[test]
fn fitting_reduces_the_training_loss() {
    let (rig, frames, _, init) = small_problem();
    let config = FitConfig { iterations: 150, densify: DensifySchedule { enabled: false, ..Default::default() }, ..Default::default() };
    let res = fit(&frames, &rig, &init, &config).unwrap();
    let first = res.loss_curve.first().unwrap().total;
    let last = res.loss_curve.last().unwrap().total;
    assert!(last < 0.2 * first, "{first} -> {last}");
    // the last curve entry is the loss of the returned scene and parameters,
    // up to the log/logit round trip of the packed state
    let refined: Vec<TrainingFrame> = frames.iter().zip(&res.params).map(|(f, p)| TrainingFrame { params: p.clone(), ..f.clone() }).collect();
    assert!((evaluate(&refined, &rig, &res.scene, &config).unwrap().total - last).abs() < 1e-12 * last);
    let r = Renderer::default();
    let img = render_avatar(&r, &res.scene, &rig, &res.params[0], &frames[0].camera, [0.0; 3]).unwrap();
    assert!(psnr(&img, &frames[0].target).unwrap() > 25.0);
}

#[test]
fn zero_iterations_return_the_inputs() {
    let (rig, frames, _, init) = small_problem();
    let res = fit(&frames, &rig, &init, &FitConfig { iterations: 0, ..Default::default() }).unwrap();
    assert_eq!(res.scene, init);
    assert_eq!(res.params, frames.iter().map(|f| f.params.clone()).collect::<Vec<_>>());
}

#[test]
fn non_finite_targets_abort_with_a_dump() {
    let (rig, mut frames, _, init) = small_problem();
    frames[1].target.data[5] = f64::NAN;
    let err = fit(&frames, &rig, &init, &FitConfig { iterations: 5, ..Default::default() }).unwrap_err();
    match err {
        headsplat::Error::NonFinite { dump, .. } => assert!(dump.contains("loss")),
        other => panic!("unexpected {other}"),
    }
}

//! Render and backward pass on a synthetic avatar: single-thread pool versus
//! the default pool. Build with `--no-default-features` to time the purely
//! sequential fallback.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use headsplat::fitter::{fit, posed_gaussians, FitConfig, TrainingFrame, DensifySchedule};
use headsplat::rasterizer::{Image, Renderer};
use headsplat::synth::{front_camera, gt_avatar, orbit_cameras};
use headsplat::head_model::{synthetic_head, SyntheticHeadConfig};

fn pools() -> Vec<(&'static str, rayon::ThreadPool)> {
    vec![
        ("sequential", rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap()),
        ("parallel", rayon::ThreadPoolBuilder::new().build().unwrap()),
    ]
}

fn render(c: &mut Criterion) {
    let rig = synthetic_head(&SyntheticHeadConfig::default()).unwrap();
    let avatar = gt_avatar(&rig, 400, 1, 0).unwrap();
    let scene = posed_gaussians(&avatar, &rig, &rig.neutral_params()).unwrap();
    let cam = front_camera(256, 256, 0.5);
    let r = Renderer::default();
    let mut d = Image::new(256, 256, [0.0; 3]);
    d.data.iter_mut().for_each(|v| *v = 1e-3);
    let mut group = c.benchmark_group("render_256");
    for (name, pool) in pools() {
        group.bench_function(BenchmarkId::new("forward", name), |b| b.iter(|| pool.install(|| r.render(&scene, &cam, [0.0; 3]).unwrap())));
        group.bench_function(BenchmarkId::new("backward", name), |b| {
            b.iter(|| pool.install(|| r.render_backward(&scene, &cam, [0.0; 3], &d).unwrap()))
        });
    }
    group.finish();
}

fn fit_steps(c: &mut Criterion) {
    let rig = synthetic_head(&SyntheticHeadConfig { rings: 2, segments: 6, ..Default::default() }).unwrap();
    let avatar = gt_avatar(&rig, 8, 1, 0).unwrap();
    let r = Renderer::default();
    let p = rig.neutral_params();
    let frames: Vec<TrainingFrame> = orbit_cameras(8, 64, 64, 0.5, 1.6)
        .into_iter()
        .map(|cam| TrainingFrame {
            target: headsplat::fitter::render_avatar(&r, &avatar, &rig, &p, &cam, [0.0; 3]).unwrap(),
            camera: cam,
            params: p.clone(),
        })
        .collect();
    let config = FitConfig { iterations: 10, densify: DensifySchedule { enabled: false, ..Default::default() }, ..Default::default() };
    let mut group = c.benchmark_group("fit_10_iterations_8_views");
    group.sample_size(10);
    for (name, pool) in pools() {
        group.bench_function(name, |b| b.iter(|| pool.install(|| fit(&frames, &rig, &avatar, &config).unwrap())));
    }
    group.finish();
}

criterion_group!(benches, render, fit_steps);
criterion_main!(benches);

use headsplat::stability::*;
use headsplat::synth::{blob_frames, wobble_pair};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_traj(rng: &mut ChaCha8Rng, t: usize, k: usize) -> KeypointTrajectory {
    let pts = (0..t * k).map(|_| [rng.random_range(0.0..64.0), rng.random_range(0.0..64.0)]).collect();
    KeypointTrajectory::new(pts, t, k, 25.0).unwrap()
}

fn direct_power(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    (0..n)
        .map(|k| {
            let (mut re, mut im) = (0.0, 0.0);
            for (t, v) in x.iter().enumerate() {
                let a = -2.0 * std::f64::consts::PI * (k * t % n) as f64 / n as f64;
                re += v * a.cos();
                im += v * a.sin();
            }
            re * re + im * im
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 300, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn parseval(signal in prop::collection::vec(-100.0..100.0f64, 4..200)) {
        let power: f64 = power_spectrum(&signal).iter().sum();
        let energy: f64 = signal.iter().map(|x| x * x).sum::<f64>() * signal.len() as f64;
        prop_assert!((power - energy).abs() <= 1e-9 * energy.max(1e-300));
    }

    #[test]
    fn components_are_bounded_and_offset_invariant(seed in any::<u64>(), dx in -50.0..50.0f64, dy in -50.0..50.0f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t = rng.random_range(4..40);
        let k = rng.random_range(1..4);
        let gen = random_traj(&mut rng, t, k);
        let gt = random_traj(&mut rng, t, k);
        let cfg = StabilityConfig::default();
        let a = stability_score(&gen, Some(&gt), &cfg).unwrap();
        for c in [a.motion_difference, a.motion_variability, a.high_freq_power, a.score] {
            prop_assert!((0.0..=1.0).contains(&c));
        }
        prop_assert_eq!(a.score, (a.motion_difference + a.motion_variability + a.high_freq_power) / 3.0);
        let b = stability_score(&gen.translated([dx, dy]), Some(&gt), &cfg).unwrap();
        prop_assert!((a.motion_difference - b.motion_difference).abs() < 1e-9);
        prop_assert!((a.motion_variability - b.motion_variability).abs() < 1e-9);
        prop_assert!((a.high_freq_power - b.high_freq_power).abs() < 1e-9);
        let same = stability_score(&gen, Some(&gen), &cfg).unwrap();
        prop_assert_eq!(same.motion_difference, 0.0);
        prop_assert_eq!(same.motion_variability, 0.0);
    }
}

#[test]
fn spectrum_matches_direct_dft() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for n in [4, 7, 16, 51, 100] {
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        for (a, b) in power_spectrum(&x).iter().zip(direct_power(&x)) {
            assert!((a - b).abs() < 1e-9 * b.max(1.0));
        }
    }
}

#[test]
fn straddling_sinusoids_split_like_the_direct_dft() {
    let n = 100;
    let fps = 25.0;
    let cutoff = 0.4;
    // 0.3 and 0.6 of Nyquist, amplitudes 2 and 1
    let sig: Vec<[f64; 2]> = (0..n)
        .map(|t| {
            let s = t as f64 / fps;
            let v = 2.0 * (std::f64::consts::TAU * 3.75 * s).sin() + (std::f64::consts::TAU * 7.5 * s + 0.3).cos();
            [v, 0.5 * v]
        })
        .collect();
    let traj = KeypointTrajectory::new(sig.clone(), n, 1, fps).unwrap();
    let got = high_freq_power(&traj, cutoff, true).unwrap();
    let xs: Vec<f64> = sig.iter().map(|p| p[0]).collect();
    let m = xs.iter().sum::<f64>() / n as f64;
    let centered: Vec<f64> = xs.iter().map(|x| x - m).collect();
    let p = direct_power(&centered);
    let total: f64 = p.iter().sum();
    let high: f64 = (0..n).filter(|&k| 2.0 * k.min(n - k) as f64 / n as f64 > cutoff).map(|k| p[k]).sum();
    assert!((got - high / total).abs() < 1e-10);
    assert!((got - 0.2).abs() < 1e-6);
}

#[test]
fn constant_trajectory_has_no_high_frequency_power() {
    let traj = KeypointTrajectory::new(vec![[3.0, 4.0]; 20], 20, 1, 25.0).unwrap();
    assert_eq!(high_freq_power(&traj, 0.4, true).unwrap(), 0.0);
}

#[test]
fn raw_components_match_direct_oracles() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..50 {
        let (t, k) = (rng.random_range(2..30), rng.random_range(1..5));
        let gen = random_traj(&mut rng, t, k);
        let gt = random_traj(&mut rng, t, k);
        let mut diffs = Vec::new();
        let mut mags = Vec::new();
        for f in 0..t - 1 {
            for j in 0..k {
                let dg = [gen.point(f + 1, j)[0] - gen.point(f, j)[0], gen.point(f + 1, j)[1] - gen.point(f, j)[1]];
                let dt = [gt.point(f + 1, j)[0] - gt.point(f, j)[0], gt.point(f + 1, j)[1] - gt.point(f, j)[1]];
                diffs.push(((dg[0] - dt[0]).powi(2) + (dg[1] - dt[1]).powi(2)).sqrt());
                mags.push(dg[0].hypot(dg[1]) - dt[0].hypot(dt[1]));
            }
        }
        let md = diffs.iter().sum::<f64>() / diffs.len() as f64;
        let mean = mags.iter().sum::<f64>() / mags.len() as f64;
        let vm = (mags.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / mags.len() as f64).sqrt();
        assert!((motion_difference(&gen, &gt).unwrap() - md).abs() < 1e-12);
        assert!((motion_variability(&gen, &gt).unwrap() - vm).abs() < 1e-12);
    }
}

#[test]
fn wobble_family_is_strictly_monotone() {
    for seed in 0..5 {
        let scores: Vec<f64> = [0.0, 1.0, 2.0, 4.0]
            .iter()
            .map(|&a| {
                let (gen, gt) = wobble_pair(a, 100, 5, 25.0, seed).unwrap();
                stability_score(&gen, Some(&gt), &StabilityConfig::default()).unwrap().score
            })
            .collect();
        assert!(scores.windows(2).all(|w| w[1] > w[0]), "seed {seed}: {scores:?}");
    }
}

fn roi() -> Roi {
    Roi { x: 0, y: 0, width: 48, height: 32 }
}

#[test]
fn tracked_blob_moves_one_pixel_per_frame() {
    let pts: Vec<[f64; 2]> = (0..12).map(|t| [14.0 + t as f64, 16.0]).collect();
    let traj = KeypointTrajectory::new(pts, 12, 1, 25.0).unwrap();
    let tracked = track_centroid(&blob_frames(&traj, 48, 32, 2.0), roi(), 25.0).unwrap();
    for t in 0..11 {
        let a = tracked.point(t, 0);
        let b = tracked.point(t + 1, 0);
        assert!((b[0] - a[0] - 1.0).abs() < 0.1 && (b[1] - a[1]).abs() < 0.1);
    }
}

#[test]
fn jittered_blob_has_more_high_frequency_power_than_a_static_one() {
    let still = KeypointTrajectory::new(vec![[24.0, 16.0]; 16], 16, 1, 25.0).unwrap();
    let jitter: Vec<[f64; 2]> = (0..16).map(|t| [24.0 + if t % 2 == 0 { 2.0 } else { 0.0 }, 16.0]).collect();
    let jitter = KeypointTrajectory::new(jitter, 16, 1, 25.0).unwrap();
    let a = track_centroid(&blob_frames(&still, 48, 32, 2.0), roi(), 25.0).unwrap();
    let b = track_centroid(&blob_frames(&jitter, 48, 32, 2.0), roi(), 25.0).unwrap();
    assert!(a.points().windows(2).all(|w| w[0] == w[1]));
    let hs = high_freq_power(&a, 0.4, true).unwrap();
    let hj = high_freq_power(&b, 0.4, true).unwrap();
    assert!(hj > hs && hj > 0.4, "{hj} vs {hs}");
}

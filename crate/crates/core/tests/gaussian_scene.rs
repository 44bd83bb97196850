use std::f64::consts::PI;

use headsplat::gaussian_scene::*;
use nalgebra::{Quaternion, SymmetricEigen, UnitQuaternion, Vector3};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn unit_quat() -> impl Strategy<Value = UnitQuaternion<f64>> {
    (-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64)
        .prop_filter("non-zero", |(w, x, y, z)| w * w + x * x + y * y + z * z > 1e-3)
        .prop_map(|(w, x, y, z)| UnitQuaternion::from_quaternion(Quaternion::new(w, x, y, z)))
}

fn scale() -> impl Strategy<Value = Vector3<f64>> {
    (-4.0..1.0f64, -4.0..1.0f64, -4.0..1.0f64).prop_map(|(a, b, c)| Vector3::new(a.exp(), b.exp(), c.exp()))
}

fn point() -> impl Strategy<Value = Vector3<f64>> {
    (-2.0..2.0f64, -2.0..2.0f64, -2.0..2.0f64).prop_map(|(x, y, z)| Vector3::new(x, y, z))
}

fn primitive(mu: Vector3<f64>, scale: Vector3<f64>, q: UnitQuaternion<f64>) -> GaussianPrimitive {
    GaussianPrimitive { mu, scale, rotation: *q.quaternion(), opacity: 0.5, sh: vec![[0.0; 3]] }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 10_000, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn covariance_is_symmetric_psd_with_squared_scale_spectrum(s in scale(), q in unit_quat()) {
        let c = covariance(&s, q.quaternion()).unwrap();
        prop_assert!((c - c.transpose()).amax() < 1e-12);
        let mut eig: Vec<f64> = SymmetricEigen::new(c).eigenvalues.iter().copied().collect();
        eig.sort_by(f64::total_cmp);
        let mut want: Vec<f64> = s.iter().map(|v| v * v).collect();
        want.sort_by(f64::total_cmp);
        let top = want[2];
        for (e, w) in eig.iter().zip(&want) {
            prop_assert!(*e >= -1e-12 * top);
            prop_assert!((e - w).abs() <= 1e-9 * top);
        }
    }

    #[test]
    fn density_is_rotation_equivariant(mu in point(), s in scale(), q in unit_quat(), x in point(), r in unit_quat()) {
        let g = primitive(mu, s, q);
        let moved = primitive(r * mu, s, r * q);
        let a = density(&g, &x).unwrap();
        let b = density(&moved, &(r * x)).unwrap();
        prop_assert!((a - b).abs() < 1e-10);
        // far tails underflow to zero in f64
        prop_assert!((0.0..=1.0).contains(&a));
    }

    #[test]
    fn density_peaks_only_at_the_mean(mu in point(), s in scale(), q in unit_quat(), x in point()) {
        let g = primitive(mu, s, q);
        prop_assert_eq!(density(&g, &mu).unwrap(), 1.0);
        if (x - mu).norm() > 1e-6 {
            prop_assert!(density(&g, &x).unwrap() < 1.0);
        }
    }
}

fn random_dir(rng: &mut ChaCha8Rng) -> Vector3<f64> {
    loop {
        let v = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        if v.norm() > 0.1 {
            return v.normalize();
        }
    }
}

#[test]
fn degree_one_matches_textbook_basis() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let y00 = 0.5 * (1.0 / PI).sqrt();
    let y1 = (3.0 / (4.0 * PI)).sqrt();
    for _ in 0..10 {
        let sh: Vec<[f64; 3]> = (0..4).map(|_| [0.0; 3].map(|_: f64| rng.random_range(-1.0..1.0))).collect();
        let d = random_dir(&mut rng);
        let got = sh_color(&sh, &d).unwrap();
        // splatting convention: the m = +-1 real harmonics carry a minus sign
        let basis = [y00, -y1 * d.y, y1 * d.z, -y1 * d.x];
        for c in 0..3 {
            let want = 0.5 + (0..4).map(|k| sh[k][c] * basis[k]).sum::<f64>();
            assert!((got[c] - want).abs() < 1e-10);
        }
    }
}

#[test]
fn degree_two_matches_textbook_basis() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let k = (15.0 / (4.0 * PI)).sqrt();
    let k0 = (5.0 / (16.0 * PI)).sqrt();
    for _ in 0..10 {
        let d = random_dir(&mut rng);
        let (b, _) = sh_basis_with_grad(2, &d);
        let (x, y, z) = (d.x, d.y, d.z);
        let want = [k * x * y, -k * y * z, k0 * (3.0 * z * z - 1.0), -k * x * z, 0.5 * k * (x * x - y * y)];
        for (g, w) in b[4..9].iter().zip(&want) {
            assert!((g - w).abs() < 1e-10);
        }
    }
}

#[test]
fn degree_zero_is_view_independent() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let sh = vec![[0.3, -0.7, 1.2]];
    let first = sh_color(&sh, &Vector3::z()).unwrap();
    for _ in 0..50 {
        assert_eq!(sh_color(&sh, &random_dir(&mut rng)).unwrap(), first);
    }
    let c = sh_color(&[[1.0 / 0.28209479, 0.0, 0.0]], &random_dir(&mut rng)).unwrap();
    assert!((c[0] - 1.5).abs() < 1e-7 && c[1] == 0.5 && c[2] == 0.5);
}

#[test]
fn scene_rejects_mixed_degrees() {
    let g0 = primitive(Vector3::zeros(), Vector3::repeat(1.0), UnitQuaternion::identity());
    let mut g1 = g0.clone();
    g1.sh = vec![[0.0; 3]; 4];
    assert!(Scene::new(vec![g0.clone(), g1], 0).is_err());
    assert!(Scene::new(vec![g0], 0).is_ok());
}

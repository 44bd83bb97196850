use headsplat::head_model::*;
use nalgebra::{UnitQuaternion, Vector3};
use proptest::prelude::*;

fn rig() -> HeadRig {
    synthetic_head(&SyntheticHeadConfig { rings: 4, segments: 7, shape_dim: 5, expression_dim: 6, seed: 9, ..Default::default() }).unwrap()
}

fn binary_rig() -> HeadRig {
    synthetic_head(&SyntheticHeadConfig { rings: 4, segments: 7, binary_jaw: true, seed: 2, ..Default::default() }).unwrap()
}

fn vec3() -> impl Strategy<Value = Vector3<f64>> {
    (-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64).prop_map(|(x, y, z)| Vector3::new(x, y, z))
}

fn params(shape: usize, expr: usize) -> impl Strategy<Value = HeadParams> {
    (
        prop::collection::vec(-2.0..2.0f64, shape),
        prop::collection::vec(-2.0..2.0f64, expr),
        vec3(),
        vec3(),
        vec3(),
    )
        .prop_map(|(shape, expression, jaw, rot, t)| HeadParams {
            shape,
            expression,
            jaw: jaw * 0.4,
            global_rotation: UnitQuaternion::from_scaled_axis(rot * 2.0),
            translation: t * 0.1,
        })
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 200, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn posing_commutes_with_rigid_motion(p in params(5, 6), r in vec3(), t in vec3()) {
        let rig = rig();
        let rot = UnitQuaternion::from_scaled_axis(r * 3.0);
        let posed = rig.pose(&p).unwrap();
        let mut composed = p.clone();
        composed.global_rotation = rot * p.global_rotation;
        composed.translation = rot * p.translation + t;
        let direct = rig.pose(&composed).unwrap();
        for (a, b) in posed.vertices.iter().zip(&direct.vertices) {
            prop_assert!(((rot * a + t) - b).norm() < 1e-9);
        }
    }

    #[test]
    fn blendshapes_are_linear(shape in prop::collection::vec(-2.0..2.0f64, 5), a in -3.0..3.0f64) {
        let rig = rig();
        let mut p = rig.neutral_params();
        p.shape = shape.clone();
        let one = rig.pose(&p).unwrap();
        p.shape = shape.iter().map(|s| a * s).collect();
        let scaled = rig.pose(&p).unwrap();
        for ((s, o), t) in scaled.vertices.iter().zip(&one.vertices).zip(&rig.template.vertices) {
            prop_assert!(((s - t) - a * (o - t)).norm() < 1e-12);
        }
    }

    #[test]
    fn jaw_is_an_isometry_on_the_full_weight_region(jaw in vec3(), expr in prop::collection::vec(-1.0..1.0f64, 16)) {
        let rig = binary_rig();
        let mut p = rig.neutral_params();
        p.expression = expr;
        let open = {
            let mut q = p.clone();
            q.jaw = jaw * 0.5;
            rig.pose(&q).unwrap()
        };
        let closed = rig.pose(&p).unwrap();
        let full: Vec<usize> = (0..rig.template.num_vertices()).filter(|&v| rig.basis.jaw_weight[v] == 1.0).collect();
        prop_assert!(full.len() >= 3);
        for (i, &a) in full.iter().enumerate() {
            for &b in &full[i + 1..] {
                let d0 = (closed.vertices[a] - closed.vertices[b]).norm();
                let d1 = (open.vertices[a] - open.vertices[b]).norm();
                prop_assert!((d0 - d1).abs() < 1e-9);
            }
        }
    }
}

#[test]
fn zero_parameters_are_the_identity_map() {
    let rig = rig();
    let posed = rig.pose(&rig.neutral_params()).unwrap();
    assert_eq!(posed.vertices, rig.template.vertices);
}

#[test]
fn jaw_weight_vanishes_above_the_joint() {
    for seed in 0..5 {
        let rig = synthetic_head(&SyntheticHeadConfig { seed, ..Default::default() }).unwrap();
        for (v, w) in rig.template.vertices.iter().zip(&rig.basis.jaw_weight) {
            assert!((0.0..=1.0).contains(w));
            if v.y > rig.basis.jaw_joint.y {
                assert_eq!(*w, 0.0);
            }
        }
    }
}

#[test]
fn intermediate_weights_use_scaled_axis_angle() {
    let rig = synthetic_head(&SyntheticHeadConfig { rings: 16, segments: 8, ..Default::default() }).unwrap();
    let jaw = Vector3::new(0.25, 0.05, -0.02);
    let mut p = rig.neutral_params();
    p.jaw = jaw;
    let posed = rig.pose(&p).unwrap();
    let j = rig.basis.jaw_joint;
    let mut partial = 0;
    for v in 0..rig.template.num_vertices() {
        let w = rig.basis.jaw_weight[v];
        let x = rig.template.vertices[v];
        let expect = UnitQuaternion::from_scaled_axis(jaw * w) * (x - j) + j;
        assert!((posed.vertices[v] - expect).norm() < 1e-12);
        if w > 0.0 && w < 1.0 {
            partial += 1;
        }
    }
    assert!(partial > 0);
}

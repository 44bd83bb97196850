use headsplat::binding::*;
use headsplat::head_model::{synthetic_head, Mesh, SyntheticHeadConfig};
use nalgebra::{Matrix3, Matrix4, UnitQuaternion, Vector3, Vector4};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn head_mesh() -> Mesh {
    let rig = synthetic_head(&SyntheticHeadConfig { rings: 3, segments: 6, seed: 4, ..Default::default() }).unwrap();
    rig.pose(&rig.neutral_params()).unwrap()
}

fn vec3() -> impl Strategy<Value = Vector3<f64>> {
    (-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64).prop_map(|(x, y, z)| Vector3::new(x, y, z))
}

fn random_mesh(rng: &mut ChaCha8Rng) -> Mesh {
    let vertices: Vec<Vector3<f64>> = (0..3).map(|_| Vector3::from_fn(|_, _| rng.random_range(-1.0..1.0))).collect();
    Mesh { vertices, triangles: vec![[0, 1, 2]].into() }
}

fn random_bound(rng: &mut ChaCha8Rng, triangle_id: usize) -> BoundGaussian {
    BoundGaussian {
        triangle_id,
        local_mu: Vector3::from_fn(|_, _| rng.random_range(-1.0..1.0)),
        local_scale: Vector3::from_fn(|_, _| rng.random_range(0.01..1.0)),
        local_rotation: UnitQuaternion::from_scaled_axis(Vector3::from_fn(|_, _| rng.random_range(-3.0..3.0))),
        opacity: rng.random_range(0.0..1.0),
        sh: vec![[rng.random_range(-1.0..1.0); 3]; 4],
    }
}

#[test]
fn frames_match_gram_schmidt() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..200 {
        let m = random_mesh(&mut rng);
        let f = triangle_frame(&m, 0).unwrap();
        let [a, b, c] = [m.vertices[0], m.vertices[1], m.vertices[2]];
        let u1 = b - a;
        let u2 = c - a;
        let e1 = u1 / u1.norm();
        let w = u2 - e1 * e1.dot(&u2);
        let e2 = w / w.norm();
        let e3 = e1.cross(&e2);
        let oracle = Matrix3::from_columns(&[e1, e2, e3]);
        assert!((f.matrix() - oracle).amax() < 1e-12);
        assert!((f.origin - (a + b + c) / 3.0).amax() < 1e-15);
        let area = 0.5 * u1.cross(&u2).norm();
        assert!((f.tri_scale - (2.0 * area).sqrt()).abs() < 1e-12);
    }
}

#[test]
fn globalize_matches_homogeneous_similarity() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..200 {
        let frame = triangle_frame(&random_mesh(&mut rng), 0).unwrap();
        let b = random_bound(&mut rng, 0);
        let g = globalize(&b, &frame);
        let r = frame.matrix();
        let mut h = Matrix4::identity();
        h.fixed_view_mut::<3, 3>(0, 0).copy_from(&(r * frame.tri_scale));
        h.fixed_view_mut::<3, 1>(0, 3).copy_from(&frame.origin);
        let mu = h * Vector4::new(b.local_mu.x, b.local_mu.y, b.local_mu.z, 1.0);
        assert!((g.mu - mu.xyz()).amax() < 1e-10);
        let rot = UnitQuaternion::new_normalize(g.rotation).to_rotation_matrix().into_inner();
        let want = r * b.local_rotation.to_rotation_matrix().into_inner();
        assert!((rot - want).amax() < 1e-10);
        assert!((g.scale - b.local_scale * frame.tri_scale).amax() < 1e-12);
        assert_eq!(g.opacity, b.opacity);
        assert_eq!(g.sh, b.sh);
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 200, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn rigid_motion_of_the_mesh_moves_every_gaussian_rigidly(r in vec3(), t in vec3()) {
        let mesh = head_mesh();
        let rot = UnitQuaternion::from_scaled_axis(r * 3.0);
        let moved = Mesh {
            vertices: mesh.vertices.iter().map(|v| rot * v + t).collect(),
            triangles: mesh.triangles.clone(),
        };
        let scene = initialize_binding(&mesh, 1).unwrap();
        let a = scene.globalize(&mesh).unwrap();
        let b = scene.globalize(&moved).unwrap();
        for (ga, gb) in a.gaussians.iter().zip(&b.gaussians) {
            prop_assert!(((rot * ga.mu + t) - gb.mu).norm() < 1e-9);
            let ra = rot * UnitQuaternion::new_normalize(ga.rotation);
            let rb = UnitQuaternion::new_normalize(gb.rotation);
            prop_assert!(ra.angle_to(&rb) < 1e-9);
            prop_assert!((ga.scale - gb.scale).amax() < 1e-9);
        }
    }

    #[test]
    fn localize_inverts_globalize(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let frame = triangle_frame(&random_mesh(&mut rng), 0).unwrap();
        let b = random_bound(&mut rng, 0);
        let back = localize(&globalize(&b, &frame), &frame, 0);
        prop_assert!((back.local_mu - b.local_mu).amax() < 1e-10);
        prop_assert!((back.local_scale - b.local_scale).amax() < 1e-10);
        prop_assert!(back.local_rotation.angle_to(&b.local_rotation) < 1e-10);
    }
}

#[test]
fn initialized_gaussians_sit_at_centroids_and_follow_rotation() {
    let mesh = head_mesh();
    let scene = initialize_binding(&mesh, 1).unwrap();
    assert_eq!(scene.len(), mesh.triangles.len());
    assert!(scene.per_triangle_count.iter().all(|&c| c == 1));
    let g = scene.globalize(&mesh).unwrap();
    let rot = UnitQuaternion::from_euler_angles(0.3, -0.8, 1.1);
    let rotated = Mesh { vertices: mesh.vertices.iter().map(|v| rot * v).collect(), triangles: mesh.triangles.clone() };
    let gr = scene.globalize(&rotated).unwrap();
    for (f, t) in mesh.triangles.iter().enumerate() {
        let c = t.iter().map(|&i| mesh.vertices[i]).sum::<Vector3<f64>>() / 3.0;
        assert!((g.gaussians[f].mu - c).norm() < 1e-12);
        assert!((gr.gaussians[f].mu - rot * c).norm() < 1e-12);
        let frame = triangle_frame(&rotated, f).unwrap();
        let q = UnitQuaternion::new_normalize(gr.gaussians[f].rotation);
        assert!(q.angle_to(&(rot * triangle_frame(&mesh, f).unwrap().rotation)) < 1e-9);
        assert!(q.angle_to(&frame.rotation) < 1e-9);
    }
}

fn recount(scene: &BoundScene) -> Vec<usize> {
    let mut c = vec![0; scene.num_triangles()];
    for b in &scene.bound {
        c[b.triangle_id] += 1;
    }
    c
}

/// Filter by opacity, then put back the most opaque member of any triangle left empty.
fn prune_oracle(scene: &BoundScene, min_opacity: f64) -> Vec<BoundGaussian> {
    let mut keep: Vec<bool> = scene.bound.iter().map(|b| b.opacity >= min_opacity).collect();
    for f in 0..scene.num_triangles() {
        let members: Vec<usize> = (0..scene.len()).filter(|&i| scene.bound[i].triangle_id == f).collect();
        if members.iter().all(|&i| !keep[i]) {
            let mut best = members[0];
            for &i in &members {
                if scene.bound[i].opacity > scene.bound[best].opacity {
                    best = i;
                }
            }
            keep[best] = true;
        }
    }
    scene.bound.iter().zip(keep).filter(|(_, k)| *k).map(|(b, _)| b.clone()).collect()
}

#[test]
fn floor_holds_over_random_densify_prune_cycles() {
    let mesh = head_mesh();
    let nt = mesh.triangles.len();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut scene = initialize_binding(&mesh, 1).unwrap();
    for cycle in 0..1000 {
        for b in &mut scene.bound {
            b.opacity = rng.random_range(0.0..1.0f64).powi(3);
            b.local_scale = Vector3::from_fn(|_, _| rng.random_range(0.05..0.6));
        }
        let norms: Vec<f64> = (0..scene.len()).map(|_| rng.random_range(0.0..1.0)).collect();
        let before = scene.len();
        let params = DensifyParams { grad_threshold: 0.9, size_split: 0.4, seed: cycle };
        let dense = densify(&scene, &norms, &params).unwrap();
        assert!(dense.len() >= before);
        assert_eq!(dense.per_triangle_count, recount(&dense));
        let min_opacity = rng.random_range(0.001..0.5);
        let pruned = prune(&dense, min_opacity).unwrap();
        assert!(pruned.len() <= dense.len());
        assert_eq!(pruned.bound, prune_oracle(&dense, min_opacity));
        assert!(pruned.per_triangle_count.iter().all(|&c| c >= 1), "cycle {cycle}");
        assert_eq!(pruned.per_triangle_count, recount(&pruned));
        assert_eq!(pruned.num_triangles(), nt);
        scene = pruned;
    }
}

#[test]
fn split_replaces_parent_by_two_smaller_children() {
    let mesh = head_mesh();
    let mut scene = initialize_binding(&mesh, 0).unwrap();
    scene.bound[3].local_scale = Vector3::new(0.9, 0.5, 0.1);
    let mut norms = vec![0.0; scene.len()];
    norms[3] = 1.0;
    let out = densify(&scene, &norms, &DensifyParams { grad_threshold: 0.5, size_split: 0.6, seed: 0 }).unwrap();
    assert_eq!(out.len(), scene.len() + 1);
    let kids: Vec<&BoundGaussian> = out.bound.iter().filter(|b| b.triangle_id == 3).collect();
    assert_eq!(kids.len(), 2);
    for k in kids {
        assert!((k.local_scale - scene.bound[3].local_scale / 1.6).amax() < 1e-15);
        assert_ne!(k.local_mu, scene.bound[3].local_mu);
    }
    let unchanged = densify(&scene, &vec![0.1; scene.len()], &DensifyParams { grad_threshold: 0.5, size_split: 0.6, seed: 0 }).unwrap();
    assert_eq!(unchanged, scene);
}

#[test]
fn prune_keeps_exactly_one_of_three_faint_splats() {
    let mesh = head_mesh();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut bound: Vec<BoundGaussian> = (0..mesh.triangles.len()).map(|f| BoundGaussian { opacity: 0.9, ..random_bound(&mut rng, f) }).collect();
    for o in [0.001, 0.003, 0.002] {
        bound.push(BoundGaussian { opacity: o, ..random_bound(&mut rng, 0) });
    }
    bound[0].opacity = 0.0005;
    let scene = BoundScene::new(bound, mesh.triangles.len(), 1).unwrap();
    let out = prune(&scene, 0.005).unwrap();
    let left: Vec<f64> = out.bound.iter().filter(|b| b.triangle_id == 0).map(|b| b.opacity).collect();
    assert_eq!(left, vec![0.003]);
    assert_eq!(prune(&out, 0.001).unwrap(), out);
}

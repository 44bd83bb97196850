//! Rotation helpers shared by the head model, the binding rig and the
//! rasterizer backward pass.

use nalgebra::{Matrix3, Matrix4, Quaternion, Rotation3, Vector3, Vector4};

pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Rotation matrix of an axis-angle vector.
pub fn axis_angle_matrix(omega: &Vector3<f64>) -> Matrix3<f64> {
    Rotation3::new(*omega).into_inner()
}

/// Right Jacobian of SO(3).
pub fn right_jacobian(omega: &Vector3<f64>) -> Matrix3<f64> {
    let theta2 = omega.norm_squared();
    let k = skew(omega);
    let (a, b) = if theta2 < 1e-10 {
        // series of (1 - cos t)/t^2 and (t - sin t)/t^3
        (0.5 - theta2 / 24.0, 1.0 / 6.0 - theta2 / 120.0)
    } else {
        let theta = theta2.sqrt();
        (
            (1.0 - theta.cos()) / theta2,
            (theta - theta.sin()) / (theta2 * theta),
        )
    };
    Matrix3::identity() - k * a + k * k * b
}

/// Jacobian of `R(omega) * u` with respect to `omega`.
pub fn d_rotate_d_axis_angle(omega: &Vector3<f64>, u: &Vector3<f64>) -> Matrix3<f64> {
    -axis_angle_matrix(omega) * skew(u) * right_jacobian(omega)
}

/// Rotation matrix of `q / |q|` with `q = (w, x, y, z)`.
pub fn quat_matrix(q: &Quaternion<f64>) -> Matrix3<f64> {
    let n = q.norm();
    let (w, x, y, z) = (q.w / n, q.i / n, q.j / n, q.k / n);
    Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

/// Pull a gradient on the rotation matrix back to the raw quaternion
/// components `(w, x, y, z)`, including the normalization step.
pub fn quat_matrix_backward(q: &Quaternion<f64>, d_r: &Matrix3<f64>) -> Vector4<f64> {
    let n = q.norm();
    let (w, x, y, z) = (q.w / n, q.i / n, q.j / n, q.k / n);
    let dw = Matrix3::new(0.0, -z, y, z, 0.0, -x, -y, x, 0.0) * 2.0;
    let dx = Matrix3::new(0.0, y, z, y, -2.0 * x, -w, z, w, -2.0 * x) * 2.0;
    let dy = Matrix3::new(-2.0 * y, x, w, x, 0.0, z, -w, z, -2.0 * y) * 2.0;
    let dz = Matrix3::new(-2.0 * z, -w, x, w, -2.0 * z, y, x, y, 0.0) * 2.0;
    let g_hat = Vector4::new(
        d_r.component_mul(&dw).sum(),
        d_r.component_mul(&dx).sum(),
        d_r.component_mul(&dy).sum(),
        d_r.component_mul(&dz).sum(),
    );
    let q_hat = Vector4::new(w, x, y, z);
    (g_hat - q_hat * q_hat.dot(&g_hat)) / n
}

/// Matrix `L(a)` with `a * b = L(a) b` on `(w, x, y, z)` components.
pub fn quat_left_matrix(a: &Quaternion<f64>) -> Matrix4<f64> {
    let (w, x, y, z) = (a.w, a.i, a.j, a.k);
    Matrix4::new(
        w, -x, -y, -z, //
        x, w, -z, y, //
        y, z, w, -x, //
        z, -y, x, w,
    )
}

pub fn quat_to_array(q: &Quaternion<f64>) -> [f64; 4] {
    [q.w, q.i, q.j, q.k]
}

pub fn quat_from_array(a: [f64; 4]) -> Quaternion<f64> {
    Quaternion::new(a[0], a[1], a[2], a[3])
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::UnitQuaternion;

    #[test]
    fn left_matrix_is_the_hamilton_product() {
        let a = Quaternion::new(0.3, -0.2, 0.9, 0.1);
        let b = Quaternion::new(-0.5, 0.4, 0.25, 0.8);
        let prod = a * b;
        let via = quat_left_matrix(&a) * Vector4::new(b.w, b.i, b.j, b.k);
        assert!((via - Vector4::new(prod.w, prod.i, prod.j, prod.k)).norm() < 1e-15);
    }

    #[test]
    fn quat_matrix_matches_nalgebra() {
        let q = UnitQuaternion::from_euler_angles(0.3, -1.1, 2.0);
        let m = quat_matrix(q.quaternion());
        assert!((m - q.to_rotation_matrix().into_inner()).norm() < 1e-14);
        // scale invariance
        let m2 = quat_matrix(&(q.quaternion() * 3.0));
        assert!((m - m2).norm() < 1e-14);
    }

    #[test]
    fn quat_backward_matches_fd() {
        let q = Quaternion::new(0.7, -0.2, 0.4, 0.3);
        let g = Matrix3::new(0.3, -1.0, 0.2, 0.5, 0.1, -0.7, 0.9, 0.4, -0.3);
        let analytic = quat_matrix_backward(&q, &g);
        let h = 1e-6;
        for c in 0..4 {
            let mut a = quat_to_array(&q);
            let mut b = a;
            a[c] += h;
            b[c] -= h;
            let fd = (quat_matrix(&quat_from_array(a)).component_mul(&g).sum()
                - quat_matrix(&quat_from_array(b)).component_mul(&g).sum())
                / (2.0 * h);
            assert!((fd - analytic[c]).abs() < 1e-8, "{c}: {fd} vs {}", analytic[c]);
        }
    }

    #[test]
    fn rotate_jacobian_matches_fd() {
        let u = Vector3::new(0.3, -0.5, 0.8);
        for omega in [
            Vector3::new(0.3, 0.1, -0.2),
            Vector3::new(1e-7, 0.0, 2e-7),
            Vector3::zeros(),
        ] {
            let j = d_rotate_d_axis_angle(&omega, &u);
            let h = 1e-6;
            for c in 0..3 {
                let mut p = omega;
                let mut m = omega;
                p[c] += h;
                m[c] -= h;
                let fd = (axis_angle_matrix(&p) * u - axis_angle_matrix(&m) * u) / (2.0 * h);
                assert!((fd - j.column(c)).norm() < 1e-8);
            }
        }
    }
}

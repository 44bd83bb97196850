//! Anisotropic 3D Gaussian primitives.

use nalgebra::{Matrix3, Quaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::quat_matrix;

/// Tolerance on `|q| - 1` for rotations that must be unit.
pub const UNIT_QUAT_TOL: f64 = 1e-6;
/// Added to every evaluated SH color.
pub const SH_DC_OFFSET: f64 = 0.5;
pub const SH_C0: f64 = 0.282_094_791_773_878_14;
pub const DEFAULT_SH_DEGREE: usize = 1;
pub const MAX_SH_DEGREE: usize = 3;

const SH_C1: f64 = 0.488_602_511_902_919_9;
const SH_C2: [f64; 5] = [
    1.092_548_430_592_079_2,
    -1.092_548_430_592_079_2,
    0.315_391_565_252_520_05,
    -1.092_548_430_592_079_2,
    0.546_274_215_296_039_6,
];
const SH_C3: [f64; 7] = [
    -0.590_043_589_926_643_5,
    2.890_611_442_640_554,
    -0.457_045_799_464_465_8,
    0.373_176_332_590_115_4,
    -0.457_045_799_464_465_8,
    1.445_305_721_320_277,
    -0.590_043_589_926_643_5,
];

pub fn sh_coeff_count(degree: usize) -> usize {
    (degree + 1) * (degree + 1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianPrimitive {
    pub mu: Vector3<f64>,
    pub scale: Vector3<f64>,
    /// `(w, x, y, z)`; must be unit within [`UNIT_QUAT_TOL`].
    pub rotation: Quaternion<f64>,
    pub opacity: f64,
    /// One RGB triple per SH basis function.
    pub sh: Vec<[f64; 3]>,
}

impl GaussianPrimitive {
    pub fn validate(&self) -> Result<()> {
        if !self.scale.iter().all(|s| *s > 0.0 && s.is_finite()) {
            return Err(Error::param(format!("scale {:?} must be positive", self.scale)));
        }
        check_unit(&self.rotation)?;
        if !(0.0..=1.0).contains(&self.opacity) {
            return Err(Error::param(format!("opacity {} outside [0,1]", self.opacity)));
        }
        let finite = self.mu.iter().all(|x| x.is_finite())
            && self.sh.iter().flatten().all(|x| x.is_finite());
        if !finite {
            return Err(Error::param("gaussian has non-finite fields"));
        }
        sh_degree_of(self.sh.len())?;
        Ok(())
    }

    pub fn covariance(&self) -> Result<Matrix3<f64>> {
        covariance(&self.scale, &self.rotation)
    }

    pub fn density(&self, x: &Vector3<f64>) -> Result<f64> {
        density(self, x)
    }
}

fn check_unit(q: &Quaternion<f64>) -> Result<()> {
    let n = q.norm();
    if (n - 1.0).abs() > UNIT_QUAT_TOL || !n.is_finite() {
        return Err(Error::param(format!("quaternion norm {n} is not unit")));
    }
    Ok(())
}

/// Degree whose coefficient count is `n`.
pub fn sh_degree_of(n: usize) -> Result<usize> {
    (0..=MAX_SH_DEGREE)
        .find(|&d| sh_coeff_count(d) == n)
        .ok_or_else(|| Error::param(format!("{n} SH coefficients match no degree <= 3")))
}

/// `R diag(scale^2) R^T`.
pub fn covariance(scale: &Vector3<f64>, rotation: &Quaternion<f64>) -> Result<Matrix3<f64>> {
    check_unit(rotation)?;
    if !scale.iter().all(|s| *s > 0.0) {
        return Err(Error::param("scale must be positive"));
    }
    Ok(covariance_unchecked(scale, rotation))
}

pub(crate) fn covariance_unchecked(scale: &Vector3<f64>, rotation: &Quaternion<f64>) -> Matrix3<f64> {
    let r = quat_matrix(rotation);
    let m = r * Matrix3::from_diagonal(scale);
    m * m.transpose()
}

/// `exp(-1/2 (x-mu)^T Sigma^-1 (x-mu))` with the inverse taken on the factored
/// form `R diag(1/s^2) R^T`.
pub fn density(g: &GaussianPrimitive, x: &Vector3<f64>) -> Result<f64> {
    check_unit(&g.rotation)?;
    let r = quat_matrix(&g.rotation);
    let local = r.transpose() * (x - g.mu);
    let m: f64 = (0..3).map(|i| (local[i] / g.scale[i]).powi(2)).sum();
    Ok((-0.5 * m).exp())
}

/// Real SH basis (Condon-Shortley phase, splatting ordering) and its gradient
/// with respect to the Cartesian direction components.
pub fn sh_basis_with_grad(degree: usize, d: &Vector3<f64>) -> (Vec<f64>, Vec<Vector3<f64>>) {
    let (x, y, z) = (d.x, d.y, d.z);
    let n = sh_coeff_count(degree);
    let mut b = Vec::with_capacity(n);
    let mut g = Vec::with_capacity(n);
    b.push(SH_C0);
    g.push(Vector3::zeros());
    if degree >= 1 {
        b.extend([-SH_C1 * y, SH_C1 * z, -SH_C1 * x]);
        g.extend([
            Vector3::new(0.0, -SH_C1, 0.0),
            Vector3::new(0.0, 0.0, SH_C1),
            Vector3::new(-SH_C1, 0.0, 0.0),
        ]);
    }
    if degree >= 2 {
        let (xx, yy, zz) = (x * x, y * y, z * z);
        let c = SH_C2;
        b.extend([
            c[0] * x * y,
            c[1] * y * z,
            c[2] * (2.0 * zz - xx - yy),
            c[3] * x * z,
            c[4] * (xx - yy),
        ]);
        g.extend([
            Vector3::new(c[0] * y, c[0] * x, 0.0),
            Vector3::new(0.0, c[1] * z, c[1] * y),
            Vector3::new(-2.0 * c[2] * x, -2.0 * c[2] * y, 4.0 * c[2] * z),
            Vector3::new(c[3] * z, 0.0, c[3] * x),
            Vector3::new(2.0 * c[4] * x, -2.0 * c[4] * y, 0.0),
        ]);
    }
    if degree >= 3 {
        let (xx, yy, zz) = (x * x, y * y, z * z);
        let k = SH_C3;
        b.extend([
            k[0] * y * (3.0 * xx - yy),
            k[1] * x * y * z,
            k[2] * y * (4.0 * zz - xx - yy),
            k[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy),
            k[4] * x * (4.0 * zz - xx - yy),
            k[5] * z * (xx - yy),
            k[6] * x * (xx - 3.0 * yy),
        ]);
        g.extend([
            Vector3::new(6.0 * k[0] * x * y, k[0] * (3.0 * xx - 3.0 * yy), 0.0),
            Vector3::new(k[1] * y * z, k[1] * x * z, k[1] * x * y),
            Vector3::new(-2.0 * k[2] * x * y, k[2] * (4.0 * zz - xx - 3.0 * yy), 8.0 * k[2] * y * z),
            Vector3::new(-6.0 * k[3] * x * z, -6.0 * k[3] * y * z, k[3] * (6.0 * zz - 3.0 * xx - 3.0 * yy)),
            Vector3::new(k[4] * (4.0 * zz - 3.0 * xx - yy), -2.0 * k[4] * x * y, 8.0 * k[4] * x * z),
            Vector3::new(2.0 * k[5] * x * z, -2.0 * k[5] * y * z, k[5] * (xx - yy)),
            Vector3::new(k[6] * (3.0 * xx - 3.0 * yy), -6.0 * k[6] * x * y, 0.0),
        ]);
    }
    (b, g)
}

/// View-dependent RGB (+0.5 offset, unclamped).
pub fn sh_color(sh: &[[f64; 3]], view_dir: &Vector3<f64>) -> Result<[f64; 3]> {
    let degree = sh_degree_of(sh.len())?;
    if (view_dir.norm() - 1.0).abs() > 1e-6 {
        return Err(Error::param("view direction must be unit"));
    }
    Ok(sh_color_unchecked(degree, sh, view_dir))
}

pub(crate) fn sh_color_unchecked(degree: usize, sh: &[[f64; 3]], dir: &Vector3<f64>) -> [f64; 3] {
    let (basis, _) = sh_basis_with_grad(degree, dir);
    let mut c = [SH_DC_OFFSET; 3];
    for (coef, b) in sh.iter().zip(&basis) {
        for ch in 0..3 {
            c[ch] += coef[ch] * b;
        }
    }
    c
}

/// SH DC coefficient that evaluates to `rgb` (view-independent part).
pub fn rgb_to_sh_dc(rgb: [f64; 3]) -> [f64; 3] {
    rgb.map(|c| (c - SH_DC_OFFSET) / SH_C0)
}

/// An ordered Gaussian set with a common SH degree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub gaussians: Vec<GaussianPrimitive>,
    pub sh_degree: usize,
}

impl Scene {
    pub fn new(gaussians: Vec<GaussianPrimitive>, sh_degree: usize) -> Result<Self> {
        let scene = Scene { gaussians, sh_degree };
        scene.validate()?;
        Ok(scene)
    }

    pub fn validate(&self) -> Result<()> {
        if self.sh_degree > MAX_SH_DEGREE {
            return Err(Error::param("SH degree above 3 is unsupported"));
        }
        let n = sh_coeff_count(self.sh_degree);
        for (i, g) in self.gaussians.iter().enumerate() {
            g.validate()
                .map_err(|e| Error::param(format!("gaussian {i}: {e}")))?;
            if g.sh.len() != n {
                return Err(Error::param(format!(
                    "gaussian {i} has {} SH coefficients, scene degree needs {n}",
                    g.sh.len()
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.gaussians.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gaussians.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::UnitQuaternion;

    fn unit(g: Vector3<f64>) -> GaussianPrimitive {
        GaussianPrimitive {
            mu: Vector3::zeros(),
            scale: g,
            rotation: Quaternion::identity(),
            opacity: 1.0,
            sh: vec![[0.0; 3]],
        }
    }

    #[test]
    fn covariance_examples() {
        let id = Quaternion::identity();
        assert_relative_eq!(
            covariance(&Vector3::new(1.0, 1.0, 1.0), &id).unwrap(),
            Matrix3::identity(),
            epsilon = 1e-15
        );
        assert_relative_eq!(
            covariance(&Vector3::new(2.0, 3.0, 4.0), &id).unwrap(),
            Matrix3::from_diagonal(&Vector3::new(4.0, 9.0, 16.0)),
            epsilon = 1e-15
        );
        let q = UnitQuaternion::from_axis_angle(&Vector3::z_axis(), std::f64::consts::FRAC_PI_2);
        assert_relative_eq!(
            covariance(&Vector3::new(2.0, 1.0, 1.0), q.quaternion()).unwrap(),
            Matrix3::from_diagonal(&Vector3::new(1.0, 4.0, 1.0)),
            epsilon = 1e-14
        );
    }

    #[test]
    fn non_unit_quaternion_rejected() {
        let q = Quaternion::new(1.1, 0.0, 0.0, 0.0);
        assert!(matches!(
            covariance(&Vector3::new(1.0, 1.0, 1.0), &q),
            Err(Error::Parameter(_))
        ));
    }

    #[test]
    fn density_examples() {
        let g = unit(Vector3::new(1.0, 1.0, 1.0));
        assert_eq!(density(&g, &Vector3::zeros()).unwrap(), 1.0);
        let e = (-0.5f64).exp();
        assert_relative_eq!(density(&g, &Vector3::new(0.0, 1.0, 0.0)).unwrap(), e, epsilon = 1e-15);
        let g = unit(Vector3::new(2.0, 1.0, 1.0));
        assert_relative_eq!(density(&g, &Vector3::new(2.0, 0.0, 0.0)).unwrap(), e, epsilon = 1e-15);
    }

    #[test]
    fn sh_degree_zero() {
        let d = Vector3::new(0.0, 0.6, 0.8);
        assert_eq!(sh_color(&[[0.0; 3]], &d).unwrap(), [0.5, 0.5, 0.5]);
        let c = sh_color(&[[1.0 / 0.282_094_79, 0.0, 0.0]], &d).unwrap();
        assert_relative_eq!(c[0], 1.5, epsilon = 1e-8);
        assert_eq!(c[1], 0.5);
    }

    #[test]
    fn sh_bad_count() {
        assert!(sh_color(&[[0.0; 3]; 5], &Vector3::z()).is_err());
    }

    #[test]
    fn sh_gradient_matches_fd() {
        let d = Vector3::new(0.3, -0.4, 0.5);
        let (_, g) = sh_basis_with_grad(3, &d);
        let h = 1e-6;
        for axis in 0..3 {
            let mut p = d;
            let mut m = d;
            p[axis] += h;
            m[axis] -= h;
            let (bp, _) = sh_basis_with_grad(3, &p);
            let (bm, _) = sh_basis_with_grad(3, &m);
            for k in 0..16 {
                let fd = (bp[k] - bm[k]) / (2.0 * h);
                assert!((fd - g[k][axis]).abs() < 1e-8, "k={k} axis={axis}");
            }
        }
    }
}

//! Binary little-endian PLY for Gaussian scenes.
//!
//! One `vertex` element per Gaussian. Properties are written as `double`, in
//! this order:
//!
//! | property                    | stored value                                 |
//! |-----------------------------|----------------------------------------------|
//! | `x y z`                     | mean                                         |
//! | `scale_0 scale_1 scale_2`   | natural log of scale                         |
//! | `rot_0 rot_1 rot_2 rot_3`   | quaternion `w x y z`                         |
//! | `opacity`                   | logit of opacity                             |
//! | `f_dc_0 f_dc_1 f_dc_2`      | SH degree-0 coefficient, RGB                 |
//! | `f_rest_0 .. f_rest_{3n-1}` | higher SH coefficients, channel-major: all R, then G, then B (n = coefficients - 1) |
//!
//! The reader also accepts `float` properties and ignores unknown ones.

use std::io::Write;
use std::path::Path;

use byteorder::{ByteOrder, LittleEndian};
use nalgebra::{Quaternion, Vector3};

use crate::error::{Error, Result};
use crate::gaussian_scene::{sh_coeff_count, sh_degree_of, GaussianPrimitive, Scene};

const FORMAT: &str = "PLY";

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn property_names(sh_degree: usize) -> Vec<String> {
    let mut names: Vec<String> = ["x", "y", "z", "scale_0", "scale_1", "scale_2", "rot_0", "rot_1", "rot_2", "rot_3", "opacity", "f_dc_0", "f_dc_1", "f_dc_2"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let rest = 3 * (sh_coeff_count(sh_degree) - 1);
    names.extend((0..rest).map(|i| format!("f_rest_{i}")));
    names
}

pub fn scene_to_bytes(scene: &Scene) -> Vec<u8> {
    let names = property_names(scene.sh_degree);
    let mut out = Vec::new();
    write!(out, "ply\nformat binary_little_endian 1.0\nelement vertex {}\n", scene.len()).unwrap();
    for n in &names {
        writeln!(out, "property double {n}").unwrap();
    }
    out.extend_from_slice(b"end_header\n");
    let n_rest = sh_coeff_count(scene.sh_degree) - 1;
    let mut buf = [0u8; 8];
    for g in &scene.gaussians {
        let mut row = Vec::with_capacity(names.len());
        row.extend(g.mu.iter());
        row.extend(g.scale.iter().map(|s| s.ln()));
        row.extend([g.rotation.w, g.rotation.i, g.rotation.j, g.rotation.k]);
        row.push(logit(g.opacity));
        row.extend(g.sh[0]);
        for c in 0..3 {
            row.extend((0..n_rest).map(|k| g.sh[k + 1][c]));
        }
        for v in row {
            LittleEndian::write_f64(&mut buf, v);
            out.extend_from_slice(&buf);
        }
    }
    out
}

pub fn write_scene(scene: &Scene, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, scene_to_bytes(scene)).map_err(|e| Error::io(path, e))
}

pub fn read_scene(path: impl AsRef<Path>) -> Result<Scene> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    scene_from_bytes(&bytes, path)
}

#[derive(Clone, Copy)]
enum Scalar {
    F32,
    F64,
}

pub fn scene_from_bytes(bytes: &[u8], path: &Path) -> Result<Scene> {
    let malformed = |location: String, message: String| Error::Malformed {
        format: FORMAT,
        path: path.to_path_buf(),
        location,
        message,
    };
    let header_end = bytes
        .windows(11)
        .position(|w| w == b"end_header\n")
        .ok_or_else(|| malformed("byte 0".into(), "no end_header".into()))?
        + 11;
    let header = std::str::from_utf8(&bytes[..header_end]).map_err(|e| malformed(format!("byte {}", e.valid_up_to()), "header is not UTF-8".into()))?;
    let mut count = None;
    let mut props: Vec<(String, Scalar)> = Vec::new();
    for (lineno, line) in header.lines().enumerate() {
        let at = || format!("line {}", lineno + 1);
        let tok: Vec<&str> = line.split_whitespace().collect();
        match tok.as_slice() {
            ["ply"] | ["end_header"] | [] => {}
            ["comment", ..] | ["obj_info", ..] => {}
            ["format", "binary_little_endian", _] => {}
            ["format", other, ..] => return Err(malformed(at(), format!("unsupported format {other}"))),
            ["element", "vertex", n] => {
                if count.is_some() {
                    return Err(malformed(at(), "duplicate vertex element".into()));
                }
                count = Some(n.parse::<usize>().map_err(|_| malformed(at(), format!("bad vertex count {n}")))?);
            }
            ["element", other, ..] => return Err(malformed(at(), format!("unsupported element {other}"))),
            ["property", ty, name] => {
                let scalar = match *ty {
                    "double" | "float64" => Scalar::F64,
                    "float" | "float32" => Scalar::F32,
                    _ => return Err(malformed(at(), format!("unsupported property type {ty}"))),
                };
                props.push((name.to_string(), scalar));
            }
            _ => return Err(malformed(at(), format!("unexpected header line {line:?}"))),
        }
    }
    let count = count.ok_or_else(|| malformed("header".into(), "no vertex element".into()))?;
    let index = |name: &str| props.iter().position(|(n, _)| n == name);
    let n_rest = (0..).take_while(|i| index(&format!("f_rest_{i}")).is_some()).count();
    if n_rest % 3 != 0 {
        return Err(malformed("header".into(), format!("{n_rest} f_rest properties is not a multiple of 3")));
    }
    let sh_degree = sh_degree_of(1 + n_rest / 3).map_err(|e| malformed("header".into(), e.to_string()))?;
    let required = property_names(sh_degree);
    let columns: Vec<usize> = required
        .iter()
        .map(|n| index(n).ok_or_else(|| malformed("header".into(), format!("missing property {n}"))))
        .collect::<Result<_>>()?;
    let offsets: Vec<usize> = props
        .iter()
        .scan(0, |acc, (_, s)| {
            let o = *acc;
            *acc += match s {
                Scalar::F32 => 4,
                Scalar::F64 => 8,
            };
            Some(o)
        })
        .collect();
    let stride: usize = props.iter().map(|(_, s)| match s { Scalar::F32 => 4, Scalar::F64 => 8 }).sum();
    let body = &bytes[header_end..];
    if body.len() != stride * count {
        return Err(malformed(
            format!("byte {}", header_end + body.len().min(stride * count)),
            format!("expected {} payload bytes, found {}", stride * count, body.len()),
        ));
    }
    let n_sh = sh_coeff_count(sh_degree);
    let mut gaussians = Vec::with_capacity(count);
    for v in 0..count {
        let row = &body[v * stride..(v + 1) * stride];
        let read = |col: usize| -> f64 {
            let o = offsets[col];
            match props[col].1 {
                Scalar::F64 => LittleEndian::read_f64(&row[o..o + 8]),
                Scalar::F32 => LittleEndian::read_f32(&row[o..o + 4]) as f64,
            }
        };
        let vals: Vec<f64> = columns.iter().map(|&c| read(c)).collect();
        let mut sh = vec![[0.0; 3]; n_sh];
        sh[0] = [vals[11], vals[12], vals[13]];
        for c in 0..3 {
            for k in 0..n_sh - 1 {
                sh[k + 1][c] = vals[14 + c * (n_sh - 1) + k];
            }
        }
        gaussians.push(GaussianPrimitive {
            mu: Vector3::new(vals[0], vals[1], vals[2]),
            scale: Vector3::new(vals[3].exp(), vals[4].exp(), vals[5].exp()),
            rotation: Quaternion::new(vals[6], vals[7], vals[8], vals[9]),
            opacity: sigmoid(vals[10]),
            sh,
        });
    }
    Scene::new(gaussians, sh_degree).map_err(|e| malformed(format!("byte {header_end}"), e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::UnitQuaternion;

    fn sample(degree: usize) -> Scene {
        let n = sh_coeff_count(degree);
        let gaussians = (0..5)
            .map(|i| {
                let f = i as f64;
                GaussianPrimitive {
                    mu: Vector3::new(f, -f * 0.5, 0.25),
                    scale: Vector3::new(0.1 + f, 0.2, 0.3),
                    rotation: *UnitQuaternion::from_euler_angles(f, 0.1, -0.2).quaternion(),
                    opacity: 0.1 + 0.15 * f,
                    sh: (0..n).map(|k| [k as f64, -(k as f64) * 0.1, f]).collect(),
                }
            })
            .collect();
        Scene::new(gaussians, degree).unwrap()
    }

    #[test]
    fn round_trip_all_degrees() {
        for degree in 0..=3 {
            let scene = sample(degree);
            let back = scene_from_bytes(&scene_to_bytes(&scene), Path::new("m")).unwrap();
            assert_eq!(back.sh_degree, degree);
            for (a, b) in scene.gaussians.iter().zip(&back.gaussians) {
                assert_eq!(a.mu, b.mu);
                assert_eq!(a.rotation, b.rotation);
                assert_eq!(a.sh, b.sh);
                // log/exp and logit/sigmoid are exact to a few ulps
                assert!((a.scale - b.scale).amax() < 1e-14);
                assert!((a.opacity - b.opacity).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn field_order_is_stable() {
        let bytes = scene_to_bytes(&sample(1));
        let header = std::str::from_utf8(&bytes[..bytes.windows(11).position(|w| w == b"end_header\n").unwrap()]).unwrap();
        let names: Vec<&str> = header.lines().filter_map(|l| l.strip_prefix("property double ")).collect();
        assert_eq!(&names[..4], &["x", "y", "z", "scale_0"]);
        assert_eq!(names[10], "opacity");
        assert_eq!(names.len(), 14 + 9);
    }

    #[test]
    fn truncated_body_reports_offset() {
        let bytes = scene_to_bytes(&sample(0));
        let err = scene_from_bytes(&bytes[..bytes.len() - 1], Path::new("x")).unwrap_err();
        assert!(matches!(err, Error::Malformed { .. }));
    }

    #[test]
    fn ascii_rejected() {
        let err = scene_from_bytes(b"ply\nformat ascii 1.0\nelement vertex 0\nend_header\n", Path::new("x")).unwrap_err();
        match err {
            Error::Malformed { location, .. } => assert_eq!(location, "line 2"),
            e => panic!("{e:?}"),
        }
    }
}

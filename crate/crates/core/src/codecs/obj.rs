//! ASCII OBJ meshes: `v` and `f` records only.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::head_model::{Mesh, TemplateMesh, Triangle};

pub fn to_string(vertices: &[Vector3<f64>], triangles: &[Triangle]) -> String {
    let mut s = String::new();
    for v in vertices {
        // Display for f64 is the shortest exact round-trip form
        writeln!(s, "v {} {} {}", v.x, v.y, v.z).unwrap();
    }
    for t in triangles {
        writeln!(s, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1).unwrap();
    }
    s
}

pub fn parse(text: &str, path: &Path) -> Result<(Vec<Vector3<f64>>, Vec<Triangle>)> {
    let err = |line: usize, message: String| Error::Malformed {
        format: "OBJ",
        path: path.to_path_buf(),
        location: format!("line {line}"),
        message,
    };
    let mut vertices = Vec::new();
    let mut faces: Vec<(usize, [i64; 3])> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let lineno = i + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        let mut tok = line.split_whitespace();
        match tok.next() {
            Some("v") => {
                let xyz: Vec<f64> = tok
                    .take(3)
                    .map(|t| t.parse::<f64>().map_err(|_| err(lineno, format!("bad coordinate {t:?}"))))
                    .collect::<Result<_>>()?;
                if xyz.len() != 3 {
                    return Err(err(lineno, "vertex needs 3 coordinates".into()));
                }
                vertices.push(Vector3::new(xyz[0], xyz[1], xyz[2]));
            }
            Some("f") => {
                let idx: Vec<i64> = tok
                    .map(|t| {
                        t.split('/')
                            .next()
                            .unwrap_or("")
                            .parse::<i64>()
                            .map_err(|_| err(lineno, format!("bad face index {t:?}")))
                    })
                    .collect::<Result<_>>()?;
                if idx.len() != 3 {
                    return Err(err(lineno, format!("only triangles are supported, got {} indices", idx.len())));
                }
                faces.push((lineno, [idx[0], idx[1], idx[2]]));
            }
            _ => {}
        }
    }
    let n = vertices.len() as i64;
    let triangles = faces
        .into_iter()
        .map(|(lineno, f)| {
            let mut t = [0usize; 3];
            for (k, &i) in f.iter().enumerate() {
                let resolved = if i < 0 { n + i } else { i - 1 };
                if !(0..n).contains(&resolved) {
                    return Err(err(lineno, format!("face index {i} out of range")));
                }
                t[k] = resolved as usize;
            }
            Ok(t)
        })
        .collect::<Result<_>>()?;
    Ok((vertices, triangles))
}

pub fn write_mesh(mesh: &Mesh, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, to_string(&mesh.vertices, &mesh.triangles)).map_err(|e| Error::io(path, e))
}

pub fn write_template(t: &TemplateMesh, path: impl AsRef<Path>) -> Result<()> {
    write_mesh(&t.as_mesh(), path)
}

pub fn read_mesh(path: impl AsRef<Path>) -> Result<Mesh> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let (vertices, triangles) = parse(&text, path)?;
    Ok(Mesh { vertices, triangles: triangles.into() })
}

pub fn read_template(path: impl AsRef<Path>) -> Result<TemplateMesh> {
    let m = read_mesh(path)?;
    TemplateMesh::new(m.vertices, m.triangles.to_vec())
}

//! Blendshape bases and head-parameter sequences in the tensor container.
//!
//! Basis file tensors: `shape_basis [V,3,Bs]`, `expression_basis [V,3,Be]`,
//! `jaw_joint [3]`, `jaw_weight [V]`.
//!
//! Params file: tensor `params [T, Bs+Be+10]`, each row laid out as
//! shape, expression, jaw (3), global rotation `w x y z`, translation (3);
//! meta `shape_dim`, `expression_dim`.

use std::path::Path;

use nalgebra::Vector3;

use super::tensor_file::TensorFile;
use crate::error::{Error, Result};
use crate::head_model::{BlendshapeBasis, HeadParams};

pub fn basis_to_tensors(b: &BlendshapeBasis) -> TensorFile {
    let v = b.num_vertices();
    let mut f = TensorFile::new();
    f.push("shape_basis", &[v, 3, b.shape_dim], b.shape_basis.clone()).expect("consistent basis");
    f.push("expression_basis", &[v, 3, b.expression_dim], b.expression_basis.clone()).expect("consistent basis");
    f.push("jaw_joint", &[3], b.jaw_joint.iter().copied().collect()).expect("3-vector");
    f.push("jaw_weight", &[v], b.jaw_weight.clone()).expect("consistent basis");
    f
}

pub fn basis_from_tensors(f: &TensorFile) -> Result<BlendshapeBasis> {
    let w = f.get_shaped("jaw_weight", &[None])?;
    let v = w.shape[0];
    let s = f.get_shaped("shape_basis", &[Some(v), Some(3), None])?;
    let e = f.get_shaped("expression_basis", &[Some(v), Some(3), None])?;
    let j = f.get_shaped("jaw_joint", &[Some(3)])?;
    Ok(BlendshapeBasis {
        shape_basis: s.data.clone(),
        shape_dim: s.shape[2],
        expression_basis: e.data.clone(),
        expression_dim: e.shape[2],
        jaw_joint: Vector3::new(j.data[0], j.data[1], j.data[2]),
        jaw_weight: w.data.clone(),
    })
}

pub fn write_basis(b: &BlendshapeBasis, path: impl AsRef<Path>) -> Result<()> {
    basis_to_tensors(b).write(path)
}

pub fn read_basis(path: impl AsRef<Path>) -> Result<BlendshapeBasis> {
    basis_from_tensors(&TensorFile::read(path)?)
}

pub fn params_to_tensors(seq: &[HeadParams]) -> Result<TensorFile> {
    let first = seq.first().ok_or_else(|| Error::input("empty parameter sequence"))?;
    let (bs, be) = (first.shape.len(), first.expression.len());
    let width = HeadParams::flat_len(bs, be);
    let mut data = Vec::with_capacity(seq.len() * width);
    for (t, p) in seq.iter().enumerate() {
        if p.shape.len() != bs || p.expression.len() != be {
            return Err(Error::param(format!("frame {t} has inconsistent dimensions")));
        }
        data.extend(p.to_flat());
    }
    let mut f = TensorFile::new().with_meta("shape_dim", bs).with_meta("expression_dim", be);
    f.push("params", &[seq.len(), width], data)?;
    Ok(f)
}

pub fn params_from_tensors(f: &TensorFile) -> Result<Vec<HeadParams>> {
    let bs = f.meta_usize("shape_dim")?;
    let be = f.meta_usize("expression_dim")?;
    let width = HeadParams::flat_len(bs, be);
    let t = f.get_shaped("params", &[None, Some(width)])?;
    t.data
        .chunks_exact(width)
        .enumerate()
        .map(|(i, row)| HeadParams::from_flat(row, bs, be).map_err(|e| Error::input(format!("params row {i}: {e}"))))
        .collect()
}

pub fn write_params(seq: &[HeadParams], path: impl AsRef<Path>) -> Result<()> {
    params_to_tensors(seq)?.write(path)
}

pub fn read_params(path: impl AsRef<Path>) -> Result<Vec<HeadParams>> {
    params_from_tensors(&TensorFile::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::head_model::{synthetic_head, SyntheticHeadConfig};
    use nalgebra::UnitQuaternion;

    #[test]
    fn basis_and_params_bit_exact() {
        let rig = synthetic_head(&SyntheticHeadConfig { rings: 3, segments: 5, ..Default::default() }).unwrap();
        let f = basis_to_tensors(&rig.basis);
        let back = basis_from_tensors(&TensorFile::from_bytes(&f.to_bytes(), Path::new("m")).unwrap()).unwrap();
        assert_eq!(back, rig.basis);

        let mut p = rig.neutral_params();
        p.jaw = Vector3::new(0.2, 0.0, 0.01);
        p.global_rotation = UnitQuaternion::from_euler_angles(0.0, 0.3, 0.0);
        let seq = vec![rig.neutral_params(), p];
        let f = params_to_tensors(&seq).unwrap();
        let back = params_from_tensors(&TensorFile::from_bytes(&f.to_bytes(), Path::new("m")).unwrap()).unwrap();
        for (a, b) in seq.iter().zip(&back) {
            assert_eq!(a.to_flat(), b.to_flat());
        }
    }
}

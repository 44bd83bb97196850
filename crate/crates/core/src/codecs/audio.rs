//! Audio feature matrices and Audio2Param weights in the tensor container.
//!
//! Features: tensor `features [T, d_a]`, meta `frame_rate`.
//!
//! Weights: one tensor per trainable matrix under the names of
//! [`A2PWeights::tensors`], plus `mean_head [1, 3V]`; meta `config` (the
//! model configuration object) and `steps_trained`.

use std::path::Path;

use ndarray::Array2;

use super::tensor_file::TensorFile;
use crate::audio2param::{A2PConfig, A2PWeights, AudioFeatureSequence};
use crate::error::{Error, Result};

pub fn features_to_tensors(a: &AudioFeatureSequence) -> TensorFile {
    let mut f = TensorFile::new().with_meta("frame_rate", a.frame_rate);
    f.push("features", &[a.len(), a.dim()], a.features.iter().copied().collect())
        .expect("matrix shape");
    f
}

pub fn features_from_tensors(f: &TensorFile) -> Result<AudioFeatureSequence> {
    let t = f.get_shaped("features", &[None, None])?;
    let m = Array2::from_shape_vec((t.shape[0], t.shape[1]), t.data.clone()).expect("checked shape");
    AudioFeatureSequence::new(m, f.meta_f64("frame_rate")?)
}

pub fn write_features(a: &AudioFeatureSequence, path: impl AsRef<Path>) -> Result<()> {
    features_to_tensors(a).write(path)
}

pub fn read_features(path: impl AsRef<Path>) -> Result<AudioFeatureSequence> {
    features_from_tensors(&TensorFile::read(path)?)
}

pub fn weights_to_tensors(w: &A2PWeights) -> TensorFile {
    let config = serde_json::to_value(w.config).expect("serializable config");
    let mut f = TensorFile::new()
        .with_meta("config", config)
        .with_meta("steps_trained", w.steps_trained as u64);
    let mut push = |name: &str, t: &Array2<f64>| {
        f.push(name, &[t.nrows(), t.ncols()], t.iter().copied().collect())
            .expect("matrix shape");
    };
    push("mean_head", &w.mean_head);
    for (name, t) in w.tensors() {
        push(&name, t);
    }
    f
}

pub fn weights_from_tensors(f: &TensorFile) -> Result<A2PWeights> {
    let config: A2PConfig = f
        .meta
        .get("config")
        .cloned()
        .ok_or_else(|| Error::input("missing meta field config"))
        .and_then(|v| serde_json::from_value(v).map_err(|e| Error::input(format!("bad model config: {e}"))))?;
    let mean = f.get_shaped("mean_head", &[Some(1), Some(3 * config.num_vertices)])?;
    let mut w = A2PWeights::zeros(config, mean.data.clone())?;
    w.steps_trained = f.meta_usize("steps_trained")?;
    let names: Vec<String> = w.tensors().into_iter().map(|(n, _)| n).collect();
    for (name, dst) in names.iter().zip(w.tensors_mut()) {
        let t = f.get_shaped(name, &[Some(dst.nrows()), Some(dst.ncols())])?;
        dst.iter_mut().zip(&t.data).for_each(|(d, s)| *d = *s);
    }
    let expected = names.len() + 1;
    if f.tensors.len() != expected {
        return Err(Error::input(format!(
            "weights file has {} tensors, model expects {expected}",
            f.tensors.len()
        )));
    }
    w.validate()?;
    Ok(w)
}

pub fn write_weights(w: &A2PWeights, path: impl AsRef<Path>) -> Result<()> {
    weights_to_tensors(w).write(path)
}

pub fn read_weights(path: impl AsRef<Path>) -> Result<A2PWeights> {
    weights_from_tensors(&TensorFile::read(path)?)
}

//! File formats shared by the library and the CLI.

pub mod audio;
pub mod avatar;
pub mod camera;
pub mod head;
pub mod image_io;
pub mod obj;
pub mod ply;
pub mod tensor_file;
pub mod trajectory;

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

pub fn write_json<T: Serialize>(value: &T, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = serde_json::to_string_pretty(value).expect("serializable");
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Malformed {
        format: "JSON",
        path: path.to_path_buf(),
        location: format!("line {}", e.line()),
        message: e.to_string(),
    })
}

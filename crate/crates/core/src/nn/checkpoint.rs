//! Checkpoint files: a text manifest plus a flat little-endian `f64` payload.
//!
//! ```text
//! # esfw checkpoint v1
//! config.k = 16
//! encoder.local1.weight = 3x64 @ 0
//! encoder.local1.bias = 64 @ 1536
//! ```
//!
//! Tensor lines map a name to its shape and the byte offset of its first
//! value in the payload. Lines whose key starts with `config.` carry model
//! hyperparameters.

use std::fs;
use std::path::{Path, PathBuf};

use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "model.manifest";
pub const PAYLOAD_FILE: &str = "model.bin";
const HEADER: &str = "# esfw checkpoint v1";

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub config: Vec<(String, String)>,
    pub tensors: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn config_value(&self, key: &str) -> Option<&str> {
        self.config
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn tensor(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    /// Writes `model.manifest` and `model.bin` into `dir`, creating it.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let mut manifest = String::from(HEADER);
        manifest.push('\n');
        for (k, v) in &self.config {
            manifest.push_str(&format!("config.{k} = {v}\n"));
        }
        let mut payload = Vec::new();
        for (name, t) in &self.tensors {
            let dims: Vec<String> = t.shape().iter().map(usize::to_string).collect();
            manifest.push_str(&format!("{name} = {} @ {}\n", dims.join("x"), payload.len()));
            for v in t.data() {
                payload.extend_from_slice(&v.to_le_bytes());
            }
        }
        fs::write(dir.join(MANIFEST_FILE), manifest)?;
        fs::write(dir.join(PAYLOAD_FILE), payload)?;
        Ok(())
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let manifest_path = dir.join(MANIFEST_FILE);
        let payload_path = dir.join(PAYLOAD_FILE);
        let text = fs::read_to_string(&manifest_path).map_err(Error::read(&manifest_path))?;
        let payload = fs::read(&payload_path).map_err(Error::read(&payload_path))?;
        let parse_err = |offset: usize, message: String| Error::Parse {
            path: manifest_path.clone(),
            offset: offset as u64,
            message,
        };

        let mut out = Checkpoint::default();
        let mut line_start = 0usize;
        let mut expected_offset = 0usize;
        for (lineno, line) in text.split_inclusive('\n').enumerate() {
            let at = line_start;
            line_start += line.len();
            let line = line.trim_end();
            if lineno == 0 {
                if line != HEADER {
                    return Err(parse_err(at, format!("bad header {line:?}")));
                }
                continue;
            }
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once(" = ")
                .ok_or_else(|| parse_err(at, format!("expected `key = value`, got {line:?}")))?;
            if let Some(cfg) = key.strip_prefix("config.") {
                out.config.push((cfg.to_string(), value.to_string()));
                continue;
            }
            let (shape_text, offset_text) = value
                .split_once(" @ ")
                .ok_or_else(|| parse_err(at, format!("expected `shape @ offset`, got {value:?}")))?;
            let shape = shape_text
                .split('x')
                .map(str::parse::<usize>)
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| parse_err(at, format!("bad shape {shape_text:?}: {e}")))?;
            let offset: usize = offset_text
                .parse()
                .map_err(|e| parse_err(at, format!("bad offset {offset_text:?}: {e}")))?;
            if offset != expected_offset {
                return Err(parse_err(at, format!("offset {offset}, expected {expected_offset}")));
            }
            let count: usize = shape.iter().product();
            let end = offset + count * 8;
            if end > payload.len() {
                return Err(Error::Parse {
                    path: payload_path.clone(),
                    offset: payload.len() as u64,
                    message: format!("payload truncated: {key} needs bytes {offset}..{end}"),
                });
            }
            let data = payload[offset..end]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            out.tensors.push((key.to_string(), Tensor::new(&shape, data)?));
            expected_offset = end;
        }
        if expected_offset != payload.len() {
            return Err(Error::Parse {
                path: payload_path,
                offset: expected_offset as u64,
                message: format!("{} trailing payload bytes", payload.len() - expected_offset),
            });
        }
        Ok(out)
    }
}

/// Paths of the two checkpoint files inside `dir`.
pub fn checkpoint_files(dir: &Path) -> (PathBuf, PathBuf) {
    (dir.join(MANIFEST_FILE), dir.join(PAYLOAD_FILE))
}

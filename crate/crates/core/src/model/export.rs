//! Portable tensor files: a text manifest followed by a little-endian
//! `f32` payload.
//!
//! ```text
//! miir-tensors 1
//! meta <key> <value>
//! tensor <name> <d1>x<d2>... <offset> <count>
//! end
//! <payload>
//! ```
//! Offsets and counts are in elements.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use super::{ModelConfig, ModelParams, VocabSizes};
use crate::scalar::Scalar;
use crate::{Error, Result};

const MAGIC: &str = "miir-tensors 1";

#[derive(Clone, Debug, Default, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TensorFile {
    pub meta: BTreeMap<String, String>,
    pub tensors: Vec<NamedTensor>,
}

impl TensorFile {
    pub fn push(&mut self, name: impl Into<String>, shape: Vec<usize>, data: Vec<f32>) {
        self.tensors.push(NamedTensor { name: name.into(), shape, data });
    }

    pub fn get(&self, name: &str) -> Option<&NamedTensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn meta_value(&self, key: &str) -> Result<&str> {
        self.meta
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| Error::Checkpoint(format!("manifest has no {key:?} entry")))
    }

    /// Adds every tensor of `params` under `prefix`, plus the frozen
    /// missing-text vector.
    pub fn insert_params<T: Scalar>(&mut self, prefix: &str, params: &ModelParams<T>) {
        for (name, t) in params.tensors() {
            let data = t.iter().map(|v| v.as_f32()).collect();
            self.push(format!("{prefix}{name}"), t.shape().to_vec(), data);
        }
        let miss = params.miss_text.iter().map(|v| v.as_f32()).collect();
        self.push(format!("{prefix}miss_text"), vec![params.miss_text.len()], miss);
    }

    /// Rebuilds parameters stored under `prefix`. Every tensor must be
    /// present exactly once with the expected shape.
    pub fn extract_params<T: Scalar>(
        &self,
        prefix: &str,
        config: &ModelConfig,
        vocab: VocabSizes,
    ) -> Result<ModelParams<T>> {
        let mut seen = HashSet::new();
        for t in &self.tensors {
            if t.name.starts_with(prefix) && !seen.insert(t.name.as_str()) {
                return Err(Error::Checkpoint(format!("tensor {} appears twice", t.name)));
            }
        }
        let mut params = ModelParams::<T>::zeros(config, vocab);
        let fill = |name: &str, shape: &[usize]| -> Result<&NamedTensor> {
            let full = format!("{prefix}{name}");
            let t = self.get(&full).ok_or_else(|| Error::Checkpoint(format!("missing tensor {full}")))?;
            if t.shape != shape {
                return Err(Error::Checkpoint(format!(
                    "tensor {full} has shape {:?}, expected {shape:?}",
                    t.shape
                )));
            }
            Ok(t)
        };
        for (name, mut dst) in params.tensors_mut() {
            let src = fill(&name, dst.shape())?;
            dst.iter_mut().zip(&src.data).for_each(|(d, s)| *d = T::from_f32(*s));
        }
        let src = fill("miss_text", &[config.text_dim])?;
        params.miss_text.iter_mut().zip(&src.data).for_each(|(d, s)| *d = T::from_f32(*s));
        Ok(params)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut head = String::from(MAGIC);
        head.push('\n');
        for (k, v) in &self.meta {
            head.push_str(&format!("meta {k} {v}\n"));
        }
        let mut offset = 0;
        for t in &self.tensors {
            let dims: Vec<String> = t.shape.iter().map(|d| d.to_string()).collect();
            head.push_str(&format!("tensor {} {} {offset} {}\n", t.name, dims.join("x"), t.data.len()));
            offset += t.data.len();
        }
        head.push_str("end\n");
        let mut out = head.into_bytes();
        out.reserve(offset * 4);
        for t in &self.tensors {
            for v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], origin: &Path) -> Result<Self> {
        let bad = |line: usize, msg: String| Error::parse(origin, line, msg);
        let mut pos = 0;
        let mut line_no = 0;
        let mut next_line = || -> Option<(usize, &str)> {
            let rest = &bytes[pos..];
            let end = rest.iter().position(|b| *b == b'\n')?;
            pos += end + 1;
            line_no += 1;
            std::str::from_utf8(&rest[..end]).ok().map(|s| (line_no, s))
        };
        match next_line() {
            Some((_, MAGIC)) => {}
            _ => return Err(bad(1, "not a tensor file".into())),
        }
        let mut file = TensorFile::default();
        let mut layout = Vec::new();
        loop {
            let (ln, line) = next_line().ok_or_else(|| bad(0, "manifest ends without `end`".into()))?;
            if line == "end" {
                break;
            }
            if let Some(rest) = line.strip_prefix("meta ") {
                let (k, v) = rest.split_once(' ').unwrap_or((rest, ""));
                file.meta.insert(k.to_string(), v.to_string());
            } else if let Some(rest) = line.strip_prefix("tensor ") {
                let parts: Vec<&str> = rest.split(' ').collect();
                if parts.len() != 4 {
                    return Err(bad(ln, format!("malformed tensor entry {line:?}")));
                }
                let num = |s: &str| s.parse::<usize>().map_err(|_| bad(ln, format!("bad number {s:?}")));
                let shape = if parts[1].is_empty() {
                    Vec::new()
                } else {
                    parts[1].split('x').map(num).collect::<Result<Vec<_>>>()?
                };
                let (offset, count) = (num(parts[2])?, num(parts[3])?);
                if shape.iter().product::<usize>() != count {
                    return Err(bad(ln, format!("shape {shape:?} does not hold {count} values")));
                }
                layout.push((parts[0].to_string(), shape, offset, count));
            } else {
                return Err(bad(ln, format!("unexpected manifest line {line:?}")));
            }
        }
        let payload = &bytes[pos..];
        let total: usize = layout.iter().map(|l| l.3).sum();
        if payload.len() != total * 4 {
            return Err(Error::Checkpoint(format!(
                "{}: payload holds {} bytes, manifest needs {}",
                origin.display(),
                payload.len(),
                total * 4
            )));
        }
        for (name, shape, offset, count) in layout {
            if offset + count > total {
                return Err(Error::Checkpoint(format!("tensor {name} lies outside the payload")));
            }
            let data = payload[offset * 4..(offset + count) * 4]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            file.tensors.push(NamedTensor { name, shape, data });
        }
        Ok(file)
    }
}

pub fn write_tensor_file(path: &Path, file: &TensorFile) -> Result<()> {
    std::fs::write(path, file.to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn read_tensor_file(path: &Path) -> Result<TensorFile> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    TensorFile::from_bytes(&bytes, path)
}

/// Weights as a self-describing tensor file (model config and vocabulary
/// sizes go into the manifest).
pub fn export_weights<T: Scalar>(params: &ModelParams<T>) -> Result<TensorFile> {
    let mut file = TensorFile::default();
    file.meta.insert("config".into(), serde_json::to_string(&params.config)?);
    file.meta.insert("vocab".into(), serde_json::to_string(&params.vocab)?);
    file.insert_params("", params);
    Ok(file)
}

pub fn import_weights<T: Scalar>(file: &TensorFile) -> Result<ModelParams<T>> {
    let config: ModelConfig = serde_json::from_str(file.meta_value("config")?)?;
    let vocab: VocabSizes = serde_json::from_str(file.meta_value("vocab")?)?;
    config.validate()?;
    file.extract_params("", &config, vocab)
}

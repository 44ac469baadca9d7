//! Checkpoint container: a UTF-8 JSON manifest plus one little-endian blob.
//!
//! ```text
//! <dir>/manifest.json   {"format", "version", "blob", "tensors": [...], "meta": {...}}
//! <dir>/tensors.bin     raw values, concatenated in manifest order
//! ```
//!
//! Each tensor record carries `name`, `role`, `shape`, `dtype`, `offset` and
//! `length` (both in bytes, relative to the start of the blob).

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::diffcore::{DType, ParameterTree, Real, Role, Tensor};
use crate::error::{Error, Result};

pub const MANIFEST: &str = "manifest.json";
pub const BLOB: &str = "tensors.bin";
const FORMAT: &str = "setcon-tensors";
const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorRecord {
    pub name: String,
    pub role: Role,
    pub shape: Vec<usize>,
    pub dtype: DType,
    pub offset: u64,
    pub length: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub blob: String,
    pub tensors: Vec<TensorRecord>,
    #[serde(default)]
    pub meta: serde_json::Value,
}

/// Write `tree` and free-form `meta` into `dir` (created if needed).
pub fn save<T: Real>(dir: &Path, tree: &ParameterTree<T>, meta: serde_json::Value) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut blob = Vec::with_capacity(tree.num_scalars() * T::DTYPE.size_of());
    let mut tensors = Vec::with_capacity(tree.len());
    for (name, p) in tree.iter() {
        let offset = blob.len() as u64;
        for &v in p.tensor.data() {
            v.write_le(&mut blob);
        }
        tensors.push(TensorRecord {
            name: name.to_string(),
            role: p.role,
            shape: p.tensor.shape().to_vec(),
            dtype: T::DTYPE,
            offset,
            length: blob.len() as u64 - offset,
        });
    }
    let manifest = Manifest {
        format: FORMAT.into(),
        version: VERSION,
        blob: BLOB.into(),
        tensors,
        meta,
    };
    // Blob first so a crash never leaves a manifest pointing at a missing file.
    fs::write(dir.join(BLOB), &blob)?;
    fs::write(dir.join(MANIFEST), serde_json::to_string_pretty(&manifest)?)?;
    Ok(())
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path)?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| json_format_error(&path, &text, &e))?;
    if manifest.format != FORMAT || manifest.version != VERSION {
        return Err(Error::Format {
            path,
            position: 0,
            detail: format!("unsupported format {} v{}", manifest.format, manifest.version),
        });
    }
    Ok(manifest)
}

/// Load a tree saved by [`save`]. Values stored in another precision are
/// converted; same-precision loads are bit-exact.
pub fn load<T: Real>(dir: &Path) -> Result<(ParameterTree<T>, serde_json::Value)> {
    let manifest = read_manifest(dir)?;
    let blob_path = dir.join(&manifest.blob);
    let blob = fs::read(&blob_path)?;
    let mut tree = ParameterTree::new();
    for rec in &manifest.tensors {
        let numel: usize = rec.shape.iter().product();
        let width = rec.dtype.size_of();
        let fail = |position: u64, detail: String| Error::Format {
            path: blob_path.clone(),
            position,
            detail,
        };
        if rec.length != (numel * width) as u64 {
            return Err(fail(
                rec.offset,
                format!(
                    "`{}` declares {} bytes for {numel} {:?} values",
                    rec.name, rec.length, rec.dtype
                ),
            ));
        }
        let end = rec.offset.saturating_add(rec.length);
        if end > blob.len() as u64 {
            return Err(fail(
                blob.len() as u64,
                format!(
                    "`{}` needs bytes {}..{end} but the blob ends early",
                    rec.name, rec.offset
                ),
            ));
        }
        let bytes = &blob[rec.offset as usize..end as usize];
        let data: Vec<T> = match rec.dtype {
            d if d == T::DTYPE => bytes.chunks_exact(width).map(T::read_le).collect(),
            DType::F32 => bytes.chunks_exact(4).map(|c| T::lit(f32::read_le(c) as f64)).collect(),
            DType::F64 => bytes.chunks_exact(8).map(|c| T::lit(f64::read_le(c))).collect(),
        };
        tree.insert(rec.name.clone(), rec.role, Tensor::new(rec.shape.clone(), data)?)
            .map_err(|e| fail(rec.offset, e.to_string()))?;
    }
    Ok((tree, manifest.meta))
}

/// Byte offset of a serde_json error from its (line, column).
pub(crate) fn json_format_error(path: &Path, text: &str, e: &serde_json::Error) -> Error {
    let mut position = 0u64;
    for (i, line) in text.split_inclusive('\n').enumerate() {
        if i + 1 == e.line() {
            position += e.column().saturating_sub(1) as u64;
            break;
        }
        position += line.len() as u64;
    }
    Error::Format {
        path: PathBuf::from(path),
        position,
        detail: e.to_string(),
    }
}

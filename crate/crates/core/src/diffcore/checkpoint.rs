//! Manifest + blob tensor files.
//!
//! A tensor file is a JSON manifest listing `{name, shape, dtype, offset}`
//! per entry plus one little-endian raw-float blob next to it. The blob
//! shares the manifest's stem with a `.bin` extension.
//!
//! Parameter-store checkpoints add the two moment buffers of every
//! parameter as `<name>@m1` / `<name>@m2` and record the optimizer step in
//! the manifest metadata.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Array, DiffError, ParamStore};

pub const FORMAT: &str = "nvif-tensors/1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    F32,
    F64,
}

impl Dtype {
    fn width(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: Dtype,
    pub offset: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub blob: String,
    pub entries: Vec<ManifestEntry>,
    #[serde(default)]
    pub meta: serde_json::Value,
}

/// Path of the blob belonging to a manifest path.
pub fn blob_path(manifest: &Path) -> PathBuf {
    manifest.with_extension("bin")
}

/// Writes `entries` to `manifest` and its sibling blob.
pub fn write_tensors(
    manifest: &Path,
    entries: &[(String, &Array, Dtype)],
    meta: serde_json::Value,
) -> Result<(), DiffError> {
    let blob = blob_path(manifest);
    let mut bytes: Vec<u8> = Vec::new();
    let mut listed = Vec::with_capacity(entries.len());
    for (name, array, dtype) in entries {
        listed.push(ManifestEntry {
            name: name.clone(),
            shape: array.shape().to_vec(),
            dtype: *dtype,
            offset: bytes.len() as u64,
        });
        match dtype {
            Dtype::F64 => {
                for v in array.data() {
                    bytes.extend_from_slice(&v.to_le_bytes());
                }
            }
            Dtype::F32 => {
                for &v in array.data() {
                    bytes.extend_from_slice(&(v as f32).to_le_bytes());
                }
            }
        }
    }
    let blob_name = blob
        .file_name()
        .and_then(|s| s.to_str())
        .ok_or_else(|| DiffError::Checkpoint(format!("bad manifest path {}", manifest.display())))?
        .to_string();
    let m = Manifest {
        format: FORMAT.to_string(),
        blob: blob_name,
        entries: listed,
        meta,
    };
    if let Some(dir) = manifest.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    let mut f = fs::File::create(&blob)?;
    f.write_all(&bytes)?;
    let json = serde_json::to_string_pretty(&m).map_err(|e| DiffError::Checkpoint(e.to_string()))?;
    fs::write(manifest, json)?;
    Ok(())
}

/// Reads every entry of a tensor file, in manifest order.
pub fn read_tensors(manifest: &Path) -> Result<(Vec<(String, Array)>, serde_json::Value), DiffError> {
    let text = fs::read_to_string(manifest)?;
    let m: Manifest =
        serde_json::from_str(&text).map_err(|e| DiffError::Checkpoint(format!("manifest: {e}")))?;
    if m.format != FORMAT {
        return Err(DiffError::Checkpoint(format!("unsupported format {:?}", m.format)));
    }
    let blob_file = manifest.with_file_name(&m.blob);
    let bytes = fs::read(&blob_file)?;
    let mut out = Vec::with_capacity(m.entries.len());
    for e in m.entries {
        let n: usize = e.shape.iter().product();
        let start = e.offset as usize;
        let end = start + n * e.dtype.width();
        if end > bytes.len() {
            return Err(DiffError::Checkpoint(format!("entry {} overruns blob", e.name)));
        }
        let raw = &bytes[start..end];
        let data: Vec<f64> = match e.dtype {
            Dtype::F64 => raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect(),
            Dtype::F32 => raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
                .collect(),
        };
        out.push((e.name, Array::new(e.shape, data)?));
    }
    Ok((out, m.meta))
}

const FIRST: &str = "@m1";
const SECOND: &str = "@m2";

/// Saves values, moment buffers and step count at full precision.
pub fn save_store(store: &ParamStore, manifest: &Path, meta: serde_json::Value) -> Result<(), DiffError> {
    let mut entries = Vec::with_capacity(store.len() * 3);
    for id in store.ids() {
        let name = store.name(id);
        entries.push((name.to_string(), store.value(id), Dtype::F64));
        entries.push((format!("{name}{FIRST}"), &store.first_moment[id.0], Dtype::F64));
        entries.push((format!("{name}{SECOND}"), &store.second_moment[id.0], Dtype::F64));
    }
    let meta = serde_json::json!({ "step": store.step, "user": meta });
    write_tensors(manifest, &entries, meta)
}

/// Loads a store saved by [`save_store`]. Returns the user metadata.
pub fn load_store(manifest: &Path) -> Result<(ParamStore, serde_json::Value), DiffError> {
    let (entries, meta) = read_tensors(manifest)?;
    let mut store = ParamStore::new();
    let mut moments = Vec::new();
    for (name, array) in entries {
        if let Some(base) = name.strip_suffix(FIRST) {
            moments.push((base.to_string(), true, array));
        } else if let Some(base) = name.strip_suffix(SECOND) {
            moments.push((base.to_string(), false, array));
        } else {
            store.add(name, array)?;
        }
    }
    for (base, first, array) in moments {
        let id = store.id(&base)?;
        if first {
            let second = store.second_moment[id.0].clone();
            store.restore_moments(id, array, second)?;
        } else {
            let first = store.first_moment[id.0].clone();
            store.restore_moments(id, first, array)?;
        }
    }
    store.step = meta.get("step").and_then(|s| s.as_u64()).unwrap_or(0);
    let user = meta.get("user").cloned().unwrap_or(serde_json::Value::Null);
    Ok((store, user))
}

/// Loads a checkpoint into an existing store, requiring an identical layout.
pub fn load_into(store: &mut ParamStore, manifest: &Path) -> Result<serde_json::Value, DiffError> {
    let (loaded, meta) = load_store(manifest)?;
    if loaded.len() != store.len() || store.ids().any(|id| store.name(id) != loaded.name(id)) {
        return Err(DiffError::Checkpoint("parameter layouts differ".into()));
    }
    store.copy_values_from(&loaded)?;
    for id in loaded.ids() {
        store.restore_moments(
            id,
            loaded.first_moment[id.0].clone(),
            loaded.second_moment[id.0].clone(),
        )?;
    }
    store.step = loaded.step;
    Ok(meta)
}

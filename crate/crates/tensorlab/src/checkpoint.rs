//! Tensor files: a JSON manifest of `(name, shape, offset)` entries next to
//! one contiguous blob of little-endian `f32` values.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{NoamAdam, OptimizerState, ParamStore, Real, Result, TensorError};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Offset into the blob, in `f32` elements.
    pub offset: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
    #[serde(default)]
    pub meta: BTreeMap<String, String>,
}

pub struct TensorFile {
    pub manifest: Manifest,
    pub data: Vec<f32>,
}

impl TensorFile {
    pub fn new(meta: BTreeMap<String, String>) -> Self {
        TensorFile {
            manifest: Manifest {
                entries: Vec::new(),
                meta,
            },
            data: Vec::new(),
        }
    }

    pub fn push<F: Real>(&mut self, name: &str, shape: &[usize], values: &[F]) {
        self.manifest.entries.push(ManifestEntry {
            name: name.to_string(),
            shape: shape.to_vec(),
            offset: self.data.len(),
        });
        self.data.extend(values.iter().map(|v| v.as_f64() as f32));
    }

    pub fn get(&self, name: &str) -> Option<(&ManifestEntry, &[f32])> {
        let e = self.manifest.entries.iter().find(|e| e.name == name)?;
        let n: usize = e.shape.iter().product();
        self.data.get(e.offset..e.offset + n).map(|d| (e, d))
    }

    pub fn write(&self, blob: &Path, manifest: &Path) -> Result<()> {
        let bytes: Vec<u8> = self.data.iter().flat_map(|v| v.to_le_bytes()).collect();
        fs::write(blob, bytes)?;
        fs::write(manifest, serde_json::to_string_pretty(&self.manifest)?)?;
        Ok(())
    }

    pub fn read(blob: &Path, manifest: &Path) -> Result<Self> {
        let manifest: Manifest = serde_json::from_str(&fs::read_to_string(manifest)?)?;
        let bytes = fs::read(blob)?;
        if bytes.len() % 4 != 0 {
            return Err(TensorError::Format(format!("{} is not a whole number of f32s", blob.display())));
        }
        let data: Vec<f32> = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        for e in &manifest.entries {
            let n: usize = e.shape.iter().product();
            if e.offset + n > data.len() {
                return Err(TensorError::Format(format!("entry {} runs past the blob", e.name)));
            }
        }
        Ok(TensorFile { manifest, data })
    }
}

pub fn save_params<F: Real>(store: &ParamStore<F>, blob: &Path, manifest: &Path) -> Result<()> {
    let mut file = TensorFile::new(BTreeMap::new());
    for (_, p) in store.iter() {
        file.push(&p.name, &p.shape, &p.value);
    }
    file.write(blob, manifest)
}

/// Loads saved values into an existing store with the same layout.
pub fn load_params<F: Real>(store: &mut ParamStore<F>, blob: &Path, manifest: &Path) -> Result<()> {
    let file = TensorFile::read(blob, manifest)?;
    if file.manifest.entries.len() != store.len() {
        return Err(TensorError::Format(format!(
            "checkpoint holds {} tensors, model expects {}",
            file.manifest.entries.len(),
            store.len()
        )));
    }
    for (_, p) in store.iter_mut() {
        let (e, data) = file
            .get(&p.name)
            .ok_or_else(|| TensorError::Format(format!("missing tensor {}", p.name)))?;
        if e.shape != p.shape {
            return Err(TensorError::Format(format!(
                "tensor {}: saved shape {:?}, expected {:?}",
                p.name, e.shape, p.shape
            )));
        }
        p.value = data.iter().map(|&v| F::lit(v as f64)).collect();
    }
    Ok(())
}

pub fn save_optimizer<F: Real>(
    opt: &NoamAdam<F>,
    store: &ParamStore<F>,
    blob: &Path,
    manifest: &Path,
) -> Result<()> {
    let mut meta = BTreeMap::new();
    meta.insert("step".to_string(), opt.state.step.to_string());
    meta.insert("config".to_string(), serde_json::to_string(&opt.config)?);
    let mut file = TensorFile::new(meta);
    for (id, p) in store.iter() {
        file.push(&format!("m.{}", p.name), &p.shape, &opt.state.m[id.index()]);
        file.push(&format!("v.{}", p.name), &p.shape, &opt.state.v[id.index()]);
    }
    file.write(blob, manifest)
}

pub fn load_optimizer<F: Real>(store: &ParamStore<F>, blob: &Path, manifest: &Path) -> Result<NoamAdam<F>> {
    let file = TensorFile::read(blob, manifest)?;
    let meta = &file.manifest.meta;
    let step = meta
        .get("step")
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| TensorError::Format("optimizer sidecar lacks a step".into()))?;
    let config = serde_json::from_str(
        meta.get("config")
            .ok_or_else(|| TensorError::Format("optimizer sidecar lacks a config".into()))?,
    )?;
    let mut m = Vec::with_capacity(store.len());
    let mut v = Vec::with_capacity(store.len());
    for (_, p) in store.iter() {
        for (prefix, out) in [("m", &mut m), ("v", &mut v)] {
            let (e, data) = file
                .get(&format!("{prefix}.{}", p.name))
                .ok_or_else(|| TensorError::Format(format!("missing moment {prefix}.{}", p.name)))?;
            if e.shape != p.shape {
                return Err(TensorError::Format(format!("moment shape mismatch for {}", p.name)));
            }
            out.push(data.iter().map(|&x| F::lit(x as f64)).collect());
        }
    }
    Ok(NoamAdam {
        config,
        state: OptimizerState { step, m, v },
    })
}

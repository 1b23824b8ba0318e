//! Model persistence: `manifest.json` plus one little-endian `f32` blob per
//! network.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use intrinsic_tensor::Tensor;
use serde::{Deserialize, Serialize};

use super::{ModelBundle, NetConfig, Network};
use crate::{Error, Result};

pub const MODEL_FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorRecord {
    pub network: String,
    pub shape: Vec<usize>,
    pub dtype: String,
    /// Byte offset inside `<network>.bin`.
    pub offset: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelManifest {
    pub format_version: u32,
    pub net_config: NetConfig,
    pub tensors: BTreeMap<String, TensorRecord>,
}

pub fn blob_name(network: Network) -> String {
    format!("{}.bin", network.name())
}

pub fn save_model(bundle: &ModelBundle, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut blobs: BTreeMap<Network, Vec<u8>> = BTreeMap::new();
    let mut tensors = BTreeMap::new();
    for e in bundle.store().entries() {
        let blob = blobs.entry(e.network).or_default();
        tensors.insert(
            e.name.clone(),
            TensorRecord {
                network: e.network.name().to_string(),
                shape: e.tensor.shape().to_vec(),
                dtype: "f32".into(),
                offset: blob.len(),
            },
        );
        blob.extend(e.tensor.data().iter().flat_map(|v| v.to_le_bytes()));
    }
    for (net, bytes) in &blobs {
        let path = dir.join(blob_name(*net));
        fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
    }
    let manifest = ModelManifest {
        format_version: MODEL_FORMAT_VERSION,
        net_config: bundle.config().clone(),
        tensors,
    };
    let path = dir.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::io(&path, e))?;
    fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

pub fn read_manifest(dir: &Path) -> Result<ModelManifest> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: ModelManifest = serde_json::from_str(&text)
        .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
    if manifest.format_version != MODEL_FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "model format version {} is not supported (expected {MODEL_FORMAT_VERSION})",
            manifest.format_version
        )));
    }
    Ok(manifest)
}

pub fn load_model(dir: &Path) -> Result<ModelBundle> {
    let manifest = read_manifest(dir)?;
    let mut bundle = ModelBundle::new(&manifest.net_config, 0)?;
    let mut blobs: BTreeMap<String, Vec<u8>> = BTreeMap::new();
    let mut store = bundle.store().clone();
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let entry = store.entry(id);
        let name = entry.name.clone();
        let rec = manifest
            .tensors
            .get(&name)
            .ok_or_else(|| Error::Checkpoint(format!("tensor {name} missing from manifest")))?;
        if rec.dtype != "f32"
            || rec.shape != entry.tensor.shape()
            || rec.network != entry.network.name()
        {
            return Err(Error::Checkpoint(format!(
                "tensor {name}: manifest has {} {:?} in {}, model expects f32 {:?} in {}",
                rec.dtype,
                rec.shape,
                rec.network,
                entry.tensor.shape(),
                entry.network.name()
            )));
        }
        if !blobs.contains_key(&rec.network) {
            let path = dir.join(format!("{}.bin", rec.network));
            let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
            blobs.insert(rec.network.clone(), bytes);
        }
        let bytes = &blobs[&rec.network];
        let len: usize = rec.shape.iter().product();
        let end = rec.offset + 4 * len;
        if end > bytes.len() {
            return Err(Error::Checkpoint(format!(
                "tensor {name} runs past the end of {}.bin",
                rec.network
            )));
        }
        let data = bytes[rec.offset..end]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        *store.get_mut(id) = Tensor::new(rec.shape.clone(), data)?;
    }
    if manifest.tensors.len() != store.len() {
        return Err(Error::Checkpoint(format!(
            "manifest lists {} tensors, model has {}",
            manifest.tensors.len(),
            store.len()
        )));
    }
    bundle.load_params(store)?;
    Ok(bundle)
}

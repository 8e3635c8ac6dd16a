//! Model checkpoints: a JSON manifest plus a raw float blob.
//!
//! The manifest records the architecture spec, seed, a free-form metrics
//! snapshot, and a tensor table of byte ranges; the blob is the
//! little-endian 32-bit floats of every parameter concatenated in
//! manifest order. Round trips are bit-exact, and the format is plain
//! enough to inspect with a hex dump.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nets::{build_network, NetError, Network, NetworkSpec};
use crate::optim::{OptimError, ParamSet};
use crate::tensor::{Tensor, TensorError};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint io at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("manifest parse failed at {path}: {detail}")]
    BadManifest { path: PathBuf, detail: String },
    #[error("unsupported checkpoint format_version {found} (this build reads {FORMAT_VERSION})")]
    UnsupportedVersion { found: u32 },
    #[error("corrupt checkpoint blob: {0}")]
    CorruptBlob(String),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Optim(#[from] OptimError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub type Result<T> = std::result::Result<T, CheckpointError>;

/// One tensor's slot in the blob.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub byte_offset: u64,
    pub byte_len: u64,
}

/// Sidecar JSON describing the blob.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format_version: u32,
    pub spec: NetworkSpec,
    pub seed: u64,
    /// Free-form snapshot (e.g. test accuracy at save time).
    pub metrics: serde_json::Value,
    /// Blob filename, relative to the manifest's directory.
    pub blob: String,
    pub tensors: Vec<TensorEntry>,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CheckpointError + '_ {
    move |source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes `<stem>.json` and `<stem>.bin` under `dir`; returns the manifest
/// path. Identical inputs produce byte-identical files.
pub fn save_checkpoint(
    dir: &Path,
    stem: &str,
    network: &Network,
    metrics: serde_json::Value,
) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut blob: Vec<u8> = Vec::new();
    let mut tensors = Vec::new();
    for (name, tensor) in network.params().iter() {
        let byte_offset = blob.len() as u64;
        for v in tensor.data() {
            blob.extend_from_slice(&v.to_le_bytes());
        }
        tensors.push(TensorEntry {
            name: name.to_string(),
            shape: tensor.shape().to_vec(),
            byte_offset,
            byte_len: blob.len() as u64 - byte_offset,
        });
    }
    let blob_name = format!("{stem}.bin");
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        spec: network.spec().clone(),
        seed: network.spec().seed,
        metrics,
        blob: blob_name.clone(),
        tensors,
    };
    let blob_path = dir.join(&blob_name);
    fs::write(&blob_path, &blob).map_err(io_err(&blob_path))?;
    let manifest_path = dir.join(format!("{stem}.json"));
    let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    text.push('\n');
    fs::write(&manifest_path, text).map_err(io_err(&manifest_path))?;
    Ok(manifest_path)
}

fn validate_tiling(manifest: &Manifest, blob_len: u64) -> Result<()> {
    let mut cursor = 0u64;
    for entry in &manifest.tensors {
        if entry.byte_offset != cursor {
            return Err(CheckpointError::CorruptBlob(format!(
                "tensor {} at offset {} leaves a gap or overlap (expected {})",
                entry.name, entry.byte_offset, cursor
            )));
        }
        let numel: usize = entry.shape.iter().product();
        if entry.byte_len != (numel * 4) as u64 {
            return Err(CheckpointError::CorruptBlob(format!(
                "tensor {} length {} does not match shape {:?}",
                entry.name, entry.byte_len, entry.shape
            )));
        }
        cursor = cursor
            .checked_add(entry.byte_len)
            .ok_or_else(|| CheckpointError::CorruptBlob("offset overflow".into()))?;
    }
    if cursor != blob_len {
        return Err(CheckpointError::CorruptBlob(format!(
            "tensor table covers {cursor} bytes, blob has {blob_len}"
        )));
    }
    Ok(())
}

/// Reads the manifest (without the blob): useful for inspecting metrics.
pub fn read_manifest(manifest_path: &Path) -> Result<Manifest> {
    let text = fs::read_to_string(manifest_path).map_err(io_err(manifest_path))?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| CheckpointError::BadManifest {
            path: manifest_path.to_path_buf(),
            detail: e.to_string(),
        })?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(CheckpointError::UnsupportedVersion {
            found: manifest.format_version,
        });
    }
    Ok(manifest)
}

/// Restores a network bit-exactly from its manifest path.
pub fn load_checkpoint(manifest_path: &Path) -> Result<(Network, Manifest)> {
    let manifest = read_manifest(manifest_path)?;
    let dir = manifest_path.parent().unwrap_or_else(|| Path::new("."));
    let blob_path = dir.join(&manifest.blob);
    let blob = fs::read(&blob_path).map_err(io_err(&blob_path))?;
    validate_tiling(&manifest, blob.len() as u64)?;

    let mut params = ParamSet::new(manifest.seed);
    for entry in &manifest.tensors {
        let lo = entry.byte_offset as usize;
        let hi = lo + entry.byte_len as usize;
        let data: Vec<f32> = blob[lo..hi]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        params.push(entry.name.clone(), Tensor::new(entry.shape.clone(), data)?)?;
    }
    let mut network = build_network(&manifest.spec)?;
    network.set_params(params)?;
    Ok((network, manifest))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nets::{NetRole, NetworkSpec};

    fn sample_network() -> Network {
        let spec = NetworkSpec::classifier(NetRole::Target, 2, vec![8, 8], 3, 17);
        build_network(&spec).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let net = sample_network();
        let path = save_checkpoint(
            dir.path(),
            "target",
            &net,
            serde_json::json!({"test_accuracy": 0.97}),
        )
        .unwrap();
        let (loaded, manifest) = load_checkpoint(&path).unwrap();
        assert_eq!(manifest.metrics["test_accuracy"], 0.97);
        assert_eq!(loaded.spec(), net.spec());
        for ((n1, t1), (n2, t2)) in net.params().iter().zip(loaded.params().iter()) {
            assert_eq!(n1, n2);
            assert_eq!(t1.shape(), t2.shape());
            for (a, b) in t1.data().iter().zip(t2.data()) {
                assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }

    #[test]
    fn save_is_byte_deterministic() {
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        let net = sample_network();
        let m = serde_json::json!({"note": "same"});
        let p1 = save_checkpoint(d1.path(), "a", &net, m.clone()).unwrap();
        let p2 = save_checkpoint(d2.path(), "a", &net, m).unwrap();
        assert_eq!(fs::read(&p1).unwrap(), fs::read(&p2).unwrap());
        assert_eq!(
            fs::read(p1.with_extension("bin")).unwrap(),
            fs::read(p2.with_extension("bin")).unwrap()
        );
    }

    #[test]
    fn version_bump_refused() {
        let dir = tempfile::tempdir().unwrap();
        let net = sample_network();
        let path = save_checkpoint(dir.path(), "t", &net, serde_json::Value::Null).unwrap();
        let mut manifest: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
        manifest["format_version"] = serde_json::json!(2);
        fs::write(&path, serde_json::to_string(&manifest).unwrap()).unwrap();
        match load_checkpoint(&path) {
            Err(CheckpointError::UnsupportedVersion { found: 2 }) => {}
            other => panic!("expected UnsupportedVersion, got {other:?}"),
        }
    }

    #[test]
    fn overlapping_tensors_refused() {
        let dir = tempfile::tempdir().unwrap();
        let net = sample_network();
        let path = save_checkpoint(dir.path(), "t", &net, serde_json::Value::Null).unwrap();
        let mut manifest: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
        // pull the second tensor back so it overlaps the first
        manifest["tensors"][1]["byte_offset"] = serde_json::json!(0);
        fs::write(&path, serde_json::to_string(&manifest).unwrap()).unwrap();
        match load_checkpoint(&path) {
            Err(CheckpointError::CorruptBlob(msg)) => {
                assert!(msg.contains("gap or overlap"), "{msg}");
            }
            other => panic!("expected CorruptBlob, got {other:?}"),
        }
    }

    #[test]
    fn truncated_blob_refused() {
        let dir = tempfile::tempdir().unwrap();
        let net = sample_network();
        let path = save_checkpoint(dir.path(), "t", &net, serde_json::Value::Null).unwrap();
        let blob_path = path.with_extension("bin");
        let blob = fs::read(&blob_path).unwrap();
        fs::write(&blob_path, &blob[..blob.len() - 4]).unwrap();
        assert!(matches!(
            load_checkpoint(&path),
            Err(CheckpointError::CorruptBlob(_))
        ));
    }

    #[test]
    fn predictions_survive_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let net = sample_network();
        let x = vec![0.3f32, -0.7, 1.2, 0.05, -2.0, 0.4];
        let before = net.forward_eager(&x, 3).unwrap();
        let path = save_checkpoint(dir.path(), "t", &net, serde_json::Value::Null).unwrap();
        let (loaded, _) = load_checkpoint(&path).unwrap();
        let after = loaded.forward_eager(&x, 3).unwrap();
        for (a, b) in before.iter().zip(&after) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }
}

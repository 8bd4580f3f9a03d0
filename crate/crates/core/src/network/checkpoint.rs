//! Checkpoint layout: a directory holding `manifest.json` and one file per
//! parameter tensor in the binary tensor format.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::Network;
use crate::archmodel::ArchConfig;
use crate::error::{Error, Result};
use crate::numerics::{io, Precision, Scalar, Shape, Tensor};

pub const MANIFEST: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: [usize; 4],
    pub file: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format_version: u32,
    pub config: ArchConfig,
    pub with_sca: bool,
    pub precision: Precision,
    /// Initialisation seed.
    pub seed: u64,
    /// Optimizer steps taken before saving.
    pub steps: usize,
    pub tensors: Vec<TensorEntry>,
}

pub fn save_checkpoint<T: Scalar>(
    net: &Network<T>,
    seed: u64,
    steps: usize,
    dir: impl AsRef<Path>,
) -> Result<CheckpointManifest> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let mut tensors = Vec::new();
    for p in net.params() {
        let file = format!("{}.tensor", p.name);
        io::save(&Tensor::new(p.shape, p.data.to_vec())?, dir.join(&file))?;
        tensors.push(TensorEntry {
            name: p.name,
            shape: p.shape.dims(),
            file,
        });
    }
    let manifest = CheckpointManifest {
        format_version: 1,
        config: *net.config(),
        with_sca: net.with_sca(),
        precision: T::PRECISION,
        seed,
        steps,
        tensors,
    };
    std::fs::write(dir.join(MANIFEST), serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(manifest)
}

/// Loads into element type `T`, converting if the stored precision differs.
pub fn load_checkpoint<T: Scalar>(dir: impl AsRef<Path>) -> Result<Network<T>> {
    load_checkpoint_with_manifest(dir).map(|(net, _)| net)
}

pub fn load_checkpoint_with_manifest<T: Scalar>(dir: impl AsRef<Path>) -> Result<(Network<T>, CheckpointManifest)> {
    let dir = dir.as_ref();
    let manifest: CheckpointManifest = serde_json::from_slice(&std::fs::read(dir.join(MANIFEST))?)?;
    let mut net = Network::<T>::build(&manifest.config, 0, manifest.with_sca)?;
    let expected: Vec<(String, Shape)> = net.params().into_iter().map(|p| (p.name, p.shape)).collect();
    if expected.len() != manifest.tensors.len() {
        return Err(Error::Format(format!(
            "checkpoint lists {} tensors, network has {}",
            manifest.tensors.len(),
            expected.len()
        )));
    }
    for ((slot, (name, shape)), entry) in net.params_mut().into_iter().zip(expected).zip(&manifest.tensors) {
        if entry.name != name {
            return Err(Error::Format(format!(
                "expected tensor `{name}`, found `{}`",
                entry.name
            )));
        }
        let t: Tensor<T> = io::load(dir.join(&entry.file))?;
        if t.shape() != shape {
            return Err(Error::shape(format!(
                "`{name}`: stored {}, expected {shape}",
                t.shape()
            )));
        }
        slot.copy_from_slice(t.data());
    }
    Ok((net, manifest))
}

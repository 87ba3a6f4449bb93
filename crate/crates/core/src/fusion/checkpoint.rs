//! Checkpoint directories: `manifest.json` plus one raw little-endian `f64`
//! blob per parameter entry.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::NetworkSpec;
use crate::params::{ParamStore, Role};
use crate::tensor::Tensor;

use super::network::{FusedNetwork, Strategy};
use super::partition::FusionPartition;

pub const CHECKPOINT_VERSION: u32 = 1;
const MANIFEST: &str = "manifest.json";
const FORMAT: &str = "fusekit-checkpoint";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FusionMeta {
    pub strategy: Strategy,
    pub zero_block_sigma: f64,
    pub sources: Vec<NetworkSpec>,
    pub partition: FusionPartition,
}

/// A network with its parameters, and fusion provenance when it was built
/// by fusion.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub network: NetworkSpec,
    pub params: ParamStore,
    pub fusion: Option<FusionMeta>,
}

impl Checkpoint {
    pub fn plain(network: NetworkSpec, params: ParamStore) -> Self {
        Self { network, params, fusion: None }
    }

    pub fn into_fused(self) -> Result<FusedNetwork> {
        let meta = self.fusion.ok_or_else(|| Error::Partition("checkpoint carries no fusion partition".into()))?;
        Ok(FusedNetwork {
            spec: self.network,
            params: self.params,
            partition: meta.partition,
            strategy: meta.strategy,
            zero_block_sigma: meta.zero_block_sigma,
            sources: meta.sources,
        })
    }
}

impl From<&FusedNetwork> for Checkpoint {
    fn from(f: &FusedNetwork) -> Self {
        Checkpoint {
            network: f.spec.clone(),
            params: f.params.clone(),
            fusion: Some(FusionMeta {
                strategy: f.strategy,
                zero_block_sigma: f.zero_block_sigma,
                sources: f.sources.clone(),
                partition: f.partition.clone(),
            }),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct EntryRecord {
    name: String,
    role: Role,
    shape: Vec<usize>,
    file: String,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    format: String,
    version: u32,
    network: NetworkSpec,
    entries: Vec<EntryRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    fusion: Option<FusionMeta>,
}

fn blob_name(entry: &str) -> String {
    format!("{entry}.f64le")
}

pub fn save_checkpoint(dir: &Path, ckpt: &Checkpoint) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut entries = Vec::with_capacity(ckpt.params.entries().len());
    for e in ckpt.params.entries() {
        let file = blob_name(&e.name);
        let bytes: Vec<u8> = ckpt.params.flat()[e.range()].iter().flat_map(|v| v.to_le_bytes()).collect();
        fs::write(dir.join(&file), bytes)?;
        entries.push(EntryRecord { name: e.name.clone(), role: e.role, shape: e.shape.clone(), file });
    }
    let manifest = Manifest {
        format: FORMAT.into(),
        version: CHECKPOINT_VERSION,
        network: ckpt.network.clone(),
        entries,
        fusion: ckpt.fusion.clone(),
    };
    fs::write(dir.join(MANIFEST), serde_json::to_string_pretty(&manifest)?)?;
    Ok(())
}

pub fn load_checkpoint(dir: &Path) -> Result<Checkpoint> {
    let manifest: Manifest = serde_json::from_str(&fs::read_to_string(dir.join(MANIFEST))?)?;
    if manifest.format != FORMAT || manifest.version != CHECKPOINT_VERSION {
        return Err(Error::InvalidArgument(format!(
            "unsupported checkpoint {} v{}",
            manifest.format, manifest.version
        )));
    }
    manifest.network.validate()?;
    let mut params = ParamStore::new();
    for rec in manifest.entries {
        let bytes = fs::read(dir.join(&rec.file))?;
        if bytes.len() % 8 != 0 {
            return Err(Error::Shape(format!("blob {} is not a whole number of f64 values", rec.file)));
        }
        let data = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        params.push(rec.name, rec.role, Tensor::new(rec.shape, data)?)?;
    }
    manifest.network.check_params(&params)?;
    if let Some(meta) = &manifest.fusion {
        meta.partition.validate(&params)?;
    }
    Ok(Checkpoint { network: manifest.network, params, fusion: manifest.fusion })
}

impl FusedNetwork {
    pub fn save(&self, dir: &Path) -> Result<()> {
        save_checkpoint(dir, &Checkpoint::from(self))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        load_checkpoint(dir)?.into_fused()
    }
}

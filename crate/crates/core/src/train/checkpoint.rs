//! Bit-exact checkpoint serialization.
//!
//! Layout: magic `FFACKPT1`; little-endian u32 version; length-prefixed
//! UTF-8 JSON config block (model config, train config, step, seed,
//! optimizer step); little-endian u32 tensor count; per tensor: u32 name
//! length + UTF-8 name, u32 rank, u32 extents, payload of little-endian
//! f32; trailing CRC-32 of all preceding bytes.
//!
//! Tensors appear as the parameters in store order, then their first
//! moments under `optim.m.`, then second moments under `optim.v.`.
//! Serialization is canonical, so save → load → save reproduces the file
//! byte for byte.

use std::fs;
use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use super::adam::OptimState;
use super::TrainConfig;
use crate::error::{Error, Result};
use crate::model::{ModelConfig, ParamStore};
use crate::tensor::Tensor;

const MAGIC: &[u8; 8] = b"FFACKPT1";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, Serialize, Deserialize)]
struct ConfigBlock {
    model: ModelConfig,
    train: TrainConfig,
    step: u64,
    seed: u64,
    optim_step: u64,
}

/// Complete training state: everything needed to continue a run
/// bit-identically.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub version: u32,
    pub model: ModelConfig,
    pub train: TrainConfig,
    /// Training steps completed.
    pub step: u64,
    /// Run seed; together with `step` it pins every future random draw,
    /// since each step derives its own stream from (seed, step).
    pub seed: u64,
    pub params: ParamStore<f32>,
    pub optim: OptimState,
}

impl Checkpoint {
    /// Explicit config-conflict check for loading under an expected model.
    pub fn require_model(&self, expected: &ModelConfig) -> Result<()> {
        if &self.model != expected {
            return Err(Error::Config(format!(
                "checkpoint model config {:?} conflicts with expected {:?}",
                self.model, expected
            )));
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let block = ConfigBlock {
            model: self.model.clone(),
            train: self.train.clone(),
            step: self.step,
            seed: self.seed,
            optim_step: self.optim.step_count(),
        };
        let json = serde_json::to_vec(&block)
            .map_err(|e| Error::Checkpoint(format!("config serialization: {e}")))?;

        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&self.version.to_le_bytes());
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);

        let tensors: Vec<(String, &Tensor<f32>)> = self
            .params
            .iter()
            .map(|(n, t)| (n.to_string(), t))
            .chain(self.optim.first_moments().map(|(n, t)| (format!("optim.m.{n}"), t)))
            .chain(self.optim.second_moments().map(|(n, t)| (format!("optim.v.{n}"), t)))
            .collect();
        out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
        for (name, t) in tensors {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
            for &d in t.dims() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for &v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        Ok(out)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if bytes.len() < MAGIC.len() + 8 {
            return Err(Error::Checkpoint("file too short".into()));
        }
        let payload_end = bytes.len() - 4;
        let stored_crc = u32::from_le_bytes(bytes[payload_end..].try_into().expect("4 bytes"));
        let computed = crc32fast::hash(&bytes[..payload_end]);
        if stored_crc != computed {
            return Err(Error::Checkpoint(format!(
                "checksum mismatch: stored {stored_crc:08x}, computed {computed:08x}"
            )));
        }

        if r.take(MAGIC.len())? != MAGIC {
            return Err(Error::Checkpoint("bad magic bytes".into()));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported version {version}, expected {CHECKPOINT_VERSION}"
            )));
        }
        let json_len = r.u32()? as usize;
        let json = r.take(json_len)?;
        let block: ConfigBlock = serde_json::from_slice(json)
            .map_err(|e| Error::Checkpoint(format!("config block: {e}")))?;

        let count = r.u32()? as usize;
        let mut tensors: IndexMap<String, Tensor<f32>> = IndexMap::with_capacity(count);
        for _ in 0..count {
            let name_len = r.u32()? as usize;
            let name = String::from_utf8(r.take(name_len)?.to_vec())
                .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?;
            let rank = r.u32()? as usize;
            if rank == 0 || rank > crate::tensor::MAX_RANK {
                return Err(Error::Checkpoint(format!("tensor {name:?} has rank {rank}")));
            }
            let mut dims = Vec::with_capacity(rank);
            for _ in 0..rank {
                dims.push(r.u32()? as usize);
            }
            let len: usize = dims.iter().product();
            let raw = r.take(len * 4)?;
            let data: Vec<f32> = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            let t = Tensor::from_vec(&dims, data)
                .map_err(|e| Error::Checkpoint(format!("tensor {name:?}: {e}")))?;
            if tensors.insert(name.clone(), t).is_some() {
                return Err(Error::Checkpoint(format!("duplicate tensor {name:?}")));
            }
        }
        if r.pos != payload_end {
            return Err(Error::Checkpoint(format!(
                "{} trailing bytes after tensor section",
                payload_end - r.pos
            )));
        }

        let mut params = IndexMap::new();
        let mut m = IndexMap::new();
        let mut v = IndexMap::new();
        for (name, t) in tensors {
            if let Some(rest) = name.strip_prefix("optim.m.") {
                m.insert(rest.to_string(), t);
            } else if let Some(rest) = name.strip_prefix("optim.v.") {
                v.insert(rest.to_string(), t);
            } else {
                params.insert(name, t);
            }
        }
        if m.len() != params.len() || v.len() != params.len() {
            return Err(Error::Checkpoint(format!(
                "tensor sections disagree: {} params, {} m, {} v",
                params.len(),
                m.len(),
                v.len()
            )));
        }
        let optim = OptimState::from_parts(block.optim_step, m, v)?;
        let params = ParamStore::from_tensors(block.seed, params)?;
        Ok(Checkpoint {
            version,
            model: block.model,
            train: block.train,
            step: block.step,
            seed: block.seed,
            params,
            optim,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Checkpoint("file truncated".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::init_params;
    use tempfile::tempdir;

    fn sample_checkpoint() -> Checkpoint {
        let model = ModelConfig {
            groups: 1,
            blocks_per_group: 1,
            channels: 8,
            reduction: 2,
            pa_kernel: 3,
            use_fa: true,
            use_lrl: true,
            use_ffa: true,
        };
        let params = init_params::<f32>(&model, 7).unwrap();
        let optim = OptimState::new(&params);
        Checkpoint {
            version: CHECKPOINT_VERSION,
            model,
            train: TrainConfig::default(),
            step: 123,
            seed: 7,
            params,
            optim,
        }
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        let dir = tempdir().unwrap();
        let ckpt = sample_checkpoint();
        let p1 = dir.path().join("a.ckpt");
        let p2 = dir.path().join("b.ckpt");
        ckpt.save(&p1).unwrap();
        let loaded = Checkpoint::load(&p1).unwrap();
        loaded.save(&p2).unwrap();
        assert_eq!(fs::read(&p1).unwrap(), fs::read(&p2).unwrap());
        assert_eq!(loaded.step, 123);
        assert_eq!(loaded.params, ckpt.params);
        assert_eq!(loaded.optim, ckpt.optim);
    }

    #[test]
    fn tampered_checksum_rejected() {
        let ckpt = sample_checkpoint();
        let mut bytes = ckpt.to_bytes().unwrap();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0xff;
        match Checkpoint::from_bytes(&bytes) {
            Err(Error::Checkpoint(msg)) => assert!(msg.contains("checksum"), "{msg}"),
            other => panic!("expected checksum failure, got {other:?}"),
        }
    }

    #[test]
    fn version_mismatch_rejected() {
        let ckpt = sample_checkpoint();
        let mut bytes = ckpt.to_bytes().unwrap();
        // bump the version field and re-seal the checksum
        bytes[8] = 99;
        let end = bytes.len() - 4;
        let crc = crc32fast::hash(&bytes[..end]);
        bytes[end..].copy_from_slice(&crc.to_le_bytes());
        match Checkpoint::from_bytes(&bytes) {
            Err(Error::Checkpoint(msg)) => assert!(msg.contains("version"), "{msg}"),
            other => panic!("expected version failure, got {other:?}"),
        }
    }

    #[test]
    fn mismatched_model_config_is_config_conflict() {
        let ckpt = sample_checkpoint();
        let mut other = ckpt.model.clone();
        other.channels = 16;
        other.reduction = 4;
        assert!(matches!(ckpt.require_model(&other), Err(Error::Config(_))));
        assert!(ckpt.require_model(&ckpt.model.clone()).is_ok());
    }
}

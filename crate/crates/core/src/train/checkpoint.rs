use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use tsonet_tensor::{ParamStore, Tensor};

use super::TrainConfig;
use crate::error::{Error, Result};
use crate::model::Tsonet;

const MAGIC: &[u8; 8] = b"TSONETCK";

/// Parameters plus the configuration that produced them.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub step: u64,
    pub epoch: usize,
    pub best_val_rmse: Option<f64>,
    pub params: ParamStore<f32>,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
}

#[derive(Serialize, Deserialize)]
struct Descriptor {
    config: TrainConfig,
    step: u64,
    epoch: usize,
    best_val_rmse: Option<f64>,
    tensors: Vec<TensorEntry>,
}

impl Checkpoint {
    /// Layout: magic, little-endian u64 descriptor length, JSON descriptor,
    /// then every tensor as little-endian f32 in descriptor order.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut offset = 0;
        let tensors = self
            .params
            .iter()
            .map(|(name, t)| {
                let e = TensorEntry {
                    name: name.to_string(),
                    shape: t.shape().to_vec(),
                    offset,
                };
                offset += t.numel();
                e
            })
            .collect();
        let desc = Descriptor {
            config: self.config.clone(),
            step: self.step,
            epoch: self.epoch,
            best_val_rmse: self.best_val_rmse,
            tensors,
        };
        let json = serde_json::to_vec(&desc).expect("descriptor serialises");
        let mut out = Vec::with_capacity(16 + json.len() + offset * 4);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, t) in self.params.iter() {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let err = |msg: &str| Error::Format {
            path: path.to_path_buf(),
            msg: msg.to_string(),
        };
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(err("not a checkpoint file"));
        }
        let len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let body = bytes.get(16..16 + len).ok_or_else(|| err("truncated descriptor"))?;
        let desc: Descriptor = serde_json::from_slice(body).map_err(Error::json(path))?;
        let mut payload = &bytes[16 + len..];
        let mut params = ParamStore::new();
        for e in desc.tensors {
            let n: usize = e.shape.iter().product();
            let mut raw = vec![0u8; n * 4];
            payload.read_exact(&mut raw).map_err(|_| err("truncated tensor data"))?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            params.add(e.name, Tensor::from_vec(e.shape, data));
        }
        if !payload.is_empty() {
            return Err(err("trailing bytes after tensor data"));
        }
        Ok(Self {
            config: desc.config,
            step: desc.step,
            epoch: desc.epoch,
            best_val_rmse: desc.best_val_rmse,
            params,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(Error::io(dir))?;
        }
        let mut f = fs::File::create(path).map_err(Error::io(path))?;
        f.write_all(&self.to_bytes()).map_err(Error::io(path))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(Error::io(path))?;
        Self::from_bytes(&bytes, path)
    }

    /// Rebuilds the network and checks every parameter against it by name
    /// and shape.
    pub fn build_model(&self) -> Result<(Tsonet, ParamStore<f32>)> {
        let (model, mut fresh) = Tsonet::new(&self.config.model, self.config.ablation(), self.config.seed)?;
        if fresh.len() != self.params.len() {
            return Err(Error::Shape(format!(
                "checkpoint has {} tensors, model expects {}",
                self.params.len(),
                fresh.len()
            )));
        }
        for (name, t) in self.params.iter() {
            fresh.set(name, t.clone())?;
        }
        Ok((model, fresh))
    }
}

//! Checkpoint files: a text preamble, a JSON manifest (model config,
//! training step, tensor directory) and a raw little-endian f32 payload.
//!
//! ```text
//! ynetr-checkpoint v1
//! manifest_bytes 1234
//! {...manifest...}
//! <payload>
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ModelConfig, YNetr};
use crate::error::{Error, Result};
use crate::tensor::optim::AdamWState;
use crate::tensor::Tensor;

const MAGIC: &str = "ynetr-checkpoint v1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum Slot {
    Param,
    AdamM,
    AdamV,
}

#[derive(Debug, Serialize, Deserialize)]
struct Entry {
    name: String,
    kind: Slot,
    shape: Vec<usize>,
    offset: usize,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    config: ModelConfig,
    step: u64,
    optimizer_step: Option<u64>,
    payload_bytes: usize,
    tensors: Vec<Entry>,
}

/// Everything a checkpoint holds.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub config: ModelConfig,
    /// Completed training steps.
    pub step: u64,
    pub params: Vec<(String, Tensor)>,
    pub optimizer: Option<AdamWState>,
}

impl Checkpoint {
    pub fn from_model(model: &YNetr, step: u64, optimizer: Option<&AdamWState>) -> Self {
        let params = model
            .params()
            .names()
            .iter()
            .cloned()
            .zip(model.params().tensors().cloned())
            .collect();
        Self {
            config: model.config().clone(),
            step,
            params,
            optimizer: optimizer.cloned(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut tensors = Vec::new();
        let mut payload: Vec<u8> = Vec::new();
        let mut push = |name: &str, kind: Slot, t: &Tensor| {
            tensors.push(Entry {
                name: name.to_string(),
                kind,
                shape: t.shape().to_vec(),
                offset: payload.len(),
            });
            for v in t.data() {
                payload.extend_from_slice(&v.to_le_bytes());
            }
        };
        for (name, t) in &self.params {
            push(name, Slot::Param, t);
        }
        if let Some(opt) = &self.optimizer {
            for ((name, _), (m, v)) in self.params.iter().zip(opt.m.iter().zip(&opt.v)) {
                push(name, Slot::AdamM, m);
                push(name, Slot::AdamV, v);
            }
        }
        let manifest = Manifest {
            config: self.config.clone(),
            step: self.step,
            optimizer_step: self.optimizer.as_ref().map(|o| o.step),
            payload_bytes: payload.len(),
            tensors,
        };
        let json = serde_json::to_string(&manifest).expect("manifest serializes");
        let mut out = format!("{MAGIC}\nmanifest_bytes {}\n{json}\n", json.len()).into_bytes();
        out.extend_from_slice(&payload);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let corrupt = |m: &str| Error::CorruptCheckpoint(m.to_string());
        let mut rest = bytes;
        let mut line = || -> Result<&str> {
            let end = rest
                .iter()
                .position(|&b| b == b'\n')
                .ok_or_else(|| corrupt("truncated preamble"))?;
            let l = std::str::from_utf8(&rest[..end]).map_err(|_| corrupt("preamble is not utf-8"))?;
            rest = &rest[end + 1..];
            Ok(l)
        };
        if line()? != MAGIC {
            return Err(corrupt("bad magic line"));
        }
        let n: usize = line()?
            .strip_prefix("manifest_bytes ")
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| corrupt("bad manifest_bytes line"))?;
        if rest.len() < n + 1 || rest[n] != b'\n' {
            return Err(corrupt("truncated manifest"));
        }
        let manifest: Manifest = serde_json::from_slice(&rest[..n])
            .map_err(|e| Error::CorruptCheckpoint(format!("manifest: {e}")))?;
        let payload = &rest[n + 1..];
        if payload.len() != manifest.payload_bytes {
            return Err(Error::CorruptCheckpoint(format!(
                "payload is {} bytes, manifest says {}",
                payload.len(),
                manifest.payload_bytes
            )));
        }
        let mut params = Vec::new();
        let (mut m, mut v) = (Vec::new(), Vec::new());
        for e in manifest.tensors {
            let count: usize = e.shape.iter().product();
            let end = e
                .offset
                .checked_add(count * 4)
                .filter(|&end| end <= payload.len())
                .ok_or_else(|| corrupt("tensor extends past payload"))?;
            let data = payload[e.offset..end]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            let t = Tensor::new(&e.shape, data)?;
            match e.kind {
                Slot::Param => params.push((e.name, t)),
                Slot::AdamM => m.push(t),
                Slot::AdamV => v.push(t),
            }
        }
        let optimizer = match manifest.optimizer_step {
            Some(step) => {
                if m.len() != params.len() || v.len() != params.len() {
                    return Err(corrupt("optimizer moments do not match parameters"));
                }
                Some(AdamWState { step, m, v })
            }
            None => None,
        };
        Ok(Self {
            config: manifest.config,
            step: manifest.step,
            params,
            optimizer,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// Rebuild the model. With `expected`, the stored config must match it.
    pub fn to_model(&self, expected: Option<&ModelConfig>) -> Result<YNetr> {
        if let Some(want) = expected {
            let want = want.clone().normalized();
            if want != self.config {
                return Err(Error::ConfigMismatch(format!(
                    "checkpoint holds {:?}, expected {:?}",
                    self.config, want
                )));
            }
        }
        let mut model = YNetr::new(self.config.clone())?;
        let store = model.params_mut();
        if store.len() != self.params.len() {
            return Err(Error::ConfigMismatch(format!(
                "checkpoint has {} tensors, model has {}",
                self.params.len(),
                store.len()
            )));
        }
        for (name, t) in &self.params {
            let id = store
                .find(name)
                .ok_or_else(|| Error::ConfigMismatch(format!("unknown parameter {name}")))?;
            store
                .set(id, t.clone())
                .map_err(|e| Error::ConfigMismatch(e.to_string()))?;
        }
        Ok(model)
    }
}

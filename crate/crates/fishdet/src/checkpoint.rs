//! Binary checkpoint container.
//!
//! ```text
//! magic     8 bytes  "FDCKPT\0\0"
//! version   u32 LE
//! hlen      u64 LE
//! header    hlen bytes of JSON: iteration, detector config, training
//!           config, tensor names and shapes
//! payload   every tensor's values as f64 LE, in header order
//! ```
//!
//! Values are stored as raw bits, so loading returns exactly what was saved.

use std::path::Path;

use fishdet_core::detector::{Detector, DetectorConfig};
use fishdet_core::nn::{ParamStore, Tensor, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::Error;

pub const MAGIC: &[u8; 8] = b"FDCKPT\0\0";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    iteration: u64,
    detector: DetectorConfig,
    train: Option<TrainConfig>,
    tensors: Vec<TensorEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub iteration: u64,
    pub detector: DetectorConfig,
    pub train: Option<TrainConfig>,
    pub params: ParamStore,
}

impl Checkpoint {
    pub fn of(det: &Detector, iteration: u64, train: Option<&TrainConfig>) -> Self {
        Checkpoint {
            iteration,
            detector: det.config().clone(),
            train: train.cloned(),
            params: det.params().clone(),
        }
    }

    pub fn into_detector(self) -> Result<Detector, Error> {
        Ok(Detector::from_params(self.detector, self.params)?)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = Header {
            iteration: self.iteration,
            detector: self.detector.clone(),
            train: self.train.clone(),
            tensors: self
                .params
                .iter()
                .map(|(n, t)| TensorEntry {
                    name: n.to_string(),
                    shape: t.shape().to_vec(),
                })
                .collect(),
        };
        let json = serde_json::to_vec(&header).expect("header types serialize");
        let mut out = Vec::with_capacity(20 + json.len() + 8 * self.params.num_values());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, t) in self.params.iter() {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, Error> {
        let bad = |m: &str| Error::Checkpoint(m.into());
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(bad("not a checkpoint file"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version} (expected {VERSION})")));
        }
        let hlen = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
        let body = &bytes[20..];
        if body.len() < hlen {
            return Err(bad("truncated header"));
        }
        let header: Header =
            serde_json::from_slice(&body[..hlen]).map_err(|e| Error::Checkpoint(format!("header: {e}")))?;
        let mut payload = &body[hlen..];
        let mut params = ParamStore::new();
        for entry in header.tensors {
            let n: usize = entry.shape.iter().product();
            if payload.len() < 8 * n {
                return Err(Error::Checkpoint(format!("truncated data for {}", entry.name)));
            }
            let data = payload[..8 * n]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            payload = &payload[8 * n..];
            params.insert(entry.name, Tensor::new(entry.shape, data)?);
        }
        if !payload.is_empty() {
            return Err(bad("trailing bytes after tensor data"));
        }
        Ok(Checkpoint {
            iteration: header.iteration,
            detector: header.detector,
            train: header.train,
            params,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), Error> {
        crate::write_file(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self, Error> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Checkpoint::from_bytes(&bytes).map_err(|e| e.in_file(path))
    }
}

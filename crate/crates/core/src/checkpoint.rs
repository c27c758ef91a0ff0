//! Versioned JSON checkpoints.
//!
//! Layout:
//!
//! ```json
//! {
//!   "format": "skelreid-checkpoint",
//!   "version": 1,
//!   "channels": [4, 16, 32, 64, 128, 256],
//!   "topology": {"joint_count": 33, "root": 0, "edges": [[0, 1], ...]},
//!   "params": {"joints.block0.spatial0": {"shape": [16, 4], "values": [...]}, ...}
//! }
//! ```
//!
//! Parameter names are sorted, and floats are written in shortest
//! round-trip form, so identical models serialise to identical bytes.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::encoder::{EncoderConfig, TwoStreamEncoder};
use crate::error::{Error, Result};
use crate::skeleton::Topology;

pub const FORMAT: &str = "skelreid-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredTensor {
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub channels: Vec<usize>,
    pub topology: Topology,
    pub params: BTreeMap<String, StoredTensor>,
}

impl Checkpoint {
    pub fn from_encoder(enc: &TwoStreamEncoder) -> Self {
        let params = enc
            .named_params()
            .into_iter()
            .map(|(name, p)| {
                (
                    name,
                    StoredTensor {
                        shape: p.value.shape().to_vec(),
                        values: p.value.data().to_vec(),
                    },
                )
            })
            .collect();
        Self {
            format: FORMAT.to_string(),
            version: VERSION,
            channels: enc.config().channels.clone(),
            topology: enc.topology().clone(),
            params,
        }
    }

    pub fn into_encoder(self) -> Result<TwoStreamEncoder> {
        if self.format != FORMAT || self.version != VERSION {
            return Err(Error::Schema(format!(
                "unsupported checkpoint {} v{}",
                self.format, self.version
            )));
        }
        let mut enc = TwoStreamEncoder::zeros(EncoderConfig::new(self.channels)?, self.topology)?;
        let names: Vec<String> = enc.named_params().into_iter().map(|(n, _)| n).collect();
        if names.len() != self.params.len() {
            return Err(Error::Schema(format!(
                "checkpoint holds {} tensors, model expects {}",
                self.params.len(),
                names.len()
            )));
        }
        let mut values = Vec::with_capacity(enc.param_count());
        for (name, p) in names.iter().zip(enc.params()) {
            let stored = self
                .params
                .get(name)
                .ok_or_else(|| Error::Schema(format!("checkpoint lacks tensor {name}")))?;
            if stored.shape != p.value.shape() || stored.values.len() != p.value.len() {
                return Err(Error::Schema(format!(
                    "tensor {name}: stored shape {:?}, expected {:?}",
                    stored.shape,
                    p.value.shape()
                )));
            }
            if stored.values.iter().any(|v| !v.is_finite()) {
                return Err(Error::Schema(format!("tensor {name} holds non-finite values")));
            }
            values.extend_from_slice(&stored.values);
        }
        enc.set_param_vector(&values)?;
        Ok(enc)
    }
}

pub fn save<W: Write>(enc: &TwoStreamEncoder, mut writer: W) -> Result<()> {
    serde_json::to_writer(&mut writer, &Checkpoint::from_encoder(enc))?;
    writer.write_all(b"\n")?;
    Ok(())
}

pub fn load<R: Read>(reader: R) -> Result<TwoStreamEncoder> {
    let ckpt: Checkpoint = serde_json::from_reader(reader)?;
    ckpt.into_encoder()
}

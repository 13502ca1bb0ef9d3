//! Model checkpoint: `CRYOCKPT`, u32 version, u64 header length, JSON header,
//! then every stored tensor as little-endian f32 at its manifest offset.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::{CryoNet, ModelConfig};
use super::params::ParamStore;
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::raster::BandStats;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"CRYOCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingInfo {
    pub seed: u64,
    pub epoch: usize,
    pub step: usize,
    pub test_miou: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: CryoNet,
    /// Input band order the model was trained on.
    pub band_names: Vec<String>,
    pub norm_stats: Option<Vec<BandStats>>,
    pub info: TrainingInfo,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    offset: u64,
    trainable: bool,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    version: u32,
    config: ModelConfig,
    band_names: Vec<String>,
    norm_stats: Option<Vec<BandStats>>,
    info: TrainingInfo,
    tensors: Vec<TensorEntry>,
}

impl Checkpoint {
    pub fn new(model: CryoNet, band_names: Vec<String>, norm_stats: Option<Vec<BandStats>>, info: TrainingInfo) -> Result<Self> {
        if band_names.len() != model.config.in_channels {
            return Err(Error::Registry(format!(
                "model takes {} channels but {} band names were given",
                model.config.in_channels,
                band_names.len()
            )));
        }
        Ok(Self {
            model,
            band_names,
            norm_stats,
            info,
        })
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let mut tensors = Vec::new();
        let mut offset = 0u64;
        for e in self.model.params.entries() {
            tensors.push(TensorEntry {
                name: e.name.clone(),
                shape: e.value.shape().to_vec(),
                offset,
                trainable: e.trainable,
            });
            offset += 4 * e.value.len() as u64;
        }
        let header = Header {
            version: CHECKPOINT_VERSION,
            config: self.model.config.clone(),
            band_names: self.band_names.clone(),
            norm_stats: self.norm_stats.clone(),
            info: self.info.clone(),
            tensors,
        };
        let json = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(20 + json.len() + offset as usize);
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for e in self.model.params.entries() {
            for v in e.value.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 20 || &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(Error::Format {
                offset: 0,
                message: "not a checkpoint (bad magic)".into(),
            });
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != CHECKPOINT_VERSION {
            return Err(Error::Format {
                offset: 8,
                message: format!("unsupported checkpoint version {version}"),
            });
        }
        let hlen = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
        let body = 20usize.checked_add(hlen).filter(|&e| e <= bytes.len()).ok_or(Error::Truncated {
            expected: 20 + hlen as u64,
            found: bytes.len() as u64,
        })?;
        let header: Header = serde_json::from_slice(&bytes[20..body])?;
        header.config.validate()?;
        let payload = &bytes[body..];

        let layout = header.config.layout()?;
        if layout.len() != header.tensors.len() {
            return Err(Error::Format {
                offset: 20,
                message: format!(
                    "manifest lists {} tensors, configuration needs {}",
                    header.tensors.len(),
                    layout.len()
                ),
            });
        }
        let mut store = ParamStore::new();
        let mut end = 0u64;
        for (spec, t) in layout.iter().zip(&header.tensors) {
            if spec.name != t.name || spec.shape != t.shape || spec.kind.trainable() != t.trainable {
                return Err(Error::Format {
                    offset: 20,
                    message: format!("manifest entry {} {:?} does not match configuration", t.name, t.shape),
                });
            }
            let n = spec.numel();
            let start = t.offset as usize;
            let stop = start + 4 * n;
            if stop > payload.len() {
                return Err(Error::Truncated {
                    expected: (body + stop) as u64,
                    found: bytes.len() as u64,
                });
            }
            let data: Vec<f32> = payload[start..stop]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            if data.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numerical(format!("checkpoint tensor {} holds non-finite values", t.name)));
            }
            store.insert(t.name.clone(), Tensor::new(&t.shape, data)?, t.trainable)?;
            end = end.max(stop as u64);
        }
        if end != payload.len() as u64 {
            return Err(Error::Format {
                offset: body as u64 + end,
                message: "trailing bytes after tensor payload".into(),
            });
        }
        Checkpoint::new(
            CryoNet {
                config: header.config,
                params: store,
            },
            header.band_names,
            header.norm_stats,
            header.info,
        )
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.encode()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes)
    }

    /// Errors unless `names` is exactly the band order the model expects.
    pub fn check_bands(&self, names: &[String]) -> Result<()> {
        if names == self.band_names.as_slice() {
            return Ok(());
        }
        let missing: Vec<&str> = self
            .band_names
            .iter()
            .filter(|b| !names.contains(b))
            .map(String::as_str)
            .collect();
        Err(Error::Registry(if missing.is_empty() {
            format!(
                "band order differs from the checkpoint: expected {:?}, got {:?}",
                self.band_names, names
            )
        } else {
            format!("input is missing bands required by the checkpoint: {}", missing.join(", "))
        }))
    }
}

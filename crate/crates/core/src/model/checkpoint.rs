//! Checkpoint container: magic `NDCK`, u32 version, u64 header length, a
//! JSON header (model kind, config, parameter layout, batch-norm statistics,
//! context standardizer, free-form metadata), then every parameter as raw
//! little-endian f64 in header order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::agent::NeuroDram;
use super::baseline::BaselineCnn;
use super::config::{BaselineConfig, ModelConfig};
use crate::autodiff::{BnStats, Group, ParamStore, Tensor};
use crate::error::{Error, Result};
use crate::volume::{write_atomic, Standardizer};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"NDCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    NeuroDram,
    BaselineCnn,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Model {
    NeuroDram(NeuroDram),
    Baseline(BaselineCnn),
}

impl Model {
    pub fn kind(&self) -> ModelKind {
        match self {
            Model::NeuroDram(_) => ModelKind::NeuroDram,
            Model::Baseline(_) => ModelKind::BaselineCnn,
        }
    }

    pub fn params(&self) -> &ParamStore {
        match self {
            Model::NeuroDram(m) => &m.params,
            Model::Baseline(m) => &m.params,
        }
    }

    fn bn_stats(&self) -> &[BnStats] {
        match self {
            Model::NeuroDram(m) => &m.bn_stats,
            Model::Baseline(m) => &m.bn_stats,
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ParamEntry {
    name: String,
    shape: Vec<usize>,
    group: Group,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    kind: ModelKind,
    config: serde_json::Value,
    params: Vec<ParamEntry>,
    bn_stats: Vec<BnStats>,
    #[serde(default)]
    standardizer: Option<Standardizer>,
    #[serde(default)]
    meta: serde_json::Value,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    /// Caller-defined metadata (for example the best epoch and its metrics).
    pub meta: serde_json::Value,
}

fn format_err(msg: impl Into<String>) -> Error {
    Error::Format(format!("checkpoint: {}", msg.into()))
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let (config, standardizer) = match &self.model {
            Model::NeuroDram(m) => (serde_json::to_value(&m.config), Some(m.standardizer.clone())),
            Model::Baseline(m) => (serde_json::to_value(&m.config), None),
        };
        let config = config.map_err(|e| format_err(e.to_string()))?;
        let params = self.model.params();
        let header = Header {
            kind: self.model.kind(),
            config,
            params: params
                .iter()
                .map(|(name, p)| ParamEntry { name: name.to_string(), shape: p.value.shape().to_vec(), group: p.group })
                .collect(),
            bn_stats: self.model.bn_stats().to_vec(),
            standardizer,
            meta: self.meta.clone(),
        };
        let json = serde_json::to_vec(&header).map_err(|e| format_err(e.to_string()))?;
        let mut out = Vec::with_capacity(16 + json.len() + 8 * params.scalar_count());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, p) in params.iter() {
            for v in p.value.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 || &bytes[..4] != CHECKPOINT_MAGIC {
            return Err(format_err("bad magic or truncated header"));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != CHECKPOINT_VERSION {
            return Err(format_err(format!("unsupported version {version}")));
        }
        let hlen = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
        let hend = usize::try_from(hlen).ok().and_then(|h| h.checked_add(16)).filter(|&e| e <= bytes.len());
        let hend = hend.ok_or_else(|| format_err("header length exceeds file"))?;
        let header: Header = serde_json::from_slice(&bytes[16..hend]).map_err(|e| format_err(e.to_string()))?;

        let mut params = ParamStore::new();
        let mut cursor = hend;
        for e in header.params {
            let n: usize = e.shape.iter().product();
            let end = cursor + 8 * n;
            if end > bytes.len() {
                return Err(format_err(format!("payload truncated at `{}`", e.name)));
            }
            let data = bytes[cursor..end].chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
            cursor = end;
            params.insert(e.name, Tensor::new(e.shape, data)?, e.group)?;
        }
        if cursor != bytes.len() {
            return Err(format_err(format!("{} trailing bytes", bytes.len() - cursor)));
        }

        let model = match header.kind {
            ModelKind::NeuroDram => {
                let config: ModelConfig =
                    serde_json::from_value(header.config).map_err(|e| format_err(e.to_string()))?;
                let mut m = NeuroDram::new(config, 0)?;
                check_layout(&m.params, &params)?;
                m.params = params;
                m.bn_stats = header.bn_stats;
                m.standardizer = header.standardizer.unwrap_or_default();
                Model::NeuroDram(m)
            }
            ModelKind::BaselineCnn => {
                let config: BaselineConfig =
                    serde_json::from_value(header.config).map_err(|e| format_err(e.to_string()))?;
                let mut m = BaselineCnn::new(config, 0)?;
                check_layout(&m.params, &params)?;
                m.params = params;
                m.bn_stats = header.bn_stats;
                Model::Baseline(m)
            }
        };
        Ok(Self { model, meta: header.meta })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_atomic(path.as_ref(), &self.to_bytes()?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

fn check_layout(expected: &ParamStore, got: &ParamStore) -> Result<()> {
    let same = expected.len() == got.len()
        && expected
            .iter()
            .zip(got.iter())
            .all(|((a, pa), (b, pb))| a == b && pa.value.shape() == pb.value.shape() && pa.group == pb.group);
    if same {
        Ok(())
    } else {
        Err(format_err("parameter layout does not match the stored config"))
    }
}

//! Binary checkpoint format, little-endian throughout:
//!
//! ```text
//! "SIDNN" 0x01
//! u32 header length, UTF-8 JSON header (spec, standardizer, channel names)
//! u32 tensor count
//! per tensor: u32 name length, name, u32 ndim, u64 dims, f64 data
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::Standardizer;
use crate::error::{Error, Result};
use crate::models::{Model, ModelSpec, ParamStore};
use crate::numkit::Tensor;
use crate::scalar::Scalar;

pub const MAGIC: &[u8; 6] = b"SIDNN\x01";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Header {
    spec: ModelSpec,
    standardizer: Standardizer,
    u_names: Vec<String>,
    y_names: Vec<String>,
    #[serde(default)]
    valid_fraction: Option<f64>,
}

/// A trained model with everything needed to simulate in data units.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint<S: Scalar> {
    pub spec: ModelSpec,
    pub standardizer: Standardizer,
    pub params: ParamStore<S>,
    pub u_names: Vec<String>,
    pub y_names: Vec<String>,
    /// Validation fraction used when the model was trained, so the same
    /// train/validation split can be rebuilt for evaluation.
    pub valid_fraction: Option<f64>,
}

impl<S: Scalar> Checkpoint<S> {
    pub fn model(&self) -> Result<Model<S>> {
        Model::new(self.spec.clone(), self.params.clone())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = serde_json::to_vec(&Header {
            spec: self.spec.clone(),
            standardizer: self.standardizer.clone(),
            u_names: self.u_names.clone(),
            y_names: self.y_names.clone(),
            valid_fraction: self.valid_fraction,
        })?;
        let mut out = Vec::with_capacity(16 + header.len() + 8 * self.params.num_elements());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&len_u32(header.len())?.to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&len_u32(self.params.len())?.to_le_bytes());
        for (name, t) in self.params.iter() {
            out.extend_from_slice(&len_u32(name.len())?.to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&len_u32(t.ndim())?.to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &v in t.data() {
                out.extend_from_slice(&v.as_f64().to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < MAGIC.len() || &bytes[..5] != b"SIDNN" {
            return Err(Error::Format("not a checkpoint (bad magic bytes)".into()));
        }
        if bytes[5] != MAGIC[5] {
            return Err(Error::Format(format!("unsupported checkpoint version {}", bytes[5])));
        }
        let mut r = Reader { bytes, pos: MAGIC.len() };
        let header_len = r.u32()? as usize;
        let at = r.pos;
        let header: Header = serde_json::from_slice(r.take(header_len)?).map_err(|e| Error::Corruption {
            offset: at,
            message: format!("unreadable header: {e}"),
        })?;
        let count = r.u32()? as usize;
        let mut params = ParamStore::new();
        for _ in 0..count {
            let at = r.pos;
            let name_len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| Error::Corruption {
                    offset: at + 4,
                    message: "tensor name is not UTF-8".into(),
                })?
                .to_string();
            let ndim = r.u32()? as usize;
            let shape = (0..ndim).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let n = shape
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .filter(|n| n.checked_mul(8).is_some_and(|b| b <= bytes.len()))
                .ok_or_else(|| Error::Corruption {
                    offset: at,
                    message: format!("implausible shape {shape:?} for tensor {name}"),
                })?;
            let data = r.take(n * 8)?;
            let values = data
                .chunks_exact(8)
                .map(|c| S::of(f64::from_le_bytes(c.try_into().expect("8 bytes"))))
                .collect();
            params
                .insert(name, Tensor::from_vec(&shape, values)?)
                .map_err(|e| Error::Corruption {
                    offset: at,
                    message: e.to_string(),
                })?;
        }
        if r.pos != bytes.len() {
            return Err(Error::Corruption {
                offset: r.pos,
                message: format!("{} trailing bytes", bytes.len() - r.pos),
            });
        }
        params
            .validate(&header.spec)
            .map_err(|e| Error::Format(format!("parameters do not match the model spec: {e}")))?;
        Ok(Self {
            spec: header.spec,
            standardizer: header.standardizer,
            params,
            u_names: header.u_names,
            y_names: header.y_names,
            valid_fraction: header.valid_fraction,
        })
    }
}

fn len_u32(n: usize) -> Result<u32> {
    u32::try_from(n).map_err(|_| Error::Format(format!("length {n} does not fit in u32")))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| Error::Corruption {
            offset: self.pos,
            message: format!("truncated: needed {n} bytes, {} left", self.bytes.len() - self.pos),
        })?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

/// Writes through a temporary file so a crash never leaves a partial
/// checkpoint under the final name.
pub fn save_checkpoint<S: Scalar>(ckpt: &Checkpoint<S>, path: &Path) -> Result<()> {
    let bytes = ckpt.to_bytes()?;
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, &bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint<S: Scalar>(path: &Path) -> Result<Checkpoint<S>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes)
}

//! Binary checkpoint format (all integers and floats little-endian):
//!
//! ```text
//! magic     8 bytes  "TCNNCKPT"
//! version   u32
//! spec_len  u32, followed by spec_len bytes of ModelSpec JSON
//! seed      u64
//! epoch     u32
//! val_loss  f64
//! n_tensors u32
//! per tensor, in parameter order (weights then bias for each layer):
//!   rank u32, rank x u32 dims, product(dims) x f32 values
//! ```

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{param_ids, ModelParams, ModelSpec, ParamLayer};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

const MAGIC: &[u8; 8] = b"TCNNCKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint<T> {
    pub spec: ModelSpec,
    pub seed: u64,
    /// 1-based epoch at which these parameters were captured.
    pub epoch: u32,
    pub val_loss: f64,
    pub params: ModelParams<T>,
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Format { what: "checkpoint", detail: format!("truncated at byte {}", self.pos) })?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

impl<T: Scalar> Checkpoint<T> {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let spec = serde_json::to_vec(&self.spec)?;
        let mut out = Vec::with_capacity(64 + spec.len() + 4 * self.params.scalar_count());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(spec.len() as u32).to_le_bytes());
        out.extend_from_slice(&spec);
        out.extend_from_slice(&self.seed.to_le_bytes());
        out.extend_from_slice(&self.epoch.to_le_bytes());
        out.extend_from_slice(&self.val_loss.to_le_bytes());
        let tensors: Vec<&Tensor<T>> = self.params.tensors().collect();
        out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
        for t in tensors {
            out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for &v in t.data() {
                out.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |detail: String| Error::Format { what: "checkpoint", detail };
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(bad("not a checkpoint (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(bad(format!("unsupported format version {version}")));
        }
        let spec_len = r.u32()? as usize;
        let spec: ModelSpec = serde_json::from_slice(r.take(spec_len)?)?;
        spec.validate()?;
        let seed = r.u64()?;
        let epoch = r.u32()?;
        let val_loss = r.f64()?;
        let n = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(n);
        for _ in 0..n {
            let rank = r.u32()? as usize;
            let shape = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let len: usize = shape.iter().product();
            let raw = r.take(len.checked_mul(4).ok_or_else(|| bad("tensor too large".into()))?)?;
            let data = raw.chunks_exact(4).map(|c| T::of(f32::from_le_bytes(c.try_into().unwrap()) as f64)).collect();
            tensors.push(Tensor::new(&shape, data)?);
        }
        if r.pos != bytes.len() {
            return Err(bad(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        if tensors.len() % 2 != 0 {
            return Err(bad("odd tensor count".into()));
        }
        let mut it = tensors.into_iter();
        let layers = param_ids(&spec)
            .into_iter()
            .map_while(|id| Some(ParamLayer { id, weights: it.next()?, bias: it.next()? }))
            .collect();
        let params = ModelParams { layers };
        params.check_against(&spec)?;
        Ok(Checkpoint { spec, seed, epoch, val_loss, params })
    }

    /// Writes to a temporary sibling and renames into place.
    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

/// Writes via a temporary sibling and a rename, creating parent directories.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(format!(".tmp{}", std::process::id()));
    let tmp = std::path::PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

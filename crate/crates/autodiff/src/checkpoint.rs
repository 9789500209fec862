//! Versioned binary checkpoint container.
//!
//! All integers and floats are little-endian. Layout:
//!
//! ```text
//! magic        8 bytes   "STPCKPT\0"
//! version      u32       currently 1
//! dtype        u8        4 = f32, 8 = f64
//! step         u64       optimizer step count
//! meta_len     u64       length of the metadata blob
//! meta         bytes     UTF-8 (JSON by convention)
//! n_entries    u32
//! entries, each:
//!   name_len   u32, name UTF-8
//!   rank       u32, dims u64 x rank
//!   data       dtype x numel
//!   moments    u8 (0 or 1); when 1: first moment, then second moment,
//!              each dtype x numel
//! ```

use std::fs;
use std::path::Path;

use crate::error::{AutodiffError, Result};
use crate::real::{DType, Real};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"STPCKPT\0";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct CheckpointEntry<T> {
    pub name: String,
    pub tensor: Tensor<T>,
    pub moments: Option<(Tensor<T>, Tensor<T>)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint<T> {
    pub step: u64,
    pub metadata: String,
    pub entries: Vec<CheckpointEntry<T>>,
}

impl<T: Real> Checkpoint<T> {
    pub fn entry(&self, name: &str) -> Option<&CheckpointEntry<T>> {
        self.entries.iter().find(|e| e.name == name)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.push(T::DTYPE.tag());
        out.extend_from_slice(&self.step.to_le_bytes());
        out.extend_from_slice(&(self.metadata.len() as u64).to_le_bytes());
        out.extend_from_slice(self.metadata.as_bytes());
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        let put = |out: &mut Vec<u8>, t: &Tensor<T>| {
            for &x in t.data() {
                x.write_le(out);
            }
        };
        for e in &self.entries {
            out.extend_from_slice(&(e.name.len() as u32).to_le_bytes());
            out.extend_from_slice(e.name.as_bytes());
            out.extend_from_slice(&(e.tensor.rank() as u32).to_le_bytes());
            for &d in e.tensor.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            put(&mut out, &e.tensor);
            match &e.moments {
                Some((m, v)) => {
                    out.push(1);
                    put(&mut out, m);
                    put(&mut out, v);
                }
                None => out.push(0),
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(AutodiffError::Checkpoint("bad magic".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(AutodiffError::Checkpoint(format!("unsupported version {version}")));
        }
        let tag = r.take(1)?[0];
        let dtype =
            DType::from_tag(tag).ok_or_else(|| AutodiffError::Checkpoint(format!("unknown dtype tag {tag}")))?;
        if dtype != T::DTYPE {
            return Err(AutodiffError::Checkpoint(format!(
                "checkpoint holds {dtype:?}, requested {:?}",
                T::DTYPE
            )));
        }
        let step = r.u64()?;
        let meta_len = r.u64()? as usize;
        let metadata = String::from_utf8(r.take(meta_len)?.to_vec())
            .map_err(|_| AutodiffError::Checkpoint("metadata is not UTF-8".into()))?;
        let n = r.u32()?;
        let mut entries = Vec::with_capacity(n as usize);
        for _ in 0..n {
            let name_len = r.u32()? as usize;
            let name = String::from_utf8(r.take(name_len)?.to_vec())
                .map_err(|_| AutodiffError::Checkpoint("entry name is not UTF-8".into()))?;
            let rank = r.u32()? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.u64()? as usize);
            }
            let tensor = r.tensor::<T>(&shape)?;
            let moments = match r.take(1)?[0] {
                0 => None,
                1 => Some((r.tensor::<T>(&shape)?, r.tensor::<T>(&shape)?)),
                b => return Err(AutodiffError::Checkpoint(format!("bad moment flag {b}"))),
            };
            entries.push(CheckpointEntry { name, tensor, moments });
        }
        if r.pos != bytes.len() {
            return Err(AutodiffError::Checkpoint("trailing bytes".into()));
        }
        Ok(Checkpoint {
            step,
            metadata,
            entries,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

/// Reads only the dtype tag of a checkpoint file.
pub fn peek_dtype(bytes: &[u8]) -> Result<DType> {
    if bytes.len() < 13 || &bytes[..8] != MAGIC {
        return Err(AutodiffError::Checkpoint("bad magic".into()));
    }
    DType::from_tag(bytes[12]).ok_or_else(|| AutodiffError::Checkpoint("unknown dtype tag".into()))
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
            .ok_or_else(|| AutodiffError::Checkpoint("truncated file".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        let mut b = [0u8; 4];
        b.copy_from_slice(self.take(4)?);
        Ok(u32::from_le_bytes(b))
    }

    fn u64(&mut self) -> Result<u64> {
        let mut b = [0u8; 8];
        b.copy_from_slice(self.take(8)?);
        Ok(u64::from_le_bytes(b))
    }

    fn tensor<T: Real>(&mut self, shape: &[usize]) -> Result<Tensor<T>> {
        let n: usize = shape.iter().product();
        let w = T::DTYPE.size();
        let raw = self.take(n * w)?;
        let data = raw.chunks_exact(w).map(T::read_le).collect();
        Tensor::new(shape.to_vec(), data)
    }
}

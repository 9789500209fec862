//! Binary segment store.
//!
//! Little-endian throughout. Layout:
//!
//! ```text
//! magic       8 bytes  "STPSEGS\0"
//! version     u32      currently 1
//! layout_len  u32, feature layout version string (UTF-8)
//! count       u64
//! segments, each:
//!   user_len  u32, user id (UTF-8)
//!   id_len    u32, segment id (UTF-8)
//!   label     u8       class index, 255 when unlabeled
//!   n         u64
//!   points    n x (x f64, y f64, t f64)
//! ```
//!
//! A store written under a different feature layout is rejected on load.

use std::fs;
use std::path::Path;

use super::{Segment, TrackPoint};
use crate::error::{Error, Result};
use crate::featurize::FEATURE_LAYOUT_VERSION;
use crate::mode::Mode;

pub const STORE_MAGIC: &[u8; 8] = b"STPSEGS\0";
pub const STORE_VERSION: u32 = 1;
const NO_LABEL: u8 = 255;

pub fn store_to_bytes(segments: &[Segment]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(STORE_MAGIC);
    out.extend_from_slice(&STORE_VERSION.to_le_bytes());
    put_str(&mut out, FEATURE_LAYOUT_VERSION);
    out.extend_from_slice(&(segments.len() as u64).to_le_bytes());
    for s in segments {
        put_str(&mut out, &s.user_id);
        put_str(&mut out, &s.segment_id);
        out.push(s.label.map_or(NO_LABEL, |m| m.index() as u8));
        out.extend_from_slice(&(s.points.len() as u64).to_le_bytes());
        for p in &s.points {
            out.extend_from_slice(&p.x.to_le_bytes());
            out.extend_from_slice(&p.y.to_le_bytes());
            out.extend_from_slice(&p.t.to_le_bytes());
        }
    }
    out
}

pub fn store_from_bytes(bytes: &[u8]) -> Result<Vec<Segment>> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8)? != STORE_MAGIC {
        return Err(Error::Store("bad magic".into()));
    }
    let version = r.u32()?;
    if version != STORE_VERSION {
        return Err(Error::Store(format!("unsupported version {version}")));
    }
    let layout = r.string()?;
    if layout != FEATURE_LAYOUT_VERSION {
        return Err(Error::Store(format!(
            "feature layout {layout:?} does not match {FEATURE_LAYOUT_VERSION:?}"
        )));
    }
    let count = r.u64()?;
    let mut segments = Vec::new();
    for _ in 0..count {
        let user_id = r.string()?;
        let segment_id = r.string()?;
        let label = match r.take(1)?[0] {
            NO_LABEL => None,
            b => Some(Mode::from_index(b as usize).ok_or_else(|| Error::Store(format!("bad label {b}")))?),
        };
        let n = r.u64()? as usize;
        if n.checked_mul(24).is_none_or(|len| len > bytes.len()) {
            return Err(Error::Store("truncated store".into()));
        }
        let mut points = Vec::with_capacity(n);
        for _ in 0..n {
            points.push(TrackPoint {
                x: r.f64()?,
                y: r.f64()?,
                t: r.f64()?,
            });
        }
        segments.push(Segment {
            points,
            label,
            user_id,
            segment_id,
        });
    }
    if r.pos != bytes.len() {
        return Err(Error::Store("trailing bytes".into()));
    }
    Ok(segments)
}

pub fn write_store(path: &Path, segments: &[Segment]) -> Result<()> {
    fs::write(path, store_to_bytes(segments)).map_err(|e| Error::io(path, e))
}

pub fn read_store(path: &Path) -> Result<Vec<Segment>> {
    store_from_bytes(&fs::read(path).map_err(|e| Error::io(path, e))?)
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
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
            .ok_or_else(|| Error::Store("truncated store".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Store("string is not UTF-8".into()))
    }
}

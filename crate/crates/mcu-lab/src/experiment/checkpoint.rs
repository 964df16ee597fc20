//! Checkpoint container for parameter vectors.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic   "MCU1"
//! version u8 (= 1)
//! count   u64            total parameter count
//! entries u32            layout entry count
//!   per entry: name_len u16, name bytes, ndims u8, dims u32 each
//! payload count * f32
//! hash    u64            FNV-1a over the payload bytes
//! ```

use super::config::fnv1a64;
use crate::error::{Error, Result};
use crate::nn::{Layout, LayoutEntry, ParamVector};
use std::path::Path;
use std::sync::Arc;

const MAGIC: [u8; 4] = *b"MCU1";
const VERSION: u8 = 1;

pub fn save_checkpoint(params: &ParamVector, path: &Path) -> Result<()> {
    let mut buf = Vec::with_capacity(32 + params.len() * 4);
    buf.extend_from_slice(&MAGIC);
    buf.push(VERSION);
    buf.extend_from_slice(&(params.len() as u64).to_le_bytes());
    buf.extend_from_slice(&(params.layout.entries.len() as u32).to_le_bytes());
    for entry in &params.layout.entries {
        let name = entry.name.as_bytes();
        buf.extend_from_slice(&(name.len() as u16).to_le_bytes());
        buf.extend_from_slice(name);
        buf.push(entry.shape.len() as u8);
        for &d in &entry.shape {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
    }
    let payload_start = buf.len();
    for &v in &params.values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    let hash = fnv1a64(&buf[payload_start..]);
    buf.extend_from_slice(&hash.to_le_bytes());

    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent.display().to_string(), e))?;
    }
    std::fs::write(path, &buf).map_err(|e| Error::io(path.display().to_string(), e))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() < self.pos + n {
            return Err(Error::Truncated {
                offset: self.pos,
                needed: self.pos + n - self.bytes.len(),
            });
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn load_checkpoint(path: &Path) -> Result<ParamVector> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut r = Reader { bytes: &bytes, pos: 0 };

    let magic: [u8; 4] = r.take(4)?.try_into().unwrap();
    if magic != MAGIC {
        return Err(Error::BadMagic {
            expected: MAGIC,
            found: magic,
        });
    }
    let version = r.u8()?;
    if version != VERSION {
        return Err(Error::Format(format!(
            "unsupported checkpoint version {version} (expected {VERSION})"
        )));
    }
    let count = r.u64()? as usize;
    let n_entries = r.u32()? as usize;
    let mut entries = Vec::with_capacity(n_entries);
    let mut offset = 0usize;
    for _ in 0..n_entries {
        let name_len = r.u16()? as usize;
        let name = String::from_utf8(r.take(name_len)?.to_vec())
            .map_err(|_| Error::Format("checkpoint entry name is not utf-8".into()))?;
        let ndims = r.u8()? as usize;
        let mut shape = Vec::with_capacity(ndims);
        for _ in 0..ndims {
            shape.push(r.u32()? as usize);
        }
        let len: usize = shape.iter().product();
        entries.push(LayoutEntry { name, shape, offset });
        offset += len;
    }
    if offset != count {
        return Err(Error::Format(format!(
            "layout covers {offset} parameters but header declares {count}"
        )));
    }

    let payload = r.take(count * 4)?;
    let computed = fnv1a64(payload);
    let stored = r.u64()?;
    if computed != stored {
        return Err(Error::HashMismatch { stored, computed });
    }

    let values: Vec<f32> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    ParamVector::new(values, Arc::new(Layout::new(entries)))
}

/// FNV-1a of a checkpoint's payload, as recorded in the file.
pub fn checkpoint_payload_hash(path: &Path) -> Result<u64> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    if bytes.len() < 8 {
        return Err(Error::Truncated { offset: 0, needed: 8 });
    }
    Ok(u64::from_le_bytes(bytes[bytes.len() - 8..].try_into().unwrap()))
}

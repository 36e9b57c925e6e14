//! Binary cache of encoded metadata.
//!
//! Layout (little-endian): magic `SKXMETA\0`, u32 version, u32 entry count,
//! u32 vector width, then per entry: u32 id length, id bytes (UTF-8),
//! u32 label, `width` f32 values, `width` mask bytes.

use std::path::Path;

use super::encode::EncodedMeta;
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"SKXMETA\0";
const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct CacheEntry {
    pub sample_id: String,
    pub label: u32,
    pub meta: EncodedMeta,
}

pub fn write_cache(path: impl AsRef<Path>, entries: &[CacheEntry]) -> Result<()> {
    let path = path.as_ref();
    let width = entries.first().map_or(0, |e| e.meta.len());
    if entries
        .iter()
        .any(|e| e.meta.len() != width || e.meta.mask.len() != width)
    {
        return Err(Error::shape("cache entries have inconsistent widths"));
    }
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    for v in [VERSION, entries.len() as u32, width as u32] {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    for e in entries {
        buf.extend_from_slice(&(e.sample_id.len() as u32).to_le_bytes());
        buf.extend_from_slice(e.sample_id.as_bytes());
        buf.extend_from_slice(&e.label.to_le_bytes());
        for v in &e.meta.values {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        buf.extend(e.meta.mask.iter().map(|&m| m as u8));
    }
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn read_cache(path: impl AsRef<Path>) -> Result<Vec<CacheEntry>> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut r = Reader {
        bytes: &bytes,
        pos: 0,
    };
    if r.take(8)? != MAGIC {
        return Err(Error::Format(format!(
            "{}: not a metadata cache",
            path.display()
        )));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Version(format!(
            "{}: cache version {version}, expected {VERSION}",
            path.display()
        )));
    }
    let count = r.u32()? as usize;
    let width = r.u32()? as usize;
    let mut out = Vec::with_capacity(count.min(1 << 20));
    for _ in 0..count {
        let len = r.u32()? as usize;
        let sample_id = String::from_utf8(r.take(len)?.to_vec())
            .map_err(|_| Error::Format("cache id is not UTF-8".into()))?;
        let label = r.u32()?;
        let values = r
            .take(width * 4)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        let mask = r.take(width)?.iter().map(|&b| b != 0).collect();
        out.push(CacheEntry {
            sample_id,
            label,
            meta: EncodedMeta { values, mask },
        });
    }
    if r.pos != bytes.len() {
        return Err(Error::Format(format!("{}: trailing bytes", path.display())));
    }
    Ok(out)
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
            .ok_or_else(|| Error::Format("metadata cache truncated".into()))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }
}

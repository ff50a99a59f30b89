//! BITS1 bitstream container: versioned byte stream with independently
//! decodable sections.
//!
//! Layout (all integers little-endian):
//! magic "NBIT", u16 version, u8 section count, then per-section
//! (u8 id, u32 length) entries, then the payloads in table order.

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"NBIT";
pub const VERSION: u16 = 1;

/// Section id for the coded model update delta.
pub const SECTION_MODEL_UPDATE: u8 = 1;
/// Section id for a coded latent grid.
pub const SECTION_LATENT: u8 = 2;

#[derive(Debug, Clone)]
pub struct Section {
    pub id: u8,
    pub payload: Vec<u8>,
}

/// Versioned container of non-overlapping sections.
#[derive(Debug, Clone, Default)]
pub struct Bitstream {
    pub sections: Vec<Section>,
}

impl Bitstream {
    pub fn new() -> Self {
        Bitstream { sections: Vec::new() }
    }

    pub fn push(&mut self, id: u8, payload: Vec<u8>) -> Result<()> {
        if self.sections.len() >= u8::MAX as usize {
            return Err(Error::Coder("bitstream section table full".into()));
        }
        self.sections.push(Section { id, payload });
        Ok(())
    }

    /// All sections with the given id, in stream order.
    pub fn sections_with_id(&self, id: u8) -> impl Iterator<Item = &Section> {
        self.sections.iter().filter(move |s| s.id == id)
    }

    pub fn total_payload_bytes(&self) -> usize {
        self.sections.iter().map(|s| s.payload.len()).sum()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(7 + self.sections.len() * 5 + self.total_payload_bytes());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.push(self.sections.len() as u8);
        for s in &self.sections {
            out.push(s.id);
            out.extend_from_slice(&(s.payload.len() as u32).to_le_bytes());
        }
        for s in &self.sections {
            out.extend_from_slice(&s.payload);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 4 {
            return Err(Error::format(0, "truncated: no magic"));
        }
        if &bytes[0..4] != MAGIC {
            return Err(Error::format(0, format!("bad magic {:?}", &bytes[0..4])));
        }
        if bytes.len() < 7 {
            return Err(Error::format(4, "truncated header"));
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != VERSION {
            return Err(Error::format(4, format!("unsupported version {}", version)));
        }
        let count = bytes[6] as usize;
        let table_end = 7 + count * 5;
        if bytes.len() < table_end {
            return Err(Error::format(7, "truncated section table"));
        }
        let mut sections = Vec::with_capacity(count);
        let mut offsets = Vec::with_capacity(count);
        let mut payload_off = table_end;
        for i in 0..count {
            let base = 7 + i * 5;
            let id = bytes[base];
            let len = u32::from_le_bytes([
                bytes[base + 1],
                bytes[base + 2],
                bytes[base + 3],
                bytes[base + 4],
            ]) as usize;
            offsets.push((id, payload_off, len));
            payload_off = payload_off
                .checked_add(len)
                .ok_or_else(|| Error::format(base as u64, "section length overflow"))?;
        }
        if bytes.len() < payload_off {
            return Err(Error::format(bytes.len() as u64, "truncated section payloads"));
        }
        for (id, off, len) in offsets {
            sections.push(Section { id, payload: bytes[off..off + len].to_vec() });
        }
        Ok(Bitstream { sections })
    }

    pub fn write_to(&self, path: &std::path::Path) -> Result<()> {
        Ok(std::fs::write(path, self.to_bytes())?)
    }

    pub fn read_from(path: &std::path::Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

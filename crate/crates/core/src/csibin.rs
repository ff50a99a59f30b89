//! CSIBIN on-disk dataset format and its companion JSON manifest.
//!
//! Layout (little-endian): magic "CSIB", u16 version = 1, u16 flags
//! (bit 0 = normalized), u32 count, u32 n_tx, u32 n_sub, then `count`
//! records of `2 * n_tx * n_sub` f32 values (real plane then imaginary
//! plane, row-major). The in-memory pipeline is f64; f32 lives only here.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::channel::{ChannelConfig, CsiDataset, CsiSample};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"CSIB";
pub const VERSION: u16 = 1;
const FLAG_NORMALIZED: u16 = 1;

/// Companion manifest written next to the .csib file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub config: Option<ChannelConfig>,
    pub seed: u64,
    pub tag: Option<String>,
    pub fingerprint: String,
    pub count: usize,
}

pub fn write(dataset: &CsiDataset, path: &Path) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    f.write_all(MAGIC)?;
    f.write_all(&VERSION.to_le_bytes())?;
    let flags: u16 = if dataset.normalized { FLAG_NORMALIZED } else { 0 };
    f.write_all(&flags.to_le_bytes())?;
    f.write_all(&(dataset.samples.len() as u32).to_le_bytes())?;
    f.write_all(&(dataset.n_tx as u32).to_le_bytes())?;
    f.write_all(&(dataset.n_sub as u32).to_le_bytes())?;
    let mut buf = Vec::with_capacity(2 * dataset.n_tx * dataset.n_sub * 4);
    for sample in &dataset.samples {
        buf.clear();
        for v in sample.h.data() {
            buf.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        f.write_all(&buf)?;
    }
    f.flush()?;
    Ok(())
}

/// Write the dataset and a companion `<path>.json` manifest.
pub fn write_with_manifest(dataset: &CsiDataset, config: Option<&ChannelConfig>, path: &Path) -> Result<()> {
    write(dataset, path)?;
    let manifest = Manifest {
        config: config.copied(),
        seed: config.map(|c| c.seed).unwrap_or(0),
        tag: dataset.tag.clone(),
        fingerprint: dataset.fingerprint.clone(),
        count: dataset.len(),
    };
    let mpath = manifest_path(path);
    std::fs::write(mpath, serde_json::to_vec_pretty(&manifest)?)?;
    Ok(())
}

pub fn manifest_path(path: &Path) -> std::path::PathBuf {
    let mut os = path.as_os_str().to_owned();
    os.push(".json");
    os.into()
}

pub fn read_manifest(path: &Path) -> Result<Manifest> {
    Ok(serde_json::from_slice(&std::fs::read(manifest_path(path))?)?)
}

/// Lossless ingestion of a CSIBIN file. Format violations report the byte
/// offset at which they were detected.
pub fn read(path: &Path) -> Result<CsiDataset> {
    let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut header = [0u8; 16];
    let mut got = 0;
    while got < header.len() {
        match f.read(&mut header[got..])? {
            0 => return Err(Error::format(got as u64, "truncated header")),
            n => got += n,
        }
    }
    if &header[0..4] != MAGIC {
        return Err(Error::format(0, format!("bad magic {:?}", &header[0..4])));
    }
    let version = u16::from_le_bytes([header[4], header[5]]);
    if version != VERSION {
        return Err(Error::format(4, format!("unsupported version {}", version)));
    }
    let flags = u16::from_le_bytes([header[6], header[7]]);
    let count = u32::from_le_bytes(header[8..12].try_into().unwrap()) as usize;
    let n_tx = u32::from_le_bytes(header[12..16].try_into().unwrap()) as usize;
    let mut tail = [0u8; 4];
    f.read_exact(&mut tail)
        .map_err(|_| Error::format(16, "truncated header (n_sub)"))?;
    let n_sub = u32::from_le_bytes(tail) as usize;

    if n_tx == 0 || n_sub == 0 {
        return Err(Error::format(12, format!("bad dimensions {}x{}", n_tx, n_sub)));
    }
    let rec_len = 2 * n_tx * n_sub;
    let mut samples = Vec::with_capacity(count);
    let mut buf = vec![0u8; rec_len * 4];
    for i in 0..count {
        f.read_exact(&mut buf).map_err(|_| {
            Error::format(20 + (i * rec_len * 4) as u64, format!("truncated record {}", i))
        })?;
        let mut data = Vec::with_capacity(rec_len);
        for c in buf.chunks_exact(4) {
            let v = f32::from_le_bytes(c.try_into().unwrap());
            if !v.is_finite() {
                return Err(Error::format(20 + (i * rec_len * 4) as u64, "non-finite value"));
            }
            data.push(v as f64);
        }
        samples.push(CsiSample { h: Tensor::new(vec![2, n_tx, n_sub], data)? });
    }
    // trailing garbage is a format violation
    let mut probe = [0u8; 1];
    if f.read(&mut probe)? != 0 {
        return Err(Error::format(
            20 + (count * rec_len * 4) as u64,
            "trailing bytes after last record",
        ));
    }

    let tag = read_manifest(path).ok().and_then(|m| m.tag);
    let fingerprint = read_manifest(path)
        .map(|m| m.fingerprint)
        .unwrap_or_else(|_| "ingested".to_string());
    Ok(CsiDataset {
        samples,
        n_tx,
        n_sub,
        normalized: flags & FLAG_NORMALIZED != 0,
        fingerprint,
        tag,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{generate, ChannelConfig};

    #[test]
    fn roundtrip_stable_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ds.csib");
        let cfg = ChannelConfig { seed: 31, ..Default::default() };
        let ds = generate(&cfg, 4).unwrap();
        write_with_manifest(&ds, Some(&cfg), &path).unwrap();
        let bytes1 = std::fs::read(&path).unwrap();

        // read -> write reproduces the file bit for bit (f32 fixed point)
        let back = read(&path).unwrap();
        let path2 = dir.path().join("ds2.csib");
        write(&back, &path2).unwrap();
        let bytes2 = std::fs::read(&path2).unwrap();
        assert_eq!(bytes1, bytes2);

        let manifest = read_manifest(&path).unwrap();
        assert_eq!(manifest.count, 4);
        assert_eq!(manifest.config.unwrap().seed, 31);
    }

    #[test]
    fn empty_dataset_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.csib");
        let ds = CsiDataset {
            samples: vec![],
            n_tx: 64,
            n_sub: 64,
            normalized: false,
            fingerprint: "x".into(),
            tag: None,
        };
        write(&ds, &path).unwrap();
        let back = read(&path).unwrap();
        assert_eq!(back.len(), 0);
        assert_eq!(back.n_tx, 64);
    }

    #[test]
    fn corrupted_header_is_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csib");
        let cfg = ChannelConfig { seed: 1, ..Default::default() };
        let ds = generate(&cfg, 2).unwrap();
        write(&ds, &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[1] = b'X';
        std::fs::write(&path, &bytes).unwrap();
        match read(&path) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, 0),
            other => panic!("expected format error, got {:?}", other.map(|d| d.len())),
        }

        // truncation mid-record
        write(&ds, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 7]).unwrap();
        assert!(matches!(read(&path), Err(Error::Format { .. })));
    }
}

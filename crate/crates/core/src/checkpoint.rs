//! CKPT1 checkpoint format.
//!
//! Layout: magic "NCKP", u16 version, u32 JSON header length, the JSON
//! header (topology, tensor names and shapes in file order, the canonical
//! theta ordering, optimizer step counters), then the raw little-endian f64
//! tensor data in header order. The length prefix makes the header
//! self-delimiting.

use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;

use crate::adam::AdamState;
use crate::codec::ParamSet;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"NCKP";
pub const VERSION: u16 = 1;

const TOPOLOGY: &str = "conv5x64-pool2-conv5x64-pool2-conv5x2 / conv5x64-up2-conv5x64-up2-conv5x2 + factorized-prior(3x3)";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EntryMeta {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub topology: String,
    pub n_tx: usize,
    pub n_sub: usize,
    pub lambda: f64,
    pub epoch: u64,
    /// Tensors in file order.
    pub entries: Vec<EntryMeta>,
    /// Canonical theta ordering (decoder + prior parameter names).
    pub theta_names: Vec<String>,
    /// Published flat length of theta.
    pub theta_len: usize,
    pub enc_adam_step: Option<u64>,
    pub dec_adam_step: Option<u64>,
}

/// A trained (or in-training) codec state.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub encoder: ParamSet,
    pub decoder: ParamSet,
    pub enc_adam: Option<AdamState>,
    pub dec_adam: Option<AdamState>,
    pub epoch: u64,
    pub lambda: f64,
    pub n_tx: usize,
    pub n_sub: usize,
}

impl Checkpoint {
    pub fn new(encoder: ParamSet, decoder: ParamSet, lambda: f64, n_tx: usize, n_sub: usize) -> Self {
        Checkpoint { encoder, decoder, enc_adam: None, dec_adam: None, epoch: 0, lambda, n_tx, n_sub }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut entries = Vec::new();
        let mut tensors: Vec<&Tensor> = Vec::new();
        let push_set = |prefix: &str, set: &'_ ParamSet, entries: &mut Vec<EntryMeta>| {
            for (name, t) in set.names().iter().zip(set.tensors()) {
                entries.push(EntryMeta {
                    name: format!("{}{}", prefix, name),
                    shape: t.shape().to_vec(),
                });
            }
        };
        push_set("", &self.encoder, &mut entries);
        tensors.extend(self.encoder.tensors());
        push_set("", &self.decoder, &mut entries);
        tensors.extend(self.decoder.tensors());
        for (tag, adam) in [("enc", &self.enc_adam), ("dec", &self.dec_adam)] {
            if let Some(st) = adam {
                let (m, v) = st.moments();
                for (i, t) in m.iter().enumerate() {
                    entries.push(EntryMeta { name: format!("adam.{}.m.{}", tag, i), shape: t.shape().to_vec() });
                    tensors.push(t);
                }
                for (i, t) in v.iter().enumerate() {
                    entries.push(EntryMeta { name: format!("adam.{}.v.{}", tag, i), shape: t.shape().to_vec() });
                    tensors.push(t);
                }
            }
        }

        let header = CheckpointHeader {
            topology: TOPOLOGY.to_string(),
            n_tx: self.n_tx,
            n_sub: self.n_sub,
            lambda: self.lambda,
            epoch: self.epoch,
            entries,
            theta_names: self.decoder.names().to_vec(),
            theta_len: self.decoder.n_scalars(),
            enc_adam_step: self.enc_adam.as_ref().map(|s| s.step_count()),
            dec_adam_step: self.dec_adam.as_ref().map(|s| s.step_count()),
        };
        let json = serde_json::to_vec(&header)?;

        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        f.write_all(MAGIC)?;
        f.write_all(&VERSION.to_le_bytes())?;
        f.write_all(&(json.len() as u32).to_le_bytes())?;
        f.write_all(&json)?;
        for t in tensors {
            for v in t.data() {
                f.write_all(&v.to_le_bytes())?;
            }
        }
        f.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
        let mut head = [0u8; 10];
        f.read_exact(&mut head).map_err(|_| Error::format(0, "truncated checkpoint header"))?;
        if &head[0..4] != MAGIC {
            return Err(Error::format(0, format!("bad magic {:?}", &head[0..4])));
        }
        let version = u16::from_le_bytes([head[4], head[5]]);
        if version != VERSION {
            return Err(Error::format(4, format!("unsupported checkpoint version {}", version)));
        }
        let json_len = u32::from_le_bytes(head[6..10].try_into().unwrap()) as usize;
        let mut json = vec![0u8; json_len];
        f.read_exact(&mut json).map_err(|_| Error::format(10, "truncated JSON header"))?;
        let header: CheckpointHeader = serde_json::from_slice(&json)?;

        let mut read_tensor = |shape: &[usize], offset_hint: usize| -> Result<Tensor> {
            let n: usize = shape.iter().product();
            let mut buf = vec![0u8; n * 8];
            f.read_exact(&mut buf)
                .map_err(|_| Error::format((10 + json_len + offset_hint) as u64, "truncated tensor data"))?;
            let data: Vec<f64> =
                buf.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
            Tensor::new(shape.to_vec(), data)
        };

        let mut encoder = ParamSet::new();
        let mut decoder = ParamSet::new();
        let mut adam_parts: std::collections::BTreeMap<(String, String), Vec<Tensor>> =
            std::collections::BTreeMap::new();
        let mut offset = 0usize;
        for e in &header.entries {
            let t = read_tensor(&e.shape, offset)?;
            offset += t.numel() * 8;
            if let Some(rest) = e.name.strip_prefix("adam.") {
                let mut parts = rest.splitn(3, '.');
                let tag = parts.next().unwrap_or_default().to_string();
                let kind = parts.next().unwrap_or_default().to_string();
                adam_parts.entry((tag, kind)).or_default().push(t);
            } else if e.name.starts_with("enc.") {
                encoder.push(e.name.clone(), t);
            } else {
                decoder.push(e.name.clone(), t);
            }
        }

        if decoder.names() != header.theta_names.as_slice() {
            return Err(Error::format(10, "canonical theta ordering mismatch"));
        }
        if decoder.n_scalars() != header.theta_len {
            return Err(Error::format(10, "theta length mismatch"));
        }

        let mut build_adam = |tag: &str, step: Option<u64>| -> Option<AdamState> {
            let m = adam_parts.remove(&(tag.to_string(), "m".to_string()))?;
            let v = adam_parts.remove(&(tag.to_string(), "v".to_string()))?;
            Some(AdamState::from_parts(m, v, step.unwrap_or(0)))
        };
        let enc_adam = build_adam("enc", header.enc_adam_step);
        let dec_adam = build_adam("dec", header.dec_adam_step);

        Ok(Checkpoint {
            encoder,
            decoder,
            enc_adam,
            dec_adam,
            epoch: header.epoch,
            lambda: header.lambda,
            n_tx: header.n_tx,
            n_sub: header.n_sub,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec;

    #[test]
    fn roundtrip_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let (enc, dec) = codec::init(5);
        let mut ck = Checkpoint::new(enc.clone(), dec.clone(), 5e4, 64, 64);
        ck.enc_adam = Some(AdamState::new(enc.tensors()));
        ck.dec_adam = Some(AdamState::new(dec.tensors()));
        ck.epoch = 17;
        ck.save(&path).unwrap();

        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back.encoder, enc);
        assert_eq!(back.decoder, dec);
        assert_eq!(back.epoch, 17);
        assert_eq!(back.lambda, 5e4);
        assert!(back.enc_adam.is_some());
        // theta ordering is stable across save/load
        assert_eq!(back.decoder.names(), dec.names());
        assert_eq!(back.decoder.n_scalars(), 108_986);
    }

    #[test]
    fn corrupt_magic_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let (enc, dec) = codec::init(6);
        Checkpoint::new(enc, dec, 1.0, 64, 64).save(&path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[0] = b'Z';
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(Checkpoint::load(&path), Err(Error::Format { offset: 0, .. })));

        // truncation
        let (enc, dec) = codec::init(6);
        Checkpoint::new(enc, dec, 1.0, 64, 64).save(&path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 100]).unwrap();
        assert!(matches!(Checkpoint::load(&path), Err(Error::Format { .. })));
    }
}

//! Single-file binary checkpoint.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic        8 bytes  "TRECQCKP"
//! version      u32
//! config       u32 length + UTF-8 key=value text
//! vocabs       u32 count, then per vocab: u32 name length, name, u32 text length, text
//! blocks       u32 count, then per block: u32 name length, name, u32 rank,
//!              u64 dims[rank], u64 byte offset into the payload
//! payload      u64 length, then f64 values
//! checksum     u64, first 8 bytes of SHA-256 over everything before it
//! ```

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::numerics::{ParamStore, Tensor};
use crate::tokenizer::Vocab;

pub const MAGIC: [u8; 8] = *b"TRECQCKP";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: String,
    pub vocabs: Vec<(String, Vocab)>,
    pub params: ParamStore,
}

impl Checkpoint {
    pub fn vocab(&self, name: &str) -> Result<&Vocab> {
        self.vocabs
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| v)
            .ok_or_else(|| Error::Integrity(format!("checkpoint has no vocabulary {name:?}")))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        put_str(&mut out, &self.config);
        out.extend_from_slice(&(self.vocabs.len() as u32).to_le_bytes());
        for (name, vocab) in &self.vocabs {
            put_str(&mut out, name);
            put_str(&mut out, &vocab.to_text());
        }
        out.extend_from_slice(&(self.params.len() as u32).to_le_bytes());
        let mut offset = 0u64;
        for (_, name, t) in self.params.iter() {
            put_str(&mut out, name);
            out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            out.extend_from_slice(&offset.to_le_bytes());
            offset += 8 * t.len() as u64;
        }
        out.extend_from_slice(&offset.to_le_bytes());
        for (_, _, t) in self.params.iter() {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let sum = checksum(&out);
        out.extend_from_slice(&sum.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < MAGIC.len() + 4 + 8 || bytes[..8] != MAGIC {
            return Err(Error::Integrity(
                "not a checkpoint file (bad magic or too short)".into(),
            ));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 8);
        let stored = u64::from_le_bytes(tail.try_into().expect("8 bytes"));
        if stored != checksum(body) {
            return Err(Error::Integrity("checksum mismatch".into()));
        }
        let mut r = Reader { buf: body, pos: 8 };
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Version {
                found: version,
                expected: VERSION,
            });
        }
        let config = r.string()?;
        let n_vocabs = r.u32()?;
        let mut vocabs = Vec::new();
        for _ in 0..n_vocabs {
            let name = r.string()?;
            let text = r.string()?;
            vocabs.push((name, Vocab::from_text(&text)?));
        }
        let n_blocks = r.u32()?;
        let mut table = Vec::new();
        for _ in 0..n_blocks {
            let name = r.string()?;
            let rank = r.u32()? as usize;
            let dims = (0..rank)
                .map(|_| r.u64().map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let offset = r.u64()?;
            table.push((name, dims, offset));
        }
        let payload_len = r.u64()? as usize;
        let payload = r.take(payload_len)?;
        if r.pos != body.len() {
            return Err(Error::Integrity("trailing bytes after payload".into()));
        }
        let mut params = ParamStore::new();
        let mut expected_offset = 0usize;
        for (name, dims, offset) in table {
            let n: usize = dims.iter().product();
            if offset as usize != expected_offset || expected_offset + 8 * n > payload.len() {
                return Err(Error::Integrity(format!(
                    "block {name:?} lies outside the payload"
                )));
            }
            let data = payload[expected_offset..expected_offset + 8 * n]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            expected_offset += 8 * n;
            params
                .add(name, Tensor::new(dims, data)?)
                .map_err(|e| Error::Integrity(e.to_string()))?;
        }
        if expected_offset != payload.len() {
            return Err(Error::Integrity(
                "payload length does not match block table".into(),
            ));
        }
        Ok(Checkpoint {
            config,
            vocabs,
            params,
        })
    }
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

pub fn checksum(bytes: &[u8]) -> u64 {
    let digest = Sha256::digest(bytes);
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Integrity("unexpected end of checkpoint".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        let b = self.take(n)?;
        String::from_utf8(b.to_vec())
            .map_err(|_| Error::Integrity("invalid UTF-8 in checkpoint".into()))
    }
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    fs::write(path, ckpt.to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes)
}

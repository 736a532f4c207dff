//! Versioned binary checkpoint container.
//!
//! ```text
//! "RMDN"                      magic
//! u32                         format version
//! u32 + bytes                 ModelConfig as UTF-8 JSON
//! repeated until the trailer:
//!   u32 + bytes               tensor name
//!   u32                       rank
//!   u64 × rank                dims
//!   f64 × Π dims              row-major payload
//! u32                         CRC32 of every preceding byte
//! ```
//!
//! All integers and floats are little-endian.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

use super::{ModelConfig, ModelWeights, Tensor};

pub const MAGIC: &[u8; 4] = b"RMDN";
pub const VERSION: u32 = 1;

pub fn encode(weights: &ModelWeights) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(16 + weights.num_params() * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let cfg = serde_json::to_vec(weights.config())?;
    out.extend_from_slice(&(cfg.len() as u32).to_le_bytes());
    out.extend_from_slice(&cfg);
    for t in weights.tensors() {
        out.extend_from_slice(&(t.name().len() as u32).to_le_bytes());
        out.extend_from_slice(t.name().as_bytes());
        out.extend_from_slice(&(t.dims().len() as u32).to_le_bytes());
        for d in t.dims() {
            out.extend_from_slice(&(*d as u64).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|e| *e <= self.buf.len());
        let end = end.ok_or_else(|| Error::CorruptFile("checkpoint truncated".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn decode(bytes: &[u8]) -> Result<ModelWeights> {
    if bytes.len() < 12 || &bytes[..4] != MAGIC {
        return Err(Error::CorruptFile("missing RMDN magic".into()));
    }
    let (body, trailer) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(trailer.try_into().unwrap());
    if crc32fast::hash(body) != stored {
        return Err(Error::CorruptFile("checkpoint checksum mismatch".into()));
    }
    let mut r = Reader { buf: body, pos: 4 };
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::CorruptFile(format!("unsupported checkpoint version {version}")));
    }
    let cfg_len = r.u32()? as usize;
    let config: ModelConfig = serde_json::from_slice(r.take(cfg_len)?)
        .map_err(|e| Error::CorruptFile(format!("bad model config: {e}")))?;
    let mut tensors = Vec::new();
    while r.pos < body.len() {
        let name_len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| Error::CorruptFile("tensor name is not UTF-8".into()))?
            .to_string();
        let rank = r.u32()? as usize;
        let dims = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let len = dims.iter().try_fold(1usize, |a, d| a.checked_mul(*d));
        let len = len.ok_or_else(|| Error::CorruptFile(format!("tensor `{name}` dims overflow")))?;
        let raw = r.take(len.checked_mul(8).ok_or_else(|| Error::CorruptFile("tensor too large".into()))?)?;
        let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        tensors.push(Tensor::from_parts(name, dims, data)?);
    }
    ModelWeights::from_tensors(&config, tensors).map_err(|e| Error::CorruptFile(e.to_string()))
}

pub fn save(weights: &ModelWeights, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode(weights)?)?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<ModelWeights> {
    decode(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> ModelWeights {
        let cfg = ModelConfig { p: 2, hidden: 3, seq_len: 14, components: 2, ..ModelConfig::default() };
        let mut w = ModelWeights::zeros(&cfg).unwrap();
        for (i, t) in w.tensors_mut().iter_mut().enumerate() {
            for (j, v) in t.data_mut().iter_mut().enumerate() {
                *v = (i as f64 + 1.0) * 0.01 - j as f64 * 1e-3;
            }
        }
        w
    }

    #[test]
    fn roundtrip_is_exact() {
        let w = sample();
        let bytes = encode(&w).unwrap();
        assert_eq!(&bytes[..4], b"RMDN");
        let back = decode(&bytes).unwrap();
        assert_eq!(back, w);
        assert_eq!(encode(&back).unwrap(), bytes);
    }

    #[test]
    fn corruption_detected() {
        let mut bytes = encode(&sample()).unwrap();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0x40;
        assert!(matches!(decode(&bytes), Err(Error::CorruptFile(_))));
        let mut bytes = encode(&sample()).unwrap();
        bytes[0] = b'X';
        assert!(matches!(decode(&bytes), Err(Error::CorruptFile(_))));
        assert!(decode(&[1, 2, 3]).is_err());
    }
}

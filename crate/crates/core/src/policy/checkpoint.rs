//! Checkpoint container, little-endian throughout:
//!
//! ```text
//! magic        8 bytes  "IGCKPT\0\0"
//! version      u32
//! scalar_bytes u8       4 = f32, 8 = f64
//! vocab_size, d_model, n_layers, n_heads, max_len, ffn_mult   u32 each
//! seed         u64
//! step         u64
//! config_hash  u16 length + UTF-8 bytes
//! n_params     u64
//! values       n_params scalars in parameter layout order
//! ```

use std::fs;
use std::io::{Cursor, Read};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use super::params::{ModelConfig, PolicyParams};
use crate::error::{Error, Result};
use crate::io::write_file;
use crate::scalar::Scalar;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"IGCKPT\0\0";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct CheckpointMeta {
    pub seed: u64,
    pub step: u64,
    pub config_hash: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<F: Scalar> {
    pub params: PolicyParams<F>,
    pub meta: CheckpointMeta,
}

fn ck(e: std::io::Error) -> Error {
    Error::Checkpoint(format!("truncated or unreadable container: {e}"))
}

impl<F: Scalar> Checkpoint<F> {
    pub fn to_bytes(&self) -> Vec<u8> {
        let c = self.params.config();
        let mut out = Vec::with_capacity(64 + self.params.len() * F::BYTES as usize);
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.write_u32::<LittleEndian>(CHECKPOINT_VERSION).unwrap();
        out.write_u8(F::BYTES).unwrap();
        for x in [c.vocab_size, c.d_model, c.n_layers, c.n_heads, c.max_len, c.ffn_mult] {
            out.write_u32::<LittleEndian>(x as u32).unwrap();
        }
        out.write_u64::<LittleEndian>(self.meta.seed).unwrap();
        out.write_u64::<LittleEndian>(self.meta.step).unwrap();
        let h = self.meta.config_hash.as_bytes();
        out.write_u16::<LittleEndian>(h.len() as u16).unwrap();
        out.extend_from_slice(h);
        out.write_u64::<LittleEndian>(self.params.len() as u64).unwrap();
        for &v in self.params.values() {
            v.write_le(&mut out);
        }
        out
    }

    /// Parses a container. With `expected` set, any architecture mismatch is an error.
    pub fn from_bytes(bytes: &[u8], expected: Option<&ModelConfig>) -> Result<Self> {
        let mut r = Cursor::new(bytes);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(ck)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(Error::Checkpoint("not a checkpoint (bad magic)".into()));
        }
        let version = r.read_u32::<LittleEndian>().map_err(ck)?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported format version {version}")));
        }
        let width = r.read_u8().map_err(ck)?;
        if width != F::BYTES {
            return Err(Error::Checkpoint(format!("scalar width {width} does not match requested {}", F::BYTES)));
        }
        let mut dims = [0usize; 6];
        for d in &mut dims {
            *d = r.read_u32::<LittleEndian>().map_err(ck)? as usize;
        }
        let config = ModelConfig {
            vocab_size: dims[0],
            d_model: dims[1],
            n_layers: dims[2],
            n_heads: dims[3],
            max_len: dims[4],
            ffn_mult: dims[5],
        };
        if let Some(e) = expected {
            if *e != config {
                return Err(Error::Checkpoint(format!("config mismatch: file has {config:?}, expected {e:?}")));
            }
        }
        let seed = r.read_u64::<LittleEndian>().map_err(ck)?;
        let step = r.read_u64::<LittleEndian>().map_err(ck)?;
        let hlen = r.read_u16::<LittleEndian>().map_err(ck)? as usize;
        let mut h = vec![0u8; hlen];
        r.read_exact(&mut h).map_err(ck)?;
        let config_hash = String::from_utf8(h).map_err(|_| Error::Checkpoint("config hash is not UTF-8".into()))?;
        let n = r.read_u64::<LittleEndian>().map_err(ck)? as usize;
        let start = r.position() as usize;
        let w = F::BYTES as usize;
        let body = &bytes[start..];
        if body.len() != n * w {
            return Err(Error::Checkpoint(format!("expected {} value bytes, found {}", n * w, body.len())));
        }
        let values = body.chunks_exact(w).map(F::read_le).collect();
        let params = PolicyParams::from_values(config, values)?;
        if !params.is_finite() {
            return Err(Error::Checkpoint("non-finite parameter values".into()));
        }
        Ok(Self { params, meta: CheckpointMeta { seed, step, config_hash } })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_file(path, &self.to_bytes())
    }

    pub fn load(path: &Path, expected: Option<&ModelConfig>) -> Result<Self> {
        if !path.exists() {
            return Err(Error::Missing { what: "checkpoint", path: path.to_path_buf() });
        }
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, expected)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> ModelConfig {
        ModelConfig { vocab_size: 10, d_model: 8, n_layers: 2, n_heads: 2, max_len: 6, ffn_mult: 2 }
    }

    fn sample() -> Checkpoint<f64> {
        Checkpoint {
            params: PolicyParams::init(cfg(), 1, 0.2).unwrap(),
            meta: CheckpointMeta { seed: 7, step: 42, config_hash: "abc123".into() },
        }
    }

    #[test]
    fn bytes_round_trip() {
        let c = sample();
        let back = Checkpoint::<f64>::from_bytes(&c.to_bytes(), Some(&cfg())).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn file_round_trip_and_missing_path() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.ckpt");
        sample().save(&p).unwrap();
        assert_eq!(Checkpoint::<f64>::load(&p, None).unwrap(), sample());
        assert!(matches!(Checkpoint::<f64>::load(&dir.path().join("x"), None), Err(Error::Missing { .. })));
    }

    #[test]
    fn mismatches_are_errors() {
        let bytes = sample().to_bytes();
        let mut other = cfg();
        other.d_model = 16;
        assert!(Checkpoint::<f64>::from_bytes(&bytes, Some(&other)).is_err());
        assert!(Checkpoint::<f32>::from_bytes(&bytes, None).is_err());
        assert!(Checkpoint::<f64>::from_bytes(&bytes[..bytes.len() - 3], None).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(Checkpoint::<f64>::from_bytes(&bad, None).is_err());
    }
}

//! Versioned binary checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic      4 bytes  "F4DK"
//! version    u32      CHECKPOINT_VERSION
//! kind       u32 length + UTF-8 bytes   ("autoencoder", "generator_level", "decoder", ...)
//! meta       u32 length + UTF-8 bytes   (TOML: network config and non-trainable state)
//! count      u32      number of parameter arrays
//! repeated count times:
//!   name     u32 length + UTF-8 bytes
//!   rows     u32
//!   cols     u32
//!   data     rows*cols f64, row-major
//! ```

use std::fs;
use std::io::{Cursor, Read};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::nn::ParamStore;
use crate::tensor::Matrix;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"F4DK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub kind: String,
    pub meta: String,
    pub params: ParamStore,
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

fn get_u32(cur: &mut Cursor<&[u8]>, path: &Path) -> Result<u32> {
    let mut b = [0u8; 4];
    cur.read_exact(&mut b).map_err(|_| Error::data(path, "truncated checkpoint"))?;
    Ok(u32::from_le_bytes(b))
}

fn get_str(cur: &mut Cursor<&[u8]>, path: &Path) -> Result<String> {
    let n = get_u32(cur, path)? as usize;
    let mut b = vec![0u8; n];
    cur.read_exact(&mut b).map_err(|_| Error::data(path, "truncated checkpoint"))?;
    String::from_utf8(b).map_err(|_| Error::data(path, "invalid UTF-8 in checkpoint"))
}

impl Checkpoint {
    pub fn new<M: Serialize>(kind: &str, meta: &M, params: ParamStore) -> Result<Self> {
        let meta = toml::to_string(meta).map_err(|e| Error::Config(e.to_string()))?;
        Ok(Self { kind: kind.to_string(), meta, params })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        put_str(&mut out, &self.kind);
        put_str(&mut out, &self.meta);
        out.extend_from_slice(&(self.params.len() as u32).to_le_bytes());
        for (name, m) in self.params.names().iter().zip(self.params.values()) {
            put_str(&mut out, name);
            out.extend_from_slice(&(m.rows() as u32).to_le_bytes());
            out.extend_from_slice(&(m.cols() as u32).to_le_bytes());
            for x in m.data() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut cur = Cursor::new(bytes);
        let mut magic = [0u8; 4];
        cur.read_exact(&mut magic).map_err(|_| Error::data(path, "truncated checkpoint"))?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(Error::data(path, "not a checkpoint file (bad magic)"));
        }
        let version = get_u32(&mut cur, path)?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::data(path, format!("unsupported checkpoint version {version}")));
        }
        let kind = get_str(&mut cur, path)?;
        let meta = get_str(&mut cur, path)?;
        let count = get_u32(&mut cur, path)?;
        let mut params = ParamStore::new();
        for _ in 0..count {
            let name = get_str(&mut cur, path)?;
            let rows = get_u32(&mut cur, path)? as usize;
            let cols = get_u32(&mut cur, path)? as usize;
            let mut data = Vec::with_capacity(rows * cols);
            let mut b = [0u8; 8];
            for _ in 0..rows * cols {
                cur.read_exact(&mut b).map_err(|_| Error::data(path, "truncated checkpoint"))?;
                data.push(f64::from_le_bytes(b));
            }
            params.add(name, Matrix::new(rows, cols, data));
        }
        Ok(Self { kind, meta, params })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }

    pub fn expect_kind(&self, kind: &str) -> Result<()> {
        if self.kind != kind {
            return Err(Error::Compatibility(format!(
                "expected a {kind} checkpoint, found {}",
                self.kind
            )));
        }
        Ok(())
    }

    pub fn meta<M: DeserializeOwned>(&self) -> Result<M> {
        toml::from_str(&self.meta).map_err(|e| Error::Compatibility(format!("checkpoint metadata: {e}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bytes_round_trip_exactly() {
        let mut params = ParamStore::new();
        params.add("a.w", Matrix::new(2, 2, vec![1.0, -0.0, f64::MIN_POSITIVE, 1e300]));
        params.add("a.b", Matrix::zeros(1, 3));
        #[derive(Serialize)]
        struct Meta {
            k: usize,
        }
        let ck = Checkpoint::new("test", &Meta { k: 5 }, params).unwrap();
        let back = Checkpoint::from_bytes(&ck.to_bytes(), Path::new("mem")).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.params.checksum(), ck.params.checksum());
    }

    #[test]
    fn bad_magic_is_a_data_error() {
        let err = Checkpoint::from_bytes(b"NOPE\x01\0\0\0", Path::new("x")).unwrap_err();
        assert!(matches!(err, Error::Data { .. }));
    }
}

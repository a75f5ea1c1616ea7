//! Binary checkpoint container for named parameter arrays.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic "LAMSCCKP" | version u32
//! kind     : u32 length + UTF-8
//! digest   : u32 length + UTF-8 (config digest of the producing run)
//! meta     : u32 length + JSON
//! count    : u32
//! count × { name: u32 length + UTF-8 | ndim u32 | dims u64 × ndim | f64 × prod(dims) }
//! ```

use std::io::{Read, Write};
use std::path::Path;

use ndarray::{ArrayD, IxDyn};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::nn::Params;

const MAGIC: &[u8; 8] = b"LAMSCCKP";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub kind: String,
    pub config_digest: String,
    pub meta: serde_json::Value,
    pub params: Params,
}

impl Checkpoint {
    pub fn new(kind: impl Into<String>, config_digest: impl Into<String>, meta: serde_json::Value, params: Params) -> Self {
        Self { kind: kind.into(), config_digest: config_digest.into(), meta, params }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            if !dir.as_os_str().is_empty() {
                std::fs::create_dir_all(dir)?;
            }
        }
        let mut buf = Vec::new();
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        put_str(&mut buf, &self.kind);
        put_str(&mut buf, &self.config_digest);
        put_str(&mut buf, &serde_json::to_string(&self.meta)?);
        buf.extend_from_slice(&(self.params.len() as u32).to_le_bytes());
        for (name, a) in self.params.iter() {
            put_str(&mut buf, name);
            buf.extend_from_slice(&(a.ndim() as u32).to_le_bytes());
            for &d in a.shape() {
                buf.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in a.iter() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        let mut f = std::fs::File::create(path)?;
        f.write_all(&buf)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.is_file() {
            return Err(Error::MissingArtifact(path.to_owned()));
        }
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        let bad = |reason: &str| Error::Checkpoint { path: path.to_owned(), reason: reason.to_owned() };
        let mut r = Cursor { bytes: &bytes, pos: 0 };
        if r.take(8).ok_or_else(|| bad("truncated header"))? != MAGIC {
            return Err(bad("not a checkpoint file"));
        }
        let version = r.u32().ok_or_else(|| bad("truncated header"))?;
        if version != CHECKPOINT_VERSION {
            return Err(bad(&format!("unsupported version {version}")));
        }
        let kind = r.string().ok_or_else(|| bad("bad kind"))?;
        let config_digest = r.string().ok_or_else(|| bad("bad digest"))?;
        let meta_text = r.string().ok_or_else(|| bad("bad metadata"))?;
        let meta = serde_json::from_str(&meta_text)?;
        let count = r.u32().ok_or_else(|| bad("truncated"))? as usize;
        let mut params = Params::new();
        for _ in 0..count {
            let name = r.string().ok_or_else(|| bad("bad array name"))?;
            let ndim = r.u32().ok_or_else(|| bad("truncated array"))? as usize;
            let mut dims = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                dims.push(r.u64().ok_or_else(|| bad("truncated array"))? as usize);
            }
            let len: usize = dims.iter().product();
            let raw = r.take(len.checked_mul(8).ok_or_else(|| bad("array too large"))?).ok_or_else(|| bad("truncated array data"))?;
            let data: Vec<f64> = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
            let a = ArrayD::from_shape_vec(IxDyn(&dims), data).map_err(|e| bad(&e.to_string()))?;
            params.insert(name, a);
        }
        if r.pos != bytes.len() {
            return Err(bad("trailing bytes"));
        }
        Ok(Self { kind, config_digest, meta, params })
    }

    /// Loads and checks the kind tag.
    pub fn load_kind(path: &Path, kind: &str) -> Result<Self> {
        let c = Self::load(path)?;
        if c.kind != kind {
            return Err(Error::Checkpoint {
                path: path.to_owned(),
                reason: format!("expected a `{kind}` checkpoint, found `{}`", c.kind),
            });
        }
        Ok(c)
    }
}

fn put_str(buf: &mut Vec<u8>, s: &str) {
    buf.extend_from_slice(&(s.len() as u32).to_le_bytes());
    buf.extend_from_slice(s.as_bytes());
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let end = self.pos.checked_add(n)?;
        let s = self.bytes.get(self.pos..end)?;
        self.pos = end;
        Some(s)
    }

    fn u32(&mut self) -> Option<u32> {
        self.take(4).map(|b| u32::from_le_bytes(b.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Option<u64> {
        self.take(8).map(|b| u64::from_le_bytes(b.try_into().expect("8 bytes")))
    }

    fn string(&mut self) -> Option<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).ok()
    }
}

/// Hex SHA-256 of a file's bytes.
pub fn file_sha256(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr2;

    #[test]
    fn roundtrip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let mut p = Params::new();
        p.insert("a.weight", arr2(&[[1.5, -0.25], [f64::MIN_POSITIVE, 3e300]]).into_dyn());
        p.insert("a.bias", ArrayD::zeros(IxDyn(&[3])));
        let c = Checkpoint::new("sc", "abc", serde_json::json!({"x": 1}), p);
        let path = dir.path().join("m.ckpt");
        c.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.params.digest(), c.params.digest());
        assert!(Checkpoint::load_kind(&path, "asi").is_err());
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.ckpt");
        std::fs::write(&path, b"LAMSCCKP\x01\x00\x00\x00\xff").unwrap();
        assert!(matches!(Checkpoint::load(&path), Err(Error::Checkpoint { .. })));
        assert!(matches!(Checkpoint::load(&dir.path().join("none")), Err(Error::MissingArtifact(_))));
    }
}

//! Named parameter collections and their binary checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic      8 bytes   "TGRAPHCK"
//! version    u32       CHECKPOINT_VERSION
//! count      u32       number of entries
//! entries    count ×   { key_len u32, key utf-8, ndim u32, dims ndim×u64,
//!                        values prod(dims)×f64 }
//! ```
//!
//! Entries are written in ascending key order, so equal stores produce
//! byte-identical files.

use std::collections::BTreeMap;
use std::path::Path;

use super::{Gradients, Tape, Tensor, Var};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"TGRAPHCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: BTreeMap<String, Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) {
        self.params.insert(name.into(), tensor.with_requires_grad(true));
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.params.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.params.get_mut(name)
    }

    pub fn require(&self, name: &str) -> Result<&Tensor> {
        self.get(name).ok_or_else(|| Error::UnknownParam(name.to_string()))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.params.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn zero_grad(&mut self) {
        self.params.values_mut().for_each(Tensor::zero_grad);
    }

    /// Copies every parameter onto `tape` as a differentiable leaf.
    pub fn bind(&self, tape: &mut Tape) -> BTreeMap<String, Var> {
        self.params.iter().map(|(k, t)| (k.clone(), tape.leaf(t))).collect()
    }

    /// Adds the gradients of bound leaves into the parameters' grad buffers.
    pub fn accumulate(&mut self, bound: &BTreeMap<String, Var>, grads: &Gradients) -> Result<()> {
        for (name, &var) in bound {
            let t = self.params.get_mut(name).ok_or_else(|| Error::UnknownParam(name.clone()))?;
            match grads.get(var) {
                Some(g) => t.accumulate_grad(g)?,
                None => t.accumulate_grad(&vec![0.0; t.numel()])?,
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.params.len() as u32).to_le_bytes());
        for (name, t) in &self.params {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0, path };
        let magic = r.take(8)?;
        if magic != CHECKPOINT_MAGIC {
            return Err(r.err(0, "bad magic"));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::SchemaVersion {
                path: path.to_path_buf(),
                found: version,
                expected: CHECKPOINT_VERSION,
            });
        }
        let count = r.u32()?;
        let mut params = BTreeMap::new();
        for _ in 0..count {
            let at = r.pos;
            let key_len = r.u32()? as usize;
            let key = std::str::from_utf8(r.take(key_len)?)
                .map_err(|_| r.err(at, "key is not utf-8"))?
                .to_string();
            let ndim = r.u32()? as usize;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                shape.push(r.u64()? as usize);
            }
            let n = shape
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .ok_or_else(|| r.err(at, "shape overflows"))?;
            let raw = r.take(n.checked_mul(8).ok_or_else(|| r.err(at, "shape overflows"))?)?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            let tensor = Tensor::new(shape, data).map_err(|e| r.err(at, &e.to_string()))?;
            if params.insert(key.clone(), tensor.with_requires_grad(true)).is_some() {
                return Err(r.err(at, &format!("duplicate key `{key}`")));
            }
        }
        if r.pos != bytes.len() {
            return Err(r.err(r.pos, "trailing bytes"));
        }
        Ok(ParamStore { params })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn err(&self, offset: usize, reason: &str) -> Error {
        Error::Checkpoint {
            path: self.path.to_path_buf(),
            offset,
            reason: reason.to_string(),
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| self.err(self.pos, "unexpected end of file"))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn save_checkpoint(store: &ParamStore, path: &Path) -> Result<()> {
    std::fs::write(path, store.to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<ParamStore> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    ParamStore::from_bytes(&bytes, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> ParamStore {
        let mut s = ParamStore::new();
        s.insert("gcn.w1", Tensor::new(vec![2, 3], vec![1.0, -2.0, 3.5, 0.0, 1e-300, -0.0]).unwrap());
        s.insert("bias", Tensor::row(vec![f64::MAX, 7.25]));
        s
    }

    #[test]
    fn round_trip_is_exact() {
        let s = sample();
        let bytes = s.to_bytes();
        let back = ParamStore::from_bytes(&bytes, Path::new("mem")).unwrap();
        assert_eq!(back.to_bytes(), bytes);
        assert_eq!(back, s);
    }

    #[test]
    fn header_and_order() {
        let bytes = sample().to_bytes();
        assert_eq!(&bytes[..8], CHECKPOINT_MAGIC);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), CHECKPOINT_VERSION);
        assert_eq!(u32::from_le_bytes(bytes[12..16].try_into().unwrap()), 2);
        // "bias" sorts before "gcn.w1"
        assert_eq!(&bytes[20..24], b"bias");
    }

    #[test]
    fn truncation_reports_offset() {
        let bytes = sample().to_bytes();
        let cut = &bytes[..bytes.len() - 3];
        match ParamStore::from_bytes(cut, Path::new("ck.bin")) {
            Err(Error::Checkpoint { offset, .. }) => assert!(offset > 16),
            other => panic!("expected checkpoint error, got {other:?}"),
        }
    }

    #[test]
    fn version_mismatch() {
        let mut bytes = sample().to_bytes();
        bytes[8] = 9;
        assert!(matches!(
            ParamStore::from_bytes(&bytes, Path::new("ck.bin")),
            Err(Error::SchemaVersion { found: 9, .. })
        ));
    }
}

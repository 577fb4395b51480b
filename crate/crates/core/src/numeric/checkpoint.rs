//! Flat binary parameter container with a JSON manifest beside it.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic   8 bytes  "RMOLCKPT"
//! version u32      1
//! count   u32      number of records
//! record  name_len u32, name bytes (UTF-8), ndim u32, dims u64 * ndim,
//!         payload f64 * product(dims)
//! ```
//!
//! The manifest (`<file>.json`) lists record names and shapes plus free-form
//! metadata such as the encoder configuration and loss history.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{NumericError, ParamStore, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"RMOLCKPT";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordInfo {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub records: Vec<RecordInfo>,
    pub metadata: serde_json::Value,
}

pub fn encode_records(params: &ParamStore) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + params.total_values() * 8);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (name, t) in params.iter() {
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

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], NumericError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| NumericError::Format(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, NumericError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, NumericError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn decode_records(bytes: &[u8]) -> Result<ParamStore, NumericError> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(8)? != CHECKPOINT_MAGIC {
        return Err(NumericError::Format("bad magic".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(NumericError::Format(format!("unsupported version {version}")));
    }
    let count = r.u32()?;
    let mut store = ParamStore::new();
    for _ in 0..count {
        let len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| NumericError::Format("record name is not UTF-8".into()))?
            .to_string();
        let ndim = r.u32()? as usize;
        let shape = (0..ndim)
            .map(|_| r.u64().map(|d| d as usize))
            .collect::<Result<Vec<_>, _>>()?;
        let n: usize = shape.iter().product();
        let payload = r.take(n.checked_mul(8).ok_or_else(|| NumericError::Format("record too large".into()))?)?;
        let data = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if store.insert(name.clone(), Tensor::new(shape, data)?).is_some() {
            return Err(NumericError::Format(format!("duplicate record '{name}'")));
        }
    }
    if r.pos != bytes.len() {
        return Err(NumericError::Format("trailing bytes after last record".into()));
    }
    Ok(store)
}

/// `<path>.json`
pub fn manifest_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

pub fn save_checkpoint(path: &Path, params: &ParamStore, metadata: serde_json::Value) -> Result<(), NumericError> {
    std::fs::write(path, encode_records(params))?;
    let manifest = Checkpoint {
        format: "relmol-checkpoint".into(),
        version: VERSION,
        records: params
            .iter()
            .map(|(name, t)| RecordInfo {
                name: name.clone(),
                shape: t.shape().to_vec(),
            })
            .collect(),
        metadata,
    };
    std::fs::write(manifest_path(path), serde_json::to_string_pretty(&manifest)?)?;
    Ok(())
}

/// Load parameters and the manifest. The manifest must agree with the
/// binary records.
pub fn load_checkpoint(path: &Path) -> Result<(ParamStore, Checkpoint), NumericError> {
    let params = decode_records(&std::fs::read(path)?)?;
    let manifest: Checkpoint = serde_json::from_str(&std::fs::read_to_string(manifest_path(path))?)?;
    let listed: Vec<(&str, &[usize])> = manifest
        .records
        .iter()
        .map(|r| (r.name.as_str(), r.shape.as_slice()))
        .collect();
    let stored: Vec<(&str, &[usize])> = params.iter().map(|(n, t)| (n.as_str(), t.shape())).collect();
    if listed != stored {
        return Err(NumericError::Format("manifest does not match binary records".into()));
    }
    Ok((params, manifest))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn bit_exact_roundtrip(values in proptest::collection::vec(any::<f64>().prop_filter("finite", |v| v.is_finite()), 1..40), cols in 1usize..5) {
            let rows = values.len() / cols;
            prop_assume!(rows > 0);
            let mut store = ParamStore::new();
            store.insert("enc.w", Tensor::matrix(rows, cols, values[..rows * cols].to_vec()).unwrap());
            store.insert("b", Tensor::new(vec![values.len()], values.clone()).unwrap());
            store.insert("s", Tensor::new(vec![], vec![values[0]]).unwrap());
            let decoded = decode_records(&encode_records(&store)).unwrap();
            for ((n1, t1), (n2, t2)) in store.iter().zip(decoded.iter()) {
                prop_assert_eq!(n1, n2);
                prop_assert_eq!(t1.shape(), t2.shape());
                let a: Vec<u64> = t1.data().iter().map(|v| v.to_bits()).collect();
                let b: Vec<u64> = t2.data().iter().map(|v| v.to_bits()).collect();
                prop_assert_eq!(a, b);
            }
        }
    }

    #[test]
    fn rejects_corruption() {
        let mut store = ParamStore::new();
        store.insert("w", Tensor::scalar(1.5));
        let bytes = encode_records(&store);
        assert!(decode_records(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode_records(&bad).is_err());
        let mut long = bytes;
        long.push(0);
        assert!(decode_records(&long).is_err());
    }

    #[test]
    fn file_roundtrip_with_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("enc.ckpt");
        let mut store = ParamStore::new();
        store.insert("a", Tensor::matrix(2, 2, vec![1.0, -0.0, f64::MIN_POSITIVE, 3.0]).unwrap());
        save_checkpoint(&path, &store, serde_json::json!({"depth": 3})).unwrap();
        let (loaded, manifest) = load_checkpoint(&path).unwrap();
        assert_eq!(loaded, store);
        assert_eq!(loaded.get("a").unwrap().data()[1].to_bits(), (-0.0f64).to_bits());
        assert_eq!(manifest.metadata["depth"], 3);
    }
}

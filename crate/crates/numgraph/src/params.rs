//! Named parameter storage and the binary checkpoint format.
//!
//! A checkpoint is a one-line JSON header
//! `{"version":1,"params":[{"name":..,"shape":[..]},..]}` terminated by
//! `\n`, followed by every parameter's row-major values as little-endian
//! `f64`, concatenated in header order.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{GraphError, Result};
use crate::tensor::Tensor;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    entries: Vec<(String, Tensor)>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> Result<()> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(GraphError::DuplicateParam(name));
        }
        self.index.insert(name.clone(), self.entries.len());
        self.entries.push((name, value));
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index.get(name).map(|&i| &self.entries[i].1)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.index.get(name).map(|&i| &mut self.entries[i].1)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of scalar entries across all parameters.
    pub fn numel(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.numel()).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.entries.iter_mut().map(|(n, t)| (n.as_str(), t))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(file);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        let header = Header {
            version: CHECKPOINT_VERSION,
            params: self
                .entries
                .iter()
                .map(|(name, t)| ParamHeader {
                    name: name.clone(),
                    shape: t.shape().to_vec(),
                })
                .collect(),
        };
        let json = serde_json::to_string(&header).map_err(|e| GraphError::Checkpoint(e.to_string()))?;
        w.write_all(json.as_bytes())?;
        w.write_all(b"\n")?;
        for (_, t) in &self.entries {
            for v in t.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to a Vec cannot fail");
        buf
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::read_from(file)
    }

    pub fn read_from(r: impl Read) -> Result<Self> {
        let mut r = BufReader::new(r);
        let mut line = String::new();
        r.read_line(&mut line)?;
        let header: Header = serde_json::from_str(line.trim_end()).map_err(|e| GraphError::Checkpoint(e.to_string()))?;
        if header.version != CHECKPOINT_VERSION {
            return Err(GraphError::Checkpoint(format!("unsupported version {}", header.version)));
        }
        let mut store = ParamStore::new();
        let mut buf = [0u8; 8];
        for p in header.params {
            let n: usize = p.shape.iter().product();
            let mut data = Vec::with_capacity(n);
            for _ in 0..n {
                r.read_exact(&mut buf)
                    .map_err(|_| GraphError::Checkpoint(format!("truncated data for `{}`", p.name)))?;
                data.push(f64::from_le_bytes(buf));
            }
            store.insert(p.name, Tensor::new(p.shape, data)?)?;
        }
        let mut rest = Vec::new();
        r.read_to_end(&mut rest)?;
        if !rest.is_empty() {
            return Err(GraphError::Checkpoint(format!("{} trailing bytes", rest.len())));
        }
        Ok(store)
    }
}

#[derive(Serialize, Deserialize)]
struct Header {
    version: u32,
    params: Vec<ParamHeader>,
}

#[derive(Serialize, Deserialize)]
struct ParamHeader {
    name: String,
    shape: Vec<usize>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicate_names_are_rejected() {
        let mut s = ParamStore::new();
        s.insert("w", Tensor::zeros(&[2])).unwrap();
        assert!(matches!(s.insert("w", Tensor::zeros(&[1])), Err(GraphError::DuplicateParam(_))));
    }

    #[test]
    fn header_layout_is_json_line_then_le_f64() {
        let mut s = ParamStore::new();
        s.insert("a", Tensor::new(vec![2], vec![1.0, -2.5]).unwrap()).unwrap();
        let bytes = s.to_bytes();
        let nl = bytes.iter().position(|&b| b == b'\n').unwrap();
        let header: serde_json::Value = serde_json::from_slice(&bytes[..nl]).unwrap();
        assert_eq!(header["version"], 1);
        assert_eq!(header["params"][0]["name"], "a");
        assert_eq!(header["params"][0]["shape"][0], 2);
        assert_eq!(&bytes[nl + 1..nl + 9], &1.0f64.to_le_bytes());
        assert_eq!(&bytes[nl + 9..], &(-2.5f64).to_le_bytes());
    }

    #[test]
    fn truncated_checkpoint_fails() {
        let mut s = ParamStore::new();
        s.insert("a", Tensor::full(&[3], 1.0)).unwrap();
        let bytes = s.to_bytes();
        assert!(ParamStore::read_from(&bytes[..bytes.len() - 4]).is_err());
    }
}

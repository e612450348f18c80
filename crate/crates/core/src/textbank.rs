//! Label embeddings: loaded from a precomputed file, or synthesized
//! deterministically from label names.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::seed::{fnv1a, substream};

/// Weight of each shared word-token component in a synthetic vector.
pub const TOKEN_WEIGHT: f64 = 0.5;

#[derive(Clone, Debug, PartialEq)]
pub struct LabelEntry {
    pub name: String,
    pub vector: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabelBank {
    dim: usize,
    entries: BTreeMap<u32, LabelEntry>,
    seen: BTreeSet<u32>,
    unseen: BTreeSet<u32>,
}

#[derive(Serialize, Deserialize)]
struct BankFile {
    dim: usize,
    labels: Vec<LabelRecord>,
    #[serde(default)]
    seen: Vec<u32>,
    #[serde(default)]
    unseen: Vec<u32>,
}

#[derive(Serialize, Deserialize)]
struct LabelRecord {
    id: u32,
    name: String,
    vector: Vec<f64>,
}

fn normalized(mut v: Vec<f64>) -> Result<Vec<f64>> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if !n.is_finite() || n == 0.0 {
        return Err(invalid("label vector has zero or non-finite norm"));
    }
    v.iter_mut().for_each(|x| *x /= n);
    Ok(v)
}

impl LabelBank {
    /// Builds a bank from `(id, name, vector)` triples, normalizing every
    /// vector. Labels listed in neither set are treated as seen.
    pub fn new(
        entries: impl IntoIterator<Item = (u32, String, Vec<f64>)>,
        seen: impl IntoIterator<Item = u32>,
        unseen: impl IntoIterator<Item = u32>,
    ) -> Result<Self> {
        let mut map = BTreeMap::new();
        let mut dim = None;
        for (id, name, vector) in entries {
            match dim {
                None => dim = Some(vector.len()),
                Some(d) if d != vector.len() => {
                    return Err(Error::Shape(format!("label {id} has dim {}, expected {d}", vector.len())))
                }
                _ => {}
            }
            let vector = normalized(vector)?;
            if map.insert(id, LabelEntry { name, vector }).is_some() {
                return Err(invalid(format!("duplicate label id {id}")));
            }
        }
        let dim = dim.ok_or_else(|| invalid("label bank is empty"))?;
        if dim == 0 {
            return Err(invalid("label dim is zero"));
        }
        let unseen: BTreeSet<u32> = unseen.into_iter().collect();
        let mut seen: BTreeSet<u32> = seen.into_iter().collect();
        if let Some(id) = seen.intersection(&unseen).next() {
            return Err(invalid(format!("label {id} is both seen and unseen")));
        }
        if let Some(id) = seen.iter().chain(&unseen).find(|id| !map.contains_key(id)) {
            return Err(invalid(format!("split lists unknown label {id}")));
        }
        seen.extend(map.keys().filter(|id| !unseen.contains(id)));
        Ok(Self {
            dim,
            entries: map,
            seen,
            unseen,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: u32) -> Option<&LabelEntry> {
        self.entries.get(&id)
    }

    pub fn vector(&self, id: u32) -> Result<&[f64]> {
        self.entries
            .get(&id)
            .map(|e| e.vector.as_slice())
            .ok_or_else(|| invalid(format!("unknown label id {id}")))
    }

    /// Label ids in ascending order.
    pub fn ids(&self) -> impl Iterator<Item = u32> + '_ {
        self.entries.keys().copied()
    }

    pub fn entries(&self) -> impl Iterator<Item = (u32, &LabelEntry)> {
        self.entries.iter().map(|(&id, e)| (id, e))
    }

    pub fn seen(&self) -> &BTreeSet<u32> {
        &self.seen
    }

    pub fn unseen(&self) -> &BTreeSet<u32> {
        &self.unseen
    }

    pub fn is_seen(&self, id: u32) -> bool {
        self.seen.contains(&id)
    }

    /// The same vectors with a new seen/unseen partition.
    pub fn with_unseen(&self, unseen: impl IntoIterator<Item = u32>) -> Result<Self> {
        let unseen: BTreeSet<u32> = unseen.into_iter().collect();
        if let Some(id) = unseen.iter().find(|id| !self.entries.contains_key(id)) {
            return Err(invalid(format!("unknown label {id}")));
        }
        let seen = self.entries.keys().copied().filter(|id| !unseen.contains(id)).collect();
        Ok(Self {
            dim: self.dim,
            entries: self.entries.clone(),
            seen,
            unseen,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = BankFile {
            dim: self.dim,
            labels: self
                .entries
                .iter()
                .map(|(&id, e)| LabelRecord {
                    id,
                    name: e.name.clone(),
                    vector: e.vector.clone(),
                })
                .collect(),
            seen: self.seen.iter().copied().collect(),
            unseen: self.unseen.iter().copied().collect(),
        };
        std::fs::write(path, serde_json::to_string(&file)?)?;
        Ok(())
    }
}

pub fn load_bank(path: impl AsRef<Path>) -> Result<LabelBank> {
    let file: BankFile = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    if let Some(r) = file.labels.iter().find(|r| r.vector.len() != file.dim) {
        return Err(Error::Shape(format!("label {} has dim {}, file declares {}", r.id, r.vector.len(), file.dim)));
    }
    LabelBank::new(
        file.labels.into_iter().map(|r| (r.id, r.name, r.vector)),
        file.seen,
        file.unseen,
    )
}

fn gaussian_unit(seed: u64, key: &str, dim: usize) -> Vec<f64> {
    let mut rng = substream(seed, "textbank", fnv1a(key.as_bytes()));
    let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
    normalized(v).expect("gaussian draw is nonzero")
}

/// Deterministic stand-in for a text encoder. Each name gets its own random
/// unit vector plus `TOKEN_WEIGHT` times a random unit vector per
/// whitespace-separated word, so names sharing words end up closer together.
/// Ids are assigned in input order starting at 0; all labels are seen.
pub fn synth_bank<S: AsRef<str>>(names: &[S], dim: usize, seed: u64) -> Result<LabelBank> {
    if dim < 8 {
        return Err(invalid(format!("synthetic label dim must be at least 8, got {dim}")));
    }
    let mut uniq = BTreeSet::new();
    let mut entries = Vec::with_capacity(names.len());
    for (i, name) in names.iter().enumerate() {
        let name = name.as_ref();
        if !uniq.insert(name) {
            return Err(invalid(format!("duplicate label name `{name}`")));
        }
        let mut v = gaussian_unit(seed, &format!("name:{name}"), dim);
        for token in name.split_whitespace() {
            let u = gaussian_unit(seed, &format!("token:{token}"), dim);
            v.iter_mut().zip(&u).for_each(|(a, b)| *a += TOKEN_WEIGHT * b);
        }
        entries.push((i as u32, name.to_string(), v));
    }
    LabelBank::new(entries, std::iter::empty(), std::iter::empty())
}

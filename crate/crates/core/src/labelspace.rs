//! Benchmark label-space construction: balanced clustering of raw label
//! embeddings, a stratified train/test partition, and head/medium/tail
//! strata by training frequency.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::seed::substream;
use crate::textbank::LabelBank;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusteredLabelSpace {
    pub k: usize,
    /// Cluster of each input vector, in input order.
    pub assignment: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    /// Index of the member closest to each centroid.
    pub representatives: Vec<usize>,
    pub iterations: usize,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

impl ClusteredLabelSpace {
    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![0; self.k];
        self.assignment.iter().for_each(|&c| s[c] += 1);
        s
    }

    /// Sum of squared distances from every point to its centroid.
    pub fn inertia(&self, vectors: &[Vec<f64>]) -> f64 {
        vectors
            .iter()
            .zip(&self.assignment)
            .map(|(v, &c)| sq_dist(v, &self.centroids[c]))
            .sum()
    }
}

fn kmeans_pp(vectors: &[Vec<f64>], k: usize, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    let n = vectors.len();
    let mut centroids = vec![vectors[rng.random_range(0..n)].clone()];
    let mut d2: Vec<f64> = vectors.iter().map(|v| sq_dist(v, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut r = rng.random::<f64>() * total;
            let mut idx = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                if r < d {
                    idx = i;
                    break;
                }
                r -= d;
            }
            idx
        } else {
            // all remaining points coincide with a centroid
            rng.random_range(0..n)
        };
        centroids.push(vectors[pick].clone());
        let c = centroids.last().unwrap();
        for (d, v) in d2.iter_mut().zip(vectors) {
            *d = d.min(sq_dist(v, c));
        }
    }
    centroids
}

/// Greedy capacity-constrained assignment: pairs are taken in ascending
/// (distance, point, centroid) order; each cluster holds `n / k` points and
/// at most `n % k` clusters may hold one more.
fn balanced_assign(vectors: &[Vec<f64>], centroids: &[Vec<f64>]) -> Vec<usize> {
    let (n, k) = (vectors.len(), centroids.len());
    let (base, extra) = (n / k, n % k);
    let mut pairs: Vec<(f64, usize, usize)> = Vec::with_capacity(n * k);
    for (i, v) in vectors.iter().enumerate() {
        for (c, m) in centroids.iter().enumerate() {
            pairs.push((sq_dist(v, m), i, c));
        }
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut assignment = vec![usize::MAX; n];
    let mut size = vec![0usize; k];
    let (mut big, mut done) = (0, 0);
    for (_, i, c) in pairs {
        if assignment[i] != usize::MAX {
            continue;
        }
        let fits = size[c] < base || (size[c] == base && big < extra);
        if !fits {
            continue;
        }
        if size[c] == base {
            big += 1;
        }
        size[c] += 1;
        assignment[i] = c;
        done += 1;
        if done == n {
            break;
        }
    }
    assignment
}

fn centroids_of(vectors: &[Vec<f64>], assignment: &[usize], k: usize) -> Vec<Vec<f64>> {
    let d = vectors[0].len();
    let mut sums = vec![vec![0.0; d]; k];
    let mut counts = vec![0usize; k];
    for (v, &c) in vectors.iter().zip(assignment) {
        sums[c].iter_mut().zip(v).for_each(|(s, x)| *s += x);
        counts[c] += 1;
    }
    for (s, &n) in sums.iter_mut().zip(&counts) {
        s.iter_mut().for_each(|x| *x /= n as f64);
    }
    sums
}

pub fn balanced_kmeans(vectors: &[Vec<f64>], k: usize, seed: u64, max_iter: usize) -> Result<ClusteredLabelSpace> {
    let n = vectors.len();
    if k == 0 || k > n {
        return Err(invalid(format!("k must be in 1..={n}, got {k}")));
    }
    let d = vectors[0].len();
    if vectors.iter().any(|v| v.len() != d || v.iter().any(|x| !x.is_finite())) {
        return Err(invalid("vectors must share one dimension and be finite"));
    }
    let mut rng = substream(seed, "kmeans", 0);
    let mut centroids = kmeans_pp(vectors, k, &mut rng);
    let mut assignment = balanced_assign(vectors, &centroids);
    centroids = centroids_of(vectors, &assignment, k);
    let mut iterations = 1;
    while iterations < max_iter.max(1) {
        let next = balanced_assign(vectors, &centroids);
        iterations += 1;
        if next == assignment {
            break;
        }
        assignment = next;
        centroids = centroids_of(vectors, &assignment, k);
    }
    let mut representatives = vec![usize::MAX; k];
    for (i, (v, &c)) in vectors.iter().zip(&assignment).enumerate() {
        let r = representatives[c];
        if r == usize::MAX || sq_dist(v, &centroids[c]) < sq_dist(&vectors[r], &centroids[c]) {
            representatives[c] = i;
        }
    }
    Ok(ClusteredLabelSpace {
        k,
        assignment,
        centroids,
        representatives,
        iterations,
    })
}

/// Clustering of a label bank with the resulting class names and vectors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterMap {
    pub k: usize,
    /// raw label id -> cluster id
    pub assignment: BTreeMap<u32, u32>,
    pub cluster_names: Vec<String>,
    pub centroids: Vec<Vec<f64>>,
    /// raw label id of each cluster's representative
    pub representatives: Vec<u32>,
}

pub fn cluster_bank(bank: &LabelBank, k: usize, seed: u64, max_iter: usize) -> Result<ClusterMap> {
    let ids: Vec<u32> = bank.ids().collect();
    let vectors: Vec<Vec<f64>> = bank.entries().map(|(_, e)| e.vector.clone()).collect();
    let c = balanced_kmeans(&vectors, k, seed, max_iter)?;
    let representatives: Vec<u32> = c.representatives.iter().map(|&i| ids[i]).collect();
    Ok(ClusterMap {
        k,
        assignment: ids.iter().zip(&c.assignment).map(|(&id, &a)| (id, a as u32)).collect(),
        cluster_names: representatives
            .iter()
            .map(|&id| bank.get(id).map(|e| e.name.clone()).unwrap_or_default())
            .collect(),
        centroids: c.centroids,
        representatives,
    })
}

impl ClusterMap {
    /// Class bank over cluster ids, using each representative's vector.
    pub fn class_bank(&self, raw: &LabelBank) -> Result<LabelBank> {
        let entries = self
            .representatives
            .iter()
            .enumerate()
            .map(|(c, &id)| Ok((c as u32, self.cluster_names[c].clone(), raw.vector(id)?.to_vec())))
            .collect::<Result<Vec<_>>>()?;
        LabelBank::new(entries, std::iter::empty(), std::iter::empty())
    }

    /// Cluster ids of a raw label set, deduplicated and sorted.
    pub fn map_labels(&self, raw: &[u32]) -> Result<Vec<u32>> {
        let set: BTreeSet<u32> = raw
            .iter()
            .map(|id| {
                self.assignment
                    .get(id)
                    .copied()
                    .ok_or_else(|| invalid(format!("label {id} is not in the cluster map")))
            })
            .collect::<Result<_>>()?;
        Ok(set.into_iter().collect())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stratum {
    Many,
    Medium,
    Few,
}

/// Clusters ordered by descending count (ties by ascending id): the first
/// ceil(10%) are many-shot, the next ceil(30%) medium-shot, the rest few-shot.
pub fn stratify_frequency(counts: &BTreeMap<u32, usize>) -> BTreeMap<u32, Stratum> {
    let k = counts.len();
    let many = (k + 9) / 10;
    let medium = (3 * k + 9) / 10;
    let mut order: Vec<(u32, usize)> = counts.iter().map(|(&c, &n)| (c, n)).collect();
    order.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    order
        .into_iter()
        .enumerate()
        .map(|(rank, (c, _))| {
            let s = if rank < many {
                Stratum::Many
            } else if rank < many + medium {
                Stratum::Medium
            } else {
                Stratum::Few
            };
            (c, s)
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_ids: BTreeSet<String>,
    pub test_ids: BTreeSet<String>,
    pub strata: BTreeMap<u32, Stratum>,
}

/// Lowest cluster id of a label set.
pub fn primary_class(labels: &[u32]) -> Option<u32> {
    labels.iter().copied().min()
}

/// Per primary class, a seeded shuffle followed by `floor(frac * n)` train
/// samples (at least one). Strata come from the resulting train counts.
pub fn stratified_split(samples: &[(String, Vec<u32>)], frac: f64, seed: u64) -> Result<SplitSpec> {
    if samples.is_empty() {
        return Err(invalid("cannot split an empty corpus"));
    }
    if !(0.0..=1.0).contains(&frac) {
        return Err(Error::Config(format!("train fraction {frac} outside [0, 1]")));
    }
    let mut groups: BTreeMap<u32, Vec<&str>> = BTreeMap::new();
    let mut seen = BTreeSet::new();
    for (id, labels) in samples {
        let c = primary_class(labels).ok_or_else(|| invalid(format!("sample `{id}` has no labels")))?;
        if !seen.insert(id.as_str()) {
            return Err(invalid(format!("duplicate sample id `{id}`")));
        }
        groups.entry(c).or_default().push(id);
    }
    let mut spec = SplitSpec {
        train_ids: BTreeSet::new(),
        test_ids: BTreeSet::new(),
        strata: BTreeMap::new(),
    };
    let mut counts = BTreeMap::new();
    for (c, mut ids) in groups {
        ids.shuffle(&mut substream(seed, "split", u64::from(c)));
        let n_train = ((frac * ids.len() as f64 + 1e-9).floor() as usize).clamp(1, ids.len());
        counts.insert(c, n_train);
        spec.train_ids.extend(ids[..n_train].iter().map(|s| s.to_string()));
        spec.test_ids.extend(ids[n_train..].iter().map(|s| s.to_string()));
    }
    spec.strata = stratify_frequency(&counts);
    Ok(spec)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn corners() -> Vec<Vec<f64>> {
        vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0]]
    }

    #[test]
    fn k_equals_n_is_identity() {
        let v: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64, (i * i) as f64]).collect();
        let c = balanced_kmeans(&v, 6, 1, 10).unwrap();
        assert_eq!(c.sizes(), vec![1; 6]);
        assert_eq!(c.inertia(&v), 0.0);
    }

    #[test]
    fn k_one_centroid_is_mean() {
        let v = corners();
        let c = balanced_kmeans(&v, 1, 0, 10).unwrap();
        assert_eq!(c.centroids[0], vec![0.5, 0.5]);
    }

    #[test]
    fn square_corners_match_brute_force() {
        let v = corners();
        // the three balanced 2-partitions of four points
        let partitions = [[0, 0, 1, 1], [0, 1, 0, 1], [0, 1, 1, 0]];
        let oracle = partitions
            .iter()
            .map(|p| {
                let a = centroids_of(&v, p, 2);
                v.iter().zip(p).map(|(x, &c)| sq_dist(x, &a[c])).sum::<f64>()
            })
            .fold(f64::INFINITY, f64::min);
        for seed in 0..20 {
            let c = balanced_kmeans(&v, 2, seed, 20).unwrap();
            assert_eq!(c.sizes(), vec![2, 2]);
            assert!((c.inertia(&v) - oracle).abs() < 1e-12, "seed {seed}");
        }
    }

    #[test]
    fn rejects_bad_k() {
        assert!(balanced_kmeans(&corners(), 0, 0, 5).is_err());
        assert!(balanced_kmeans(&corners(), 5, 0, 5).is_err());
    }

    #[test]
    fn strata_examples() {
        let uniform: BTreeMap<u32, usize> = (0..400).map(|c| (c, 7)).collect();
        let s = stratify_frequency(&uniform);
        let count = |x| s.values().filter(|&&v| v == x).count();
        assert_eq!((count(Stratum::Many), count(Stratum::Medium), count(Stratum::Few)), (40, 120, 240));
        // ties resolve by id
        assert_eq!(s[&0], Stratum::Many);
        assert_eq!(s[&39], Stratum::Many);
        assert_eq!(s[&40], Stratum::Medium);

        let distinct: BTreeMap<u32, usize> = (0..10).map(|c| (c, 100 - c as usize)).collect();
        let s = stratify_frequency(&distinct);
        assert_eq!(s[&0], Stratum::Many);
        assert!((1..4).all(|c| s[&c] == Stratum::Medium));
        assert!((4..10).all(|c| s[&c] == Stratum::Few));
    }

    #[test]
    fn split_arithmetic() {
        let mut samples = Vec::new();
        for i in 0..10 {
            samples.push((format!("a{i}"), vec![0]));
        }
        for i in 0..20 {
            samples.push((format!("b{i}"), vec![3, 1]));
        }
        samples.push(("solo".to_string(), vec![9]));
        let s = stratified_split(&samples, 0.7, 4).unwrap();
        let in_train = |p: &str| s.train_ids.iter().filter(|id| id.starts_with(p)).count();
        assert_eq!(in_train("a"), 7);
        assert_eq!(in_train("b"), 14);
        assert!(s.train_ids.contains("solo"));
        assert!(s.train_ids.is_disjoint(&s.test_ids));
        assert_eq!(s.train_ids.len() + s.test_ids.len(), samples.len());
        assert_eq!(s, stratified_split(&samples, 0.7, 4).unwrap());
        assert!(stratified_split(&[], 0.7, 0).is_err());
    }
}

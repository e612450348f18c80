//! Builds a label bank, groups labels with balanced k-means and produces a
//! stratified train/test split with long-tail strata.

use std::collections::BTreeMap;

use uniskel::labelspace::{cluster_bank, stratified_split, Stratum};
use uniskel::textbank::synth_bank;

fn main() -> uniskel::Result<()> {
    let names: Vec<String> = (0..24).map(|i| format!("action {i}")).collect();
    let bank = synth_bank(&names, 32, 1)?;
    let clusters = cluster_bank(&bank, 6, 1, 100)?;
    for (c, name) in clusters.cluster_names.iter().enumerate() {
        let members: Vec<u32> = clusters.assignment.iter().filter(|(_, &a)| a == c as u32).map(|(&id, _)| id).collect();
        println!("cluster {c} ({name}): labels {members:?}");
    }

    // a long-tailed sample list over the clusters
    let counts = [120, 60, 30, 20, 10, 5];
    let mut samples = Vec::new();
    for (c, &n) in counts.iter().enumerate() {
        samples.extend((0..n).map(|i| (format!("c{c}-{i}"), vec![c as u32])));
    }
    let split = stratified_split(&samples, 0.7, 1)?;
    println!("train {} / test {}", split.train_ids.len(), split.test_ids.len());
    let mut by_stratum: BTreeMap<Stratum, Vec<u32>> = BTreeMap::new();
    for (c, s) in &split.strata {
        by_stratum.entry(*s).or_default().push(*c);
    }
    println!("strata: {by_stratum:?}");
    Ok(())
}

//! Maps sequences from different skeleton formats into one unified joint
//! space and derives the joint, bone and motion modalities.

use uniskel::motiongen::{generate, GenSpec};
use uniskel::skeleton::{build_unified_space, default_adjacency, derive_modalities, unify, PaddingStrategy, SkeletonFormat};

fn main() -> uniskel::Result<()> {
    let ids = SkeletonFormat::preset_ids();
    let formats: Vec<SkeletonFormat> = ids.iter().map(|id| SkeletonFormat::preset(id).unwrap()).collect();
    let space = build_unified_space(&formats)?;
    println!("unified space: {} joint slots, {} members", space.k_unified, space.m_unified);

    let corpus = generate(&GenSpec::toy(1, &ids, 16, 0.0, 3), None)?;
    for (format, seqs) in &corpus.by_format {
        let seq = &seqs[0];
        for (name, strategy) in [("zero", PaddingStrategy::Zero), ("interpolation", PaddingStrategy::Interpolation(default_adjacency()))] {
            let u = unify(seq, &space, &strategy)?;
            let m = derive_modalities(&u, &space)?;
            let observed = u.joint_mask.iter().filter(|&&b| b).count();
            let filled = m.joint.iter().filter(|v| **v != 0.0).count();
            println!("{format:>10} {name:>13}: {observed}/{} slots observed, {filled} non-zero joint coordinates", u.joint_mask.len());
        }
    }
    Ok(())
}

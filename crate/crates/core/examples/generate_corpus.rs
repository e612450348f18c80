//! Renders a small procedural motion corpus into several skeleton formats
//! and writes it as JSON Lines.
//!
//! `cargo run --example generate_corpus -- [output_dir]`

use uniskel::motiongen::{generate, GenSpec};

fn main() -> uniskel::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "target/example-corpus".into());
    let mut spec = GenSpec::toy(20, &["kinect-v2", "pose-2d", "smpl-22"], 32, 0.02, 7);
    spec.multi_label_fraction = 0.1;
    let corpus = generate(&spec, None)?;
    for (format, seqs) in &corpus.by_format {
        let multi = seqs.iter().filter(|s| s.label_ids.len() > 1).count();
        println!("{format:>10}: {} sequences, {multi} with two labels", seqs.len());
    }
    println!("classes: {}", corpus.manifest.class_names.join(", "));
    corpus.write(&out)?;
    println!("wrote {out}");
    Ok(())
}

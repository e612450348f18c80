//! Trains the motion encoder against a synthetic label bank on a toy
//! two-format corpus and reports held-out accuracy.

use std::collections::BTreeMap;

use uniskel::encoder::{EncoderConfig, EncoderSettings};
use uniskel::harness::{evaluate_items, fit, prepare, validation_split, OptimConfig, TrainOptions};
use uniskel::labelspace::stratified_split;
use uniskel::loss::LossWeights;
use uniskel::motiongen::{generate, GenSpec};
use uniskel::skeleton::{build_unified_space, PaddingStrategy, SkeletonFormat};
use uniskel::textbank::synth_bank;

fn main() -> uniskel::Result<()> {
    let formats = ["kinect-v2", "pose-2d"];
    let spec = GenSpec::toy(40, &formats, 24, 0.02, 0);
    let corpus = generate(&spec, None)?;
    let space = build_unified_space(&formats.map(|f| SkeletonFormat::preset(f).unwrap()))?;
    let settings = EncoderSettings {
        d_h: 16,
        layers: 1,
        heads: 2,
        ffn_mult: 2,
        t_max: 12,
        ..Default::default()
    };
    let enc = EncoderConfig::for_space(&space, &settings, 32, false);
    let bank = synth_bank(&spec.class_names(), 32, 0)?;
    let seqs: Vec<_> = corpus.all().cloned().collect();
    let items = prepare(&seqs, &space, &PaddingStrategy::Zero, &enc, &|l| Ok(l.to_vec()))?;

    let mut ids = BTreeMap::new();
    for it in &items {
        ids.entry(it.sample_id.clone()).or_insert_with(|| it.labels.clone());
    }
    let split = stratified_split(&ids.into_iter().collect::<Vec<_>>(), 0.7, 0)?;
    let (train, test): (Vec<_>, Vec<_>) = items.into_iter().partition(|it| split.train_ids.contains(&it.sample_id));
    let (train, val) = validation_split(train, 0.1, 0)?;

    let opts = TrainOptions {
        optim: OptimConfig {
            lr_peak: 2e-3,
            warmup_epochs: 1,
            total_epochs: 8,
            batch_size: 32,
            ..Default::default()
        },
        loss: LossWeights::default(),
        seed: 0,
        mask_false_negatives: false,
        eval_every: 1,
    };
    let (state, logs) = fit(&enc, &bank, &train, &val, &opts)?;
    for l in &logs {
        println!("epoch {:>2} lr {:.2e} loss {:.4} val {:?}", l.epoch, l.lr, l.loss.total, l.val_top1);
    }
    let report = evaluate_items(&state.best, &enc, &bank, &test, &split.strata, 0.0)?;
    println!("{report}");
    Ok(())
}

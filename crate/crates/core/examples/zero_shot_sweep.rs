//! Holds two classes out of training and sweeps the calibration offset that
//! trades seen-class accuracy against unseen-class accuracy.

use uniskel::encoder::{EncoderConfig, EncoderSettings};
use uniskel::eval::{best_gamma, gamma_grid, sweep_gamma};
use uniskel::harness::{fit, item_scores, prepare, OptimConfig, TrainOptions};
use uniskel::loss::LossWeights;
use uniskel::motiongen::{generate, GenSpec};
use uniskel::skeleton::{build_unified_space, PaddingStrategy, SkeletonFormat};
use uniskel::textbank::synth_bank;

fn main() -> uniskel::Result<()> {
    let spec = GenSpec::toy(30, &["kinect-v2"], 24, 0.02, 2);
    let corpus = generate(&spec, None)?;
    let space = build_unified_space(&[SkeletonFormat::preset("kinect-v2").unwrap()])?;
    let settings = EncoderSettings {
        d_h: 16,
        layers: 1,
        heads: 2,
        ffn_mult: 2,
        t_max: 12,
        ..Default::default()
    };
    let enc = EncoderConfig::for_space(&space, &settings, 32, false);
    let bank = synth_bank(&spec.class_names(), 32, 2)?.with_unseen([6, 7])?;
    let seqs: Vec<_> = corpus.all().cloned().collect();
    let items = prepare(&seqs, &space, &PaddingStrategy::Zero, &enc, &|l| Ok(l.to_vec()))?;
    let (seen, rest): (Vec<_>, Vec<_>) = items.into_iter().partition(|it| it.labels.iter().all(|&l| bank.is_seen(l)));
    let (train, mut test): (Vec<_>, Vec<_>) = seen.into_iter().enumerate().partition(|(i, _)| i % 3 != 0);
    let train: Vec<_> = train.into_iter().map(|(_, it)| it).collect();
    test.extend(rest.into_iter().enumerate());
    let test: Vec<_> = test.into_iter().map(|(_, it)| it).collect();

    let opts = TrainOptions {
        optim: OptimConfig {
            lr_peak: 2e-3,
            warmup_epochs: 1,
            total_epochs: 8,
            batch_size: 32,
            ..Default::default()
        },
        loss: LossWeights::default(),
        seed: 2,
        mask_false_negatives: false,
        eval_every: 1,
    };
    let (state, _) = fit(&enc, &bank, &train, &[], &opts)?;
    let scores = item_scores(&state.params, &enc, &bank, &test)?;
    let labels: Vec<Vec<u32>> = test.iter().map(|it| it.labels.clone()).collect();
    let rows = sweep_gamma(&scores, &labels, &bank, &gamma_grid(0.0, 0.5, 0.1)?)?;
    println!("gamma      S      U      H  seen-predicted");
    for r in &rows {
        println!("{:>5.1} {:>6.3} {:>6.3} {:>6.3} {:>15}", r.gamma, r.s, r.u, r.h, r.seen_predicted);
    }
    if let Some(b) = best_gamma(&rows) {
        println!("best gamma {:.1}", b.gamma);
    }
    Ok(())
}

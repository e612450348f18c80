//! File-driven workflow: writes a corpus and label bank, trains from a JSON
//! run configuration, then evaluates the best checkpoint.

use uniskel::harness::{run_eval, run_train, RunConfig, BEST_FILE};
use uniskel::motiongen::{generate, GenSpec};
use uniskel::textbank::synth_bank;

fn main() -> uniskel::Result<()> {
    let dir = std::env::temp_dir().join("uniskel-config-run");
    let _ = std::fs::remove_dir_all(&dir);
    let spec = GenSpec::toy(30, &["kinect-v2", "pose-2d"], 16, 0.02, 5);
    generate(&spec, None)?.write(dir.join("corpus"))?;
    synth_bank(&spec.class_names(), 16, 5)?.save(dir.join("labels.json"))?;
    std::fs::write(
        dir.join("run.json"),
        r#"{
  "corpus": ["corpus/kinect-v2.jsonl", "corpus/pose-2d.jsonl"],
  "bank": "labels.json",
  "encoder": {"d_h": 16, "layers": 1, "heads": 2, "ffn_mult": 2, "t_max": 12},
  "optimizer": {"lr_peak": 2e-3, "total_epochs": 12, "warmup_epochs": 1, "batch_size": 32},
  "output_dir": "run"
}"#,
    )?;
    let cfg = RunConfig::load(dir.join("run.json"))?;
    let summary = run_train(&cfg, false)?;
    println!("trained {} epochs on {} samples, best validation {:?}", summary.epochs, summary.train_samples, summary.best_val);
    let report = run_eval(&cfg, &[cfg.output_dir.clone()], BEST_FILE)?;
    println!("{report}");
    println!("artifacts in {}", dir.display());
    Ok(())
}

mod common;

use std::process::Command;

use common::{small_settings, task, Task};
use numgraph::{ParamStore, Tensor};
use uniskel::harness::{evaluate_items, fit, train_loop, OptimConfig, TrainOptions, TrainState};
use uniskel::loss::LossWeights;
use uniskel::motiongen::GenSpec;
use uniskel::skeleton::PaddingStrategy;
use uniskel::Error;

fn small_task(per_class: usize, classes: usize) -> Task {
    let mut spec = GenSpec::toy(per_class, &["kinect-v2", "pose-2d"], 8, 0.02, 5);
    spec.classes.truncate(classes);
    spec.samples_per_class.truncate(classes);
    task(&spec, &small_settings(8, 1, 8), &PaddingStrategy::Zero, 16, &["kinect-v2", "pose-2d"])
}

fn opts(epochs: usize, batch: usize, loss: LossWeights) -> TrainOptions {
    TrainOptions {
        optim: OptimConfig {
            lr_peak: 2e-3,
            warmup_epochs: 1,
            total_epochs: epochs,
            batch_size: batch,
            ..Default::default()
        },
        loss,
        seed: 9,
        mask_false_negatives: false,
        eval_every: 1,
    }
}

#[test]
fn smoke_run_lowers_the_loss() {
    let t = small_task(4, 1);
    let (_, logs) = fit(&t.encoder, &t.bank, &t.items, &[], &opts(5, 2, LossWeights::default())).unwrap();
    assert_eq!(logs.len(), 5);
    assert!(logs[4].loss.total < logs[0].loss.total, "{:?}", logs.iter().map(|l| l.loss.total).collect::<Vec<_>>());
}

#[test]
fn identical_seeds_give_identical_checkpoints() {
    let t = small_task(3, 3);
    let o = opts(3, 4, LossWeights::default());
    let (a, la) = fit(&t.encoder, &t.bank, &t.items, &t.items[..4], &o).unwrap();
    let (b, lb) = fit(&t.encoder, &t.bank, &t.items, &t.items[..4], &o).unwrap();
    assert_eq!(a.params.to_bytes(), b.params.to_bytes());
    assert_eq!(a.best.to_bytes(), b.best.to_bytes());
    assert_eq!(la, lb);
}

#[test]
fn resumed_run_matches_uninterrupted_run() {
    let t = small_task(3, 3);
    let o = opts(4, 4, LossWeights::default());
    let val = &t.items[..6];
    let (full, full_logs) = fit(&t.encoder, &t.bank, &t.items, val, &o).unwrap();

    let mut state = TrainState::new(&t.encoder, &o).unwrap();
    let mut saved = None;
    let mut logs = Vec::new();
    let crash = train_loop(&t.encoder, &t.bank, &t.items, val, &o, &mut state, |l, st| {
        logs.push(l.clone());
        if st.epoch == 2 {
            saved = Some(st.to_store()?.to_bytes());
            return Err(Error::Invalid("simulated crash".into()));
        }
        Ok(())
    });
    assert!(crash.is_err());
    let store = ParamStore::read_from(saved.unwrap().as_slice()).unwrap();
    let mut resumed = TrainState::from_store(&store, &o).unwrap();
    train_loop(&t.encoder, &t.bank, &t.items, val, &o, &mut resumed, |l, _| {
        logs.push(l.clone());
        Ok(())
    })
    .unwrap();
    assert_eq!(resumed.params.to_bytes(), full.params.to_bytes());
    assert_eq!(resumed.best.to_bytes(), full.best.to_bytes());
    assert_eq!(logs, full_logs);
}

#[test]
fn loss_weights_show_up_in_the_metrics() {
    let t = small_task(3, 3);
    let zero = LossWeights::instance_only(0.4);
    let (_, a) = fit(&t.encoder, &t.bank, &t.items, &[], &opts(2, 4, zero)).unwrap();
    let (_, b) = fit(&t.encoder, &t.bank, &t.items, &[], &opts(2, 4, LossWeights::default())).unwrap();
    assert_ne!(a, b);
    for l in a.iter().chain(&b) {
        let row = serde_json::to_value(l).unwrap();
        for key in ["epoch", "step", "lr", "L_total", "L_instance", "L_ts", "L_consis", "L_part"] {
            assert!(row.get(key).is_some(), "{key} missing from {row}");
        }
        assert!(l.loss.ts > 0.0 && l.loss.consis > 0.0 && l.loss.part > 0.0);
    }
    // with every lambda at zero the total is the instance term
    assert!(a.iter().all(|l| l.loss.total == l.loss.instance));
}

#[test]
fn checkpoint_round_trip_preserves_evaluation() {
    let t = small_task(3, 3);
    let (state, _) = fit(&t.encoder, &t.bank, &t.items, &[], &opts(2, 4, LossWeights::default())).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("final.ckpt");
    state.params.save(&p).unwrap();
    let back = ParamStore::load(&p).unwrap();
    let strata = Default::default();
    let a = evaluate_items(&state.params, &t.encoder, &t.bank, &t.items, &strata, 0.0).unwrap();
    let b = evaluate_items(&back, &t.encoder, &t.bank, &t.items, &strata, 0.0).unwrap();
    assert_eq!(a, b);
}

#[test]
fn non_finite_loss_aborts_with_position() {
    let t = small_task(2, 2);
    let o = opts(2, 4, LossWeights::default());
    let mut state = TrainState::new(&t.encoder, &o).unwrap();
    let bias = state.params.get_mut("proj.global.l2.b").unwrap();
    *bias = Tensor::full(bias.shape(), f64::NAN);
    let err = train_loop(&t.encoder, &t.bank, &t.items, &[], &o, &mut state, |_, _| Ok(())).unwrap_err();
    match err {
        Error::NonFiniteLoss { epoch, step, .. } => assert_eq!((epoch, step), (0, 0)),
        other => panic!("unexpected error {other}"),
    }
}

fn cli(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_uniskel")).args(args).output().unwrap()
}

#[test]
fn cli_exit_codes() {
    assert_eq!(cli(&["train", "--config", "/definitely/missing.json"]).status.code(), Some(2));
    assert_eq!(cli(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(cli(&["train", "--bogus-flag"]).status.code(), Some(2));
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"corpus": [], "bank": "b.json", "output_dir": "out"}"#).unwrap();
    assert_eq!(cli(&["train", "--config", bad.to_str().unwrap()]).status.code(), Some(2));
    let out = cli(&["gradcheck"]);
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stdout).contains("max relative error"));
}

#[test]
fn cli_pipeline_produces_reports_and_sweeps() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let write = |name: &str, body: &str| std::fs::write(d.join(name), body).unwrap();
    write(
        "gen.json",
        r#"{"classes": [{"name": "wave", "primitive": "wave"}, {"name": "squat", "primitive": "squat"},
                        {"name": "jump", "primitive": "jump"}, {"name": "bow", "primitive": "bow"}],
            "formats": ["kinect-v2"], "samples_per_class": [6, 6, 6, 6], "frames": 8, "noise_sigma": 0.02,
            "seed": 1, "output_dir": "corpus"}"#,
    );
    write("bank.json", r#"{"manifest": "corpus/manifest.json", "dim": 16, "output": "labels.json"}"#);
    write("cluster.json", r#"{"bank": "labels.json", "k": 4, "output": "clusters.json"}"#);
    write("split.json", r#"{"samples": "corpus/samples.jsonl", "cluster_map": "clusters.json", "output": "split_out.json"}"#);
    write(
        "run.json",
        r#"{"corpus": ["corpus/kinect-v2.jsonl"], "bank": "labels.json", "cluster_map": "clusters.json",
            "split": "split_out.json", "unseen_classes": [3],
            "encoder": {"d_h": 8, "layers": 1, "heads": 2, "t_max": 8}, "val_fraction": 0.0,
            "optimizer": {"total_epochs": 2, "warmup_epochs": 1, "batch_size": 4}, "output_dir": "run"}"#,
    );
    let c = |name: &str| d.join(name).to_str().unwrap().to_string();
    for (cmd, cfg) in [("gen", "gen.json"), ("embed-synth", "bank.json"), ("cluster", "cluster.json"), ("split", "split.json"), ("train", "run.json")] {
        let out = cli(&[cmd, "--config", &c(cfg)]);
        assert_eq!(out.status.code(), Some(0), "{cmd}: {}", String::from_utf8_lossy(&out.stderr));
    }
    let metrics = std::fs::read_to_string(d.join("run/metrics.jsonl")).unwrap();
    assert_eq!(metrics.lines().count(), 2);
    for f in ["best.ckpt", "final.ckpt", "state.ckpt", "encoder.json"] {
        assert!(d.join("run").join(f).exists(), "{f}");
    }
    let csv = c("classes.csv");
    let out = cli(&["eval", "--config", &c("run.json"), "--csv", &csv]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(report["harmonic_h"].is_number());
    assert!(std::fs::read_to_string(&csv).unwrap().starts_with("class_id,name,correct,total,accuracy"));
    let run_dir = c("run");
    let out = cli(&["eval", "--config", &c("run.json"), "--ensemble", &format!("{run_dir},{run_dir}")]);
    let ens: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(ens["overall"], report["overall"]);
    let out = cli(&["sweep-gamma", "--config", &c("run.json"), "--from", "0", "--to", "0.5", "--step", "0.1"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let rows: Vec<serde_json::Value> = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(rows.len(), 6);
    for r in &rows {
        for k in ["gamma", "S", "U", "H"] {
            assert!(r[k].is_number());
        }
    }
    // resuming a finished run is a no-op that keeps the checkpoint
    let before = std::fs::read(d.join("run/final.ckpt")).unwrap();
    assert_eq!(cli(&["train", "--config", &c("run.json"), "--resume"]).status.code(), Some(0));
    assert_eq!(std::fs::read(d.join("run/final.ckpt")).unwrap(), before);
}

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use uniskel::eval::{best_gamma, gamma_grid, sweep_gamma};
use uniskel::harness::{ensemble_scores, gradcheck_model, run_eval, run_train, GradCheckConfig, RunConfig, BEST_FILE};
use uniskel::labelspace::{cluster_bank, stratified_split, ClusterMap};
use uniskel::motiongen::{generate, GenSpec};
use uniskel::skeleton::load_registry;
use uniskel::textbank::{load_bank, synth_bank};
use uniskel::{Error, Result};

#[derive(Parser)]
#[command(name = "uniskel", version, about = "Heterogeneous-skeleton action recognition toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic multi-format motion corpus.
    Gen(Common),
    /// Cluster a label bank into k balanced classes.
    Cluster(Common),
    /// Stratified train/test split of a sample manifest.
    Split(Common),
    /// Build a deterministic synthetic label bank from names.
    EmbedSynth(Common),
    /// Train an encoder.
    Train {
        #[command(flatten)]
        common: Common,
        /// Continue from the run's saved state.
        #[arg(long)]
        resume: bool,
    },
    /// Evaluate trained runs on the test split.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Checkpoint file name inside each run directory.
        #[arg(long, default_value = BEST_FILE)]
        checkpoint: String,
        /// Average scores over these run directories instead of the configured one.
        #[arg(long, value_delimiter = ',')]
        ensemble: Vec<PathBuf>,
        /// Calibration override.
        #[arg(long)]
        gamma: Option<f64>,
        /// Write per-class accuracy as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Finite-difference check of the model gradients.
    Gradcheck {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Seen/unseen accuracy over a grid of calibration values.
    SweepGamma {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 0.0)]
        from: f64,
        #[arg(long, default_value_t = 0.5)]
        to: f64,
        #[arg(long, default_value_t = 0.1)]
        step: f64,
        #[arg(long, default_value = BEST_FILE)]
        checkpoint: String,
    },
}

#[derive(clap::Args)]
struct Common {
    /// JSON configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Deserialize)]
struct GenJob {
    #[serde(flatten)]
    spec: GenSpec,
    output_dir: PathBuf,
    #[serde(default)]
    registry: Option<PathBuf>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct BankJob {
    /// Label names; alternatively read from a generated corpus manifest.
    #[serde(default)]
    names: Vec<String>,
    #[serde(default)]
    manifest: Option<PathBuf>,
    #[serde(default = "default_dim")]
    dim: usize,
    #[serde(default)]
    seed: u64,
    #[serde(default)]
    unseen: Vec<u32>,
    output: PathBuf,
}

fn default_dim() -> usize {
    64
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ClusterJob {
    bank: PathBuf,
    k: usize,
    #[serde(default)]
    seed: u64,
    #[serde(default = "default_iter")]
    max_iter: usize,
    output: PathBuf,
}

fn default_iter() -> usize {
    100
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SplitJob {
    /// JSONL of {"sample_id", "label_ids"}; corpus files qualify.
    samples: PathBuf,
    #[serde(default)]
    cluster_map: Option<PathBuf>,
    #[serde(default = "default_frac")]
    train_fraction: f64,
    #[serde(default)]
    seed: u64,
    output: PathBuf,
}

fn default_frac() -> f64 {
    0.7
}

#[derive(Deserialize)]
struct SampleRow {
    sample_id: String,
    label_ids: Vec<u32>,
}

#[derive(Serialize)]
struct SampleOut<'a> {
    sample_id: &'a str,
    label_ids: &'a [u32],
}

fn read_config<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

fn base_of(path: &Path) -> &Path {
    path.parent().unwrap_or(Path::new("."))
}

fn run_config(c: &Common) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(&c.config)?;
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn gen(c: &Common) -> Result<()> {
    let mut job: GenJob = read_config(&c.config)?;
    let base = base_of(&c.config);
    resolve(base, &mut job.output_dir);
    if let Some(s) = c.seed {
        job.spec.seed = s;
    }
    let formats = match &mut job.registry {
        Some(p) => {
            resolve(base, p);
            Some(load_registry(&*p)?.formats().cloned().collect::<Vec<_>>())
        }
        None => None,
    };
    let corpus = generate(&job.spec, formats.as_deref())?;
    corpus.write(&job.output_dir)?;
    let first = corpus.by_format.values().next().map(Vec::as_slice).unwrap_or_default();
    let mut lines = String::new();
    for s in first {
        let id = s.sample_id.as_deref().unwrap_or_default();
        lines += &serde_json::to_string(&SampleOut { sample_id: id, label_ids: &s.label_ids })?;
        lines.push('\n');
    }
    std::fs::write(job.output_dir.join("samples.jsonl"), lines)?;
    println!("{} samples x {} formats -> {}", first.len(), corpus.by_format.len(), job.output_dir.display());
    Ok(())
}

fn embed_synth(c: &Common) -> Result<()> {
    let mut job: BankJob = read_config(&c.config)?;
    let base = base_of(&c.config);
    resolve(base, &mut job.output);
    let mut names = job.names.clone();
    if let Some(m) = &mut job.manifest {
        resolve(base, m);
        let manifest: uniskel::motiongen::Manifest = serde_json::from_str(&std::fs::read_to_string(&*m)?)?;
        names.extend(manifest.class_names);
    }
    if names.is_empty() {
        return Err(Error::Config("no label names given".into()));
    }
    let bank = synth_bank(&names, job.dim, c.seed.unwrap_or(job.seed))?;
    let bank = if job.unseen.is_empty() { bank } else { bank.with_unseen(job.unseen.iter().copied())? };
    bank.save(&job.output)?;
    println!("{} labels, dim {} -> {}", bank.len(), bank.dim(), job.output.display());
    Ok(())
}

fn cluster(c: &Common) -> Result<()> {
    let mut job: ClusterJob = read_config(&c.config)?;
    let base = base_of(&c.config);
    resolve(base, &mut job.bank);
    resolve(base, &mut job.output);
    let map = cluster_bank(&load_bank(&job.bank)?, job.k, c.seed.unwrap_or(job.seed), job.max_iter)?;
    std::fs::write(&job.output, serde_json::to_string_pretty(&map)?)?;
    println!("{} labels -> {} clusters -> {}", map.assignment.len(), map.k, job.output.display());
    Ok(())
}

fn split(c: &Common) -> Result<()> {
    let mut job: SplitJob = read_config(&c.config)?;
    let base = base_of(&c.config);
    resolve(base, &mut job.samples);
    resolve(base, &mut job.output);
    let map: Option<ClusterMap> = match &mut job.cluster_map {
        Some(p) => {
            resolve(base, p);
            Some(serde_json::from_str(&std::fs::read_to_string(&*p)?)?)
        }
        None => None,
    };
    let mut rows: BTreeMap<String, Vec<u32>> = BTreeMap::new();
    for (i, line) in std::fs::read_to_string(&job.samples)?.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let r: SampleRow = serde_json::from_str(line).map_err(|e| Error::Config(format!("{} line {}: {e}", job.samples.display(), i + 1)))?;
        let labels = match &map {
            Some(m) => m.map_labels(&r.label_ids)?,
            None => r.label_ids,
        };
        rows.entry(r.sample_id).or_insert(labels);
    }
    let samples: Vec<(String, Vec<u32>)> = rows.into_iter().collect();
    let spec = stratified_split(&samples, job.train_fraction, c.seed.unwrap_or(job.seed))?;
    std::fs::write(&job.output, serde_json::to_string_pretty(&spec)?)?;
    println!("{} train / {} test -> {}", spec.train_ids.len(), spec.test_ids.len(), job.output.display());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Gen(c) => gen(&c),
        Command::EmbedSynth(c) => embed_synth(&c),
        Command::Cluster(c) => cluster(&c),
        Command::Split(c) => split(&c),
        Command::Train { common, resume } => {
            let cfg = run_config(&common)?;
            if cfg.optimizer.batch_size < 2 {
                eprintln!("warning: batch_size {} leaves no in-batch negatives", cfg.optimizer.batch_size);
            }
            let summary = run_train(&cfg, resume)?;
            println!("{}", serde_json::to_string_pretty(&summary)?);
            Ok(())
        }
        Command::Eval { common, checkpoint, ensemble, gamma, csv } => {
            let mut cfg = run_config(&common)?;
            if let Some(g) = gamma {
                cfg.gamma = g;
            }
            let runs = if ensemble.is_empty() { vec![cfg.output_dir.clone()] } else { ensemble };
            let report = run_eval(&cfg, &runs, &checkpoint)?;
            eprintln!("{report}");
            println!("{}", serde_json::to_string_pretty(&report)?);
            if let Some(p) = csv {
                let scored = ensemble_scores(&cfg, &runs[..1], &checkpoint)?;
                report.write_class_csv(p, &scored.bank)?;
            }
            Ok(())
        }
        Command::Gradcheck { config, seed } => {
            let mut gc: GradCheckConfig = match &config {
                Some(p) => read_config(p)?,
                None => GradCheckConfig::default(),
            };
            if let Some(s) = seed {
                gc.seed = s;
            }
            let r = gradcheck_model(&gc)?;
            println!("max relative error {:.3e} over {} entries (tol {:e})", r.max_rel_err, r.entries_checked, gc.tol);
            if r.passed() {
                Ok(())
            } else {
                let at = r.worst_param.as_deref().unwrap_or("?");
                Err(Error::Invalid(format!(
                    "gradient mismatch at {at}[{}]: analytic {:e}, numeric {:e}",
                    r.worst_index, r.analytic, r.numeric
                )))
            }
        }
        Command::SweepGamma { common, from, to, step, checkpoint } => {
            let cfg = run_config(&common)?;
            let grid = gamma_grid(from, to, step).map_err(|e| Error::Config(e.to_string()))?;
            let scored = ensemble_scores(&cfg, std::slice::from_ref(&cfg.output_dir), &checkpoint)?;
            let rows = sweep_gamma(&scored.scores, &scored.labels, &scored.bank, &grid)?;
            println!("{}", serde_json::to_string_pretty(&rows)?);
            if let Some(b) = best_gamma(&rows) {
                eprintln!("best gamma {:.3} (H = {:.4})", b.gamma, b.h);
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                Error::Config(_) => 2,
                _ => 1,
            })
        }
    }
}

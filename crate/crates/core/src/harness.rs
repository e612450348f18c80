//! Training and evaluation runs: configuration, learning-rate schedule, Adam,
//! the epoch loop with validation and checkpoints, and the file-level
//! pipeline used by the command-line tool.

use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::PI;
use std::io::Write;
use std::path::{Path, PathBuf};

use numgraph::{Graph, GraphError, ParamStore, Tensor};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::{embed_global, forward, init_params, Batch, EncoderConfig, EncoderInput, EncoderSettings};
use crate::error::{invalid, Error, Result};
use crate::eval::{evaluate_scores, predict, similarity, EvalReport, Restrict};
use crate::labelspace::{primary_class, stratified_split, ClusterMap, SplitSpec, Stratum};
use crate::loss::{total_loss, LossValues, LossWeights};
use crate::seed::substream;
use crate::skeleton::{
    build_unified_space, default_adjacency, derive_modalities, load_adjacency, load_registry, read_corpus, unify,
    PaddingStrategy, RawSequence, SkeletonFormat, UnifiedSpace,
};
use crate::textbank::{load_bank, LabelBank};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimConfig {
    pub lr_peak: f64,
    pub warmup_epochs: usize,
    pub total_epochs: usize,
    pub batch_size: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            lr_peak: 1e-3,
            warmup_epochs: 2,
            total_epochs: 30,
            batch_size: 64,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
        }
    }
}

impl OptimConfig {
    /// Full-scale settings: 400 epochs, batch 256, peak 1e-4 after 16
    /// warmup epochs.
    pub fn full_scale() -> Self {
        Self {
            lr_peak: 1e-4,
            warmup_epochs: 16,
            total_epochs: 400,
            batch_size: 256,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.total_epochs == 0 || self.warmup_epochs >= self.total_epochs {
            return Err(Error::Config(format!(
                "warmup_epochs {} must be below total_epochs {}",
                self.warmup_epochs, self.total_epochs
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.lr_peak > 0.0) || !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) || !(self.adam_eps > 0.0) {
            return Err(Error::Config("invalid optimizer hyperparameters".into()));
        }
        Ok(())
    }
}

/// Linear warmup from 0 to `lr_peak` over `warmup_epochs`, then cosine
/// annealing to 0 at `total_epochs`. `epoch` may be fractional.
pub fn lr_schedule(epoch: f64, cfg: &OptimConfig) -> f64 {
    let (w, total) = (cfg.warmup_epochs as f64, cfg.total_epochs as f64);
    let e = epoch.clamp(0.0, total);
    if w > 0.0 && e <= w {
        cfg.lr_peak * e / w
    } else {
        cfg.lr_peak * 0.5 * (1.0 + (PI * (e - w) / (total - w)).cos())
    }
}

/// Adam with bias correction; moment buffers are kept per parameter name.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    m: ParamStore,
    v: ParamStore,
}

impl Adam {
    pub fn new(cfg: &OptimConfig, params: &ParamStore) -> Result<Self> {
        let mut m = ParamStore::new();
        let mut v = ParamStore::new();
        for (name, p) in params.iter() {
            m.insert(name, Tensor::zeros(p.shape()))?;
            v.insert(name, Tensor::zeros(p.shape()))?;
        }
        Ok(Self {
            beta1: cfg.adam_beta1,
            beta2: cfg.adam_beta2,
            eps: cfg.adam_eps,
            t: 0,
            m,
            v,
        })
    }

    /// One update from the gradients recorded on `g`. Parameters that did
    /// not take part in the graph are left untouched.
    pub fn step(&mut self, params: &mut ParamStore, g: &Graph, lr: f64) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (name, p) in params.iter_mut() {
            let Some(grad) = g.param_grad(name) else { continue };
            let m = self.m.get_mut(name).expect("moment buffer").data_mut();
            for (mi, gi) in m.iter_mut().zip(grad.data()) {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
            }
            let v = self.v.get_mut(name).expect("moment buffer").data_mut();
            for (vi, gi) in v.iter_mut().zip(grad.data()) {
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
            }
            let (m, v) = (self.m.get(name).unwrap().data(), self.v.get(name).unwrap().data());
            for ((x, mi), vi) in p.data_mut().iter_mut().zip(m).zip(v) {
                *x -= lr * (mi / bc1) / ((vi / bc2).sqrt() + self.eps);
            }
        }
    }
}

/// A training/evaluation sample: encoder input plus class labels.
#[derive(Clone, Debug)]
pub struct Item {
    pub sample_id: String,
    pub format_id: String,
    pub labels: Vec<u32>,
    pub input: EncoderInput,
}

/// Unifies, resamples to `t_max` frames, derives modalities and builds
/// encoder inputs. `relabel` maps raw label sets to class ids.
pub fn prepare(
    seqs: &[RawSequence],
    space: &UnifiedSpace,
    strategy: &PaddingStrategy,
    cfg: &EncoderConfig,
    relabel: &dyn Fn(&[u32]) -> Result<Vec<u32>>,
) -> Result<Vec<Item>> {
    seqs.iter()
        .enumerate()
        .map(|(i, s)| {
            let u = unify(s, space, strategy)?;
            let u = if u.frames == cfg.t_max { u } else { u.resampled(cfg.t_max) };
            let m = derive_modalities(&u, space)?;
            Ok(Item {
                sample_id: s.sample_id.clone().unwrap_or_else(|| format!("{}:{i}", s.format_id)),
                format_id: s.format_id.clone(),
                labels: relabel(&s.label_ids)?,
                input: EncoderInput::new(&m, cfg)?,
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainOptions {
    pub optim: OptimConfig,
    pub loss: LossWeights,
    pub seed: u64,
    pub mask_false_negatives: bool,
    /// Validate every this many epochs (and after the last one).
    pub eval_every: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub step: u64,
    pub lr: f64,
    #[serde(flatten)]
    pub loss: LossValues,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub val_top1: Option<f64>,
}

/// Everything needed to continue a run exactly where it stopped.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub params: ParamStore,
    pub adam: Adam,
    /// Epochs completed.
    pub epoch: usize,
    pub step: u64,
    pub best_val: Option<f64>,
    pub best: ParamStore,
}

impl TrainState {
    pub fn new(enc: &EncoderConfig, opts: &TrainOptions) -> Result<Self> {
        let params = init_params(enc, opts.seed)?;
        Ok(Self {
            adam: Adam::new(&opts.optim, &params)?,
            best: params.clone(),
            params,
            epoch: 0,
            step: 0,
            best_val: None,
        })
    }

    /// Packs the state into one parameter store for checkpointing.
    pub fn to_store(&self) -> Result<ParamStore> {
        let mut s = ParamStore::new();
        for (prefix, store) in [("param", &self.params), ("adam.m", &self.adam.m), ("adam.v", &self.adam.v), ("best", &self.best)] {
            for (n, t) in store.iter() {
                s.insert(format!("{prefix}/{n}"), t.clone())?;
            }
        }
        let meta = vec![
            self.epoch as f64,
            self.step as f64,
            self.adam.t as f64,
            self.best_val.unwrap_or(-1.0),
        ];
        s.insert("meta", Tensor::new(vec![4], meta)?)?;
        Ok(s)
    }

    pub fn from_store(s: &ParamStore, opts: &TrainOptions) -> Result<Self> {
        let mut parts: BTreeMap<&str, ParamStore> = BTreeMap::new();
        for (n, t) in s.iter() {
            if let Some((prefix, rest)) = n.split_once('/') {
                parts.entry(prefix).or_default().insert(rest, t.clone())?;
            }
        }
        let meta = s.get("meta").ok_or_else(|| invalid("state checkpoint has no meta entry"))?.data();
        let mut take = |k: &str| parts.remove(k).ok_or_else(|| invalid(format!("state checkpoint lacks `{k}`")));
        let (params, m, v, best) = (take("param")?, take("adam.m")?, take("adam.v")?, take("best")?);
        Ok(Self {
            params,
            adam: Adam {
                beta1: opts.optim.adam_beta1,
                beta2: opts.optim.adam_beta2,
                eps: opts.optim.adam_eps,
                t: meta[2] as u64,
                m,
                v,
            },
            epoch: meta[0] as usize,
            step: meta[1] as u64,
            best_val: (meta[3] >= 0.0).then_some(meta[3]),
            best,
        })
    }
}

fn batches(n: usize, batch: usize, seed: u64, epoch: usize) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut substream(seed, "shuffle", epoch as u64));
    let mut out: Vec<Vec<usize>> = order.chunks(batch.max(1)).map(<[usize]>::to_vec).collect();
    // a lone trailing sample has no negatives; fold it into the previous batch
    if out.len() > 1 && out.last().is_some_and(|b| b.len() == 1) {
        let last = out.pop().unwrap();
        out.last_mut().unwrap().extend(last);
    }
    out
}

fn non_finite(epoch: usize, step: u64, e: Error) -> Error {
    match e {
        Error::Graph(GraphError::NonFinite { op }) => Error::NonFiniteLoss {
            epoch,
            step: step as usize,
            detail: format!("non-finite value in {op}"),
        },
        other => other,
    }
}

/// Top-1 over seen classes.
pub fn seen_accuracy(params: &ParamStore, enc: &EncoderConfig, bank: &LabelBank, items: &[Item]) -> Result<f64> {
    if items.is_empty() {
        return Ok(0.0);
    }
    let scores = item_scores(params, enc, bank, items)?;
    let restrict = if bank.unseen().is_empty() { Restrict::All } else { Restrict::Seen };
    let preds = predict(&scores, bank, 0.0, restrict)?;
    let ok = preds.iter().zip(items).filter(|(p, it)| it.labels.contains(p)).count();
    Ok(ok as f64 / items.len() as f64)
}

pub fn item_scores(params: &ParamStore, enc: &EncoderConfig, bank: &LabelBank, items: &[Item]) -> Result<Vec<Vec<f64>>> {
    let inputs: Vec<&EncoderInput> = items.iter().map(|i| &i.input).collect();
    similarity(&embed_global(params, enc, &inputs, 128)?, bank)
}

/// Runs epochs `state.epoch..total_epochs`. Shuffling and label sampling are
/// seeded per epoch and step, so a run resumed from a saved state matches an
/// uninterrupted one. `on_epoch` sees every finished epoch.
pub fn train_loop(
    enc: &EncoderConfig,
    bank: &LabelBank,
    train: &[Item],
    val: &[Item],
    opts: &TrainOptions,
    state: &mut TrainState,
    mut on_epoch: impl FnMut(&EpochLog, &TrainState) -> Result<()>,
) -> Result<()> {
    opts.optim.validate()?;
    opts.loss.validate()?;
    if train.is_empty() {
        return Err(invalid("no training samples"));
    }
    if bank.dim() != enc.d_a {
        return Err(Error::Shape(format!("bank dim {} vs encoder d_a {}", bank.dim(), enc.d_a)));
    }
    for it in train {
        for l in &it.labels {
            bank.vector(*l)?;
        }
    }
    let total = opts.optim.total_epochs;
    while state.epoch < total {
        let epoch = state.epoch;
        let plan = batches(train.len(), opts.optim.batch_size, opts.seed, epoch);
        let mut sum = LossValues::default();
        let mut lr = 0.0;
        for (bi, idx) in plan.iter().enumerate() {
            lr = lr_schedule(epoch as f64 + bi as f64 / plan.len() as f64, &opts.optim);
            let mut pick = substream(opts.seed, "labels", state.step);
            let chosen: Vec<u32> = idx
                .iter()
                .map(|&i| {
                    let l = &train[i].labels;
                    l[pick.random_range(0..l.len())]
                })
                .collect();
            let inputs: Vec<&EncoderInput> = idx.iter().map(|&i| &train[i].input).collect();
            let batch = Batch::new(&inputs)?;
            let mut a = Vec::with_capacity(idx.len() * enc.d_a);
            for &c in &chosen {
                a.extend_from_slice(bank.vector(c)?);
            }
            let mut g = Graph::new();
            let run = |g: &mut Graph| -> Result<LossValues> {
                let f = forward(g, &state.params, enc, &batch)?;
                let av = g.constant(Tensor::new(vec![idx.len(), enc.d_a], a.clone())?);
                let mask = opts.mask_false_negatives.then_some(chosen.as_slice());
                let l = total_loss(g, &f, av, &opts.loss, mask)?;
                g.backward(l.total)?;
                Ok(l.values(g))
            };
            let values = run(&mut g).map_err(|e| non_finite(epoch, state.step, e))?;
            state.adam.step(&mut state.params, &g, lr);
            state.step += 1;
            sum.total += values.total;
            sum.instance += values.instance;
            sum.ts += values.ts;
            sum.consis += values.consis;
            sum.part += values.part;
        }
        let n = plan.len() as f64;
        let loss = LossValues {
            total: sum.total / n,
            instance: sum.instance / n,
            ts: sum.ts / n,
            consis: sum.consis / n,
            part: sum.part / n,
        };
        state.epoch += 1;
        let due = state.epoch.is_multiple_of(opts.eval_every.max(1)) || state.epoch == total;
        let val_top1 = if !val.is_empty() && due {
            let acc = seen_accuracy(&state.params, enc, bank, val)?;
            if state.best_val.is_none_or(|b| acc > b) {
                state.best_val = Some(acc);
                state.best = state.params.clone();
            }
            Some(acc)
        } else {
            None
        };
        if val.is_empty() {
            state.best = state.params.clone();
        }
        let log = EpochLog {
            epoch,
            step: state.step,
            lr,
            loss,
            val_top1,
        };
        on_epoch(&log, state)?;
    }
    Ok(())
}

/// Trains from scratch in memory and returns the final state and the logs.
pub fn fit(enc: &EncoderConfig, bank: &LabelBank, train: &[Item], val: &[Item], opts: &TrainOptions) -> Result<(TrainState, Vec<EpochLog>)> {
    let mut state = TrainState::new(enc, opts)?;
    let mut logs = Vec::new();
    train_loop(enc, bank, train, val, opts, &mut state, |l, _| {
        logs.push(l.clone());
        Ok(())
    })?;
    Ok((state, logs))
}

/// Multi-label evaluation of `items` with a trained parameter set.
pub fn evaluate_items(
    params: &ParamStore,
    enc: &EncoderConfig,
    bank: &LabelBank,
    items: &[Item],
    strata: &BTreeMap<u32, Stratum>,
    gamma: f64,
) -> Result<EvalReport> {
    let scores = item_scores(params, enc, bank, items)?;
    let labels: Vec<Vec<u32>> = items.iter().map(|i| i.labels.clone()).collect();
    evaluate_scores(&scores, &labels, bank, strata, gamma)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PaddingKind {
    Zero,
    Interpolation,
    LearnablePlaceholder,
}

/// Run configuration file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Corpus JSONL files.
    pub corpus: Vec<PathBuf>,
    pub bank: PathBuf,
    /// Raw-label to class clustering; labels are used as class ids without it.
    #[serde(default)]
    pub cluster_map: Option<PathBuf>,
    /// Train/test partition; every sample is used for training without it.
    #[serde(default)]
    pub split: Option<PathBuf>,
    /// Format registry; built-in presets are used without it.
    #[serde(default)]
    pub registry: Option<PathBuf>,
    #[serde(default = "default_padding")]
    pub padding: PaddingKind,
    #[serde(default)]
    pub adjacency: Option<PathBuf>,
    #[serde(default)]
    pub encoder: EncoderSettings,
    #[serde(default)]
    pub loss: LossWeights,
    #[serde(default)]
    pub optimizer: OptimConfig,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub gamma: f64,
    pub output_dir: PathBuf,
    /// Fraction of training samples held out for checkpoint selection.
    #[serde(default = "default_val_fraction")]
    pub val_fraction: f64,
    #[serde(default)]
    pub mask_false_negatives: bool,
    #[serde(default = "one")]
    pub eval_every: usize,
    /// Class ids treated as unseen: excluded from training, scored at eval.
    #[serde(default)]
    pub unseen_classes: Vec<u32>,
    /// Restrict training to these formats (all when empty).
    #[serde(default)]
    pub train_formats: Vec<String>,
    /// Restrict evaluation to these formats (all when empty).
    #[serde(default)]
    pub eval_formats: Vec<String>,
}

fn default_padding() -> PaddingKind {
    PaddingKind::Zero
}

fn default_val_fraction() -> f64 {
    0.1
}

fn one() -> usize {
    1
}

impl RunConfig {
    /// Reads a config; relative paths resolve against the file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let mut cfg: RunConfig = serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        cfg.corpus.iter_mut().for_each(fix);
        fix(&mut cfg.bank);
        fix(&mut cfg.output_dir);
        for p in [&mut cfg.cluster_map, &mut cfg.split, &mut cfg.registry, &mut cfg.adjacency].into_iter().flatten() {
            fix(p);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.optimizer.validate()?;
        self.loss.validate()?;
        if self.corpus.is_empty() {
            return Err(Error::Config("no corpus files".into()));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::Config("val_fraction must be in [0, 1)".into()));
        }
        if self.gamma < 0.0 {
            return Err(Error::Config("gamma must be non-negative".into()));
        }
        Ok(())
    }

    pub fn train_options(&self) -> TrainOptions {
        TrainOptions {
            optim: self.optimizer.clone(),
            loss: self.loss,
            seed: self.seed,
            mask_false_negatives: self.mask_false_negatives,
            eval_every: self.eval_every,
        }
    }
}

/// Everything loaded from a run configuration.
pub struct Workspace {
    pub space: UnifiedSpace,
    pub encoder: EncoderConfig,
    pub bank: LabelBank,
    pub items: Vec<Item>,
    pub split: Option<SplitSpec>,
}

pub fn padding_strategy(kind: PaddingKind, adjacency: Option<&Path>) -> Result<PaddingStrategy> {
    Ok(match kind {
        PaddingKind::Zero => PaddingStrategy::Zero,
        PaddingKind::LearnablePlaceholder => PaddingStrategy::LearnablePlaceholder,
        PaddingKind::Interpolation => PaddingStrategy::Interpolation(match adjacency {
            Some(p) => load_adjacency(p)?,
            None => default_adjacency(),
        }),
    })
}

/// Maps raw label ids of a sample to class ids.
pub type Relabel = Box<dyn Fn(&[u32]) -> Result<Vec<u32>>>;

/// Class bank and label mapping from a raw bank and optional clustering.
pub fn class_space(raw: LabelBank, clusters: Option<&ClusterMap>, unseen: &[u32]) -> Result<(LabelBank, Relabel)> {
    let (bank, relabel): (LabelBank, Relabel) = match clusters {
        Some(c) => {
            let c = c.clone();
            (c.class_bank(&raw)?, Box::new(move |l: &[u32]| c.map_labels(l)))
        }
        None => (
            raw,
            Box::new(|l: &[u32]| {
                let s: BTreeSet<u32> = l.iter().copied().collect();
                Ok(s.into_iter().collect())
            }),
        ),
    };
    let bank = if unseen.is_empty() { bank } else { bank.with_unseen(unseen.iter().copied())? };
    Ok((bank, relabel))
}

pub fn load_workspace(cfg: &RunConfig) -> Result<Workspace> {
    let mut seqs = Vec::new();
    for p in &cfg.corpus {
        seqs.extend(read_corpus(p)?);
    }
    let space = match &cfg.registry {
        Some(p) => load_registry(p)?,
        None => {
            let ids: BTreeSet<&str> = seqs.iter().map(|s| s.format_id.as_str()).collect();
            let formats = ids
                .into_iter()
                .map(|id| SkeletonFormat::preset(id).ok_or_else(|| Error::UnknownFormat(id.to_string())))
                .collect::<Result<Vec<_>>>()?;
            build_unified_space(&formats)?
        }
    };
    let clusters: Option<ClusterMap> = match &cfg.cluster_map {
        Some(p) => Some(serde_json::from_str(&std::fs::read_to_string(p)?)?),
        None => None,
    };
    let (bank, relabel) = class_space(load_bank(&cfg.bank)?, clusters.as_ref(), &cfg.unseen_classes)?;
    let placeholder = cfg.padding == PaddingKind::LearnablePlaceholder;
    let encoder = EncoderConfig::for_space(&space, &cfg.encoder, bank.dim(), placeholder);
    encoder.validate()?;
    let strategy = padding_strategy(cfg.padding, cfg.adjacency.as_deref())?;
    let items = prepare(&seqs, &space, &strategy, &encoder, &*relabel)?;
    let split = match &cfg.split {
        Some(p) => Some(serde_json::from_str(&std::fs::read_to_string(p)?)?),
        None => None,
    };
    Ok(Workspace {
        space,
        encoder,
        bank,
        items,
        split,
    })
}

/// Holds out a stratified validation subset of `train` by sample id.
pub fn validation_split(train: Vec<Item>, fraction: f64, seed: u64) -> Result<(Vec<Item>, Vec<Item>)> {
    if fraction <= 0.0 || train.is_empty() {
        return Ok((train, Vec::new()));
    }
    let mut ids: BTreeMap<&str, Vec<u32>> = BTreeMap::new();
    for it in &train {
        ids.entry(it.sample_id.as_str()).or_insert_with(|| it.labels.clone());
    }
    let samples: Vec<(String, Vec<u32>)> = ids.into_iter().map(|(k, v)| (k.to_string(), v)).collect();
    let s = stratified_split(&samples, 1.0 - fraction, substream(seed, "validation", 0).random())?;
    Ok(train.into_iter().partition(|it| s.train_ids.contains(&it.sample_id)))
}

fn keep_format(filter: &[String], f: &str) -> bool {
    filter.is_empty() || filter.iter().any(|x| x == f)
}

/// Training samples: in the split's train side, of an allowed format, and
/// carrying no unseen class.
pub fn training_items(ws: &Workspace, cfg: &RunConfig) -> Vec<Item> {
    ws.items
        .iter()
        .filter(|it| ws.split.as_ref().is_none_or(|s| s.train_ids.contains(&it.sample_id)))
        .filter(|it| keep_format(&cfg.train_formats, &it.format_id))
        .filter(|it| it.labels.iter().all(|l| ws.bank.is_seen(*l)))
        .cloned()
        .collect()
}

/// Evaluation samples: the split's test side (everything without a split).
pub fn test_items(ws: &Workspace, cfg: &RunConfig) -> Vec<Item> {
    ws.items
        .iter()
        .filter(|it| ws.split.as_ref().is_none_or(|s| s.test_ids.contains(&it.sample_id)))
        .filter(|it| keep_format(&cfg.eval_formats, &it.format_id))
        .cloned()
        .collect()
}

pub const STATE_FILE: &str = "state.ckpt";
pub const BEST_FILE: &str = "best.ckpt";
pub const FINAL_FILE: &str = "final.ckpt";
pub const METRICS_FILE: &str = "metrics.jsonl";
pub const ENCODER_FILE: &str = "encoder.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub epochs: usize,
    pub steps: u64,
    pub train_samples: usize,
    pub val_samples: usize,
    pub best_val: Option<f64>,
    pub final_loss: Option<LossValues>,
}

/// File-level training: writes `encoder.json`, appends per-epoch rows to
/// `metrics.jsonl`, refreshes `state.ckpt` every epoch, and writes
/// `best.ckpt` and `final.ckpt`. With `resume`, continues from `state.ckpt`.
pub fn run_train(cfg: &RunConfig, resume: bool) -> Result<TrainSummary> {
    let ws = load_workspace(cfg)?;
    let opts = cfg.train_options();
    let (train, val) = validation_split(training_items(&ws, cfg), cfg.val_fraction, cfg.seed)?;
    let out = &cfg.output_dir;
    std::fs::create_dir_all(out)?;
    std::fs::write(out.join(ENCODER_FILE), serde_json::to_string_pretty(&ws.encoder)?)?;
    let state_path = out.join(STATE_FILE);
    let mut state = if resume && state_path.exists() {
        TrainState::from_store(&ParamStore::load(&state_path)?, &opts)?
    } else {
        TrainState::new(&ws.encoder, &opts)?
    };
    if !resume || state.epoch == 0 {
        std::fs::write(out.join(METRICS_FILE), "")?;
    }
    let mut last = None;
    train_loop(&ws.encoder, &ws.bank, &train, &val, &opts, &mut state, |log, st| {
        let mut f = std::fs::OpenOptions::new().append(true).create(true).open(out.join(METRICS_FILE))?;
        writeln!(f, "{}", serde_json::to_string(log)?)?;
        st.to_store()?.save(&state_path)?;
        last = Some(log.loss);
        Ok(())
    })?;
    state.params.save(out.join(FINAL_FILE))?;
    state.best.save(out.join(BEST_FILE))?;
    state.to_store()?.save(&state_path)?;
    Ok(TrainSummary {
        epochs: state.epoch,
        steps: state.step,
        train_samples: train.len(),
        val_samples: val.len(),
        best_val: state.best_val,
        final_loss: last,
    })
}

/// Evaluates one or more trained runs on the test side of the split. Runs
/// are given as directories holding `encoder.json` and a checkpoint named
/// `checkpoint`; several runs are combined by averaging their scores.
pub fn run_eval(cfg: &RunConfig, runs: &[PathBuf], checkpoint: &str) -> Result<EvalReport> {
    let scores = ensemble_scores(cfg, runs, checkpoint)?;
    let (labels, strata, bank) = (scores.labels, scores.strata, scores.bank);
    evaluate_scores(&scores.scores, &labels, &bank, &strata, cfg.gamma)
}

pub struct ScoredTest {
    pub scores: Vec<Vec<f64>>,
    pub labels: Vec<Vec<u32>>,
    pub strata: BTreeMap<u32, Stratum>,
    pub bank: LabelBank,
}

pub fn ensemble_scores(cfg: &RunConfig, runs: &[PathBuf], checkpoint: &str) -> Result<ScoredTest> {
    if runs.is_empty() {
        return Err(invalid("no runs to evaluate"));
    }
    let mut sets = Vec::new();
    let mut labels = Vec::new();
    let mut bank = None;
    let mut strata = BTreeMap::new();
    for run in runs {
        let enc: EncoderConfig = serde_json::from_str(&std::fs::read_to_string(run.join(ENCODER_FILE))?)?;
        let mut rc = cfg.clone();
        rc.encoder = EncoderSettings {
            d_h: enc.d_h,
            layers: enc.layers,
            heads: enc.heads,
            ffn_mult: enc.ffn_mult,
            t_max: enc.t_max,
            n_seg: enc.n_seg,
            fusion_mode: enc.fusion_mode,
            attn_mask_padding: enc.attn_mask_padding,
            modalities: enc.modalities.clone(),
        };
        let ws = load_workspace(&rc)?;
        if ws.encoder != enc {
            return Err(Error::Config(format!("{} was trained on a different skeleton space or label bank", run.display())));
        }
        let params = ParamStore::load(run.join(checkpoint))?;
        let items = test_items(&ws, cfg);
        if items.is_empty() {
            return Err(invalid("no evaluation samples"));
        }
        sets.push(item_scores(&params, &enc, &ws.bank, &items)?);
        labels = items.iter().map(|i| i.labels.clone()).collect();
        strata = ws.split.as_ref().map(|s| s.strata.clone()).unwrap_or_else(|| derive_strata(&items));
        bank = Some(ws.bank);
    }
    Ok(ScoredTest {
        scores: crate::eval::average_scores(&sets)?,
        labels,
        strata,
        bank: bank.expect("at least one run"),
    })
}

fn derive_strata(items: &[Item]) -> BTreeMap<u32, Stratum> {
    let mut counts = BTreeMap::new();
    for it in items {
        if let Some(c) = primary_class(&it.labels) {
            *counts.entry(c).or_insert(0) += 1;
        }
    }
    crate::labelspace::stratify_frequency(&counts)
}

/// Small seeded model for gradient verification.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GradCheckConfig {
    pub d_h: usize,
    pub layers: usize,
    pub heads: usize,
    pub t: usize,
    pub joints: usize,
    pub batch: usize,
    pub d_a: usize,
    pub seed: u64,
    pub step: f64,
    pub tol: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            d_h: 8,
            layers: 1,
            heads: 2,
            t: 6,
            joints: 5,
            batch: 4,
            d_a: 16,
            seed: 0,
            step: 1e-4,
            tol: 1e-4,
        }
    }
}

/// Central-difference check of every encoder parameter against the
/// gradient of the full weighted objective. Parameters are perturbed away
/// from their initial values so biases and gains are exercised.
pub fn gradcheck_model(gc: &GradCheckConfig) -> Result<numgraph::GradCheckReport> {
    let names = &crate::skeleton::CANONICAL_JOINTS;
    if gc.joints == 0 || gc.joints > names.len() {
        return Err(Error::Config(format!("joints must be in 1..={}", names.len())));
    }
    let pairs: Vec<(&str, &str)> = (0..gc.joints).map(|i| (names[i], names[i.saturating_sub(1)])).collect();
    let format = SkeletonFormat::from_pairs("gradcheck", &pairs, 3, 1)?;
    let space = build_unified_space(&[format])?;
    let settings = EncoderSettings {
        d_h: gc.d_h,
        layers: gc.layers,
        heads: gc.heads,
        ffn_mult: 2,
        t_max: gc.t,
        n_seg: gc.t.min(4),
        fusion_mode: crate::encoder::FusionMode::LearnableSoftmax,
        attn_mask_padding: false,
        ..Default::default()
    };
    let enc = EncoderConfig::for_space(&space, &settings, gc.d_a, false);
    enc.validate()?;
    let mut params = init_params(&enc, gc.seed)?;
    let mut rng = substream(gc.seed, "gradcheck", 0);
    for (_, t) in params.iter_mut() {
        t.data_mut().iter_mut().for_each(|v| *v += rng.random_range(-0.1..0.1));
    }
    let seqs: Vec<RawSequence> = (0..gc.batch)
        .map(|i| RawSequence {
            sample_id: None,
            format_id: "gradcheck".into(),
            members: 1,
            label_ids: vec![i as u32],
            frames: (0..gc.t)
                .map(|_| vec![(0..gc.joints).map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect()).collect()])
                .collect(),
        })
        .collect();
    let items = prepare(&seqs, &space, &PaddingStrategy::Zero, &enc, &|l| Ok(l.to_vec()))?;
    let inputs: Vec<&EncoderInput> = items.iter().map(|i| &i.input).collect();
    let batch = Batch::new(&inputs)?;
    let a = Tensor::from_fn(&[gc.batch, gc.d_a], |_| rng.random_range(-1.0..1.0));
    let w = LossWeights::default();
    Ok(numgraph::grad_check(
        &params,
        |g, s| {
            let f = forward(g, s, &enc, &batch)?;
            let av = g.constant(a.clone());
            Ok(total_loss(g, &f, av, &w, None)?.total)
        },
        gc.step,
        gc.tol,
    )?)
}

//! Two-stream Transformer motion encoder.
//!
//! Joint, bone and motion arrays are embedded per stream by small
//! perceptrons, fused, and encoded by a temporal stream (one token per
//! frame) and a spatial stream (one token per joint/member slot, carrying
//! that slot's trajectory over `t_max` frames). Max-pooled stream features
//! feed three projection heads into the label-embedding space, and pooled
//! temporal segments and body parts give the local features.

use numgraph::{Graph, ParamStore, Tensor, Var};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::substream;
use crate::skeleton::{resample_frames, ModalityTriple, UnifiedSpace};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionMode {
    FixedEqual,
    LearnableSoftmax,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    Joint,
    Bone,
    Motion,
}

impl Modality {
    pub const ALL: [Modality; 3] = [Modality::Joint, Modality::Bone, Modality::Motion];

    fn tag(self) -> &'static str {
        match self {
            Modality::Joint => "j",
            Modality::Bone => "b",
            Modality::Motion => "m",
        }
    }
}

fn all_modalities() -> Vec<Modality> {
    Modality::ALL.to_vec()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub d_h: usize,
    pub layers: usize,
    pub heads: usize,
    pub ffn_mult: usize,
    pub d_a: usize,
    pub t_max: usize,
    pub n_seg: usize,
    pub n_part: usize,
    /// Body-part index of every unified slot (`joint * members + member`).
    pub part_map: Vec<usize>,
    pub fusion_mode: FusionMode,
    pub attn_mask_padding: bool,
    /// Owns a learned `[slots x 3]` vector substituted at unobserved joints.
    #[serde(default)]
    pub placeholder: bool,
    #[serde(default = "all_modalities")]
    pub modalities: Vec<Modality>,
}

/// Hyperparameters that do not depend on the skeleton space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderSettings {
    pub d_h: usize,
    pub layers: usize,
    pub heads: usize,
    pub ffn_mult: usize,
    pub t_max: usize,
    pub n_seg: usize,
    pub fusion_mode: FusionMode,
    pub attn_mask_padding: bool,
    pub modalities: Vec<Modality>,
}

impl Default for EncoderSettings {
    fn default() -> Self {
        Self {
            d_h: 32,
            layers: 2,
            heads: 4,
            ffn_mult: 4,
            t_max: 64,
            n_seg: 4,
            fusion_mode: FusionMode::FixedEqual,
            attn_mask_padding: false,
            modalities: all_modalities(),
        }
    }
}

/// Part map from the canonical body regions of the space's joints. Regions
/// with no joint in the space are dropped and the rest renumbered in order.
pub fn default_part_map(space: &UnifiedSpace) -> (Vec<usize>, usize) {
    let raw = space.part_map();
    let mut used: Vec<usize> = raw.clone();
    used.sort_unstable();
    used.dedup();
    let map = raw.iter().map(|p| used.binary_search(p).unwrap()).collect();
    (map, used.len())
}

impl EncoderConfig {
    pub fn for_space(space: &UnifiedSpace, s: &EncoderSettings, d_a: usize, placeholder: bool) -> Self {
        let (part_map, n_part) = default_part_map(space);
        Self {
            d_h: s.d_h,
            layers: s.layers,
            heads: s.heads,
            ffn_mult: s.ffn_mult,
            d_a,
            t_max: s.t_max,
            n_seg: s.n_seg,
            n_part,
            part_map,
            fusion_mode: s.fusion_mode,
            attn_mask_padding: s.attn_mask_padding,
            placeholder,
            modalities: s.modalities.clone(),
        }
    }

    pub fn slots(&self) -> usize {
        self.part_map.len()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.d_h == 0 || self.heads == 0 || !self.d_h.is_multiple_of(self.heads) {
            return bad(format!("d_h {} must be a positive multiple of heads {}", self.d_h, self.heads));
        }
        if self.ffn_mult == 0 || self.d_a == 0 || self.t_max == 0 {
            return bad("ffn_mult, d_a and t_max must be positive".into());
        }
        if self.n_seg == 0 || self.n_part == 0 {
            return bad("n_seg and n_part must be at least 1".into());
        }
        if self.n_seg > self.t_max {
            return bad(format!("n_seg {} exceeds t_max {}", self.n_seg, self.t_max));
        }
        if self.part_map.is_empty() {
            return bad("part_map is empty".into());
        }
        let mut counts = vec![0usize; self.n_part];
        for &p in &self.part_map {
            if p >= self.n_part {
                return bad(format!("part index {p} out of range for {} parts", self.n_part));
            }
            counts[p] += 1;
        }
        if counts.contains(&0) {
            return bad("every part needs at least one slot".into());
        }
        let mut mods = self.modalities.clone();
        mods.sort();
        mods.dedup();
        if mods.is_empty() || mods.len() != self.modalities.len() {
            return bad("modalities must be a non-empty list without repeats".into());
        }
        Ok(())
    }

    fn part_slots(&self) -> Vec<Vec<usize>> {
        let mut parts = vec![Vec::new(); self.n_part];
        for (slot, &p) in self.part_map.iter().enumerate() {
            parts[p].push(slot);
        }
        parts
    }
}

/// Sinusoidal position table `[t x d]`.
pub fn positional_encoding(t: usize, d: usize) -> Tensor {
    Tensor::from_fn(&[t, d], |idx| {
        let (p, c) = (idx / d, idx % d);
        let i2 = (c - c % 2) as f64;
        let angle = p as f64 / 10000f64.powf(i2 / d as f64);
        if c % 2 == 0 {
            angle.sin()
        } else {
            angle.cos()
        }
    })
}

/// Lengths of `n_seg` contiguous segments covering `t` frames, longer first.
pub fn segment_lengths(t: usize, n_seg: usize) -> Result<Vec<usize>> {
    if n_seg == 0 || t < n_seg {
        return Err(Error::Shape(format!("{t} frames cannot form {n_seg} non-empty segments")));
    }
    let (base, extra) = (t / n_seg, t % n_seg);
    Ok((0..n_seg).map(|j| base + usize::from(j < extra)).collect())
}

fn xavier(rng: &mut impl Rng, fan_in: usize, fan_out: usize) -> Tensor {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Tensor::from_fn(&[fan_in, fan_out], |_| rng.random_range(-a..a))
}

fn insert_linear(store: &mut ParamStore, rng: &mut impl Rng, name: &str, fan_in: usize, fan_out: usize) -> Result<()> {
    store.insert(format!("{name}.w"), xavier(rng, fan_in, fan_out))?;
    store.insert(format!("{name}.b"), Tensor::zeros(&[fan_out]))?;
    Ok(())
}

fn insert_mlp(store: &mut ParamStore, rng: &mut impl Rng, name: &str, dims: [usize; 3]) -> Result<()> {
    insert_linear(store, rng, &format!("{name}.l1"), dims[0], dims[1])?;
    insert_linear(store, rng, &format!("{name}.l2"), dims[1], dims[2])
}

const STREAMS: [&str; 2] = ["t", "s"];

/// Seeded parameter initialization: Xavier-uniform weights, zero biases,
/// unit layer-norm gains, small Gaussian spatial embeddings.
pub fn init_params(cfg: &EncoderConfig, seed: u64) -> Result<ParamStore> {
    cfg.validate()?;
    let mut rng = substream(seed, "init", 0);
    let mut store = ParamStore::new();
    let (d, km) = (cfg.d_h, cfg.slots());
    let small = Normal::new(0.0, 0.02).expect("valid std");
    let inputs = [km * 3, cfg.t_max * 3];
    for (stream, &input) in STREAMS.iter().zip(&inputs) {
        for m in &cfg.modalities {
            insert_mlp(&mut store, &mut rng, &format!("embed.{stream}.{}", m.tag()), [input, d, d])?;
        }
        insert_linear(&mut store, &mut rng, &format!("fuse.{stream}"), d, d)?;
    }
    if cfg.fusion_mode == FusionMode::LearnableSoftmax {
        store.insert("fuse.logits", Tensor::zeros(&[cfg.modalities.len()]))?;
    }
    store.insert("spatial.embed", Tensor::from_fn(&[km, d], |_| small.sample(&mut rng)))?;
    if cfg.placeholder {
        store.insert("placeholder", Tensor::from_fn(&[km, 3], |_| small.sample(&mut rng)))?;
    }
    for stream in STREAMS {
        for l in 0..cfg.layers {
            let p = format!("{stream}.layer{l}");
            for ln in ["ln1", "ln2"] {
                store.insert(format!("{p}.{ln}.g"), Tensor::full(&[d], 1.0))?;
                store.insert(format!("{p}.{ln}.b"), Tensor::zeros(&[d]))?;
            }
            insert_linear(&mut store, &mut rng, &format!("{p}.attn.qkv"), d, 3 * d)?;
            insert_linear(&mut store, &mut rng, &format!("{p}.attn.out"), d, d)?;
            insert_mlp(&mut store, &mut rng, &format!("{p}.ffn"), [d, cfg.ffn_mult * d, d])?;
        }
    }
    insert_mlp(&mut store, &mut rng, "proj.global", [2 * d, 2 * d, cfg.d_a])?;
    insert_mlp(&mut store, &mut rng, "proj.temporal", [d, d, cfg.d_a])?;
    insert_mlp(&mut store, &mut rng, "proj.spatial", [d, d, cfg.d_a])?;
    Ok(store)
}

/// Encoder-ready arrays for one sample, computed once and reused.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderInput {
    pub frames: usize,
    /// Per active modality, `[frames x slots*3]`.
    temporal: Vec<Vec<f64>>,
    /// Per active modality, `[slots x t_max*3]`.
    spatial: Vec<Vec<f64>>,
    /// 1.0 at slots that hold no real joint.
    missing: Vec<f64>,
    placeholder: bool,
}

impl EncoderInput {
    pub fn new(m: &ModalityTriple, cfg: &EncoderConfig) -> Result<Self> {
        let km = m.slots();
        if km != cfg.slots() {
            return Err(Error::Shape(format!("{km} slots, encoder expects {}", cfg.slots())));
        }
        if m.frames == 0 || m.frames > cfg.t_max {
            return Err(Error::Shape(format!("{} frames, t_max is {}", m.frames, cfg.t_max)));
        }
        let mut temporal = Vec::new();
        let mut spatial = Vec::new();
        for md in &cfg.modalities {
            let src = match md {
                Modality::Joint => &m.joint,
                Modality::Bone => &m.bone,
                Modality::Motion => &m.motion,
            };
            temporal.push(src.clone());
            let r = resample_frames(src, m.frames, cfg.t_max);
            let mut s = vec![0.0; km * cfg.t_max * 3];
            for t in 0..cfg.t_max {
                for k in 0..km {
                    let (dst, from) = ((k * cfg.t_max + t) * 3, (t * km + k) * 3);
                    s[dst..dst + 3].copy_from_slice(&r[from..from + 3]);
                }
            }
            spatial.push(s);
        }
        Ok(Self {
            frames: m.frames,
            temporal,
            spatial,
            missing: m.joint_mask.iter().map(|&b| if b { 0.0 } else { 1.0 }).collect(),
            placeholder: m.placeholder,
        })
    }
}

/// A stacked batch of [`EncoderInput`]s with equal frame counts.
#[derive(Clone, Debug)]
pub struct Batch {
    pub n: usize,
    pub frames: usize,
    temporal: Vec<Tensor>,
    spatial: Vec<Tensor>,
    missing: Tensor,
    any_placeholder: bool,
    placeholder_rows: Vec<f64>,
}

impl Batch {
    pub fn new(items: &[&EncoderInput]) -> Result<Self> {
        let first = items.first().ok_or_else(|| Error::Shape("empty batch".into()))?;
        let (n, t) = (items.len(), first.frames);
        if items.iter().any(|x| x.frames != t) {
            return Err(Error::Shape("batch mixes frame counts; resample first".into()));
        }
        let km = first.missing.len();
        let stack = |f: &dyn Fn(&EncoderInput) -> &Vec<f64>, shape: &[usize]| {
            let data: Vec<f64> = items.iter().flat_map(|x| f(x).iter().copied()).collect();
            Tensor::new(shape.to_vec(), data)
        };
        let mut temporal = Vec::new();
        let mut spatial = Vec::new();
        for mi in 0..first.temporal.len() {
            temporal.push(stack(&|x| &x.temporal[mi], &[n, t, km * 3])?);
            let ts = first.spatial[mi].len() / km;
            spatial.push(stack(&|x| &x.spatial[mi], &[n, km, ts])?);
        }
        Ok(Self {
            n,
            frames: t,
            temporal,
            spatial,
            missing: stack(&|x| &x.missing, &[n, km])?,
            any_placeholder: items.iter().any(|x| x.placeholder),
            placeholder_rows: items.iter().map(|x| f64::from(u8::from(x.placeholder))).collect(),
        })
    }
}

fn linear(g: &mut Graph, store: &ParamStore, name: &str, x: Var) -> Result<Var> {
    let w = g.param(store, &format!("{name}.w"))?;
    let b = g.param(store, &format!("{name}.b"))?;
    let y = g.matmul(x, w)?;
    Ok(g.add(y, b)?)
}

/// Two-layer perceptron with a gelu between the layers.
fn mlp(g: &mut Graph, store: &ParamStore, name: &str, x: Var) -> Result<Var> {
    let h = linear(g, store, &format!("{name}.l1"), x)?;
    let h = g.gelu(h)?;
    linear(g, store, &format!("{name}.l2"), h)
}

/// Fusion weights of the active modalities.
pub fn fusion_weights(g: &mut Graph, store: &ParamStore, cfg: &EncoderConfig) -> Result<Vec<Var>> {
    let n = cfg.modalities.len();
    match cfg.fusion_mode {
        FusionMode::FixedEqual => Ok((0..n).map(|_| g.constant(Tensor::scalar(1.0 / n as f64))).collect()),
        FusionMode::LearnableSoftmax => {
            let logits = g.param(store, "fuse.logits")?;
            let w = g.softmax(logits)?;
            (0..n).map(|i| Ok(g.slice(w, 0, i, 1)?)).collect()
        }
    }
}

/// Stream inputs after placeholder substitution: `(temporal, spatial)` per
/// modality.
fn stream_inputs(g: &mut Graph, store: &ParamStore, cfg: &EncoderConfig, b: &Batch) -> Result<(Vec<Var>, Vec<Var>)> {
    let mut t_in: Vec<Var> = b.temporal.iter().map(|x| g.constant(x.clone())).collect();
    let mut s_in: Vec<Var> = b.spatial.iter().map(|x| g.constant(x.clone())).collect();
    let joint = cfg.modalities.iter().position(|&m| m == Modality::Joint);
    if let (Some(ji), true, true) = (joint, cfg.placeholder, b.any_placeholder) {
        let km = cfg.slots();
        let p = g.param(store, "placeholder")?;
        // only rows flagged for placeholder padding are substituted
        let rows = Tensor::new(vec![b.n, 1], b.placeholder_rows.clone())?;
        let gate = Tensor::from_fn(&[b.n, km], |i| b.missing.data()[i] * rows.data()[i / km]);
        let gate_t = Tensor::from_fn(&[b.n, 1, km * 3], |i| gate.data()[i / 3]);
        let gate_s = gate.clone().reshape(&[b.n, km, 1])?;
        let flat = g.reshape(p, &[km * 3])?;
        let gt = g.constant(gate_t);
        let add_t = g.mul(gt, flat)?;
        t_in[ji] = g.add(t_in[ji], add_t)?;
        let tile = g.constant(Tensor::from_fn(&[3, cfg.t_max * 3], |i| {
            let (c, j) = (i / (cfg.t_max * 3), i % (cfg.t_max * 3));
            f64::from(u8::from(j % 3 == c))
        }));
        let tiled = g.matmul(p, tile)?;
        let gs = g.constant(gate_s);
        let add_s = g.mul(gs, tiled)?;
        s_in[ji] = g.add(s_in[ji], add_s)?;
    }
    Ok((t_in, s_in))
}

/// Per-stream modality embeddings, weighted average, and the linear fusion
/// projection. Returns `H_mmt [N x T x d_h]` and `H_mms [N x slots x d_h]`.
pub fn embed_and_fuse(g: &mut Graph, store: &ParamStore, cfg: &EncoderConfig, b: &Batch) -> Result<(Var, Var)> {
    if b.frames > cfg.t_max {
        return Err(Error::Shape(format!("{} frames, t_max is {}", b.frames, cfg.t_max)));
    }
    let (t_in, s_in) = stream_inputs(g, store, cfg, b)?;
    let weights = fusion_weights(g, store, cfg)?;
    let mut out = Vec::with_capacity(2);
    for (stream, inputs) in STREAMS.iter().zip([t_in, s_in]) {
        let mut fused: Option<Var> = None;
        for ((m, x), &w) in cfg.modalities.iter().zip(inputs).zip(&weights) {
            let e = mlp(g, store, &format!("embed.{stream}.{}", m.tag()), x)?;
            let e = g.mul(e, w)?;
            fused = Some(match fused {
                None => e,
                Some(f) => g.add(f, e)?,
            });
        }
        out.push(linear(g, store, &format!("fuse.{stream}"), fused.expect("at least one modality"))?);
    }
    Ok((out[0], out[1]))
}

fn attention(g: &mut Graph, store: &ParamStore, cfg: &EncoderConfig, name: &str, x: Var, bias: Option<Var>) -> Result<Var> {
    let shape = g.shape(x).to_vec();
    let (n, s, d) = (shape[0], shape[1], shape[2]);
    let (h, dk) = (cfg.heads, cfg.d_h / cfg.heads);
    let qkv = linear(g, store, &format!("{name}.qkv"), x)?;
    let qkv = g.reshape(qkv, &[n, s, 3, h, dk])?;
    let qkv = g.permute(qkv, &[2, 0, 3, 1, 4])?;
    let mut parts = Vec::with_capacity(3);
    for i in 0..3 {
        let p = g.slice(qkv, 0, i, 1)?;
        parts.push(g.reshape(p, &[n, h, s, dk])?);
    }
    let kt = g.transpose(parts[1])?;
    let scores = g.matmul(parts[0], kt)?;
    let mut scores = g.mul_scalar(scores, 1.0 / (dk as f64).sqrt())?;
    if let Some(bias) = bias {
        scores = g.add(scores, bias)?;
    }
    let attn = g.softmax(scores)?;
    let ctx = g.matmul(attn, parts[2])?;
    let ctx = g.permute(ctx, &[0, 2, 1, 3])?;
    let ctx = g.reshape(ctx, &[n, s, d])?;
    linear(g, store, &format!("{name}.out"), ctx)
}

fn layer_norm(g: &mut Graph, store: &ParamStore, name: &str, x: Var) -> Result<Var> {
    let gain = g.param(store, &format!("{name}.g"))?;
    let bias = g.param(store, &format!("{name}.b"))?;
    Ok(g.layer_norm(x, gain, bias, numgraph::LAYER_NORM_EPS)?)
}

/// Pre-norm encoder layer: `x + MHSA(LN(x))`, then `h + FFN(LN(h))`.
fn encoder_layer(g: &mut Graph, store: &ParamStore, cfg: &EncoderConfig, name: &str, x: Var, bias: Option<Var>) -> Result<Var> {
    let a = layer_norm(g, store, &format!("{name}.ln1"), x)?;
    let a = attention(g, store, cfg, &format!("{name}.attn"), a, bias)?;
    let h = g.add(x, a)?;
    let f = layer_norm(g, store, &format!("{name}.ln2"), h)?;
    let f = mlp(g, store, &format!("{name}.ffn"), f)?;
    Ok(g.add(h, f)?)
}

/// Adds position information and runs both Transformer stacks.
pub fn encode_streams(
    g: &mut Graph,
    store: &ParamStore,
    cfg: &EncoderConfig,
    b: &Batch,
    hmmt: Var,
    hmms: Var,
) -> Result<(Var, Var)> {
    let t = g.shape(hmmt)[1];
    let pe = g.constant(positional_encoding(t, cfg.d_h));
    let mut vt = g.add(hmmt, pe)?;
    let spe = g.param(store, "spatial.embed")?;
    let mut vs = g.add(hmms, spe)?;
    let bias = if cfg.attn_mask_padding {
        let km = cfg.slots();
        let m = Tensor::from_fn(&[b.n, 1, 1, km], |i| -1e9 * b.missing.data()[i]);
        Some(g.constant(m))
    } else {
        None
    };
    for l in 0..cfg.layers {
        vt = encoder_layer(g, store, cfg, &format!("t.layer{l}"), vt, None)?;
        vs = encoder_layer(g, store, cfg, &format!("s.layer{l}"), vs, bias)?;
    }
    Ok((vt, vs))
}

/// All encoder outputs for one batch, as graph nodes.
#[derive(Clone, Copy, Debug)]
pub struct FeatureBundle {
    pub vt_seq: Var,
    pub vs_seq: Var,
    pub vg_t: Var,
    pub vg_s: Var,
    pub vg: Var,
    pub v: Var,
    pub v_t: Var,
    pub v_s: Var,
    /// `[N x n_seg x d_a]`
    pub v_t_local: Var,
    /// `[N x n_part x d_a]`
    pub v_s_local: Var,
}

fn stack_pooled(g: &mut Graph, pooled: Vec<Var>) -> Result<Var> {
    let mut rows = Vec::with_capacity(pooled.len());
    for p in pooled {
        let s = g.shape(p).to_vec();
        rows.push(g.reshape(p, &[s[0], 1, s[1]])?);
    }
    Ok(g.concat(&rows, 1)?)
}

pub fn pool_and_project(g: &mut Graph, store: &ParamStore, cfg: &EncoderConfig, vt_seq: Var, vs_seq: Var) -> Result<FeatureBundle> {
    let t = g.shape(vt_seq)[1];
    let vg_t = g.max_axis(vt_seq, 1)?;
    let vg_s = g.max_axis(vs_seq, 1)?;
    let vg = g.concat(&[vg_t, vg_s], 1)?;
    let v = mlp(g, store, "proj.global", vg)?;
    let v_t = mlp(g, store, "proj.temporal", vg_t)?;
    let v_s = mlp(g, store, "proj.spatial", vg_s)?;

    let mut segs = Vec::with_capacity(cfg.n_seg);
    let mut start = 0;
    for len in segment_lengths(t, cfg.n_seg)? {
        let s = g.slice(vt_seq, 1, start, len)?;
        segs.push(g.max_axis(s, 1)?);
        start += len;
    }
    let h_t = stack_pooled(g, segs)?;
    let v_t_local = mlp(g, store, "proj.temporal", h_t)?;

    let mut parts = Vec::with_capacity(cfg.n_part);
    for slots in cfg.part_slots() {
        let s = g.index_select(vs_seq, 1, &slots)?;
        parts.push(g.max_axis(s, 1)?);
    }
    let h_s = stack_pooled(g, parts)?;
    let v_s_local = mlp(g, store, "proj.spatial", h_s)?;

    Ok(FeatureBundle {
        vt_seq,
        vs_seq,
        vg_t,
        vg_s,
        vg,
        v,
        v_t,
        v_s,
        v_t_local,
        v_s_local,
    })
}

pub fn forward(g: &mut Graph, store: &ParamStore, cfg: &EncoderConfig, b: &Batch) -> Result<FeatureBundle> {
    let (hmmt, hmms) = embed_and_fuse(g, store, cfg, b)?;
    let (vt, vs) = encode_streams(g, store, cfg, b, hmmt, hmms)?;
    pool_and_project(g, store, cfg, vt, vs)
}

/// Global embeddings `v` for many samples, evaluated in chunks of
/// `chunk` samples with equal frame counts.
pub fn embed_global(store: &ParamStore, cfg: &EncoderConfig, inputs: &[&EncoderInput], chunk: usize) -> Result<Vec<Vec<f64>>> {
    let mut out = Vec::with_capacity(inputs.len());
    for part in inputs.chunks(chunk.max(1)) {
        let mut g = Graph::new();
        let b = Batch::new(part)?;
        let f = forward(&mut g, store, cfg, &b)?;
        out.extend(g.value(f.v).data().chunks(cfg.d_a).map(<[f64]>::to_vec));
    }
    Ok(out)
}

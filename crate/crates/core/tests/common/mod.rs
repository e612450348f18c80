#![allow(dead_code)]

use numgraph::{Graph, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use uniskel::encoder::FeatureBundle;
use uniskel::loss::{total_loss, LossValues, LossWeights};

/// Raw feature arrays standing in for an encoder output.
#[derive(Clone, Debug)]
pub struct Features {
    pub n: usize,
    pub d: usize,
    pub v: Vec<f64>,
    pub v_t: Vec<f64>,
    pub v_s: Vec<f64>,
    pub t_local: Vec<f64>,
    pub s_local: Vec<f64>,
    pub a: Vec<f64>,
    pub n_seg: usize,
    pub n_part: usize,
}

impl Features {
    pub fn random(seed: u64, n: usize, d: usize, n_seg: usize, n_part: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |len: usize| (0..len).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<f64>>();
        Self {
            n,
            d,
            v: draw(n * d),
            v_t: draw(n * d),
            v_s: draw(n * d),
            t_local: draw(n * n_seg * d),
            s_local: draw(n * n_part * d),
            a: draw(n * d),
            n_seg,
            n_part,
        }
    }

    /// Multiplies row `i` of every array (locals per part) by `c`.
    pub fn scale_row(&mut self, i: usize, c: f64) {
        let d = self.d;
        for arr in [&mut self.v, &mut self.v_t, &mut self.v_s, &mut self.a] {
            arr[i * d..(i + 1) * d].iter_mut().for_each(|x| *x *= c);
        }
        let (ns, np) = (self.n_seg, self.n_part);
        self.t_local[i * ns * d..(i + 1) * ns * d].iter_mut().for_each(|x| *x *= c);
        self.s_local[i * np * d..(i + 1) * np * d].iter_mut().for_each(|x| *x *= c);
    }

    /// Reorders samples so that new row `r` is old row `perm[r]`.
    pub fn permute(&self, perm: &[usize]) -> Self {
        let pick = |arr: &[f64], width: usize| -> Vec<f64> { perm.iter().flat_map(|&p| arr[p * width..(p + 1) * width].to_vec()).collect() };
        let d = self.d;
        Self {
            v: pick(&self.v, d),
            v_t: pick(&self.v_t, d),
            v_s: pick(&self.v_s, d),
            a: pick(&self.a, d),
            t_local: pick(&self.t_local, self.n_seg * d),
            s_local: pick(&self.s_local, self.n_part * d),
            ..self.clone()
        }
    }

    pub fn losses(&self, w: &LossWeights) -> LossValues {
        let (n, d) = (self.n, self.d);
        let mut g = Graph::new();
        let c = |g: &mut Graph, shape: &[usize], data: &[f64]| g.constant(Tensor::new(shape.to_vec(), data.to_vec()).unwrap());
        let v = c(&mut g, &[n, d], &self.v);
        let f = FeatureBundle {
            vt_seq: v,
            vs_seq: v,
            vg_t: v,
            vg_s: v,
            vg: v,
            v,
            v_t: c(&mut g, &[n, d], &self.v_t),
            v_s: c(&mut g, &[n, d], &self.v_s),
            v_t_local: c(&mut g, &[n, self.n_seg, d], &self.t_local),
            v_s_local: c(&mut g, &[n, self.n_part, d], &self.s_local),
        };
        let a = c(&mut g, &[n, d], &self.a);
        total_loss(&mut g, &f, a, w, None).unwrap().values(&g)
    }
}

pub fn components(l: &LossValues) -> [f64; 5] {
    [l.total, l.instance, l.ts, l.consis, l.part]
}

pub fn max_diff(a: &LossValues, b: &LossValues) -> f64 {
    components(a).iter().zip(components(b)).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

use uniskel::encoder::{EncoderConfig, EncoderSettings};
use uniskel::harness::{prepare, Item};
use uniskel::motiongen::{generate, GenSpec};
use uniskel::skeleton::{build_unified_space, PaddingStrategy, SkeletonFormat, UnifiedSpace};
use uniskel::textbank::{synth_bank, LabelBank};

/// A generated corpus already turned into encoder inputs.
pub struct Task {
    pub space: UnifiedSpace,
    pub encoder: EncoderConfig,
    pub bank: LabelBank,
    pub items: Vec<Item>,
}

pub fn task(spec: &GenSpec, settings: &EncoderSettings, strategy: &PaddingStrategy, d_a: usize, space_formats: &[&str]) -> Task {
    let corpus = generate(spec, None).unwrap();
    let formats: Vec<SkeletonFormat> = space_formats.iter().map(|f| SkeletonFormat::preset(f).unwrap()).collect();
    let space = build_unified_space(&formats).unwrap();
    let bank = synth_bank(&spec.class_names(), d_a, spec.seed).unwrap();
    let encoder = EncoderConfig::for_space(&space, settings, d_a, matches!(strategy, PaddingStrategy::LearnablePlaceholder));
    let seqs: Vec<_> = corpus.all().cloned().collect();
    let items = prepare(&seqs, &space, strategy, &encoder, &|l| Ok(l.to_vec())).unwrap();
    Task { space, encoder, bank, items }
}

pub fn small_settings(d_h: usize, layers: usize, t_max: usize) -> EncoderSettings {
    EncoderSettings {
        d_h,
        layers,
        heads: 2,
        ffn_mult: 2,
        t_max,
        n_seg: 4.min(t_max),
        ..Default::default()
    }
}

//! Contrastive alignment objectives.
//!
//! `L_C` is InfoNCE with both inter-modal (`y^k`) and intra-modal (`x^k`)
//! negatives. The plain-`f64` functions are the reference definitions; the
//! graph versions compute the same quantities for a whole batch and are what
//! training differentiates.

use numgraph::{Graph, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::encoder::FeatureBundle;
use crate::error::{invalid, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub tau: f64,
    pub lambda_ts: f64,
    pub lambda_consis: f64,
    pub lambda_part: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            tau: 0.4,
            lambda_ts: 1.0,
            lambda_consis: 0.2,
            lambda_part: 0.5,
        }
    }
}

impl LossWeights {
    /// Only the global instance term.
    pub fn instance_only(tau: f64) -> Self {
        Self {
            tau,
            lambda_ts: 0.0,
            lambda_consis: 0.0,
            lambda_part: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::Config(format!("tau must be positive, got {}", self.tau)));
        }
        for (name, v) in [
            ("lambda_ts", self.lambda_ts),
            ("lambda_consis", self.lambda_consis),
            ("lambda_part", self.lambda_part),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be non-negative, got {v}")));
            }
        }
        Ok(())
    }
}

pub fn cosine(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::Shape(format!("cosine of lengths {} and {}", x.len(), y.len())));
    }
    let nx = x.iter().map(|a| a * a).sum::<f64>().sqrt();
    let ny = y.iter().map(|a| a * a).sum::<f64>().sqrt();
    if nx == 0.0 || ny == 0.0 {
        return Err(invalid("cosine of a zero vector"));
    }
    let dot: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    Ok((dot / (nx * ny)).clamp(-1.0, 1.0))
}

fn check_rows(xs: &[Vec<f64>], ys: &[Vec<f64>]) -> Result<()> {
    if xs.is_empty() || xs.len() != ys.len() {
        return Err(Error::Shape(format!("{} vs {} rows", xs.len(), ys.len())));
    }
    Ok(())
}

/// `L_C(x^i, y^i)` for row `i` of a batch.
pub fn info_nce(xs: &[Vec<f64>], ys: &[Vec<f64>], i: usize, tau: f64) -> Result<f64> {
    check_rows(xs, ys)?;
    if i >= xs.len() {
        return Err(invalid(format!("row {i} out of {}", xs.len())));
    }
    let pos = (cosine(&xs[i], &ys[i])? / tau).exp();
    let mut den = pos;
    for k in (0..xs.len()).filter(|&k| k != i) {
        den += (cosine(&xs[i], &ys[k])? / tau).exp() + (cosine(&xs[i], &xs[k])? / tau).exp();
    }
    Ok(-(pos / den).ln())
}

/// `(1/2N) * sum_i [L_C(x^i, y^i) + L_C(y^i, x^i)]`.
pub fn symm_loss(xs: &[Vec<f64>], ys: &[Vec<f64>], tau: f64) -> Result<f64> {
    check_rows(xs, ys)?;
    let n = xs.len();
    let mut s = 0.0;
    for i in 0..n {
        s += info_nce(xs, ys, i, tau)? + info_nce(ys, xs, i, tau)?;
    }
    Ok(s / (2 * n) as f64)
}

/// `[N x N]` weights on the negative terms: 1 off the diagonal, 0 on it,
/// and optionally 0 between samples that share a label.
pub fn negative_mask(n: usize, labels: Option<&[u32]>) -> Tensor {
    Tensor::from_fn(&[n, n], |idx| {
        let (i, k) = (idx / n, idx % n);
        let same = labels.is_some_and(|l| l[i] == l[k]);
        if i == k || same {
            0.0
        } else {
            1.0
        }
    })
}

/// Per-row `L_C` for a batch. Each row is computed as
/// `log(1 + sum_k w_ik [e^{(S^xy_ik - S^xy_ii)} + e^{(S^xx_ik - S^xy_ii)}])`,
/// which equals the printed form and is exactly zero when no negatives remain.
pub fn info_nce_rows(g: &mut Graph, x: Var, y: Var, tau: f64, mask: &Tensor) -> Result<Var> {
    let (xs, ys) = (g.shape(x).to_vec(), g.shape(y).to_vec());
    if xs.len() != 2 || xs != ys {
        return Err(Error::Shape(format!("contrastive inputs {xs:?} and {ys:?}")));
    }
    let n = xs[0];
    if mask.shape() != [n, n] {
        return Err(Error::Shape(format!("negative mask {:?} for batch {n}", mask.shape())));
    }
    let xn = g.l2_normalize(x)?;
    let yn = g.l2_normalize(y)?;
    let ynt = g.transpose(yn)?;
    let xnt = g.transpose(xn)?;
    let sxy = g.matmul(xn, ynt)?;
    let sxy = g.mul_scalar(sxy, 1.0 / tau)?;
    let sxx = g.matmul(xn, xnt)?;
    let sxx = g.mul_scalar(sxx, 1.0 / tau)?;
    let eye = g.constant(Tensor::eye(n));
    let diag = g.mul(sxy, eye)?;
    let pos = g.sum_axis(diag, 1)?;
    let pos = g.reshape(pos, &[n, 1])?;
    let w = g.constant(mask.clone());
    let a = g.sub(sxy, pos)?;
    let a = g.exp(a)?;
    let a = g.mul(a, w)?;
    let b = g.sub(sxx, pos)?;
    let b = g.exp(b)?;
    let b = g.mul(b, w)?;
    let e = g.add(a, b)?;
    let e = g.sum_axis(e, 1)?;
    let e = g.add_scalar(e, 1.0)?;
    Ok(g.log(e)?)
}

pub fn symm_loss_graph(g: &mut Graph, x: Var, y: Var, tau: f64, mask: &Tensor) -> Result<Var> {
    let a = info_nce_rows(g, x, y, tau, mask)?;
    let b = info_nce_rows(g, y, x, tau, mask)?;
    let s = g.add(a, b)?;
    let m = g.mean(s)?;
    Ok(g.mul_scalar(m, 0.5)?)
}

#[derive(Clone, Copy, Debug)]
pub struct LossVars {
    pub total: Var,
    pub instance: Var,
    pub ts: Var,
    pub consis: Var,
    pub part: Var,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossValues {
    #[serde(rename = "L_total")]
    pub total: f64,
    #[serde(rename = "L_instance")]
    pub instance: f64,
    #[serde(rename = "L_ts")]
    pub ts: f64,
    #[serde(rename = "L_consis")]
    pub consis: f64,
    #[serde(rename = "L_part")]
    pub part: f64,
}

impl LossVars {
    pub fn values(&self, g: &Graph) -> LossValues {
        LossValues {
            total: g.value(self.total).item(),
            instance: g.value(self.instance).item(),
            ts: g.value(self.ts).item(),
            consis: g.value(self.consis).item(),
            part: g.value(self.part).item(),
        }
    }
}

fn local_mean(g: &mut Graph, locals: Var, a: Var, tau: f64, mask: &Tensor) -> Result<Var> {
    let shape = g.shape(locals).to_vec();
    let (n, parts, d) = (shape[0], shape[1], shape[2]);
    let mut terms = Vec::with_capacity(parts);
    for j in 0..parts {
        let s = g.slice(locals, 1, j, 1)?;
        let s = g.reshape(s, &[n, d])?;
        let l = symm_loss_graph(g, s, a, tau, mask)?;
        terms.push(g.reshape(l, &[1])?);
    }
    let c = g.concat(&terms, 0)?;
    Ok(g.mean(c)?)
}

/// `L_total = L_instance + l_ts L_ts + l_consis L_consis + l_part L_part`,
/// with `a` holding one label embedding per sample. `labels`, when given,
/// removes same-label pairs from the negatives.
pub fn total_loss(g: &mut Graph, f: &FeatureBundle, a: Var, w: &LossWeights, labels: Option<&[u32]>) -> Result<LossVars> {
    w.validate()?;
    let vs = g.shape(f.v).to_vec();
    if g.shape(a) != vs.as_slice() {
        return Err(Error::Shape(format!("label embeddings {:?} vs features {vs:?}", g.shape(a))));
    }
    let n = vs[0];
    if labels.is_some_and(|l| l.len() != n) {
        return Err(Error::Shape("label list does not match batch".into()));
    }
    let mask = negative_mask(n, labels);
    let tau = w.tau;
    let instance = symm_loss_graph(g, f.v, a, tau, &mask)?;
    let lt = symm_loss_graph(g, f.v_t, a, tau, &mask)?;
    let ls = symm_loss_graph(g, f.v_s, a, tau, &mask)?;
    let ts = g.add(lt, ls)?;
    let ts = g.mul_scalar(ts, 0.5)?;
    let consis = symm_loss_graph(g, f.v_t, f.v_s, tau, &mask)?;
    let pt = local_mean(g, f.v_t_local, a, tau, &mask)?;
    let ps = local_mean(g, f.v_s_local, a, tau, &mask)?;
    let part = g.add(pt, ps)?;
    let part = g.mul_scalar(part, 0.5)?;

    let mut total = instance;
    for (v, lam) in [(ts, w.lambda_ts), (consis, w.lambda_consis), (part, w.lambda_part)] {
        if lam != 0.0 {
            let t = g.mul_scalar(v, lam)?;
            total = g.add(total, t)?;
        }
    }
    Ok(LossVars {
        total,
        instance,
        ts,
        consis,
        part,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rows(t: &Tensor) -> Vec<Vec<f64>> {
        let d = t.shape()[1];
        t.data().chunks(d).map(<[f64]>::to_vec).collect()
    }

    #[test]
    fn cosine_examples() {
        assert!((cosine(&[2.0, -1.0], &[2.0, -1.0]).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(cosine(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert!((cosine(&[1.0, 1.0], &[1.0, 0.0]).unwrap() - 0.5f64.sqrt()).abs() < 1e-15);
        assert!(cosine(&[0.0, 0.0], &[1.0, 0.0]).is_err());
    }

    #[test]
    fn orthonormal_pair_hand_value() {
        let e = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let expect = -(std::f64::consts::E / (std::f64::consts::E + 2.0)).ln();
        assert!((info_nce(&e, &e, 0, 1.0).unwrap() - expect).abs() < 1e-12);
        assert!((symm_loss(&e, &e, 1.0).unwrap() - expect).abs() < 1e-12);
        assert!((expect - 0.55144).abs() < 1e-5);

        let mut g = Graph::new();
        let x = g.constant(Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap());
        let l = symm_loss_graph(&mut g, x, x, 1.0, &negative_mask(2, None)).unwrap();
        assert!((g.value(l).item() - expect).abs() < 1e-12);
    }

    #[test]
    fn single_sample_is_exactly_zero() {
        let x = vec![vec![0.3, -2.0, 1.0]];
        let y = vec![vec![1.0, 0.5, 0.0]];
        assert_eq!(info_nce(&x, &y, 0, 0.4).unwrap(), 0.0);
        let mut g = Graph::new();
        let xv = g.constant(Tensor::new(vec![1, 3], x[0].clone()).unwrap());
        let yv = g.constant(Tensor::new(vec![1, 3], y[0].clone()).unwrap());
        let l = symm_loss_graph(&mut g, xv, yv, 0.4, &negative_mask(1, None)).unwrap();
        assert_eq!(g.value(l).item(), 0.0);
    }

    #[test]
    fn graph_matches_reference() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for n in 1..6 {
            let xt = Tensor::from_fn(&[n, 5], |_| rng.random_range(-1.0..1.0));
            let yt = Tensor::from_fn(&[n, 5], |_| rng.random_range(-1.0..1.0));
            let mut g = Graph::new();
            let (x, y) = (g.constant(xt.clone()), g.constant(yt.clone()));
            let rows_v = info_nce_rows(&mut g, x, y, 0.4, &negative_mask(n, None)).unwrap();
            let s = symm_loss_graph(&mut g, x, y, 0.4, &negative_mask(n, None)).unwrap();
            let (xr, yr) = (rows(&xt), rows(&yt));
            for i in 0..n {
                let r = info_nce(&xr, &yr, i, 0.4).unwrap();
                assert!((g.value(rows_v).data()[i] - r).abs() < 1e-12);
            }
            assert!((g.value(s).item() - symm_loss(&xr, &yr, 0.4).unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn masking_removes_same_label_negatives() {
        // two identical samples with the same label: no negatives left
        let mut g = Graph::new();
        let x = g.constant(Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.8, 0.6]).unwrap());
        let y = g.constant(Tensor::new(vec![2, 2], vec![0.0, 1.0, 0.6, 0.8]).unwrap());
        let l = symm_loss_graph(&mut g, x, y, 0.4, &negative_mask(2, Some(&[4, 4]))).unwrap();
        assert_eq!(g.value(l).item(), 0.0);
        let l = symm_loss_graph(&mut g, x, y, 0.4, &negative_mask(2, Some(&[4, 5]))).unwrap();
        assert!(g.value(l).item() > 0.0);
    }

    #[test]
    fn sharper_temperature_lowers_loss_at_the_optimum() {
        let e: Vec<Vec<f64>> = (0..3).map(|i| (0..3).map(|j| f64::from(u8::from(i == j))).collect()).collect();
        let mut prev = f64::INFINITY;
        for tau in [1.0, 0.7, 0.4, 0.2, 0.1] {
            let l = info_nce(&e, &e, 0, tau).unwrap();
            assert!(l < prev);
            prev = l;
        }
    }

    #[test]
    fn weight_validation() {
        assert!(LossWeights::default().validate().is_ok());
        assert!(LossWeights { tau: 0.0, ..Default::default() }.validate().is_err());
        assert!(LossWeights { lambda_part: -1.0, ..Default::default() }.validate().is_err());
    }
}

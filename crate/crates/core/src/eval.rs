//! Open-vocabulary inference by cosine similarity to label embeddings,
//! multi-label top-1 accuracy per frequency stratum, and calibrated
//! generalized zero-shot evaluation.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::labelspace::{primary_class, Stratum};
use crate::textbank::LabelBank;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Restrict {
    All,
    Seen,
    Unseen,
}

/// Cosine similarity of each row of `v` to every bank label, columns in
/// ascending label-id order.
pub fn similarity(v: &[Vec<f64>], bank: &LabelBank) -> Result<Vec<Vec<f64>>> {
    v.iter()
        .map(|row| {
            if row.len() != bank.dim() {
                return Err(Error::Shape(format!("embedding dim {} vs bank dim {}", row.len(), bank.dim())));
            }
            let n = row.iter().map(|x| x * x).sum::<f64>().sqrt();
            if n == 0.0 || !n.is_finite() {
                return Err(invalid("zero or non-finite embedding"));
            }
            Ok(bank
                .entries()
                .map(|(_, e)| e.vector.iter().zip(row).map(|(a, b)| a * b).sum::<f64>() / n)
                .collect())
        })
        .collect()
}

/// Element-wise mean of several score matrices of equal shape.
pub fn average_scores(sets: &[Vec<Vec<f64>>]) -> Result<Vec<Vec<f64>>> {
    let first = sets.first().ok_or_else(|| invalid("no score sets to average"))?;
    let mut out = first.clone();
    for s in &sets[1..] {
        if s.len() != out.len() || s.iter().zip(&out).any(|(a, b)| a.len() != b.len()) {
            return Err(Error::Shape("score sets differ in shape".into()));
        }
        for (o, r) in out.iter_mut().zip(s) {
            o.iter_mut().zip(r).for_each(|(a, b)| *a += b);
        }
    }
    let k = sets.len() as f64;
    out.iter_mut().flatten().for_each(|x| *x /= k);
    Ok(out)
}

/// `argmax_c (score_c - gamma * [c seen])` over the restricted classes,
/// ties to the lowest id. `gamma` only applies with `Restrict::All`.
pub fn predict(scores: &[Vec<f64>], bank: &LabelBank, gamma: f64, restrict: Restrict) -> Result<Vec<u32>> {
    let ids: Vec<u32> = bank.ids().collect();
    let allowed: Vec<bool> = ids
        .iter()
        .map(|&id| match restrict {
            Restrict::All => true,
            Restrict::Seen => bank.is_seen(id),
            Restrict::Unseen => bank.unseen().contains(&id),
        })
        .collect();
    if !allowed.iter().any(|&a| a) {
        return Err(invalid(format!("no classes left under {restrict:?}")));
    }
    scores
        .iter()
        .map(|row| {
            if row.len() != ids.len() {
                return Err(Error::Shape(format!("{} scores for {} classes", row.len(), ids.len())));
            }
            let mut best: Option<(f64, u32)> = None;
            for ((&id, &s), &ok) in ids.iter().zip(row).zip(&allowed) {
                if !ok {
                    continue;
                }
                let s = if restrict == Restrict::All && bank.is_seen(id) { s - gamma } else { s };
                if best.is_none_or(|(b, _)| s > b) {
                    best = Some((s, id));
                }
            }
            Ok(best.expect("non-empty class set").1)
        })
        .collect()
}

pub fn classify(v: &[Vec<f64>], bank: &LabelBank, gamma: f64, restrict: Restrict) -> Result<Vec<u32>> {
    if gamma < 0.0 {
        return Err(invalid(format!("gamma must be non-negative, got {gamma}")));
    }
    predict(&similarity(v, bank)?, bank, gamma, restrict)
}

pub fn multilabel_top1(pred: u32, truth: &[u32]) -> Result<bool> {
    if truth.is_empty() {
        return Err(invalid("empty ground-truth label set"));
    }
    Ok(truth.contains(&pred))
}

pub fn harmonic_mean(s: f64, u: f64) -> f64 {
    if s + u > 0.0 {
        2.0 * s * u / (s + u)
    } else {
        0.0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub samples: usize,
    pub gamma: f64,
    pub overall: f64,
    /// `None` when no evaluated sample falls in the stratum.
    pub many: Option<f64>,
    pub medium: Option<f64>,
    pub few: Option<f64>,
    /// primary class -> (correct, total)
    pub per_class: BTreeMap<u32, (usize, usize)>,
    pub zsl_acc: Option<f64>,
    pub seen_s: Option<f64>,
    pub unseen_u: Option<f64>,
    pub harmonic_h: Option<f64>,
}

fn ratio(c: usize, n: usize) -> Option<f64> {
    (n > 0).then(|| c as f64 / n as f64)
}

fn accuracy(preds: &[u32], labels: &[&Vec<u32>]) -> Result<Option<f64>> {
    let mut c = 0;
    for (p, l) in preds.iter().zip(labels) {
        c += usize::from(multilabel_top1(*p, l)?);
    }
    Ok(ratio(c, preds.len()))
}

/// Full report from precomputed scores. Overall and stratum accuracies use
/// every sample over all classes with calibration `gamma`; zero-shot
/// figures are added when the bank has unseen classes. A sample's class is
/// the lowest id in its label set.
pub fn evaluate_scores(
    scores: &[Vec<f64>],
    labels: &[Vec<u32>],
    bank: &LabelBank,
    strata: &BTreeMap<u32, Stratum>,
    gamma: f64,
) -> Result<EvalReport> {
    if scores.len() != labels.len() {
        return Err(Error::Shape(format!("{} score rows for {} samples", scores.len(), labels.len())));
    }
    if scores.is_empty() {
        return Err(invalid("nothing to evaluate"));
    }
    let preds = predict(scores, bank, gamma, Restrict::All)?;
    let mut per_class: BTreeMap<u32, (usize, usize)> = BTreeMap::new();
    let mut by_stratum: BTreeMap<Stratum, (usize, usize)> = BTreeMap::new();
    let mut correct = 0;
    for (p, l) in preds.iter().zip(labels) {
        let ok = usize::from(multilabel_top1(*p, l)?);
        let c = primary_class(l).expect("checked non-empty");
        correct += ok;
        let e = per_class.entry(c).or_default();
        e.0 += ok;
        e.1 += 1;
        if let Some(s) = strata.get(&c) {
            let e = by_stratum.entry(*s).or_default();
            e.0 += ok;
            e.1 += 1;
        }
    }
    let stratum = |s| by_stratum.get(&s).and_then(|&(c, n)| ratio(c, n));
    let mut report = EvalReport {
        samples: labels.len(),
        gamma,
        overall: correct as f64 / labels.len() as f64,
        many: stratum(Stratum::Many),
        medium: stratum(Stratum::Medium),
        few: stratum(Stratum::Few),
        per_class,
        zsl_acc: None,
        seen_s: None,
        unseen_u: None,
        harmonic_h: None,
    };
    if !bank.unseen().is_empty() {
        let split = gzsl_split(labels, bank);
        let pick = |idx: &[usize]| -> (Vec<Vec<f64>>, Vec<&Vec<u32>>) {
            (idx.iter().map(|&i| scores[i].clone()).collect(), idx.iter().map(|&i| &labels[i]).collect())
        };
        let (us, ul) = pick(&split.unseen);
        let (ss, sl) = pick(&split.seen);
        report.zsl_acc = accuracy(&predict(&us, bank, 0.0, Restrict::Unseen)?, &ul)?;
        report.unseen_u = accuracy(&predict(&us, bank, gamma, Restrict::All)?, &ul)?;
        report.seen_s = accuracy(&predict(&ss, bank, gamma, Restrict::All)?, &sl)?;
        if let (Some(s), Some(u)) = (report.seen_s, report.unseen_u) {
            report.harmonic_h = Some(harmonic_mean(s, u));
        }
    }
    Ok(report)
}

struct GzslSplit {
    seen: Vec<usize>,
    unseen: Vec<usize>,
}

fn gzsl_split(labels: &[Vec<u32>], bank: &LabelBank) -> GzslSplit {
    let mut s = GzslSplit {
        seen: Vec::new(),
        unseen: Vec::new(),
    };
    for (i, l) in labels.iter().enumerate() {
        match primary_class(l) {
            Some(c) if bank.unseen().contains(&c) => s.unseen.push(i),
            _ => s.seen.push(i),
        }
    }
    s
}

pub fn evaluate(
    embeddings: &[Vec<f64>],
    labels: &[Vec<u32>],
    bank: &LabelBank,
    strata: &BTreeMap<u32, Stratum>,
    gamma: f64,
) -> Result<EvalReport> {
    evaluate_scores(&similarity(embeddings, bank)?, labels, bank, strata, gamma)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GammaRow {
    pub gamma: f64,
    #[serde(rename = "S")]
    pub s: f64,
    #[serde(rename = "U")]
    pub u: f64,
    #[serde(rename = "H")]
    pub h: f64,
    /// Samples (seen and unseen) whose prediction is a seen class.
    pub seen_predicted: usize,
}

/// Evenly spaced calibration values from `from` to `to` inclusive.
pub fn gamma_grid(from: f64, to: f64, step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0) || to < from || from < 0.0 {
        return Err(invalid(format!("bad gamma range {from}..{to} step {step}")));
    }
    let n = ((to - from) / step + 1e-9).floor() as usize;
    Ok((0..=n).map(|i| from + i as f64 * step).collect())
}

/// Seen accuracy, unseen accuracy and harmonic mean at each `gamma`, over
/// all classes.
pub fn sweep_gamma(scores: &[Vec<f64>], labels: &[Vec<u32>], bank: &LabelBank, gammas: &[f64]) -> Result<Vec<GammaRow>> {
    if bank.unseen().is_empty() {
        return Err(invalid("calibration sweep needs unseen classes"));
    }
    let split = gzsl_split(labels, bank);
    let seen_samples: Vec<Vec<f64>> = split.seen.iter().map(|&i| scores[i].clone()).collect();
    let unseen_samples: Vec<Vec<f64>> = split.unseen.iter().map(|&i| scores[i].clone()).collect();
    let sl: Vec<&Vec<u32>> = split.seen.iter().map(|&i| &labels[i]).collect();
    let ul: Vec<&Vec<u32>> = split.unseen.iter().map(|&i| &labels[i]).collect();
    gammas
        .iter()
        .map(|&gamma| {
            let ps = predict(&seen_samples, bank, gamma, Restrict::All)?;
            let pu = predict(&unseen_samples, bank, gamma, Restrict::All)?;
            let s = accuracy(&ps, &sl)?.unwrap_or(0.0);
            let u = accuracy(&pu, &ul)?.unwrap_or(0.0);
            let seen_predicted = ps.iter().chain(&pu).filter(|&&p| bank.is_seen(p)).count();
            Ok(GammaRow {
                gamma,
                s,
                u,
                h: harmonic_mean(s, u),
                seen_predicted,
            })
        })
        .collect()
}

/// Row with the largest harmonic mean (earliest on ties).
pub fn best_gamma(rows: &[GammaRow]) -> Option<&GammaRow> {
    rows.iter().fold(None, |best: Option<&GammaRow>, r| match best {
        Some(b) if b.h >= r.h => Some(b),
        _ => Some(r),
    })
}

impl EvalReport {
    pub fn write_class_csv(&self, path: impl AsRef<Path>, bank: &LabelBank) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(w, "class_id,name,correct,total,accuracy")?;
        for (&c, &(ok, n)) in &self.per_class {
            let name = bank.get(c).map_or("", |e| e.name.as_str()).replace(',', " ");
            writeln!(w, "{c},{name},{ok},{n},{:.6}", ok as f64 / n as f64)?;
        }
        w.flush()?;
        Ok(())
    }
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let pct = |x: Option<f64>| x.map_or_else(|| "n/a".to_string(), |v| format!("{:.2}", 100.0 * v));
        writeln!(f, "samples      {}", self.samples)?;
        writeln!(f, "gamma        {}", self.gamma)?;
        writeln!(f, "overall      {}", pct(Some(self.overall)))?;
        writeln!(f, "many-shot    {}", pct(self.many))?;
        writeln!(f, "medium-shot  {}", pct(self.medium))?;
        write!(f, "few-shot     {}", pct(self.few))?;
        if self.zsl_acc.is_some() {
            writeln!(f)?;
            writeln!(f, "zsl          {}", pct(self.zsl_acc))?;
            writeln!(f, "seen S       {}", pct(self.seen_s))?;
            writeln!(f, "unseen U     {}", pct(self.unseen_u))?;
            write!(f, "harmonic H   {}", pct(self.harmonic_h))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Two seen classes (0, 1) and one unseen (2) on the axes.
    fn bank() -> LabelBank {
        LabelBank::new(
            vec![
                (0, "a".into(), vec![1.0, 0.0, 0.0]),
                (1, "b".into(), vec![0.0, 1.0, 0.0]),
                (2, "c".into(), vec![0.0, 0.0, 1.0]),
            ],
            [0, 1],
            [2],
        )
        .unwrap()
    }

    #[test]
    fn calibration_flips_close_calls() {
        let b = bank();
        let scores = vec![vec![0.9, 0.1, 0.8]];
        assert_eq!(predict(&scores, &b, 0.0, Restrict::All).unwrap(), vec![0]);
        // 0.9 - 0.2 = 0.7 < 0.8
        assert_eq!(predict(&scores, &b, 0.2, Restrict::All).unwrap(), vec![2]);
        assert_eq!(predict(&scores, &b, 0.0, Restrict::Unseen).unwrap(), vec![2]);
        assert_eq!(predict(&scores, &b, 5.0, Restrict::Seen).unwrap(), vec![0]);
    }

    #[test]
    fn ties_go_to_lowest_id() {
        let b = bank();
        assert_eq!(predict(&[vec![0.5, 0.5, 0.5]], &b, 0.0, Restrict::All).unwrap(), vec![0]);
    }

    #[test]
    fn empty_restriction_is_an_error() {
        let b = LabelBank::new(vec![(0, "a".into(), vec![1.0, 0.0])], [0], []).unwrap();
        assert!(predict(&[vec![1.0]], &b, 0.0, Restrict::Unseen).is_err());
    }

    #[test]
    fn classification_ignores_scale() {
        let b = bank();
        let v = vec![vec![0.3, 0.2, 0.25]];
        let w = vec![vec![30.0, 20.0, 25.0]];
        assert_eq!(classify(&v, &b, 0.1, Restrict::All).unwrap(), classify(&w, &b, 0.1, Restrict::All).unwrap());
    }

    #[test]
    fn multilabel_examples() {
        assert!(multilabel_top1(3, &[1, 3]).unwrap());
        assert!(!multilabel_top1(2, &[1, 3]).unwrap());
        assert!(multilabel_top1(4, &[4]).unwrap());
        assert!(multilabel_top1(4, &[]).is_err());
    }

    #[test]
    fn harmonic_example() {
        assert!((harmonic_mean(0.8, 0.4) - 0.8 * 0.8 / 1.2).abs() < 1e-15);
        assert_eq!(harmonic_mean(0.0, 0.0), 0.0);
    }

    #[test]
    fn perfect_predictions_score_one() {
        let b = bank();
        let emb = vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]];
        let labels = vec![vec![0], vec![1, 2], vec![2]];
        let strata = BTreeMap::from([(0, Stratum::Many), (1, Stratum::Medium), (2, Stratum::Few)]);
        let r = evaluate(&emb, &labels, &b, &strata, 0.0).unwrap();
        assert_eq!(r.overall, 1.0);
        assert_eq!((r.many, r.medium, r.few), (Some(1.0), Some(1.0), Some(1.0)));
        assert_eq!((r.zsl_acc, r.seen_s, r.unseen_u, r.harmonic_h), (Some(1.0), Some(1.0), Some(1.0), Some(1.0)));
        let total: usize = r.per_class.values().map(|c| c.0).sum();
        assert_eq!(total, 3);
    }

    #[test]
    fn empty_stratum_is_not_applicable() {
        let b = bank();
        let strata = BTreeMap::from([(0, Stratum::Many)]);
        let r = evaluate(&[vec![1.0, 0.0, 0.0]], &[vec![0]], &b, &strata, 0.0).unwrap();
        assert_eq!(r.few, None);
        assert!(r.to_string().contains("n/a"));
    }

    #[test]
    fn gamma_grid_is_inclusive() {
        let g = gamma_grid(0.0, 0.5, 0.1).unwrap();
        assert_eq!(g.len(), 6);
        assert!((g[5] - 0.5).abs() < 1e-12);
        assert!(gamma_grid(0.0, 0.5, 0.0).is_err());
    }

    #[test]
    fn ensemble_average() {
        let a = vec![vec![1.0, 0.0]];
        let b = vec![vec![0.0, 1.0]];
        assert_eq!(average_scores(&[a, b]).unwrap(), vec![vec![0.5, 0.5]]);
    }
}

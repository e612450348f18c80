//! Central-difference gradient oracle.

use crate::error::{invalid, GraphError, Result};
use crate::graph::{Graph, Var};
use crate::params::ParamStore;

/// Worst disagreement found by [`grad_check`].
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    /// max over entries of |a - n| / max(1, |a|, |n|)
    pub max_rel_err: f64,
    pub worst_param: Option<String>,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub entries_checked: usize,
    pub tol: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err < self.tol
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / 1f64.max(analytic.abs()).max(numeric.abs())
}

/// Compares reverse-mode gradients of a scalar function against central
/// differences `(f(p+h) - f(p-h)) / 2h` for every entry of every parameter
/// in `store`.
///
/// `f` must build the whole computation on the given graph, binding
/// parameters through [`Graph::param`], and return the scalar output.
pub fn grad_check<F>(store: &ParamStore, f: F, step: f64, tol: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &ParamStore) -> Result<Var>,
{
    if !(1e-6..=1e-3).contains(&step) {
        return Err(invalid("grad_check", format!("step {step} outside [1e-6, 1e-3]")));
    }
    let mut g = Graph::new();
    let out = f(&mut g, store)?;
    g.backward(out)?;

    let mut work = store.clone();
    let names: Vec<String> = store.names().map(str::to_string).collect();
    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst_param: None,
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
        entries_checked: 0,
        tol,
    };
    for name in &names {
        let n = store.get(name).unwrap().numel();
        let analytic_grad = g.param_grad(name).map(|t| t.data().to_vec());
        for idx in 0..n {
            let orig = store.get(name).unwrap().data()[idx];
            let eval = |work: &mut ParamStore, v: f64| -> Result<f64> {
                work.get_mut(name).unwrap().data_mut()[idx] = v;
                let mut gg = Graph::new();
                let o = f(&mut gg, work)?;
                let val = gg.value(o).item();
                if !val.is_finite() {
                    return Err(GraphError::NonFinite { op: "grad_check" });
                }
                Ok(val)
            };
            let plus = eval(&mut work, orig + step)?;
            let minus = eval(&mut work, orig - step)?;
            work.get_mut(name).unwrap().data_mut()[idx] = orig;
            let numeric = (plus - minus) / (2.0 * step);
            let analytic = analytic_grad.as_ref().map_or(0.0, |a| a[idx]);
            let err = relative_error(analytic, numeric);
            report.entries_checked += 1;
            if err > report.max_rel_err || report.worst_param.is_none() {
                report.max_rel_err = err;
                report.worst_param = Some(name.clone());
                report.worst_index = idx;
                report.analytic = analytic;
                report.numeric = numeric;
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn quadratic_matches_exactly() {
        let mut store = ParamStore::new();
        store.insert("x", Tensor::new(vec![2], vec![1.0, 2.0]).unwrap()).unwrap();
        let f = |g: &mut Graph, s: &ParamStore| {
            let x = g.param(s, "x")?;
            let sq = g.mul(x, x)?;
            g.sum(sq)
        };
        let mut g = Graph::new();
        let out = f(&mut g, &store).unwrap();
        g.backward(out).unwrap();
        assert_eq!(g.param_grad("x").unwrap().data(), &[2.0, 4.0]);
        let r = grad_check(&store, f, 1e-4, 1e-9).unwrap();
        assert!(r.max_rel_err < 1e-9, "{r:?}");
        assert_eq!(r.entries_checked, 2);
    }

    #[test]
    fn step_out_of_range_is_rejected() {
        let store = ParamStore::new();
        let f = |g: &mut Graph, _: &ParamStore| Ok(g.constant(Tensor::scalar(0.0)));
        assert!(grad_check(&store, f, 1e-2, 1e-6).is_err());
        assert!(grad_check(&store, f, 1e-8, 1e-6).is_err());
    }

    #[test]
    fn wrong_gradient_is_detected() {
        let mut store = ParamStore::new();
        store.insert("x", Tensor::new(vec![1], vec![3.0]).unwrap()).unwrap();
        // relu at a kink-free point but with the graph cut: constant copy
        let f = |g: &mut Graph, s: &ParamStore| {
            let x = g.param(s, "x")?;
            let frozen = g.constant(g.value(x).clone());
            let y = g.mul(x, frozen)?;
            g.sum(y)
        };
        let r = grad_check(&store, f, 1e-4, 1e-6).unwrap();
        assert!(!r.passed());
        assert!((r.analytic - 3.0).abs() < 1e-12);
        assert!((r.numeric - 6.0).abs() < 1e-6);
    }
}

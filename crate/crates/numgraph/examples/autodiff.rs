//! Differentiates a small two-layer network with the tape and verifies the
//! result with the finite-difference oracle.

use numgraph::{grad_check, Graph, ParamStore, Result, Tensor};

fn main() -> Result<()> {
    let mut store = ParamStore::new();
    store.insert("w1", Tensor::from_fn(&[3, 4], |i| ((i * 7 % 11) as f64 - 5.0) / 10.0))?;
    store.insert("w2", Tensor::from_fn(&[4, 1], |i| (i as f64 - 1.5) / 4.0))?;
    let x = Tensor::from_fn(&[5, 3], |i| (i as f64).sin());

    let net = |g: &mut Graph, s: &ParamStore| {
        let xv = g.constant(x.clone());
        let w1 = g.param(s, "w1")?;
        let w2 = g.param(s, "w2")?;
        let h = g.matmul(xv, w1)?;
        let h = g.gelu(h)?;
        let y = g.matmul(h, w2)?;
        let sq = g.mul(y, y)?;
        g.mean(sq)
    };

    let mut g = Graph::new();
    let loss = net(&mut g, &store)?;
    g.backward(loss)?;
    println!("loss {:.6}", g.value(loss).item());
    println!("d loss / d w2 = {:?}", g.param_grad("w2").unwrap().data());

    let report = grad_check(&store, net, 1e-5, 1e-6)?;
    println!("max relative error {:.2e} over {} entries", report.max_rel_err, report.entries_checked);
    Ok(())
}

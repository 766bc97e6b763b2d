//! A tour of the recorded-tape autodiff core on small hand-checkable cases.
//!
//! Three exercises: a scalar chain with a known closed-form derivative, a
//! softmax cross-entropy whose gradient must equal probs minus one-hot, and
//! a two-parameter least-squares problem driven to its known minimum by
//! plain gradient descent.
//!
//! Run with: cargo run --example autodiff_basics

use mltsf::tensor::{Graph, ParamStore, Tensor};
use mltsf::Result;

fn main() -> Result<()> {
    scalar_chain()?;
    softmax_gradient()?;
    least_squares()?;
    Ok(())
}

// d/dx of (3x + 1)^2 at x = 2 is 2 * (3x + 1) * 3 = 42.
fn scalar_chain() -> Result<()> {
    let mut store = ParamStore::new();
    store.insert("x", Tensor::scalar(2.0))?;

    let mut g = Graph::new();
    let x = g.param(&store, "x")?;
    let three = g.constant(&Tensor::scalar(3.0));
    let one = g.constant(&Tensor::scalar(1.0));
    let scaled = g.mul(three, x)?;
    let inner = g.add(scaled, one)?;
    let y = g.mul(inner, inner)?;
    let loss = g.sum(y)?;

    g.backward(loss)?;
    let gx = g.grad(x).expect("x is on the path to the loss")[0];
    println!("scalar chain: d/dx (3x+1)^2 at x=2 -> {gx} (expect 42)");
    assert_eq!(gx, 42.0);
    Ok(())
}

// Softmax cross-entropy gradient w.r.t. logits is softmax(z) - onehot.
fn softmax_gradient() -> Result<()> {
    let mut store = ParamStore::new();
    store.insert("z", Tensor::new(vec![1, 3], vec![0.5, -1.0, 2.0])?)?;

    let mut g = Graph::new();
    let z = g.param(&store, "z")?;
    let logp = g.log_softmax_lastdim(z)?;
    let target = 2usize;
    let picked = g.pick(logp, target)?;
    let loss = g.scale(picked, -1.0)?;

    g.backward(loss)?;
    let gz = g.grad(z).expect("z is on the path to the loss").to_vec();

    let vals = store.get("z")?.values();
    let m = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = vals.iter().map(|v| (v - m).exp()).collect();
    let sum: f64 = exps.iter().sum();
    for (i, gi) in gz.iter().enumerate() {
        let expect = exps[i] / sum - if i == target { 1.0 } else { 0.0 };
        println!("softmax grad[{i}] = {gi:+.6} (expect {expect:+.6})");
        assert!((gi - expect).abs() < 1e-12);
    }
    Ok(())
}

// Minimize sum of |a*t + b - y|^2 over three points on y = 2t - 1; gradient
// descent must recover a = 2, b = -1.
fn least_squares() -> Result<()> {
    let mut store = ParamStore::new();
    store.insert("a", Tensor::scalar(0.0))?;
    store.insert("b", Tensor::scalar(0.0))?;

    let ts = [1.0, 1.5, 2.0];
    let ys: Vec<f64> = ts.iter().map(|t| 2.0 * t - 1.0).collect();

    // The Hessian's largest eigenvalue is about 20, so the step size must
    // stay below 0.1 for plain gradient descent to contract.
    let lr = 0.08;
    let mut last = f64::INFINITY;
    for step in 0..600 {
        let mut g = Graph::new();
        let a = g.param(&store, "a")?;
        let b = g.param(&store, "b")?;
        let mut loss = g.constant(&Tensor::scalar(0.0));
        for (t, y) in ts.iter().zip(&ys) {
            let tv = g.constant(&Tensor::scalar(*t));
            let yv = g.constant(&Tensor::scalar(*y));
            let at = g.mul(a, tv)?;
            let pred = g.add(at, b)?;
            let resid = g.sub(pred, yv)?;
            let sq = g.mul(resid, resid)?;
            loss = g.add(loss, sq)?;
        }
        last = g.item(loss);
        g.backward(loss)?;
        let ga = g.grad(a).expect("grad a")[0];
        let gb = g.grad(b).expect("grad b")[0];
        store.get_mut("a")?.values_mut()[0] -= lr * ga;
        store.get_mut("b")?.values_mut()[0] -= lr * gb;
        if step % 150 == 0 {
            println!("step {step:>3}  loss {last:.3e}");
        }
    }

    let a = store.get("a")?.values()[0];
    let b = store.get("b")?.values()[0];
    println!("fitted line: y = {a:.4} t + {b:.4} (expect 2 t - 1), final loss {last:.3e}");
    assert!((a - 2.0).abs() < 1e-3 && (b + 1.0).abs() < 1e-3);
    Ok(())
}

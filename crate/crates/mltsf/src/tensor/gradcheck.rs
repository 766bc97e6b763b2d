//! Finite-difference verification of analytic gradients.

use crate::error::{Error, Result};
use crate::tensor::{Graph, ParamStore, Var};

/// Worst relative error found for one parameter tensor.
#[derive(Debug, Clone)]
pub struct ParamCheck {
    pub name: String,
    pub max_rel_err: f64,
    /// Flat element index where the worst error occurred.
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

/// Outcome of a full finite-difference sweep.
#[derive(Debug, Clone)]
pub struct GradReport {
    pub per_param: Vec<ParamCheck>,
    pub max_rel_err: f64,
    pub tolerance: f64,
    pub elements_checked: usize,
}

impl GradReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err < self.tolerance
    }
}

impl std::fmt::Display for GradReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for p in &self.per_param {
            writeln!(
                f,
                "  {:40} max rel err {:.3e}  (analytic {:+.6e}, numeric {:+.6e})",
                p.name, p.max_rel_err, p.analytic, p.numeric
            )?;
        }
        write!(
            f,
            "checked {} elements, max rel err {:.3e}, tolerance {:.1e}: {}",
            self.elements_checked,
            self.max_rel_err,
            self.tolerance,
            if self.passed() { "ok" } else { "FAILED" }
        )
    }
}

/// Relative error with an absolute floor. Central differences on a loss of
/// magnitude ~10 resolve derivatives to roughly 1e-11, so elements smaller
/// than the floor are compared absolutely; otherwise pure float roundoff
/// would dominate the ratio.
fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-5)
}

/// Compare analytic gradients of `build` against central differences.
///
/// `build` records a scalar loss for the given parameters; it must be a pure
/// function of the store (any randomness fixed beforehand). Every parameter
/// element is perturbed by `+-eps`, so cost is `2·numel + 1` forward passes.
pub fn finite_diff_check<F>(
    params: &ParamStore,
    eps: f64,
    tolerance: f64,
    build: F,
) -> Result<GradReport>
where
    F: Fn(&ParamStore, &mut Graph) -> Result<Var>,
{
    if eps <= 0.0 {
        return Err(Error::Config("finite_diff_check: eps must be positive".into()));
    }
    let mut work = params.clone();
    work.zero_grads();

    // Analytic pass.
    let mut graph = Graph::new();
    let loss = build(&work, &mut graph)?;
    if graph.values(loss).len() != 1 {
        return Err(Error::Shape("finite_diff_check: loss must be scalar".into()));
    }
    graph.backward(loss)?;
    graph.write_grads(&mut work)?;

    let names: Vec<String> = work.names().map(|s| s.to_string()).collect();
    let mut per_param = Vec::with_capacity(names.len());
    let mut global_max = 0.0f64;
    let mut checked = 0usize;

    for name in &names {
        let numel = work.get(name)?.numel();
        let analytic: Vec<f64> = match &work.get(name)?.grad {
            Some(g) => g.clone(),
            // Parameter unused by this loss: zero gradient is correct.
            None => vec![0.0; numel],
        };
        let mut worst = ParamCheck {
            name: name.clone(),
            max_rel_err: 0.0,
            worst_index: 0,
            analytic: analytic.first().copied().unwrap_or(0.0),
            numeric: 0.0,
        };
        #[allow(clippy::needless_range_loop)]
        for i in 0..numel {
            let orig = work.get(name)?.values()[i];

            work.get_mut(name)?.values_mut()[i] = orig + eps;
            let mut gp = Graph::new();
            let lp = build(&work, &mut gp)?;
            let plus = gp.item(lp);

            work.get_mut(name)?.values_mut()[i] = orig - eps;
            let mut gm = Graph::new();
            let lm = build(&work, &mut gm)?;
            let minus = gm.item(lm);

            work.get_mut(name)?.values_mut()[i] = orig;

            if !plus.is_finite() || !minus.is_finite() {
                return Err(Error::CheckAborted(format!(
                    "non-finite loss while perturbing {name}[{i}]"
                )));
            }
            let numeric = (plus - minus) / (2.0 * eps);
            let err = rel_err(analytic[i], numeric);
            checked += 1;
            if err > worst.max_rel_err {
                worst.max_rel_err = err;
                worst.worst_index = i;
                worst.analytic = analytic[i];
                worst.numeric = numeric;
            }
        }
        global_max = global_max.max(worst.max_rel_err);
        per_param.push(worst);
    }

    Ok(GradReport { per_param, max_rel_err: global_max, tolerance, elements_checked: checked })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn quadratic_passes() {
        let mut params = ParamStore::new();
        params
            .insert("w", Tensor::new(vec![3], vec![0.5, -1.2, 2.0]).unwrap())
            .unwrap();
        let report = finite_diff_check(&params, 1e-4, 1e-6, |ps, g| {
            let w = g.param(ps, "w")?;
            let sq = g.mul(w, w)?;
            g.sum(sq)
        })
        .unwrap();
        assert!(report.passed(), "{report}");
        assert_eq!(report.elements_checked, 3);
    }

    #[test]
    fn deliberately_wrong_gradient_fails() {
        // loss = sum(w^2) but with an extra untracked constant multiplying the
        // forward value only when not perturbed is hard to fake; instead scale
        // the loss by a value that build reads from a captured cell, making the
        // analytic pass see a different function than the FD passes.
        use std::cell::Cell;
        let calls = Cell::new(0usize);
        let mut params = ParamStore::new();
        params.insert("w", Tensor::new(vec![2], vec![1.0, 2.0]).unwrap()).unwrap();
        let report = finite_diff_check(&params, 1e-4, 1e-6, |ps, g| {
            let factor = if calls.get() == 0 { 2.0 } else { 1.0 };
            calls.set(calls.get() + 1);
            let w = g.param(ps, "w")?;
            let sq = g.mul(w, w)?;
            let s = g.sum(sq)?;
            g.scale(s, factor)
        })
        .unwrap();
        assert!(!report.passed());
    }

    #[test]
    fn unused_parameter_reports_zero_error() {
        let mut params = ParamStore::new();
        params.insert("used", Tensor::new(vec![1], vec![3.0]).unwrap()).unwrap();
        params.insert("unused", Tensor::new(vec![2], vec![1.0, 1.0]).unwrap()).unwrap();
        let report = finite_diff_check(&params, 1e-4, 1e-6, |ps, g| {
            let w = g.param(ps, "used")?;
            g.mul(w, w)
        })
        .unwrap();
        assert!(report.passed(), "{report}");
    }
}

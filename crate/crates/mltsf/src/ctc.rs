//! Alignment-free sequence loss and best-path decoding.
//!
//! The negative log-likelihood sums over every frame-level path that
//! collapses to the label sequence (merge adjacent repeats, then drop
//! blanks). It is computed with the standard blank-interleaved forward
//! recursion, recorded cell by cell on the autodiff graph in log space, so
//! the one reverse-mode engine differentiates it like everything else.
//! Unreachable cells are skipped rather than carried as -inf, keeping every
//! recorded value finite.

use crate::error::{Error, Result};
use crate::tensor::{Graph, Var};

/// Reserved blank id.
pub const BLANK: usize = 0;

/// Collapse a frame-level path: merge adjacent duplicates first, then remove
/// blanks.
pub fn collapse(path: &[usize]) -> Vec<usize> {
    let mut out = Vec::new();
    let mut prev = None;
    for &p in path {
        if Some(p) != prev {
            if p != BLANK {
                out.push(p);
            }
            prev = Some(p);
        }
    }
    out
}

/// Labels interleaved with blanks: `[b, y1, b, y2, ..., b]`, length 2L+1.
pub fn extended_label(labels: &[usize]) -> Vec<usize> {
    let mut ext = Vec::with_capacity(2 * labels.len() + 1);
    ext.push(BLANK);
    for &y in labels {
        ext.push(y);
        ext.push(BLANK);
    }
    ext
}

/// Count of adjacent equal label pairs; each one forces a separating blank.
pub fn adjacent_dup_pairs(labels: &[usize]) -> usize {
    labels.windows(2).filter(|w| w[0] == w[1]).count()
}

/// Minimum number of output positions that can emit this label sequence.
pub fn required_frames(labels: &[usize]) -> usize {
    labels.len() + adjacent_dup_pairs(labels)
}

fn validate_labels(labels: &[usize], vocab: usize) -> Result<()> {
    if labels.is_empty() {
        return Err(Error::Config("ctc: empty label sequence".into()));
    }
    for &y in labels {
        if y == BLANK {
            return Err(Error::Config("ctc: labels must not contain blank".into()));
        }
        if y >= vocab {
            return Err(Error::Config(format!(
                "ctc: label id {y} out of vocabulary range {vocab}"
            )));
        }
    }
    Ok(())
}

/// Negative log-likelihood of `labels` under per-position `logits` `[T, V]`.
///
/// Differentiable with respect to the logits. Fails when the label cannot
/// fit: T must be at least L plus the number of adjacent duplicate pairs.
pub fn ctc_nll(g: &mut Graph, logits: Var, labels: &[usize]) -> Result<Var> {
    let shape = g.shape(logits).to_vec();
    if shape.len() != 2 {
        return Err(Error::Shape(format!("ctc: logits must be [T, V], got {shape:?}")));
    }
    let (t_len, vocab) = (shape[0], shape[1]);
    validate_labels(labels, vocab)?;
    let required = required_frames(labels);
    if t_len < required {
        return Err(Error::InfeasibleLabel { frames: t_len, required });
    }

    let logp = g.log_softmax_lastdim(logits)?;
    let ext = extended_label(labels);
    let s_len = ext.len();

    // prev[s] is log alpha at the previous frame; None marks unreachable.
    let mut prev: Vec<Option<Var>> = vec![None; s_len];
    for t in 0..t_len {
        let mut cur: Vec<Option<Var>> = vec![None; s_len];
        // Cells that can still reach the last two positions by the final
        // frame, and that a path from the start can have reached at all.
        let hi = (2 * t + 1).min(s_len - 1);
        let slack = 2 * (t_len - 1 - t);
        let lo = s_len.saturating_sub(2 + slack);
        for s in lo..=hi {
            let mut sources: Vec<Var> = Vec::with_capacity(3);
            if t == 0 {
                // only the first blank and the first label start a path
                if s > 1 {
                    continue;
                }
            } else {
                for back in 0..=2usize {
                    if back > s {
                        break;
                    }
                    if back == 2 && (ext[s] == BLANK || ext[s] == ext[s - 2]) {
                        continue;
                    }
                    if let Some(v) = prev[s - back] {
                        sources.push(v);
                    }
                }
                if sources.is_empty() {
                    continue;
                }
            }
            let emit = g.pick(logp, t * vocab + ext[s])?;
            let cell = if t == 0 {
                emit
            } else if sources.len() == 1 {
                g.add(sources[0], emit)?
            } else {
                let lse = g.logsumexp(&sources)?;
                g.add(lse, emit)?
            };
            cur[s] = Some(cell);
        }
        prev = cur;
    }

    let finals: Vec<Var> = [s_len - 1, s_len - 2]
        .iter()
        .filter_map(|&s| prev[s])
        .collect();
    if finals.is_empty() {
        // feasibility was checked above, so this cannot happen
        return Err(Error::InfeasibleLabel { frames: t_len, required });
    }
    let total = if finals.len() == 1 { finals[0] } else { g.logsumexp(&finals)? };
    g.scale(total, -1.0)
}

/// Per-position argmax (ties to the smaller id), then collapse.
pub fn greedy_decode(logits: &[f64], vocab: usize) -> Vec<usize> {
    let path: Vec<usize> = logits
        .chunks(vocab)
        .map(|row| {
            let mut best = 0;
            for (i, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = i;
                }
            }
            best
        })
        .collect();
    collapse(&path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::subrng;
    use crate::tensor::Tensor;
    use rand::Rng;

    #[test]
    fn collapse_definition_cases() {
        let a = 1;
        let b = 2;
        assert_eq!(collapse(&[BLANK, a, a, BLANK, b]), vec![a, b]);
        assert_eq!(collapse(&[a, BLANK, a]), vec![a, a]);
        assert_eq!(collapse(&[]), Vec::<usize>::new());
        assert_eq!(collapse(&[BLANK, BLANK]), Vec::<usize>::new());
        assert_eq!(collapse(&[a, a, a]), vec![a]);
    }

    /// Independent collapse: run-length encode, then drop blank runs.
    fn collapse_rle(path: &[usize]) -> Vec<usize> {
        let mut runs: Vec<usize> = Vec::new();
        for &p in path {
            if runs.last() != Some(&p) {
                runs.push(p);
            }
        }
        runs.into_iter().filter(|&p| p != BLANK).collect()
    }

    #[test]
    fn collapse_agrees_with_rle_oracle_on_many_paths() {
        let mut rng = subrng(1, "collapse", 0);
        for _ in 0..100_000 {
            let len = rng.random_range(0..12);
            let v = rng.random_range(2..6);
            let path: Vec<usize> = (0..len).map(|_| rng.random_range(0..v)).collect();
            assert_eq!(collapse(&path), collapse_rle(&path), "path {path:?}");
        }
    }

    #[test]
    fn extended_label_pattern() {
        assert_eq!(extended_label(&[3]), vec![0, 3, 0]);
        assert_eq!(extended_label(&[1, 1, 2]), vec![0, 1, 0, 1, 0, 2, 0]);
        assert_eq!(adjacent_dup_pairs(&[1, 1, 2, 2, 2]), 3);
        assert_eq!(required_frames(&[1, 1, 2]), 4);
    }

    fn nll_value(t: usize, v: usize, logit_vals: &[f64], labels: &[usize]) -> f64 {
        let mut g = Graph::new();
        let logits = g.leaf(&Tensor::new(vec![t, v], logit_vals.to_vec()).unwrap());
        let loss = ctc_nll(&mut g, logits, labels).unwrap();
        g.item(loss)
    }

    #[test]
    fn single_frame_uniform_is_ln_two() {
        let loss = nll_value(1, 2, &[0.0, 0.0], &[1]);
        assert!((loss - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn two_frame_uniform_counts_three_paths() {
        // paths (A,A), (-,A), (A,-): 3 * 0.25
        let loss = nll_value(2, 2, &[0.0; 4], &[1]);
        assert!((loss + 0.75f64.ln()).abs() < 1e-12);
    }

    /// Exhaustive path enumeration oracle in the probability domain.
    fn nll_enumeration(t: usize, v: usize, logit_vals: &[f64], labels: &[usize]) -> f64 {
        let mut probs = vec![0.0; t * v];
        for (row_p, row_l) in probs.chunks_mut(v).zip(logit_vals.chunks(v)) {
            let m = row_l.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let denom: f64 = row_l.iter().map(|x| (x - m).exp()).sum();
            for (p, &l) in row_p.iter_mut().zip(row_l) {
                *p = (l - m).exp() / denom;
            }
        }
        let mut total = 0.0;
        let n_paths = v.pow(t as u32);
        let mut path = vec![0usize; t];
        for code in 0..n_paths {
            let mut c = code;
            for slot in path.iter_mut() {
                *slot = c % v;
                c /= v;
            }
            if collapse(&path) == labels {
                total += path
                    .iter()
                    .enumerate()
                    .map(|(i, &p)| probs[i * v + p])
                    .product::<f64>();
            }
        }
        -total.ln()
    }

    #[test]
    fn dp_matches_enumeration_on_random_instances() {
        let mut rng = subrng(2, "ctc-enum", 0);
        let mut done = 0;
        while done < 150 {
            let t = rng.random_range(1..=4usize);
            let v = rng.random_range(2..=3usize);
            let l = rng.random_range(1..=2usize);
            let labels: Vec<usize> = (0..l).map(|_| rng.random_range(1..v)).collect();
            if required_frames(&labels) > t {
                continue;
            }
            let logits: Vec<f64> = (0..t * v).map(|_| rng.random_range(-2.0..2.0)).collect();
            let dp = nll_value(t, v, &logits, &labels);
            let brute = nll_enumeration(t, v, &logits, &labels);
            assert!((dp - brute).abs() < 1e-9, "dp {dp} vs brute {brute}");
            assert!((-dp).exp() > 0.0 && (-dp).exp() <= 1.0 + 1e-12);
            done += 1;
        }
    }

    #[test]
    fn loss_invariant_to_per_frame_logit_shift() {
        let mut rng = subrng(3, "ctc-shift", 0);
        let (t, v) = (5, 4);
        let labels = vec![2, 1];
        let logits: Vec<f64> = (0..t * v).map(|_| rng.random_range(-1.5..1.5)).collect();
        let base = nll_value(t, v, &logits, &labels);
        let mut shifted = logits.clone();
        for (i, row) in shifted.chunks_mut(v).enumerate() {
            let c = (i as f64 - 2.0) * 3.5;
            for x in row.iter_mut() {
                *x += c;
            }
        }
        let after = nll_value(t, v, &shifted, &labels);
        assert!((base - after).abs() < 1e-9);
    }

    #[test]
    fn nll_gradient_matches_finite_differences() {
        let mut rng = subrng(4, "ctc-fd", 0);
        let (t, v) = (6, 4);
        let labels = vec![1, 3, 1];
        let logits: Vec<f64> = (0..t * v).map(|_| rng.random_range(-1.0..1.0)).collect();

        let mut g = Graph::new();
        let lv = g.leaf(&Tensor::new(vec![t, v], logits.clone()).unwrap().with_grad());
        let loss = ctc_nll(&mut g, lv, &labels).unwrap();
        g.backward(loss).unwrap();
        let analytic = g.grad(lv).unwrap().to_vec();

        let eps = 1e-5;
        for i in 0..t * v {
            let mut plus = logits.clone();
            plus[i] += eps;
            let mut minus = logits.clone();
            minus[i] -= eps;
            let numeric =
                (nll_value(t, v, &plus, &labels) - nll_value(t, v, &minus, &labels)) / (2.0 * eps);
            let rel = (analytic[i] - numeric).abs()
                / analytic[i].abs().max(numeric.abs()).max(1e-8);
            assert!(rel < 1e-4, "logit {i}: analytic {} vs numeric {numeric}", analytic[i]);
        }
    }

    #[test]
    fn raising_correct_logit_lowers_loss() {
        // single-path instance: T=1, label [A]
        let base = nll_value(1, 3, &[0.0, 0.0, 0.0], &[1]);
        let better = nll_value(1, 3, &[0.0, 1.0, 0.0], &[1]);
        assert!(better < base);
    }

    #[test]
    fn infeasible_labels_error() {
        let mut g = Graph::new();
        let logits = g.leaf(&Tensor::zeros(vec![2, 3]));
        match ctc_nll(&mut g, logits, &[1, 1]) {
            Err(Error::InfeasibleLabel { frames, required }) => {
                assert_eq!((frames, required), (2, 3));
            }
            other => panic!("expected infeasible label, got {other:?}"),
        }
        // same length is feasible for distinct labels
        let ok = g.leaf(&Tensor::zeros(vec![2, 3]));
        assert!(ctc_nll(&mut g, ok, &[1, 2]).is_ok());
    }

    #[test]
    fn label_validation() {
        let mut g = Graph::new();
        let logits = g.leaf(&Tensor::zeros(vec![3, 3]));
        assert!(ctc_nll(&mut g, logits, &[]).is_err());
        assert!(ctc_nll(&mut g, logits, &[0]).is_err());
        assert!(ctc_nll(&mut g, logits, &[7]).is_err());
    }

    #[test]
    fn greedy_decode_cases() {
        // favors blank, A, blank -> [A]
        let logits = [5.0, 0.0, 0.0, 0.0, 9.0, 0.0, 5.0, 0.0, 0.0];
        assert_eq!(greedy_decode(&logits, 3), vec![1]);
        // all blank -> empty
        let blanks = [5.0, 0.0, 0.0, 5.0, 0.0, 0.0];
        assert_eq!(greedy_decode(&blanks, 3), Vec::<usize>::new());
        // argmax tie goes to the smaller id
        let tie = [0.0, 3.0, 3.0];
        assert_eq!(greedy_decode(&tie, 3), vec![1]);
    }

    #[test]
    fn greedy_decode_agrees_with_independent_script() {
        let mut rng = subrng(5, "decode", 0);
        for _ in 0..2000 {
            let t = rng.random_range(1..10);
            let v = rng.random_range(2..6);
            let logits: Vec<f64> = (0..t * v).map(|_| rng.random_range(-3.0..3.0)).collect();
            let got = greedy_decode(&logits, v);

            // independent: explicit max scan per row, then RLE collapse
            let mut path = Vec::with_capacity(t);
            for row in logits.chunks(v) {
                let mut best_i = 0;
                let mut best_v = f64::NEG_INFINITY;
                for (i, &x) in row.iter().enumerate() {
                    if x > best_v {
                        best_v = x;
                        best_i = i;
                    }
                }
                path.push(best_i);
            }
            let expect = collapse_rle(&path);
            assert_eq!(got, expect);
            assert!(got.len() <= t);
            assert!(got.iter().all(|&s| s != BLANK));
        }
    }
}

//! Optimizer and the training / evaluation loops.
//!
//! Every source of randomness is derived from the run seed and the epoch
//! index, never from mutable global state, so a run can be reproduced or
//! resumed from any epoch boundary and continue bit-for-bit identically.

use std::collections::BTreeMap;

use crate::config::Config;
use crate::data::{subrng, temporal_rescale, Dataset};
use crate::error::{Error, Result};
use crate::metrics::{edit_stats, EditStats, WerReport};
use crate::model::Model;
use crate::tensor::{Graph, ParamStore, Var};
use rand::seq::SliceRandom;
use rand::Rng;

// ── Loss ─────────────────────────────────────────────────────────────

/// Training objective: `data_loss + l2 * sum(w^2)` over every parameter
/// whose name ends in ".weight". Biases, norm parameters and position
/// tables are never penalized. With `l2 == 0` the data loss is returned
/// unchanged, not merely plus a zero term.
pub fn total_loss(g: &mut Graph, store: &ParamStore, data_loss: Var, l2: f64) -> Result<Var> {
    if l2 == 0.0 {
        return Ok(data_loss);
    }
    let mut acc: Option<Var> = None;
    let names: Vec<String> = store
        .names()
        .filter(|n| n.ends_with(".weight"))
        .map(|n| n.to_string())
        .collect();
    for name in &names {
        let p = g.param(store, name)?;
        let sq = g.mul(p, p)?;
        let s = g.sum(sq)?;
        acc = Some(match acc {
            Some(a) => g.add(a, s)?,
            None => s,
        });
    }
    match acc {
        None => Ok(data_loss),
        Some(a) => {
            let penalty = g.scale(a, l2)?;
            g.add(data_loss, penalty)
        }
    }
}

// ── Adam ─────────────────────────────────────────────────────────────

/// Adam with bias correction. Moments are kept per parameter name; the
/// update walks parameters in lexicographic name order. A missing gradient
/// counts as zero (the moments still decay).
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    pub m: BTreeMap<String, Vec<f64>>,
    pub v: BTreeMap<String, Vec<f64>>,
}

impl Default for Adam {
    fn default() -> Self {
        Adam::new()
    }
}

impl Adam {
    pub fn new() -> Self {
        Adam { beta1: 0.9, beta2: 0.999, eps: 1e-8, t: 0, m: BTreeMap::new(), v: BTreeMap::new() }
    }

    /// One update over all parameters. Rejects the whole step before
    /// touching anything if any gradient element is non-finite.
    pub fn step(&mut self, store: &mut ParamStore, lr: f64) -> Result<()> {
        for (name, tensor) in store.iter() {
            if let Some(grad) = &tensor.grad {
                if grad.iter().any(|x| !x.is_finite()) {
                    return Err(Error::NonFiniteGradient { param: name.to_string() });
                }
            }
        }
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for (name, tensor) in store.iter_mut() {
            let n = tensor.numel();
            let grad: Vec<f64> = match &tensor.grad {
                Some(gv) => gv.clone(),
                None => vec![0.0; n],
            };
            let m = self.m.entry(name.to_string()).or_insert_with(|| vec![0.0; n]);
            let v = self.v.entry(name.to_string()).or_insert_with(|| vec![0.0; n]);
            let w = tensor.values_mut();
            for i in 0..n {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * grad[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                w[i] -= lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

/// Stepwise decay: the base rate is halved (or scaled by `factor`) once per
/// `interval` epochs after `start`. Epochs before `start` use the base rate.
pub fn lr_schedule(base: f64, epoch: usize, start: usize, interval: usize, factor: f64) -> f64 {
    let steps = epoch.saturating_sub(start) / interval;
    base * factor.powi(steps as i32)
}

// ── Training loop ────────────────────────────────────────────────────

/// Everything that persists across a suspend/resume boundary.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub store: ParamStore,
    pub adam: Adam,
    /// Completed epoch count; resuming continues at this epoch index.
    pub epochs_done: usize,
    pub best_dev_wer: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochTrace {
    pub epoch: usize,
    pub mean_loss: f64,
    pub lr: f64,
    pub dev_wer: Option<f64>,
}

#[derive(Debug)]
pub struct TrainReport {
    pub state: TrainState,
    pub traces: Vec<EpochTrace>,
    /// Set when training aborted on a non-finite loss or gradient; the
    /// returned state is then the snapshot from the last completed epoch.
    pub diverged: Option<(usize, usize)>,
}

fn is_divergence(err: &Error) -> bool {
    matches!(err, Error::NonFinite { .. } | Error::NonFiniteGradient { .. })
}

/// Run (or continue) training. Shuffling and augmentation draws depend only
/// on `(seed, epoch)`, so resuming from a checkpoint at an epoch boundary
/// reproduces the uninterrupted run exactly.
pub fn train(
    cfg: &Config,
    model: &Model,
    train_set: &Dataset,
    dev_set: Option<&Dataset>,
    resume: Option<TrainState>,
) -> Result<TrainReport> {
    if model.encoder.vocab != train_set.vocab.size() {
        return Err(Error::VocabMismatch {
            checkpoint: model.encoder.vocab,
            dataset: train_set.vocab.size(),
        });
    }
    if train_set.samples.is_empty() {
        return Err(Error::Config("train: empty training set".into()));
    }
    let mut state = match resume {
        Some(s) => s,
        None => TrainState {
            store: model.init_params(cfg.seed)?,
            adam: Adam::new(),
            epochs_done: 0,
            best_dev_wer: None,
        },
    };
    let mut traces = Vec::new();
    let mut last_finished = state.clone();

    for epoch in state.epochs_done..cfg.epochs {
        let lr = lr_schedule(cfg.lr, epoch, cfg.decay_start, cfg.decay_interval, cfg.decay_factor);
        let mut order: Vec<usize> = (0..train_set.samples.len()).collect();
        order.shuffle(&mut subrng(cfg.seed, "shuffle", epoch as u64));
        let mut aug_rng = subrng(cfg.seed, "augment", epoch as u64);

        let mut loss_sum = 0.0;
        let mut loss_count = 0usize;
        for (step, batch) in order.chunks(cfg.batch_size).enumerate() {
            state.store.zero_grads();
            let mut batch_ok = || -> Result<()> {
                for &idx in batch {
                    let sample = &train_set.samples[idx];
                    let features = if cfg.augment {
                        // one draw per sample even when the factor is 1.0,
                        // so toggling a single sample cannot shift the rest
                        // of the epoch's stream
                        let factor = [0.8, 1.0, 1.2][aug_rng.random_range(0..3)];
                        temporal_rescale(&sample.features, factor)?
                    } else {
                        sample.features.clone()
                    };
                    let padded = model.prepare(&features, &sample.labels)?;
                    let mut g = Graph::new();
                    let data_loss = model.sample_loss(&mut g, &state.store, &padded, &sample.labels)?;
                    let loss = total_loss(&mut g, &state.store, data_loss, cfg.l2)?;
                    g.backward(loss)?;
                    g.write_grads(&mut state.store)?;
                    loss_sum += g.item(loss);
                    loss_count += 1;
                }
                state.store.scale_grads(1.0 / batch.len() as f64);
                state.adam.step(&mut state.store, lr)
            };
            match batch_ok() {
                Ok(()) => {}
                Err(e) if is_divergence(&e) => {
                    return Ok(TrainReport {
                        state: last_finished,
                        traces,
                        diverged: Some((epoch, step)),
                    });
                }
                Err(e) => return Err(e),
            }
        }

        let dev_wer = match dev_set {
            Some(dev) => {
                let (report, _) = evaluate(model, &state.store, dev)?;
                Some(report.wer)
            }
            None => None,
        };
        if let Some(w) = dev_wer {
            if state.best_dev_wer.is_none_or(|b| w < b) {
                state.best_dev_wer = Some(w);
            }
        }
        state.epochs_done = epoch + 1;
        traces.push(EpochTrace { epoch, mean_loss: loss_sum / loss_count as f64, lr, dev_wer });
        last_finished = state.clone();
    }

    Ok(TrainReport { state, traces, diverged: None })
}

// ── Evaluation ───────────────────────────────────────────────────────

/// Greedy-decode every sample and aggregate error counts over the corpus
/// before forming rates.
pub fn evaluate(model: &Model, store: &ParamStore, data: &Dataset) -> Result<(WerReport, EditStats)> {
    if model.encoder.vocab != data.vocab.size() {
        return Err(Error::VocabMismatch {
            checkpoint: model.encoder.vocab,
            dataset: data.vocab.size(),
        });
    }
    let mut total = EditStats::default();
    for sample in &data.samples {
        let hyp = model.decode(store, &sample.features, &sample.labels)?;
        total.merge(&edit_stats(&sample.labels, &hyp));
    }
    Ok((WerReport::from_stats(&total)?, total))
}

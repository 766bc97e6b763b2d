//! Benchmark dataset and ablation suites.
//!
//! The benchmark is a fixed synthetic recognition task (11 glosses plus
//! blank, heterogeneous gloss durations, moderate frame noise) small enough
//! to train in seconds per run. Suites swap one design axis at a time
//! against the shared base config so the comparison isolates that axis.

use crate::config::Config;
use crate::data::{synth_split, Dataset};
use crate::error::{Error, Result};
use crate::fusion::{AggMode, PoolMode, SelectMode};
use crate::model::Model;
use crate::train::train;

/// Shared benchmark setup. Seeds set per run; see [`run_variant`].
pub fn benchmark_config() -> Config {
    let mut cfg = Config::default();
    cfg.scales = vec![8, 6, 4];
    cfg.encoder_filters = (5, 1);
    cfg.feat_dim = 32;
    cfg.out_dim = 32;
    cfg.n_glosses = 11;
    cfg.d_min = 4;
    cfg.d_max = 14;
    cfg.sigma = 1.15;
    cfg.trans_min = 2;
    cfg.trans_max = 6;
    cfg.dropout_prob = 0.55;
    cfg.glosses_min = 2;
    cfg.glosses_max = 5;
    cfg.lr = 2e-3;
    cfg.l2 = 1e-4;
    cfg.epochs = 50;
    cfg.decay_start = 32;
    cfg.decay_interval = 6;
    cfg.decay_factor = 0.5;
    cfg.batch_size = 4;
    cfg.augment = true;
    cfg
}

/// Train and dev splits drawn from the config's generator seed. The splits
/// depend only on the synthesis fields and seed, so every variant sharing a
/// seed sees identical data.
pub fn benchmark_data(cfg: &Config, n_train: usize, n_dev: usize) -> Result<(Dataset, Dataset)> {
    let sc = cfg.synth();
    let vocab = sc.vocab()?;
    let range = (cfg.glosses_min, cfg.glosses_max);
    let train = Dataset {
        vocab: vocab.clone(),
        samples: synth_split(&sc, "train", n_train, range)?,
    };
    let dev = Dataset { vocab, samples: synth_split(&sc, "dev", n_dev, range)? };
    Ok((train, dev))
}

/// Level-1 filter pair whose receptive field equals `k`. The field
/// fa + 2*fb + 1 with odd filters is always even, so odd radii have no
/// matching encoder.
pub fn filters_for_radius(k: usize) -> Result<(usize, usize)> {
    if k < 4 || !k.is_multiple_of(2) {
        return Err(Error::InvalidGeometry(format!(
            "no odd filter pair reaches receptive field {k}; need an even radius >= 4"
        )));
    }
    Ok((k - 3, 1))
}

/// Restrict the config to one fusion scale, re-matching the encoder.
pub fn with_single_scale(base: &Config, k: usize) -> Result<Config> {
    let mut cfg = base.clone();
    cfg.scales = vec![k];
    cfg.encoder_filters = filters_for_radius(k)?;
    cfg.validate()?;
    Ok(cfg)
}

/// One training run of a named variant at a given seed. Reports the best
/// dev word error rate seen across epochs.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub label: String,
    pub seed: u64,
    pub dev_wer: f64,
    pub final_loss: f64,
}

pub fn run_variant(label: &str, base: &Config, seed: u64, n_train: usize, n_dev: usize) -> Result<RunOutcome> {
    // The corpus comes from the base config so every (variant, seed) pair
    // trains on identical data; `seed` only moves init, shuffling and
    // augmentation.
    let (train_set, dev_set) = benchmark_data(base, n_train, n_dev)?;
    let mut cfg = base.clone();
    cfg.seed = seed;
    let model = Model::from_config(&cfg, cfg.n_glosses + 1)?;
    let report = train(&cfg, &model, &train_set, Some(&dev_set), None)?;
    if let Some((epoch, step)) = report.diverged {
        return Err(Error::Diverged { epoch, step });
    }
    Ok(RunOutcome {
        label: label.to_string(),
        seed,
        dev_wer: report.state.best_dev_wer.expect("dev set was provided"),
        final_loss: report.traces.last().expect("at least one epoch").mean_loss,
    })
}

pub fn median(values: &[f64]) -> f64 {
    assert!(!values.is_empty());
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("no NaN scores"));
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

/// A named grid of configs sharing the benchmark base.
pub fn suite(name: &str) -> Result<Vec<(String, Config)>> {
    let base = benchmark_config();
    let entries = match name {
        "scales" => {
            let mut rows = vec![("multi {8,6,4}".to_string(), base.clone())];
            for k in [8, 6, 4] {
                rows.push((format!("single {{{k}}}"), with_single_scale(&base, k)?));
            }
            let mut none = base.clone();
            none.use_mltsf = false;
            rows.push(("none".to_string(), none));
            rows
        }
        "components" => {
            let mut no_rpe = base.clone();
            no_rpe.use_rpe = false;
            let mut no_tcn = base.clone();
            no_tcn.use_tcn = false;
            let mut mean_pool = base.clone();
            mean_pool.pool = PoolMode::Mean;
            vec![
                ("full".to_string(), base.clone()),
                ("no rpe".to_string(), no_rpe),
                ("no tcn".to_string(), no_tcn),
                ("mean pool".to_string(), mean_pool),
            ]
        }
        "selector" => {
            let mut center = base.clone();
            center.selector = SelectMode::Center;
            let mut global = base.clone();
            global.selector = SelectMode::Global;
            vec![
                ("local top-k".to_string(), base.clone()),
                ("center".to_string(), center),
                ("global".to_string(), global),
            ]
        }
        "aggregator" => {
            let mut avg = base.clone();
            avg.aggregator = AggMode::Average;
            vec![("dynamic".to_string(), base.clone()), ("average".to_string(), avg)]
        }
        "attention" => {
            let mut sparse = base.clone();
            sparse.sparse_attention = true;
            vec![
                ("top-k conv".to_string(), base.clone()),
                ("sparse attention".to_string(), sparse),
            ]
        }
        other => {
            return Err(Error::Config(format!(
                "unknown suite {other:?}; expected scales|components|selector|aggregator|attention"
            )))
        }
    };
    for (_, cfg) in &entries {
        cfg.validate()?;
    }
    Ok(entries)
}

#[derive(Debug, Clone)]
pub struct SuiteRow {
    pub label: String,
    pub per_seed: Vec<RunOutcome>,
    pub median_wer: f64,
}

/// Run every entry at every seed. `progress` fires after each run with the
/// outcome, for live reporting.
pub fn run_suite(
    entries: &[(String, Config)],
    seeds: &[u64],
    n_train: usize,
    n_dev: usize,
    mut progress: impl FnMut(&RunOutcome),
) -> Result<Vec<SuiteRow>> {
    let mut rows = Vec::with_capacity(entries.len());
    for (label, cfg) in entries {
        let mut per_seed = Vec::with_capacity(seeds.len());
        for &seed in seeds {
            let outcome = run_variant(label, cfg, seed, n_train, n_dev)?;
            progress(&outcome);
            per_seed.push(outcome);
        }
        let wers: Vec<f64> = per_seed.iter().map(|o| o.dev_wer).collect();
        rows.push(SuiteRow { label: label.clone(), per_seed, median_wer: median(&wers) });
    }
    Ok(rows)
}

/// Fixed-width comparison table for terminal output.
pub fn format_table(rows: &[SuiteRow], seeds: &[u64]) -> String {
    let mut out = String::new();
    let label_w = rows.iter().map(|r| r.label.len()).max().unwrap_or(7).max(7);
    out.push_str(&format!("{:label_w$}  ", "variant"));
    for &s in seeds {
        out.push_str(&format!("{:>9}", format!("seed {s}")));
    }
    out.push_str(&format!("{:>9}\n", "median"));
    for row in rows {
        out.push_str(&format!("{:label_w$}  ", row.label));
        for o in &row.per_seed {
            out.push_str(&format!("{:>8.1}%", 100.0 * o.dev_wer));
        }
        out.push_str(&format!("{:>8.1}%\n", 100.0 * row.median_wer));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_suites_validate() {
        for name in ["scales", "components", "selector", "aggregator", "attention"] {
            let entries = suite(name).unwrap();
            assert!(entries.len() >= 2, "{name}");
        }
        assert!(suite("nope").is_err());
    }

    #[test]
    fn filter_pairs_hit_the_radius() {
        for k in [4usize, 6, 8, 10, 12] {
            let f = filters_for_radius(k).unwrap();
            assert_eq!(f.0 + 2 * f.1 + 1, k);
            assert_eq!(f.0 % 2, 1);
        }
        assert!(filters_for_radius(5).is_err());
        assert!(filters_for_radius(2).is_err());
    }

    #[test]
    fn benchmark_data_is_seed_deterministic_and_shared() {
        let cfg = benchmark_config();
        let (a_train, a_dev) = benchmark_data(&cfg, 3, 2).unwrap();
        let (b_train, _) = benchmark_data(&cfg, 3, 2).unwrap();
        assert_eq!(a_train.samples, b_train.samples);
        assert_eq!(a_train.samples.len(), 3);
        assert_eq!(a_dev.samples.len(), 2);
        // a variant flag does not perturb the data
        let mut variant = cfg.clone();
        variant.use_rpe = false;
        let (c_train, _) = benchmark_data(&variant, 3, 2).unwrap();
        assert_eq!(a_train.samples, c_train.samples);
    }

    #[test]
    fn median_of_odd_and_even_lists() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert_eq!(median(&[5.0]), 5.0);
    }

    #[test]
    fn tiny_variant_run_completes() {
        let mut cfg = benchmark_config();
        cfg.epochs = 1;
        cfg.feat_dim = 6;
        cfg.out_dim = 8;
        cfg.glosses_min = 1;
        cfg.glosses_max = 2;
        let outcome = run_variant("smoke", &cfg, 1, 4, 2).unwrap();
        assert!(outcome.final_loss.is_finite());
        assert!(outcome.dev_wer.is_finite());
    }
}

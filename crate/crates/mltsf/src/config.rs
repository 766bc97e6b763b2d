//! Flat key=value run configuration.
//!
//! One `key=value` per line; blank lines and `#` comments are allowed.
//! Unknown or duplicate keys are errors, so a typo cannot silently fall back
//! to a default. The same text format is embedded in checkpoints to snapshot
//! the run that produced them.

use std::path::Path;

use crate::data::SynthConfig;
use crate::encoder::{level1_receptive_field, Encoder};
use crate::error::{Error, Result};
use crate::fusion::{AggMode, Fusion, PoolMode, SelectMode, SimilarityKind, Variant};

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    /// Fusion window radii, descending by convention.
    pub scales: Vec<usize>,
    pub selector: SelectMode,
    pub use_rpe: bool,
    pub use_tcn: bool,
    pub pool: PoolMode,
    pub aggregator: AggMode,
    pub similarity: SimilarityKind,
    pub sparse_attention: bool,
    /// When false the fusion module is bypassed entirely (plain encoder
    /// baseline).
    pub use_mltsf: bool,

    /// Frame feature channels C.
    pub feat_dim: usize,
    /// Encoder level-2 channels.
    pub out_dim: usize,
    /// Encoder level-1 filter sizes; receptive field must equal the largest
    /// scale.
    pub encoder_filters: (usize, usize),

    pub lr: f64,
    /// L2 coefficient over weight tensors.
    pub l2: f64,
    pub epochs: usize,
    pub decay_start: usize,
    pub decay_interval: usize,
    pub decay_factor: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub augment: bool,

    /// Synthetic data: gloss count (vocabulary is this plus blank).
    pub n_glosses: usize,
    pub d_min: usize,
    pub d_max: usize,
    pub sigma: f64,
    pub trans_min: usize,
    pub trans_max: usize,
    /// Chance that a within-gloss frame is pure noise (no template).
    pub dropout_prob: f64,
    /// Per-sample gloss-count range.
    pub glosses_min: usize,
    pub glosses_max: usize,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            scales: vec![8, 6, 4],
            selector: SelectMode::LocalTopK,
            use_rpe: true,
            use_tcn: true,
            pool: PoolMode::Max,
            aggregator: AggMode::Dynamic,
            similarity: SimilarityKind::DotOverDim,
            sparse_attention: false,
            use_mltsf: true,
            feat_dim: 16,
            out_dim: 32,
            encoder_filters: (5, 1),
            lr: 1e-3,
            l2: 1e-4,
            epochs: 30,
            decay_start: 20,
            decay_interval: 5,
            decay_factor: 0.5,
            batch_size: 4,
            seed: 1,
            augment: true,
            n_glosses: 11,
            d_min: 4,
            d_max: 14,
            sigma: 0.3,
            trans_min: 0,
            trans_max: 2,
            dropout_prob: 0.0,
            glosses_min: 2,
            glosses_max: 5,
        }
    }
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "1" | "on" => Ok(true),
        "false" | "0" | "off" => Ok(false),
        _ => Err(Error::Config(format!("{key}: expected a boolean, got {v:?}"))),
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {v:?}")))
}

fn parse_usize_list(key: &str, v: &str) -> Result<Vec<usize>> {
    v.split(',')
        .map(|part| parse_num::<usize>(key, part.trim()))
        .collect()
}

impl Config {
    pub fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "scales" => self.scales = parse_usize_list(key, value)?,
            "selector" => {
                self.selector = match value {
                    "local-topk" => SelectMode::LocalTopK,
                    "center" => SelectMode::Center,
                    "global" => SelectMode::Global,
                    _ => {
                        return Err(Error::Config(format!(
                            "selector: expected local-topk|center|global, got {value:?}"
                        )))
                    }
                }
            }
            "use_rpe" => self.use_rpe = parse_bool(key, value)?,
            "use_tcn" => self.use_tcn = parse_bool(key, value)?,
            "pool" => {
                self.pool = match value {
                    "max" => PoolMode::Max,
                    "mean" => PoolMode::Mean,
                    _ => return Err(Error::Config(format!("pool: expected max|mean, got {value:?}"))),
                }
            }
            "aggregator" => {
                self.aggregator = match value {
                    "dynamic" => AggMode::Dynamic,
                    "average" => AggMode::Average,
                    _ => {
                        return Err(Error::Config(format!(
                            "aggregator: expected dynamic|average, got {value:?}"
                        )))
                    }
                }
            }
            "similarity" => {
                self.similarity = match value {
                    "dot-dim" => SimilarityKind::DotOverDim,
                    "dot-sqrt" => SimilarityKind::DotOverSqrtDim,
                    "cosine" => SimilarityKind::Cosine,
                    _ => {
                        return Err(Error::Config(format!(
                            "similarity: expected dot-dim|dot-sqrt|cosine, got {value:?}"
                        )))
                    }
                }
            }
            "sparse_attention" => self.sparse_attention = parse_bool(key, value)?,
            "use_mltsf" => self.use_mltsf = parse_bool(key, value)?,
            "feat_dim" => self.feat_dim = parse_num(key, value)?,
            "out_dim" => self.out_dim = parse_num(key, value)?,
            "encoder_filters" => {
                let parts = parse_usize_list(key, value)?;
                if parts.len() != 2 {
                    return Err(Error::Config(format!(
                        "encoder_filters: expected two sizes, got {value:?}"
                    )));
                }
                self.encoder_filters = (parts[0], parts[1]);
            }
            "lr" => self.lr = parse_num(key, value)?,
            "l2" => self.l2 = parse_num(key, value)?,
            "epochs" => self.epochs = parse_num(key, value)?,
            "decay_start" => self.decay_start = parse_num(key, value)?,
            "decay_interval" => self.decay_interval = parse_num(key, value)?,
            "decay_factor" => self.decay_factor = parse_num(key, value)?,
            "batch_size" => self.batch_size = parse_num(key, value)?,
            "seed" => self.seed = parse_num(key, value)?,
            "augment" => self.augment = parse_bool(key, value)?,
            "n_glosses" => self.n_glosses = parse_num(key, value)?,
            "d_min" => self.d_min = parse_num(key, value)?,
            "d_max" => self.d_max = parse_num(key, value)?,
            "sigma" => self.sigma = parse_num(key, value)?,
            "trans_min" => self.trans_min = parse_num(key, value)?,
            "trans_max" => self.trans_max = parse_num(key, value)?,
            "dropout_prob" => self.dropout_prob = parse_num(key, value)?,
            "glosses_min" => self.glosses_min = parse_num(key, value)?,
            "glosses_max" => self.glosses_max = parse_num(key, value)?,
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    pub fn from_kv_text(text: &str) -> Result<Self> {
        let mut cfg = Config::default();
        let mut seen: Vec<String> = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Config(format!(
                    "line {}: expected key=value, got {line:?}",
                    lineno + 1
                )));
            };
            let key = key.trim();
            let value = value.trim();
            if seen.iter().any(|s| s == key) {
                return Err(Error::Config(format!("line {}: duplicate key {key:?}", lineno + 1)));
            }
            seen.push(key.to_string());
            cfg.apply(key, value)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_kv_text(&text)
    }

    /// Serialize every field; parsing this text reproduces the config.
    pub fn to_kv_text(&self) -> String {
        let scales: Vec<String> = self.scales.iter().map(|k| k.to_string()).collect();
        let selector = match self.selector {
            SelectMode::LocalTopK => "local-topk",
            SelectMode::Center => "center",
            SelectMode::Global => "global",
        };
        let pool = match self.pool {
            PoolMode::Max => "max",
            PoolMode::Mean => "mean",
        };
        let aggregator = match self.aggregator {
            AggMode::Dynamic => "dynamic",
            AggMode::Average => "average",
        };
        let similarity = match self.similarity {
            SimilarityKind::DotOverDim => "dot-dim",
            SimilarityKind::DotOverSqrtDim => "dot-sqrt",
            SimilarityKind::Cosine => "cosine",
        };
        format!(
            "scales={}\nselector={selector}\nuse_rpe={}\nuse_tcn={}\npool={pool}\n\
             aggregator={aggregator}\nsimilarity={similarity}\nsparse_attention={}\n\
             use_mltsf={}\nfeat_dim={}\nout_dim={}\nencoder_filters={},{}\n\
             lr={}\nl2={}\nepochs={}\ndecay_start={}\ndecay_interval={}\ndecay_factor={}\n\
             batch_size={}\nseed={}\naugment={}\nn_glosses={}\nd_min={}\nd_max={}\n\
             sigma={}\ntrans_min={}\ntrans_max={}\ndropout_prob={}\nglosses_min={}\nglosses_max={}\n",
            scales.join(","),
            self.use_rpe,
            self.use_tcn,
            self.sparse_attention,
            self.use_mltsf,
            self.feat_dim,
            self.out_dim,
            self.encoder_filters.0,
            self.encoder_filters.1,
            self.lr,
            self.l2,
            self.epochs,
            self.decay_start,
            self.decay_interval,
            self.decay_factor,
            self.batch_size,
            self.seed,
            self.augment,
            self.n_glosses,
            self.d_min,
            self.d_max,
            self.sigma,
            self.trans_min,
            self.trans_max,
            self.dropout_prob,
            self.glosses_min,
            self.glosses_max,
        )
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if !(self.l2.is_finite() && self.l2 >= 0.0) {
            return Err(Error::Config(format!("l2 must be non-negative, got {}", self.l2)));
        }
        if self.epochs < 1 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        if self.batch_size < 1 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if self.decay_interval < 1 {
            return Err(Error::Config("decay_interval must be >= 1".into()));
        }
        if !(self.decay_factor.is_finite() && self.decay_factor > 0.0 && self.decay_factor <= 1.0)
        {
            return Err(Error::Config(format!(
                "decay_factor must be in (0, 1], got {}",
                self.decay_factor
            )));
        }
        if self.glosses_min < 1 || self.glosses_min > self.glosses_max {
            return Err(Error::Config(format!(
                "bad gloss count range [{}, {}]",
                self.glosses_min, self.glosses_max
            )));
        }
        if self.use_mltsf {
            let k1 = *self
                .scales
                .iter()
                .max()
                .ok_or_else(|| Error::Config("scales must not be empty".into()))?;
            let rf = level1_receptive_field(self.encoder_filters);
            if rf != k1 {
                return Err(Error::Config(format!(
                    "encoder receptive field {rf} (filters {},{}) must equal the largest scale {k1}",
                    self.encoder_filters.0, self.encoder_filters.1
                )));
            }
        }
        self.synth().validate()?;
        Ok(())
    }

    pub fn fusion(&self) -> Result<Fusion> {
        let variant = Variant {
            selector: self.selector,
            use_rpe: self.use_rpe,
            use_tcn: self.use_tcn,
            pool: self.pool,
            aggregator: self.aggregator,
            sparse_attention: self.sparse_attention,
        };
        Fusion::new(self.scales.clone(), self.feat_dim, variant, self.similarity)
    }

    pub fn encoder(&self, vocab_size: usize) -> Result<Encoder> {
        let k1 = if self.use_mltsf {
            *self.scales.iter().max().expect("validated non-empty")
        } else {
            level1_receptive_field(self.encoder_filters)
        };
        Encoder::new(self.feat_dim, self.out_dim, vocab_size, self.encoder_filters, k1)
    }

    pub fn synth(&self) -> SynthConfig {
        SynthConfig {
            n_glosses: self.n_glosses,
            feat_dim: self.feat_dim,
            d_min: self.d_min,
            d_max: self.d_max,
            sigma: self.sigma,
            trans_min: self.trans_min,
            trans_max: self.trans_max,
            dropout_prob: self.dropout_prob,
            seed: self.seed,
        }
    }
}

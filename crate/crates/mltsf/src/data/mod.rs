//! Synthetic labeled feature sequences and dataset plumbing.
//!
//! Each gloss owns a fixed random template vector; a sample concatenates
//! noisy copies of the chosen templates (variable duration per gloss) with
//! near-zero transition frames in between. Temporal neighbors within a gloss
//! therefore share high cosine similarity while cross-gloss pairs do not,
//! which is the structure the similarity selector feeds on.
//!
//! Generation is a pure function of (config, split tag, index): all
//! randomness flows through [`subrng`], so regenerating with the same seed is
//! bit-identical.

pub(crate) mod files;

pub use files::{
    load_dataset, read_features, read_vocab, write_features, write_split, write_vocab, FEATURE_EXT,
};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

// ── Deterministic RNG derivation ─────────────────────────────────────

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv_mix(mut h: u64, bytes: &[u8]) -> u64 {
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

/// Derive an independent stream cipher RNG from a root seed, a purpose tag,
/// and an index. FNV-1a keyed expansion, so the mapping is stable across
/// platforms and releases (unlike the stdlib hasher).
pub fn subrng(seed: u64, tag: &str, index: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    for (lane, chunk) in key.chunks_exact_mut(8).enumerate() {
        let mut h = FNV_OFFSET ^ (lane as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15);
        h = fnv_mix(h, &seed.to_le_bytes());
        h = fnv_mix(h, tag.as_bytes());
        h = fnv_mix(h, &index.to_le_bytes());
        chunk.copy_from_slice(&h.to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}

// ── Vocabulary ───────────────────────────────────────────────────────

pub const BLANK: usize = 0;
pub const BLANK_NAME: &str = "<blank>";

/// Ordered gloss names; id 0 is the CTC blank.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    names: Vec<String>,
}

impl Vocab {
    /// `names[0]` must be the blank token; names must be unique and at least
    /// one real gloss must follow the blank.
    pub fn new(names: Vec<String>) -> Result<Self> {
        if names.len() < 2 {
            return Err(Error::Config(format!(
                "vocabulary needs blank plus at least one gloss, got {} entries",
                names.len()
            )));
        }
        if names[0] != BLANK_NAME {
            return Err(Error::Config(format!(
                "vocabulary entry 0 must be {BLANK_NAME:?}, got {:?}",
                names[0]
            )));
        }
        for (i, a) in names.iter().enumerate() {
            if a.is_empty() {
                return Err(Error::Config(format!("vocabulary entry {i} is empty")));
            }
            if names[..i].contains(a) {
                return Err(Error::Config(format!("duplicate vocabulary entry {a:?}")));
            }
        }
        Ok(Vocab { names })
    }

    /// Blank plus `n_glosses` generated names g01, g02, ...
    pub fn synthetic(n_glosses: usize) -> Result<Self> {
        let mut names = vec![BLANK_NAME.to_string()];
        names.extend((1..=n_glosses).map(|i| format!("g{i:02}")));
        Vocab::new(names)
    }

    /// Total size V including blank.
    pub fn size(&self) -> usize {
        self.names.len()
    }

    pub fn name(&self, id: usize) -> Option<&str> {
        self.names.get(id).map(|s| s.as_str())
    }

    pub fn id(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }
}

// ── Feature sequences and samples ────────────────────────────────────

/// A `T x C` matrix of frame features, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSeq {
    t: usize,
    c: usize,
    data: Vec<f64>,
}

impl FeatureSeq {
    pub fn new(t: usize, c: usize, data: Vec<f64>) -> Result<Self> {
        if t == 0 || c == 0 {
            return Err(Error::Shape(format!("feature sequence must be non-empty, got {t}x{c}")));
        }
        if data.len() != t * c {
            return Err(Error::Shape(format!(
                "feature sequence {t}x{c} needs {} values, got {}",
                t * c,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { op: "feature sequence" });
        }
        Ok(FeatureSeq { t, c, data })
    }

    pub fn len(&self) -> usize {
        self.t
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn dim(&self) -> usize {
        self.c
    }

    pub fn frame(&self, i: usize) -> &[f64] {
        &self.data[i * self.c..(i + 1) * self.c]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(vec![self.t, self.c], self.data.clone()).expect("validated at construction")
    }
}

/// A feature sequence with its gloss labels (non-blank ids) and the
/// generation seed it came from. The seed is provenance only; it is not
/// stored in feature files.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub features: FeatureSeq,
    pub labels: Vec<usize>,
    pub seed: u64,
}

/// Generator parameters for synthetic samples.
#[derive(Debug, Clone)]
pub struct SynthConfig {
    /// Real gloss count; vocabulary size is this plus the blank.
    pub n_glosses: usize,
    pub feat_dim: usize,
    /// Inclusive per-gloss duration range in frames.
    pub d_min: usize,
    pub d_max: usize,
    /// Per-entry noise std around the gloss template.
    pub sigma: f64,
    /// Inclusive transition-frame count range between glosses.
    pub trans_min: usize,
    pub trans_max: usize,
    /// Probability that a within-gloss frame carries no template at all,
    /// only sigma-scale noise (a dropped or occluded frame). 0 disables.
    pub dropout_prob: f64,
    pub seed: u64,
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_glosses < 1 {
            return Err(Error::Config("synth: need at least one gloss".into()));
        }
        if self.feat_dim < 1 {
            return Err(Error::Config("synth: feature dim must be >= 1".into()));
        }
        if self.d_min < 1 || self.d_min > self.d_max {
            return Err(Error::Config(format!(
                "synth: bad duration range [{}, {}]",
                self.d_min, self.d_max
            )));
        }
        if self.trans_min > self.trans_max {
            return Err(Error::Config(format!(
                "synth: bad transition range [{}, {}]",
                self.trans_min, self.trans_max
            )));
        }
        if !self.sigma.is_finite() || self.sigma < 0.0 {
            return Err(Error::Config(format!("synth: bad sigma {}", self.sigma)));
        }
        if !self.dropout_prob.is_finite() || !(0.0..1.0).contains(&self.dropout_prob) {
            return Err(Error::Config(format!(
                "synth: dropout_prob must be in [0, 1), got {}",
                self.dropout_prob
            )));
        }
        Ok(())
    }

    pub fn vocab(&self) -> Result<Vocab> {
        Vocab::synthetic(self.n_glosses)
    }

    /// Fixed template vector for one gloss id, standard normal entries.
    /// Deterministic in (seed, gloss id) only.
    pub fn template(&self, gloss: usize) -> Vec<f64> {
        let mut rng = subrng(self.seed, "template", gloss as u64);
        (0..self.feat_dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
    }
}

/// Span of one gloss segment inside a generated sample: (gloss id, start
/// frame, one-past-end frame).
pub type Span = (usize, usize, usize);

/// Generate one sample plus its segment spans (for diagnostics and
/// similarity statistics). Adjacent glosses are always distinct, so label
/// feasibility under 4x downsampling depends only on length.
pub fn synth_sample_traced(
    cfg: &SynthConfig,
    num_glosses: usize,
    sample_seed: u64,
) -> Result<(Sample, Vec<Span>)> {
    cfg.validate()?;
    if num_glosses < 1 {
        return Err(Error::Config("synth: need at least one gloss per sample".into()));
    }
    let mut rng = subrng(cfg.seed, "sample", sample_seed);
    let mut labels = Vec::with_capacity(num_glosses);
    for i in 0..num_glosses {
        let mut id = rng.random_range(1..=cfg.n_glosses);
        if i > 0 && cfg.n_glosses > 1 {
            while id == labels[i - 1] {
                id = rng.random_range(1..=cfg.n_glosses);
            }
        }
        labels.push(id);
    }

    let mut data: Vec<f64> = Vec::new();
    let mut spans = Vec::with_capacity(num_glosses);
    let trans_sigma = 0.5 * cfg.sigma;
    for (i, &gloss) in labels.iter().enumerate() {
        if i > 0 {
            let n_trans = rng.random_range(cfg.trans_min..=cfg.trans_max);
            for _ in 0..n_trans * cfg.feat_dim {
                data.push(trans_sigma * rng.sample::<f64, _>(StandardNormal));
            }
        }
        let duration = rng.random_range(cfg.d_min..=cfg.d_max);
        let template = cfg.template(gloss);
        let start = data.len() / cfg.feat_dim;
        for _ in 0..duration {
            // dropped frames keep the noise but lose the template; the
            // extra draw is skipped at prob 0 so default streams are
            // unchanged
            let dropped = cfg.dropout_prob > 0.0 && rng.random::<f64>() < cfg.dropout_prob;
            for &tv in &template {
                let signal = if dropped { 0.0 } else { tv };
                data.push(signal + cfg.sigma * rng.sample::<f64, _>(StandardNormal));
            }
        }
        spans.push((gloss, start, start + duration));
    }

    // Quantize through f32 once so feature files round-trip bit-exactly.
    for v in &mut data {
        *v = *v as f32 as f64;
    }
    let t = data.len() / cfg.feat_dim;
    let features = FeatureSeq::new(t, cfg.feat_dim, data)?;
    Ok((Sample { features, labels, seed: sample_seed }, spans))
}

pub fn synth_sample(cfg: &SynthConfig, num_glosses: usize, sample_seed: u64) -> Result<Sample> {
    synth_sample_traced(cfg, num_glosses, sample_seed).map(|(s, _)| s)
}

/// Generate `n` samples for a named split. Per-sample gloss counts are drawn
/// uniformly from `glosses` (inclusive). Different split tags give disjoint
/// random streams from the same config seed.
pub fn synth_split(
    cfg: &SynthConfig,
    split: &str,
    n: usize,
    glosses: (usize, usize),
) -> Result<Vec<Sample>> {
    let (lo, hi) = glosses;
    if lo < 1 || lo > hi {
        return Err(Error::Config(format!("synth: bad gloss count range [{lo}, {hi}]")));
    }
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let mut len_rng = subrng(cfg.seed, &format!("len:{split}"), i as u64);
        let num = len_rng.random_range(lo..=hi);
        // Sample seeds are offset by split so streams never collide.
        let sample_seed = fnv_mix(FNV_OFFSET, split.as_bytes()) ^ (i as u64);
        out.push(synth_sample(cfg, num, sample_seed)?);
    }
    Ok(out)
}

// ── Temporal augmentation ────────────────────────────────────────────

/// Resample a sequence to `round(T * factor)` frames by endpoint-anchored
/// linear interpolation. The first and last frames are preserved exactly;
/// factor 1.0 is the identity.
pub fn temporal_rescale(features: &FeatureSeq, factor: f64) -> Result<FeatureSeq> {
    if !factor.is_finite() {
        return Err(Error::Config(format!("temporal_rescale: non-finite factor {factor}")));
    }
    if !(0.5..=2.0).contains(&factor) {
        return Err(Error::Config(format!(
            "temporal_rescale: factor {factor} outside [0.5, 2.0]"
        )));
    }
    let t = features.len();
    let c = features.dim();
    let t_new = ((t as f64 * factor).round() as usize).max(1);
    if t_new == t {
        return Ok(features.clone());
    }
    let mut data = Vec::with_capacity(t_new * c);
    for j in 0..t_new {
        if t == 1 || t_new == 1 {
            data.extend_from_slice(features.frame(0));
            continue;
        }
        let pos = j as f64 * (t - 1) as f64 / (t_new - 1) as f64;
        let lo = pos.floor() as usize;
        let hi = (lo + 1).min(t - 1);
        let frac = pos - lo as f64;
        let a = features.frame(lo);
        let b = features.frame(hi);
        for ch in 0..c {
            data.push(a[ch] + frac * (b[ch] - a[ch]));
        }
    }
    FeatureSeq::new(t_new, c, data)
}

/// Repeat the last frame until the sequence reaches `min_len`.
pub fn pad_short_sequence(features: &FeatureSeq, min_len: usize) -> Result<FeatureSeq> {
    if min_len < 1 {
        return Err(Error::Config("pad_short_sequence: min_len must be >= 1".into()));
    }
    let t = features.len();
    if t >= min_len {
        return Ok(features.clone());
    }
    let c = features.dim();
    let mut data = features.data().to_vec();
    let last = features.frame(t - 1).to_vec();
    for _ in t..min_len {
        data.extend_from_slice(&last);
    }
    FeatureSeq::new(min_len, c, data)
}

// ── Dataset ──────────────────────────────────────────────────────────

/// A vocabulary plus its samples, as loaded from a data directory.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub vocab: Vocab,
    pub samples: Vec<Sample>,
}

impl Dataset {
    /// Every label id must name a real (non-blank) vocabulary entry.
    pub fn validate(&self) -> Result<()> {
        for (i, s) in self.samples.iter().enumerate() {
            if s.labels.is_empty() {
                return Err(Error::Config(format!("sample {i} has no labels")));
            }
            for &l in &s.labels {
                if l == BLANK || l >= self.vocab.size() {
                    return Err(Error::Config(format!(
                        "sample {i}: label id {l} invalid for vocabulary of size {}",
                        self.vocab.size()
                    )));
                }
            }
        }
        Ok(())
    }
}

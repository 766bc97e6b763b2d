//! Multi-scale local temporal similarity fusion.
//!
//! For every frame t the module picks, per window scale k, the k most
//! similar frames inside `[t-k, t+k]` (the frame itself always included),
//! convolves the selected neighborhood with relative-position embeddings
//! into a single feature vector, and fuses the per-scale vectors with a
//! content-dependent softmax over scales.
//!
//! Selection is a hard decision: similarity scores only choose indices and
//! carry no gradient. Gradients flow through the gathered frame values and
//! all block parameters.

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::init;
use crate::tensor::{Graph, ParamStore, Tensor, Var};

pub const LN_EPS: f64 = 1e-5;

// ── Similarity ───────────────────────────────────────────────────────

/// Raw pairwise score used before the row softmax.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SimilarityKind {
    /// Dot product divided by the channel count (the default).
    DotOverDim,
    /// Dot product divided by sqrt of the channel count.
    DotOverSqrtDim,
    /// Cosine similarity.
    Cosine,
}

/// Row-stochastic T x T frame-affinity matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    t: usize,
    values: Vec<f64>,
}

impl SimilarityMatrix {
    pub fn new(t: usize, values: Vec<f64>) -> Result<Self> {
        if t == 0 || values.len() != t * t {
            return Err(Error::Shape(format!(
                "similarity matrix: {t}x{t} needs {} values, got {}",
                t * t,
                values.len()
            )));
        }
        for (r, row) in values.chunks(t).enumerate() {
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > 1e-9 || row.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
                return Err(Error::Shape(format!(
                    "similarity matrix row {r} is not a distribution (sum {sum})"
                )));
            }
        }
        Ok(SimilarityMatrix { t, values })
    }

    pub fn len(&self) -> usize {
        self.t
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.values[t * self.t..(t + 1) * self.t]
    }
}

/// Pairwise frame similarities followed by a per-row softmax.
///
/// Runs on plain values outside any graph: the result only steers the
/// discrete neighbor selection.
pub fn similarity_matrix(
    features: &[f64],
    t_len: usize,
    dim: usize,
    kind: SimilarityKind,
) -> Result<SimilarityMatrix> {
    if t_len == 0 || dim == 0 || features.len() != t_len * dim {
        return Err(Error::Shape(format!(
            "similarity: {t_len}x{dim} features, {} values",
            features.len()
        )));
    }
    if features.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { op: "similarity" });
    }
    let frame = |i: usize| &features[i * dim..(i + 1) * dim];
    let norms: Vec<f64> = (0..t_len)
        .map(|i| frame(i).iter().map(|v| v * v).sum::<f64>().sqrt())
        .collect();
    let mut values = vec![0.0; t_len * t_len];
    for i in 0..t_len {
        for j in 0..t_len {
            let dot: f64 = frame(i).iter().zip(frame(j)).map(|(a, b)| a * b).sum();
            values[i * t_len + j] = match kind {
                SimilarityKind::DotOverDim => dot / dim as f64,
                SimilarityKind::DotOverSqrtDim => dot / (dim as f64).sqrt(),
                SimilarityKind::Cosine => dot / (norms[i] * norms[j]).max(1e-12),
            };
        }
        softmax_in_place(&mut values[i * t_len..(i + 1) * t_len]);
    }
    SimilarityMatrix::new(t_len, values)
}

fn softmax_in_place(row: &mut [f64]) {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - m).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

// ── Neighbor selection ───────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SelectMode {
    /// Top-k scores inside the clipped window `[t-k, t+k]`.
    LocalTopK,
    /// The k indices nearest t, ignoring scores.
    Center,
    /// Top-k scores over the whole sequence.
    Global,
}

/// The k frames chosen for one center, sorted ascending by index. The center
/// itself is always among them.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Neighborhood {
    pub center: usize,
    pub indices: Vec<usize>,
}

impl Neighborhood {
    /// Relative offsets p - center, ascending, in `[-k, k]`.
    pub fn offsets(&self) -> impl Iterator<Item = isize> + '_ {
        let c = self.center as isize;
        self.indices.iter().map(move |&p| p as isize - c)
    }
}

/// Pick k neighbors for center `t`.
///
/// Scored modes order candidates by score descending, then by distance to
/// the center, then by smaller index; the center is always kept regardless
/// of its score, and the remaining k-1 slots go to the best other
/// candidates. Center mode ignores scores entirely and takes the k nearest
/// indices, preferring the left one on distance ties.
pub fn select_neighbors(
    d: &SimilarityMatrix,
    t: usize,
    k: usize,
    mode: SelectMode,
) -> Result<Neighborhood> {
    let t_len = d.len();
    if t >= t_len {
        return Err(Error::Shape(format!("select: center {t} out of {t_len} frames")));
    }
    if k < 1 {
        return Err(Error::InvalidGeometry("select: k must be >= 1".into()));
    }
    let (lo, hi) = match mode {
        SelectMode::Global => (0, t_len - 1),
        _ => (t.saturating_sub(k), (t + k).min(t_len - 1)),
    };
    let available = hi - lo + 1;
    if available < k {
        return Err(Error::InfeasibleWindow { t, k, len: t_len });
    }

    let mut indices: Vec<usize> = match mode {
        SelectMode::Center => {
            let mut cands: Vec<usize> = (lo..=hi).collect();
            cands.sort_by_key(|&p| (p.abs_diff(t), p));
            cands.truncate(k);
            cands
        }
        SelectMode::LocalTopK | SelectMode::Global => {
            let row = d.row(t);
            let mut cands: Vec<usize> = (lo..=hi).filter(|&p| p != t).collect();
            cands.sort_by(|&a, &b| {
                row[b]
                    .total_cmp(&row[a])
                    .then(a.abs_diff(t).cmp(&b.abs_diff(t)))
                    .then(a.cmp(&b))
            });
            cands.truncate(k - 1);
            cands.push(t);
            cands
        }
    };
    indices.sort_unstable();
    Ok(Neighborhood { center: t, indices })
}

/// Selection for every center at one scale.
pub fn select_all(d: &SimilarityMatrix, k: usize, mode: SelectMode) -> Result<Vec<Neighborhood>> {
    (0..d.len()).map(|t| select_neighbors(d, t, k, mode)).collect()
}

// ── Variants ─────────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoolMode {
    Max,
    Mean,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AggMode {
    /// Content-dependent softmax weights over scales.
    Dynamic,
    /// Uniform weights.
    Average,
}

/// Ablation switches for the fusion module.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Variant {
    pub selector: SelectMode,
    pub use_rpe: bool,
    pub use_tcn: bool,
    pub pool: PoolMode,
    pub aggregator: AggMode,
    /// Replace the neighborhood network with a similarity-weighted average
    /// of the selected frames.
    pub sparse_attention: bool,
}

impl Default for Variant {
    fn default() -> Self {
        Variant {
            selector: SelectMode::LocalTopK,
            use_rpe: true,
            use_tcn: true,
            pool: PoolMode::Max,
            aggregator: AggMode::Dynamic,
            sparse_attention: false,
        }
    }
}

// ── The fusion block ─────────────────────────────────────────────────

/// Configuration and parameter naming for the whole fusion module.
#[derive(Debug, Clone)]
pub struct Fusion {
    /// Window radii, one per scale, distinct, each >= 1.
    pub scales: Vec<usize>,
    /// Channel count C of the frame features.
    pub dim: usize,
    pub variant: Variant,
    pub similarity: SimilarityKind,
}

impl Fusion {
    pub fn new(
        scales: Vec<usize>,
        dim: usize,
        variant: Variant,
        similarity: SimilarityKind,
    ) -> Result<Self> {
        if scales.is_empty() {
            return Err(Error::Config("fusion: need at least one scale".into()));
        }
        for (i, &k) in scales.iter().enumerate() {
            if k < 1 {
                return Err(Error::Config(format!("fusion: scale {i} must be >= 1")));
            }
            if scales[..i].contains(&k) {
                return Err(Error::Config(format!("fusion: duplicate scale {k}")));
            }
        }
        if dim < 1 {
            return Err(Error::Config("fusion: dim must be >= 1".into()));
        }
        Ok(Fusion { scales, dim, variant, similarity })
    }

    pub fn max_scale(&self) -> usize {
        *self.scales.iter().max().expect("non-empty scales")
    }

    /// Register all trainable tensors. Convs are bias-free (layer norm
    /// follows); position tables start at zero so training begins
    /// position-neutral; gamma starts at one.
    pub fn init_params(&self, store: &mut ParamStore, rng: &mut ChaCha8Rng) -> Result<()> {
        let c = self.dim;
        for (i, &k) in self.scales.iter().enumerate() {
            let p = format!("mltsf.s{i}");
            store.insert(&format!("{p}.rpe.table"), init::zeros(vec![2 * k + 1, c]))?;
            store.insert(&format!("{p}.conv1.weight"), init::uniform(rng, vec![3, c, c], 3 * c))?;
            store.insert(&format!("{p}.ln1.gamma"), init::ones(vec![c]))?;
            store.insert(&format!("{p}.ln1.beta"), init::zeros(vec![c]))?;
            store.insert(&format!("{p}.conv2.weight"), init::uniform(rng, vec![3, c, c], 3 * c))?;
            store.insert(&format!("{p}.ln2.gamma"), init::ones(vec![c]))?;
            store.insert(&format!("{p}.ln2.beta"), init::zeros(vec![c]))?;
            store.insert(&format!("{p}.fc1.weight"), init::uniform(rng, vec![c, c], c))?;
            store.insert(&format!("{p}.fc1.bias"), init::zeros(vec![c]))?;
            store.insert(&format!("{p}.fc2.weight"), init::uniform(rng, vec![c, c], c))?;
            store.insert(&format!("{p}.fc2.bias"), init::zeros(vec![c]))?;
        }
        let n = self.scales.len();
        store.insert("mltsf.agg.weight", init::uniform(rng, vec![c, n], c))?;
        store.insert("mltsf.agg.bias", init::zeros(vec![n]))?;
        Ok(())
    }

    /// One scale's neighborhood network: gather the selected frames in time
    /// order, add the relative-position embedding, run two conv+LN+ReLU
    /// stages over the neighborhood axis, pool it away, and finish with a
    /// two-layer MLP.
    pub fn encode_scale(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        scale_idx: usize,
        s: Var,
        hoods: &[Neighborhood],
    ) -> Result<Var> {
        let c = self.dim;
        let k = self.scales[scale_idx];
        let t_len = hoods.len();
        let p = format!("mltsf.s{scale_idx}");
        for h in hoods {
            if h.indices.len() != k {
                return Err(Error::Config(format!(
                    "fusion: neighborhood at t={} has {} indices, scale expects {k}",
                    h.center,
                    h.indices.len()
                )));
            }
        }

        let flat: Vec<usize> = hoods.iter().flat_map(|h| h.indices.iter().copied()).collect();
        let mut x = g.gather_rows(s, &flat)?; // [T*k, c]

        if self.variant.use_rpe {
            let offsets: Vec<usize> = hoods
                .iter()
                .flat_map(|h| h.offsets().map(move |o| (o + k as isize) as usize))
                .collect();
            let table = g.param(store, &format!("{p}.rpe.table"))?;
            let emb = g.gather_rows(table, &offsets)?;
            x = g.add(x, emb)?;
        }

        let mut cube = g.reshape(x, vec![t_len, k, c])?; // [T, k, c]

        if self.variant.use_tcn {
            for stage in ["1", "2"] {
                let w = g.param(store, &format!("{p}.conv{stage}.weight"))?;
                let gamma = g.param(store, &format!("{p}.ln{stage}.gamma"))?;
                let beta = g.param(store, &format!("{p}.ln{stage}.beta"))?;
                cube = g.conv1d(cube, w, 1, 1)?;
                cube = g.layer_norm(cube, gamma, beta, LN_EPS)?;
                cube = g.relu(cube)?;
            }
        }

        let pooled = match self.variant.pool {
            PoolMode::Max => g.max_axis1(cube)?,
            PoolMode::Mean => g.mean_axis1(cube)?,
        };

        let w1 = g.param(store, &format!("{p}.fc1.weight"))?;
        let b1 = g.param(store, &format!("{p}.fc1.bias"))?;
        let w2 = g.param(store, &format!("{p}.fc2.weight"))?;
        let b2 = g.param(store, &format!("{p}.fc2.bias"))?;
        let h1 = g.matmul(pooled, w1)?;
        let h1 = g.add_bias(h1, b1)?;
        let h1 = g.gelu(h1)?;
        let h2 = g.matmul(h1, w2)?;
        g.add_bias(h2, b2)
    }

    /// Baseline in place of the neighborhood network: average the selected
    /// frames weighted by their similarity scores, renormalized over the
    /// selection. The weights are constants.
    fn weighted_average_scale(
        &self,
        g: &mut Graph,
        d: &SimilarityMatrix,
        s: Var,
        hoods: &[Neighborhood],
        k: usize,
    ) -> Result<Var> {
        let t_len = hoods.len();
        let flat: Vec<usize> = hoods.iter().flat_map(|h| h.indices.iter().copied()).collect();
        let gathered = g.gather_rows(s, &flat)?;
        let cube = g.reshape(gathered, vec![t_len, k, self.dim])?;
        let mut weights = Vec::with_capacity(t_len * k);
        for h in hoods {
            let row = d.row(h.center);
            let total: f64 = h.indices.iter().map(|&p| row[p]).sum();
            for &p in &h.indices {
                weights.push(row[p] / total);
            }
        }
        let wt = Tensor::new(vec![t_len, k], weights)?;
        let wv = g.constant(&wt);
        g.weighted_sum_axis1(cube, wv)
    }

    /// Fuse per-scale outputs with weights from the original frame features.
    pub fn fuse_scales(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        s: Var,
        per_scale: &[Var],
    ) -> Result<Var> {
        let stacked = g.stack_axis1(per_scale)?; // [T, n, c]
        let t_len = g.shape(stacked)[0];
        let n = per_scale.len();
        let alpha = match self.variant.aggregator {
            AggMode::Dynamic => {
                let w = g.param(store, "mltsf.agg.weight")?;
                let b = g.param(store, "mltsf.agg.bias")?;
                let logits = g.matmul(s, w)?;
                let logits = g.add_bias(logits, b)?;
                g.softmax_lastdim(logits)?
            }
            AggMode::Average => {
                let uniform = Tensor::new(vec![t_len, n], vec![1.0 / n as f64; t_len * n])?;
                g.constant(&uniform)
            }
        };
        g.weighted_sum_axis1(stacked, alpha)
    }

    /// Full module: similarity once, selection and neighborhood encoding per
    /// scale, then scale fusion. `s` must be a `[T, dim]` node on `g`.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, s: Var) -> Result<Var> {
        let shape = g.shape(s).to_vec();
        if shape.len() != 2 || shape[1] != self.dim {
            return Err(Error::Shape(format!(
                "fusion: input {shape:?}, expected [T, {}]",
                self.dim
            )));
        }
        let t_len = shape[0];
        let k_max = self.max_scale();
        if t_len < k_max + 1 {
            return Err(Error::InfeasibleWindow { t: 0, k: k_max, len: t_len });
        }
        let d = similarity_matrix(g.values(s), t_len, self.dim, self.similarity)?;
        let mut per_scale = Vec::with_capacity(self.scales.len());
        for (i, &k) in self.scales.iter().enumerate() {
            let hoods = select_all(&d, k, self.variant.selector)?;
            let out = if self.variant.sparse_attention {
                self.weighted_average_scale(g, &d, s, &hoods, k)?
            } else {
                self.encode_scale(g, store, i, s, &hoods)?
            };
            per_scale.push(out);
        }
        self.fuse_scales(g, store, s, &per_scale)
    }
}

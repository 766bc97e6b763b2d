//! Tape-based computation graph.
//!
//! Operations execute eagerly and are recorded in insertion order; backward
//! walks the tape in reverse, so traversal order is deterministic. Each
//! backward call propagates a fresh unit seed and adds the result into the
//! node gradients, so repeated backward without zeroing sums.

use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};
use crate::tensor::{ParamStore, Tensor};

static GRAPH_IDS: AtomicU64 = AtomicU64::new(1);

/// Handle to a value recorded on a [`Graph`]. Only valid for the graph that
/// produced it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var {
    graph: u64,
    idx: usize,
}

enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    AddBias(usize, usize),
    Matmul(usize, usize),
    Conv1d { x: usize, w: usize, stride: usize, padding: usize },
    Relu(usize),
    Gelu(usize),
    SoftmaxLast(usize),
    LogSoftmaxLast(usize),
    LayerNorm { x: usize, gamma: usize, beta: usize, eps: f64 },
    MaxAxis1 { x: usize, argmax: Vec<usize> },
    MeanAxis1(usize),
    MaxPool1d { x: usize, argmax: Vec<usize> },
    GatherRows { x: usize, idx: Vec<usize> },
    WeightedSumAxis1 { x: usize, w: usize },
    StackAxis1(Vec<usize>),
    Reshape(usize),
    Sum(usize),
    Pick { x: usize, flat: usize },
    LogSumExp(Vec<usize>),
}

struct Node {
    op: Op,
    shape: Vec<usize>,
    values: Vec<f64>,
    needs_grad: bool,
    name: Option<String>,
}

/// Recorded forward computation with reverse-mode differentiation.
pub struct Graph {
    id: u64,
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph {
            id: GRAPH_IDS.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
            grads: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn check(&self, v: Var) -> Result<usize> {
        if v.graph != self.id || v.idx >= self.nodes.len() {
            return Err(Error::NoGraph);
        }
        Ok(v.idx)
    }

    fn push(&mut self, op: Op, shape: Vec<usize>, values: Vec<f64>, needs_grad: bool) -> Var {
        let idx = self.nodes.len();
        self.nodes.push(Node { op, shape, values, needs_grad, name: None });
        self.grads.push(None);
        Var { graph: self.id, idx }
    }

    fn push_checked(
        &mut self,
        opname: &'static str,
        op: Op,
        shape: Vec<usize>,
        values: Vec<f64>,
        needs_grad: bool,
    ) -> Result<Var> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { op: opname });
        }
        Ok(self.push(op, shape, values, needs_grad))
    }

    // ── Leaves ───────────────────────────────────────────────────────

    /// Record a tensor as an input leaf. Gradient flows into it when its
    /// `requires_grad` flag is set; read it back with [`Graph::grad`].
    pub fn leaf(&mut self, t: &Tensor) -> Var {
        self.push(Op::Leaf, t.shape().to_vec(), t.values().to_vec(), t.requires_grad)
    }

    /// Leaf that never receives gradient, regardless of the tensor's flag.
    pub fn constant(&mut self, t: &Tensor) -> Var {
        self.push(Op::Leaf, t.shape().to_vec(), t.values().to_vec(), false)
    }

    /// Record a named parameter from `store` as a trainable leaf.
    /// [`Graph::write_grads`] later routes its gradient back by name.
    pub fn param(&mut self, store: &ParamStore, name: &str) -> Result<Var> {
        let t = store.get(name)?;
        let v = self.push(Op::Leaf, t.shape().to_vec(), t.values().to_vec(), true);
        self.nodes[v.idx].name = Some(name.to_string());
        Ok(v)
    }

    // ── Accessors ────────────────────────────────────────────────────

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.idx].shape
    }

    pub fn values(&self, v: Var) -> &[f64] {
        &self.nodes[v.idx].values
    }

    pub fn tensor(&self, v: Var) -> Tensor {
        Tensor::new(self.nodes[v.idx].shape.clone(), self.nodes[v.idx].values.clone())
            .expect("recorded node is well-formed")
    }

    pub fn item(&self, v: Var) -> f64 {
        debug_assert_eq!(self.nodes[v.idx].values.len(), 1);
        self.nodes[v.idx].values[0]
    }

    /// Accumulated gradient of a node, if backward has reached it.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.idx).and_then(|g| g.as_deref())
    }

    pub fn zero_grads(&mut self) {
        for g in &mut self.grads {
            *g = None;
        }
    }

    /// Add the gradients of all named parameter leaves into `store`.
    pub fn write_grads(&self, store: &mut ParamStore) -> Result<()> {
        for (node, grad) in self.nodes.iter().zip(&self.grads) {
            if let (Some(name), Some(g)) = (&node.name, grad) {
                store.accumulate_grad(name, g)?;
            }
        }
        Ok(())
    }

    // ── Elementwise and linear ops ───────────────────────────────────

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.check(a)?, self.check(b)?);
        if self.nodes[ia].shape != self.nodes[ib].shape {
            return Err(Error::Shape(format!(
                "add: {:?} vs {:?}",
                self.nodes[ia].shape, self.nodes[ib].shape
            )));
        }
        let values: Vec<f64> = self.nodes[ia]
            .values
            .iter()
            .zip(&self.nodes[ib].values)
            .map(|(x, y)| x + y)
            .collect();
        let ng = self.nodes[ia].needs_grad || self.nodes[ib].needs_grad;
        self.push_checked("add", Op::Add(ia, ib), self.nodes[ia].shape.clone(), values, ng)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.check(a)?, self.check(b)?);
        if self.nodes[ia].shape != self.nodes[ib].shape {
            return Err(Error::Shape(format!(
                "sub: {:?} vs {:?}",
                self.nodes[ia].shape, self.nodes[ib].shape
            )));
        }
        let values: Vec<f64> = self.nodes[ia]
            .values
            .iter()
            .zip(&self.nodes[ib].values)
            .map(|(x, y)| x - y)
            .collect();
        let ng = self.nodes[ia].needs_grad || self.nodes[ib].needs_grad;
        self.push_checked("sub", Op::Sub(ia, ib), self.nodes[ia].shape.clone(), values, ng)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.check(a)?, self.check(b)?);
        if self.nodes[ia].shape != self.nodes[ib].shape {
            return Err(Error::Shape(format!(
                "mul: {:?} vs {:?}",
                self.nodes[ia].shape, self.nodes[ib].shape
            )));
        }
        let values: Vec<f64> = self.nodes[ia]
            .values
            .iter()
            .zip(&self.nodes[ib].values)
            .map(|(x, y)| x * y)
            .collect();
        let ng = self.nodes[ia].needs_grad || self.nodes[ib].needs_grad;
        self.push_checked("mul", Op::Mul(ia, ib), self.nodes[ia].shape.clone(), values, ng)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let ia = self.check(a)?;
        let values: Vec<f64> = self.nodes[ia].values.iter().map(|x| x * c).collect();
        let ng = self.nodes[ia].needs_grad;
        self.push_checked("scale", Op::Scale(ia, c), self.nodes[ia].shape.clone(), values, ng)
    }

    /// Broadcast-add a length-C bias over the last dimension.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (ix, ib) = (self.check(x)?, self.check(bias)?);
        let c = *self.nodes[ix].shape.last().ok_or_else(|| {
            Error::Shape("add_bias: rank-0 input".into())
        })?;
        if self.nodes[ib].shape != [c] {
            return Err(Error::Shape(format!(
                "add_bias: bias {:?} does not match last dim {c}",
                self.nodes[ib].shape
            )));
        }
        let bvals = self.nodes[ib].values.clone();
        let values: Vec<f64> = self.nodes[ix]
            .values
            .iter()
            .enumerate()
            .map(|(i, x)| x + bvals[i % c])
            .collect();
        let ng = self.nodes[ix].needs_grad || self.nodes[ib].needs_grad;
        self.push_checked("add_bias", Op::AddBias(ix, ib), self.nodes[ix].shape.clone(), values, ng)
    }

    /// 2D matrix product `a[m,k] · b[k,n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.check(a)?, self.check(b)?);
        let (sa, sb) = (&self.nodes[ia].shape, &self.nodes[ib].shape);
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::Shape(format!("matmul: {sa:?} · {sb:?}")));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut values = vec![0.0; m * n];
        {
            let av = &self.nodes[ia].values;
            let bv = &self.nodes[ib].values;
            for i in 0..m {
                for p in 0..k {
                    let x = av[i * k + p];
                    let brow = &bv[p * n..(p + 1) * n];
                    let orow = &mut values[i * n..(i + 1) * n];
                    for (o, b) in orow.iter_mut().zip(brow) {
                        *o += x * b;
                    }
                }
            }
        }
        let ng = self.nodes[ia].needs_grad || self.nodes[ib].needs_grad;
        self.push_checked("matmul", Op::Matmul(ia, ib), vec![m, n], values, ng)
    }

    // ── Convolution and pooling ──────────────────────────────────────

    /// Temporal cross-correlation (no filter flip).
    ///
    /// `x` is `[L, C_in]` or batched `[B, L, C_in]`; `w` is
    /// `[F, C_in, C_out]`. Output length is
    /// `floor((L + 2·padding − F)/stride) + 1`; zero padding at both ends.
    pub fn conv1d(&mut self, x: Var, w: Var, stride: usize, padding: usize) -> Result<Var> {
        let (ix, iw) = (self.check(x)?, self.check(w)?);
        if stride < 1 {
            return Err(Error::InvalidGeometry("conv1d: stride must be >= 1".into()));
        }
        let sw = &self.nodes[iw].shape;
        if sw.len() != 3 {
            return Err(Error::Shape(format!("conv1d: filters must be rank 3, got {sw:?}")));
        }
        let (f, c_in, c_out) = (sw[0], sw[1], sw[2]);
        let sx = self.nodes[ix].shape.clone();
        let (batch, l, xc) = match sx.len() {
            2 => (1, sx[0], sx[1]),
            3 => (sx[0], sx[1], sx[2]),
            _ => return Err(Error::Shape(format!("conv1d: input must be rank 2 or 3, got {sx:?}"))),
        };
        if xc != c_in {
            return Err(Error::Shape(format!(
                "conv1d: input channels {xc} vs filter channels {c_in}"
            )));
        }
        if l + 2 * padding < f {
            return Err(Error::InvalidGeometry(format!(
                "conv1d: length {l} with padding {padding} shorter than filter {f}"
            )));
        }
        let l_out = (l + 2 * padding - f) / stride + 1;
        let mut values = vec![0.0; batch * l_out * c_out];
        {
            let xv = &self.nodes[ix].values;
            let wv = &self.nodes[iw].values;
            for b in 0..batch {
                let xb = &xv[b * l * c_in..(b + 1) * l * c_in];
                let ob = &mut values[b * l_out * c_out..(b + 1) * l_out * c_out];
                for lo in 0..l_out {
                    let orow = &mut ob[lo * c_out..(lo + 1) * c_out];
                    for fi in 0..f {
                        let li = (lo * stride + fi) as isize - padding as isize;
                        if li < 0 || li as usize >= l {
                            continue;
                        }
                        let xrow = &xb[li as usize * c_in..(li as usize + 1) * c_in];
                        for ci in 0..c_in {
                            let xval = xrow[ci];
                            let wrow = &wv[(fi * c_in + ci) * c_out..(fi * c_in + ci + 1) * c_out];
                            for (o, wv) in orow.iter_mut().zip(wrow) {
                                *o += xval * wv;
                            }
                        }
                    }
                }
            }
        }
        let shape = if sx.len() == 2 { vec![l_out, c_out] } else { vec![batch, l_out, c_out] };
        let ng = self.nodes[ix].needs_grad || self.nodes[iw].needs_grad;
        self.push_checked("conv1d", Op::Conv1d { x: ix, w: iw, stride, padding }, shape, values, ng)
    }

    /// Temporal max pooling over `[L, C]`, per channel, no padding.
    /// Ties route to the earlier index.
    pub fn maxpool1d(&mut self, x: Var, size: usize, stride: usize) -> Result<Var> {
        let ix = self.check(x)?;
        let sx = &self.nodes[ix].shape;
        if sx.len() != 2 {
            return Err(Error::Shape(format!("maxpool1d: input must be rank 2, got {sx:?}")));
        }
        let (l, c) = (sx[0], sx[1]);
        if size < 1 || stride < 1 || l < size {
            return Err(Error::InvalidGeometry(format!(
                "maxpool1d: length {l}, window {size}, stride {stride}"
            )));
        }
        let l_out = (l - size) / stride + 1;
        let mut values = vec![0.0; l_out * c];
        let mut argmax = vec![0usize; l_out * c];
        {
            let xv = &self.nodes[ix].values;
            for lo in 0..l_out {
                for ch in 0..c {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_i = lo * stride;
                    for off in 0..size {
                        let li = lo * stride + off;
                        let v = xv[li * c + ch];
                        if v > best {
                            best = v;
                            best_i = li;
                        }
                    }
                    values[lo * c + ch] = best;
                    argmax[lo * c + ch] = best_i;
                }
            }
        }
        let ng = self.nodes[ix].needs_grad;
        self.push_checked("maxpool1d", Op::MaxPool1d { x: ix, argmax }, vec![l_out, c], values, ng)
    }

    /// Max over the middle axis of `[B, K, C]`, first index wins ties.
    pub fn max_axis1(&mut self, x: Var) -> Result<Var> {
        let ix = self.check(x)?;
        let sx = &self.nodes[ix].shape;
        if sx.len() != 3 {
            return Err(Error::Shape(format!("max_axis1: input must be rank 3, got {sx:?}")));
        }
        let (b, k, c) = (sx[0], sx[1], sx[2]);
        let mut values = vec![0.0; b * c];
        let mut argmax = vec![0usize; b * c];
        {
            let xv = &self.nodes[ix].values;
            for bi in 0..b {
                for ch in 0..c {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_k = 0;
                    for ki in 0..k {
                        let v = xv[(bi * k + ki) * c + ch];
                        if v > best {
                            best = v;
                            best_k = ki;
                        }
                    }
                    values[bi * c + ch] = best;
                    argmax[bi * c + ch] = best_k;
                }
            }
        }
        let ng = self.nodes[ix].needs_grad;
        self.push_checked("max_axis1", Op::MaxAxis1 { x: ix, argmax }, vec![b, c], values, ng)
    }

    /// Mean over the middle axis of `[B, K, C]`.
    pub fn mean_axis1(&mut self, x: Var) -> Result<Var> {
        let ix = self.check(x)?;
        let sx = &self.nodes[ix].shape;
        if sx.len() != 3 {
            return Err(Error::Shape(format!("mean_axis1: input must be rank 3, got {sx:?}")));
        }
        let (b, k, c) = (sx[0], sx[1], sx[2]);
        let mut values = vec![0.0; b * c];
        {
            let xv = &self.nodes[ix].values;
            for bi in 0..b {
                for ki in 0..k {
                    for ch in 0..c {
                        values[bi * c + ch] += xv[(bi * k + ki) * c + ch];
                    }
                }
            }
            let inv = 1.0 / k as f64;
            for v in &mut values {
                *v *= inv;
            }
        }
        let ng = self.nodes[ix].needs_grad;
        self.push_checked("mean_axis1", Op::MeanAxis1(ix), vec![b, c], values, ng)
    }

    // ── Nonlinearities and normalization ─────────────────────────────

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let ix = self.check(x)?;
        let values: Vec<f64> = self.nodes[ix].values.iter().map(|v| v.max(0.0)).collect();
        let ng = self.nodes[ix].needs_grad;
        self.push_checked("relu", Op::Relu(ix), self.nodes[ix].shape.clone(), values, ng)
    }

    /// Exact Gaussian-CDF GELU: `x · Φ(x)` with `Φ` the standard normal CDF.
    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        let ix = self.check(x)?;
        let values: Vec<f64> = self.nodes[ix].values.iter().map(|&v| gelu_exact(v)).collect();
        let ng = self.nodes[ix].needs_grad;
        self.push_checked("gelu", Op::Gelu(ix), self.nodes[ix].shape.clone(), values, ng)
    }

    /// Softmax over the last dimension, max-subtracted for stability.
    /// `-inf` entries map to exactly 0; a slice with no finite entry is an
    /// error.
    pub fn softmax_lastdim(&mut self, x: Var) -> Result<Var> {
        let ix = self.check(x)?;
        let sx = &self.nodes[ix].shape;
        let c = *sx.last().ok_or_else(|| Error::Shape("softmax: rank-0 input".into()))?;
        let mut values = self.nodes[ix].values.clone();
        for slice in values.chunks_mut(c) {
            softmax_slice(slice)?;
        }
        let ng = self.nodes[ix].needs_grad;
        self.push_checked("softmax_lastdim", Op::SoftmaxLast(ix), sx.clone(), values, ng)
    }

    /// Log-softmax over the last dimension. Input must be finite.
    pub fn log_softmax_lastdim(&mut self, x: Var) -> Result<Var> {
        let ix = self.check(x)?;
        let sx = &self.nodes[ix].shape;
        let c = *sx.last().ok_or_else(|| Error::Shape("log_softmax: rank-0 input".into()))?;
        let mut values = self.nodes[ix].values.clone();
        for slice in values.chunks_mut(c) {
            let m = slice.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            if !m.is_finite() {
                return Err(Error::UndefinedDistribution);
            }
            let lse = m + slice.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            for v in slice.iter_mut() {
                *v -= lse;
            }
        }
        let ng = self.nodes[ix].needs_grad;
        self.push_checked("log_softmax_lastdim", Op::LogSoftmaxLast(ix), sx.clone(), values, ng)
    }

    /// Layer normalization over the last dimension with population variance.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let (ix, ig, ib) = (self.check(x)?, self.check(gamma)?, self.check(beta)?);
        if eps <= 0.0 {
            return Err(Error::Config("layer_norm: eps must be positive".into()));
        }
        let sx = self.nodes[ix].shape.clone();
        let c = *sx.last().ok_or_else(|| Error::Shape("layer_norm: rank-0 input".into()))?;
        if self.nodes[ig].shape != [c] || self.nodes[ib].shape != [c] {
            return Err(Error::Shape(format!(
                "layer_norm: gamma {:?} / beta {:?} vs C={c}",
                self.nodes[ig].shape, self.nodes[ib].shape
            )));
        }
        let mut values = self.nodes[ix].values.clone();
        {
            let gv = &self.nodes[ig].values;
            let bv = &self.nodes[ib].values;
            for slice in values.chunks_mut(c) {
                let mean = slice.iter().sum::<f64>() / c as f64;
                let var = slice.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
                let inv = 1.0 / (var + eps).sqrt();
                for (i, v) in slice.iter_mut().enumerate() {
                    *v = (*v - mean) * inv * gv[i] + bv[i];
                }
            }
        }
        let ng =
            self.nodes[ix].needs_grad || self.nodes[ig].needs_grad || self.nodes[ib].needs_grad;
        self.push_checked(
            "layer_norm",
            Op::LayerNorm { x: ix, gamma: ig, beta: ib, eps },
            sx,
            values,
            ng,
        )
    }

    // ── Gather / reshape / reductions ────────────────────────────────

    /// Select rows of `x[R, C]` by index, producing `[N, C]`. Also serves as
    /// embedding lookup; backward scatter-adds into the source rows.
    pub fn gather_rows(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let ix = self.check(x)?;
        let sx = &self.nodes[ix].shape;
        if sx.len() != 2 {
            return Err(Error::Shape(format!("gather_rows: input must be rank 2, got {sx:?}")));
        }
        let (r, c) = (sx[0], sx[1]);
        if idx.is_empty() {
            return Err(Error::Shape("gather_rows: empty index list".into()));
        }
        if let Some(&bad) = idx.iter().find(|&&i| i >= r) {
            return Err(Error::Shape(format!("gather_rows: index {bad} out of {r} rows")));
        }
        let mut values = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            values.extend_from_slice(&self.nodes[ix].values[i * c..(i + 1) * c]);
        }
        let ng = self.nodes[ix].needs_grad;
        self.push_checked(
            "gather_rows",
            Op::GatherRows { x: ix, idx: idx.to_vec() },
            vec![idx.len(), c],
            values,
            ng,
        )
    }

    /// `out[b, c] = Σ_k w[b, k] · x[b, k, c]` for `x[B, K, C]`, `w[B, K]`.
    pub fn weighted_sum_axis1(&mut self, x: Var, w: Var) -> Result<Var> {
        let (ix, iw) = (self.check(x)?, self.check(w)?);
        let sx = &self.nodes[ix].shape;
        if sx.len() != 3 {
            return Err(Error::Shape(format!("weighted_sum_axis1: input {sx:?} must be rank 3")));
        }
        let (b, k, c) = (sx[0], sx[1], sx[2]);
        if self.nodes[iw].shape != [b, k] {
            return Err(Error::Shape(format!(
                "weighted_sum_axis1: weights {:?} vs [{b}, {k}]",
                self.nodes[iw].shape
            )));
        }
        let mut values = vec![0.0; b * c];
        {
            let xv = &self.nodes[ix].values;
            let wv = &self.nodes[iw].values;
            for bi in 0..b {
                for ki in 0..k {
                    let weight = wv[bi * k + ki];
                    let xrow = &xv[(bi * k + ki) * c..(bi * k + ki + 1) * c];
                    let orow = &mut values[bi * c..(bi + 1) * c];
                    for (o, x) in orow.iter_mut().zip(xrow) {
                        *o += weight * x;
                    }
                }
            }
        }
        let ng = self.nodes[ix].needs_grad || self.nodes[iw].needs_grad;
        self.push_checked(
            "weighted_sum_axis1",
            Op::WeightedSumAxis1 { x: ix, w: iw },
            vec![b, c],
            values,
            ng,
        )
    }

    /// Stack n same-shape `[B, C]` tensors into `[B, n, C]`.
    pub fn stack_axis1(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::Shape("stack_axis1: no inputs".into()));
        }
        let idxs: Vec<usize> = parts.iter().map(|&v| self.check(v)).collect::<Result<_>>()?;
        let s0 = self.nodes[idxs[0]].shape.clone();
        if s0.len() != 2 {
            return Err(Error::Shape(format!("stack_axis1: parts must be rank 2, got {s0:?}")));
        }
        for &i in &idxs[1..] {
            if self.nodes[i].shape != s0 {
                return Err(Error::Shape(format!(
                    "stack_axis1: mismatched part shapes {:?} vs {s0:?}",
                    self.nodes[i].shape
                )));
            }
        }
        let (b, c) = (s0[0], s0[1]);
        let n = idxs.len();
        let mut values = vec![0.0; b * n * c];
        for bi in 0..b {
            for (j, &i) in idxs.iter().enumerate() {
                let src = &self.nodes[i].values[bi * c..(bi + 1) * c];
                values[(bi * n + j) * c..(bi * n + j + 1) * c].copy_from_slice(src);
            }
        }
        let ng = idxs.iter().any(|&i| self.nodes[i].needs_grad);
        self.push_checked("stack_axis1", Op::StackAxis1(idxs), vec![b, n, c], values, ng)
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let ix = self.check(x)?;
        let numel: usize = shape.iter().product();
        if numel != self.nodes[ix].values.len() {
            return Err(Error::Shape(format!(
                "reshape: {:?} -> {shape:?}",
                self.nodes[ix].shape
            )));
        }
        let values = self.nodes[ix].values.clone();
        let ng = self.nodes[ix].needs_grad;
        self.push_checked("reshape", Op::Reshape(ix), shape, values, ng)
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let ix = self.check(x)?;
        let total: f64 = self.nodes[ix].values.iter().sum();
        let ng = self.nodes[ix].needs_grad;
        self.push_checked("sum", Op::Sum(ix), vec![1], vec![total], ng)
    }

    /// Extract one element (by flat row-major index) as a scalar.
    pub fn pick(&mut self, x: Var, flat: usize) -> Result<Var> {
        let ix = self.check(x)?;
        if flat >= self.nodes[ix].values.len() {
            return Err(Error::Shape(format!(
                "pick: index {flat} out of {} elements",
                self.nodes[ix].values.len()
            )));
        }
        let v = self.nodes[ix].values[flat];
        let ng = self.nodes[ix].needs_grad;
        self.push_checked("pick", Op::Pick { x: ix, flat }, vec![1], vec![v], ng)
    }

    /// Numerically stable log(Σ exp(xᵢ)) over scalar inputs.
    pub fn logsumexp(&mut self, xs: &[Var]) -> Result<Var> {
        if xs.is_empty() {
            return Err(Error::Shape("logsumexp: no inputs".into()));
        }
        let idxs: Vec<usize> = xs.iter().map(|&v| self.check(v)).collect::<Result<_>>()?;
        for &i in &idxs {
            if self.nodes[i].values.len() != 1 {
                return Err(Error::Shape("logsumexp: inputs must be scalars".into()));
            }
        }
        let m = idxs.iter().map(|&i| self.nodes[i].values[0]).fold(f64::NEG_INFINITY, f64::max);
        if !m.is_finite() {
            return Err(Error::UndefinedDistribution);
        }
        let s: f64 = idxs.iter().map(|&i| (self.nodes[i].values[0] - m).exp()).sum();
        let v = m + s.ln();
        let ng = idxs.iter().any(|&i| self.nodes[i].needs_grad);
        self.push_checked("logsumexp", Op::LogSumExp(idxs), vec![1], vec![v], ng)
    }

    // ── Backward ─────────────────────────────────────────────────────

    /// Reverse-mode pass from a scalar loss. Seeds the loss gradient with 1,
    /// propagates through a fresh working buffer in reverse tape order, and
    /// adds the result into the persistent node gradients.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let il = self.check(loss)?;
        if self.nodes[il].values.len() != 1 {
            return Err(Error::Shape(format!(
                "backward: loss must be scalar, got shape {:?}",
                self.nodes[il].shape
            )));
        }
        let n = self.nodes.len();
        let mut work: Vec<Option<Vec<f64>>> = vec![None; n];
        work[il] = Some(vec![1.0]);

        for idx in (0..=il).rev() {
            let Some(g) = work[idx].take() else { continue };
            if self.nodes[idx].needs_grad {
                let acc = self.grads[idx]
                    .get_or_insert_with(|| vec![0.0; self.nodes[idx].values.len()]);
                for (a, d) in acc.iter_mut().zip(&g) {
                    *a += d;
                }
            } else {
                continue;
            }
            self.propagate(idx, &g, &mut work);
        }
        Ok(())
    }

    fn propagate(&self, idx: usize, g: &[f64], work: &mut [Option<Vec<f64>>]) {
        let add_into = |work: &mut [Option<Vec<f64>>], target: usize, len: usize, f: &mut dyn FnMut(&mut [f64])| {
            let buf = work[target].get_or_insert_with(|| vec![0.0; len]);
            f(buf);
        };
        let len_of = |i: usize| self.nodes[i].values.len();

        match &self.nodes[idx].op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                for &t in &[*a, *b] {
                    if self.nodes[t].needs_grad {
                        add_into(work, t, len_of(t), &mut |buf| {
                            for (o, d) in buf.iter_mut().zip(g) {
                                *o += d;
                            }
                        });
                    }
                }
            }
            Op::Sub(a, b) => {
                if self.nodes[*a].needs_grad {
                    add_into(work, *a, len_of(*a), &mut |buf| {
                        for (o, d) in buf.iter_mut().zip(g) {
                            *o += d;
                        }
                    });
                }
                if self.nodes[*b].needs_grad {
                    add_into(work, *b, len_of(*b), &mut |buf| {
                        for (o, d) in buf.iter_mut().zip(g) {
                            *o -= d;
                        }
                    });
                }
            }
            Op::Mul(a, b) => {
                let (a, b) = (*a, *b);
                if self.nodes[a].needs_grad {
                    let bv = &self.nodes[b].values;
                    add_into(work, a, len_of(a), &mut |buf| {
                        for i in 0..buf.len() {
                            buf[i] += g[i] * bv[i];
                        }
                    });
                }
                if self.nodes[b].needs_grad {
                    let av = &self.nodes[a].values;
                    add_into(work, b, len_of(b), &mut |buf| {
                        for i in 0..buf.len() {
                            buf[i] += g[i] * av[i];
                        }
                    });
                }
            }
            Op::Scale(a, c) => {
                let (a, c) = (*a, *c);
                if self.nodes[a].needs_grad {
                    add_into(work, a, len_of(a), &mut |buf| {
                        for i in 0..buf.len() {
                            buf[i] += g[i] * c;
                        }
                    });
                }
            }
            Op::AddBias(x, b) => {
                let (x, b) = (*x, *b);
                if self.nodes[x].needs_grad {
                    add_into(work, x, len_of(x), &mut |buf| {
                        for (o, d) in buf.iter_mut().zip(g) {
                            *o += d;
                        }
                    });
                }
                if self.nodes[b].needs_grad {
                    let c = len_of(b);
                    add_into(work, b, c, &mut |buf| {
                        for (i, d) in g.iter().enumerate() {
                            buf[i % c] += d;
                        }
                    });
                }
            }
            Op::Matmul(a, b) => {
                let (a, b) = (*a, *b);
                let (m, k) = (self.nodes[a].shape[0], self.nodes[a].shape[1]);
                let n = self.nodes[b].shape[1];
                if self.nodes[a].needs_grad {
                    // dA = g · Bᵀ
                    let bv = &self.nodes[b].values;
                    add_into(work, a, m * k, &mut |buf| {
                        for i in 0..m {
                            for j in 0..n {
                                let gij = g[i * n + j];
                                if gij == 0.0 {
                                    continue;
                                }
                                for p in 0..k {
                                    buf[i * k + p] += gij * bv[p * n + j];
                                }
                            }
                        }
                    });
                }
                if self.nodes[b].needs_grad {
                    // dB = Aᵀ · g
                    let av = &self.nodes[a].values;
                    add_into(work, b, k * n, &mut |buf| {
                        for i in 0..m {
                            for p in 0..k {
                                let aip = av[i * k + p];
                                if aip == 0.0 {
                                    continue;
                                }
                                let grow = &g[i * n..(i + 1) * n];
                                let brow = &mut buf[p * n..(p + 1) * n];
                                for (o, d) in brow.iter_mut().zip(grow) {
                                    *o += aip * d;
                                }
                            }
                        }
                    });
                }
            }
            Op::Conv1d { x, w, stride, padding } => {
                let (x, w, stride, padding) = (*x, *w, *stride, *padding);
                let sw = &self.nodes[w].shape;
                let (f, c_in, c_out) = (sw[0], sw[1], sw[2]);
                let sx = &self.nodes[x].shape;
                let (batch, l) =
                    if sx.len() == 2 { (1, sx[0]) } else { (sx[0], sx[1]) };
                let l_out = (l + 2 * padding - f) / stride + 1;
                let xv = &self.nodes[x].values;
                let wv = &self.nodes[w].values;
                if self.nodes[x].needs_grad {
                    add_into(work, x, len_of(x), &mut |buf| {
                        for b in 0..batch {
                            for lo in 0..l_out {
                                let grow = &g[(b * l_out + lo) * c_out..(b * l_out + lo + 1) * c_out];
                                for fi in 0..f {
                                    let li = (lo * stride + fi) as isize - padding as isize;
                                    if li < 0 || li as usize >= l {
                                        continue;
                                    }
                                    let xoff = (b * l + li as usize) * c_in;
                                    for ci in 0..c_in {
                                        let wrow =
                                            &wv[(fi * c_in + ci) * c_out..(fi * c_in + ci + 1) * c_out];
                                        let mut acc = 0.0;
                                        for (gd, wd) in grow.iter().zip(wrow) {
                                            acc += gd * wd;
                                        }
                                        buf[xoff + ci] += acc;
                                    }
                                }
                            }
                        }
                    });
                }
                if self.nodes[w].needs_grad {
                    add_into(work, w, len_of(w), &mut |buf| {
                        for b in 0..batch {
                            for lo in 0..l_out {
                                let grow = &g[(b * l_out + lo) * c_out..(b * l_out + lo + 1) * c_out];
                                for fi in 0..f {
                                    let li = (lo * stride + fi) as isize - padding as isize;
                                    if li < 0 || li as usize >= l {
                                        continue;
                                    }
                                    let xoff = (b * l + li as usize) * c_in;
                                    for ci in 0..c_in {
                                        let xval = xv[xoff + ci];
                                        if xval == 0.0 {
                                            continue;
                                        }
                                        let wrow = &mut buf
                                            [(fi * c_in + ci) * c_out..(fi * c_in + ci + 1) * c_out];
                                        for (o, gd) in wrow.iter_mut().zip(grow) {
                                            *o += xval * gd;
                                        }
                                    }
                                }
                            }
                        }
                    });
                }
            }
            Op::Relu(x) => {
                let x = *x;
                if self.nodes[x].needs_grad {
                    let xv = &self.nodes[x].values;
                    add_into(work, x, len_of(x), &mut |buf| {
                        for i in 0..buf.len() {
                            if xv[i] > 0.0 {
                                buf[i] += g[i];
                            }
                        }
                    });
                }
            }
            Op::Gelu(x) => {
                let x = *x;
                if self.nodes[x].needs_grad {
                    let xv = &self.nodes[x].values;
                    add_into(work, x, len_of(x), &mut |buf| {
                        for i in 0..buf.len() {
                            buf[i] += g[i] * gelu_exact_deriv(xv[i]);
                        }
                    });
                }
            }
            Op::SoftmaxLast(x) => {
                let x = *x;
                if self.nodes[x].needs_grad {
                    let c = *self.nodes[idx].shape.last().unwrap();
                    let yv = &self.nodes[idx].values;
                    add_into(work, x, len_of(x), &mut |buf| {
                        for (si, slice) in buf.chunks_mut(c).enumerate() {
                            let y = &yv[si * c..(si + 1) * c];
                            let gs = &g[si * c..(si + 1) * c];
                            let dot: f64 = y.iter().zip(gs).map(|(a, b)| a * b).sum();
                            for i in 0..c {
                                slice[i] += y[i] * (gs[i] - dot);
                            }
                        }
                    });
                }
            }
            Op::LogSoftmaxLast(x) => {
                let x = *x;
                if self.nodes[x].needs_grad {
                    let c = *self.nodes[idx].shape.last().unwrap();
                    let yv = &self.nodes[idx].values;
                    add_into(work, x, len_of(x), &mut |buf| {
                        for (si, slice) in buf.chunks_mut(c).enumerate() {
                            let y = &yv[si * c..(si + 1) * c];
                            let gs = &g[si * c..(si + 1) * c];
                            let gsum: f64 = gs.iter().sum();
                            for i in 0..c {
                                slice[i] += gs[i] - y[i].exp() * gsum;
                            }
                        }
                    });
                }
            }
            Op::LayerNorm { x, gamma, beta, eps } => {
                let (x, gamma, beta, eps) = (*x, *gamma, *beta, *eps);
                let c = *self.nodes[idx].shape.last().unwrap();
                let xv = &self.nodes[x].values;
                let gv = &self.nodes[gamma].values;
                let slices = xv.len() / c;
                // Recompute per-slice statistics.
                let mut stats = Vec::with_capacity(slices);
                for si in 0..slices {
                    let xs = &xv[si * c..(si + 1) * c];
                    let mean = xs.iter().sum::<f64>() / c as f64;
                    let var = xs.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
                    stats.push((mean, 1.0 / (var + eps).sqrt()));
                }
                if self.nodes[x].needs_grad {
                    add_into(work, x, len_of(x), &mut |buf| {
                        for si in 0..slices {
                            let (mean, inv) = stats[si];
                            let xs = &xv[si * c..(si + 1) * c];
                            let gs = &g[si * c..(si + 1) * c];
                            let mut h_mean = 0.0;
                            let mut hx_mean = 0.0;
                            for i in 0..c {
                                let h = gv[i] * gs[i];
                                let xhat = (xs[i] - mean) * inv;
                                h_mean += h;
                                hx_mean += h * xhat;
                            }
                            h_mean /= c as f64;
                            hx_mean /= c as f64;
                            let out = &mut buf[si * c..(si + 1) * c];
                            for i in 0..c {
                                let h = gv[i] * gs[i];
                                let xhat = (xs[i] - mean) * inv;
                                out[i] += inv * (h - h_mean - xhat * hx_mean);
                            }
                        }
                    });
                }
                if self.nodes[gamma].needs_grad {
                    add_into(work, gamma, c, &mut |buf| {
                        for si in 0..slices {
                            let (mean, inv) = stats[si];
                            let xs = &xv[si * c..(si + 1) * c];
                            let gs = &g[si * c..(si + 1) * c];
                            for i in 0..c {
                                buf[i] += gs[i] * (xs[i] - mean) * inv;
                            }
                        }
                    });
                }
                if self.nodes[beta].needs_grad {
                    add_into(work, beta, c, &mut |buf| {
                        for si in 0..slices {
                            let gs = &g[si * c..(si + 1) * c];
                            for i in 0..c {
                                buf[i] += gs[i];
                            }
                        }
                    });
                }
            }
            Op::MaxAxis1 { x, argmax } => {
                let x = *x;
                if self.nodes[x].needs_grad {
                    let (_b, k, c) = (
                        self.nodes[x].shape[0],
                        self.nodes[x].shape[1],
                        self.nodes[x].shape[2],
                    );
                    add_into(work, x, len_of(x), &mut |buf| {
                        for (out_i, &ki) in argmax.iter().enumerate() {
                            let bi = out_i / c;
                            let ch = out_i % c;
                            buf[(bi * k + ki) * c + ch] += g[out_i];
                        }
                    });
                }
            }
            Op::MeanAxis1(x) => {
                let x = *x;
                if self.nodes[x].needs_grad {
                    let (b, k, c) = (
                        self.nodes[x].shape[0],
                        self.nodes[x].shape[1],
                        self.nodes[x].shape[2],
                    );
                    let inv = 1.0 / k as f64;
                    add_into(work, x, len_of(x), &mut |buf| {
                        for bi in 0..b {
                            for ki in 0..k {
                                for ch in 0..c {
                                    buf[(bi * k + ki) * c + ch] += g[bi * c + ch] * inv;
                                }
                            }
                        }
                    });
                }
            }
            Op::MaxPool1d { x, argmax } => {
                let x = *x;
                if self.nodes[x].needs_grad {
                    let c = self.nodes[x].shape[1];
                    add_into(work, x, len_of(x), &mut |buf| {
                        for (out_i, &li) in argmax.iter().enumerate() {
                            let ch = out_i % c;
                            buf[li * c + ch] += g[out_i];
                        }
                    });
                }
            }
            Op::GatherRows { x, idx: rows } => {
                let x = *x;
                if self.nodes[x].needs_grad {
                    let c = self.nodes[x].shape[1];
                    add_into(work, x, len_of(x), &mut |buf| {
                        for (n, &r) in rows.iter().enumerate() {
                            let grow = &g[n * c..(n + 1) * c];
                            let brow = &mut buf[r * c..(r + 1) * c];
                            for (o, d) in brow.iter_mut().zip(grow) {
                                *o += d;
                            }
                        }
                    });
                }
            }
            Op::WeightedSumAxis1 { x, w } => {
                let (x, w) = (*x, *w);
                let (b, k, c) = (
                    self.nodes[x].shape[0],
                    self.nodes[x].shape[1],
                    self.nodes[x].shape[2],
                );
                if self.nodes[x].needs_grad {
                    let wv = &self.nodes[w].values;
                    add_into(work, x, len_of(x), &mut |buf| {
                        for bi in 0..b {
                            for ki in 0..k {
                                let weight = wv[bi * k + ki];
                                let grow = &g[bi * c..(bi + 1) * c];
                                let brow = &mut buf[(bi * k + ki) * c..(bi * k + ki + 1) * c];
                                for (o, d) in brow.iter_mut().zip(grow) {
                                    *o += weight * d;
                                }
                            }
                        }
                    });
                }
                if self.nodes[w].needs_grad {
                    let xv = &self.nodes[x].values;
                    add_into(work, w, b * k, &mut |buf| {
                        for bi in 0..b {
                            for ki in 0..k {
                                let xrow = &xv[(bi * k + ki) * c..(bi * k + ki + 1) * c];
                                let grow = &g[bi * c..(bi + 1) * c];
                                let mut acc = 0.0;
                                for (xd, gd) in xrow.iter().zip(grow) {
                                    acc += xd * gd;
                                }
                                buf[bi * k + ki] += acc;
                            }
                        }
                    });
                }
            }
            Op::StackAxis1(parts) => {
                let n = parts.len();
                let (b, c) = (self.nodes[idx].shape[0], self.nodes[idx].shape[2]);
                for (j, &p) in parts.iter().enumerate() {
                    if self.nodes[p].needs_grad {
                        add_into(work, p, b * c, &mut |buf| {
                            for bi in 0..b {
                                let grow = &g[(bi * n + j) * c..(bi * n + j + 1) * c];
                                let brow = &mut buf[bi * c..(bi + 1) * c];
                                for (o, d) in brow.iter_mut().zip(grow) {
                                    *o += d;
                                }
                            }
                        });
                    }
                }
            }
            Op::Reshape(x) => {
                let x = *x;
                if self.nodes[x].needs_grad {
                    add_into(work, x, len_of(x), &mut |buf| {
                        for (o, d) in buf.iter_mut().zip(g) {
                            *o += d;
                        }
                    });
                }
            }
            Op::Sum(x) => {
                let x = *x;
                if self.nodes[x].needs_grad {
                    let gd = g[0];
                    add_into(work, x, len_of(x), &mut |buf| {
                        for o in buf.iter_mut() {
                            *o += gd;
                        }
                    });
                }
            }
            Op::Pick { x, flat } => {
                let (x, flat) = (*x, *flat);
                if self.nodes[x].needs_grad {
                    let gd = g[0];
                    add_into(work, x, len_of(x), &mut |buf| {
                        buf[flat] += gd;
                    });
                }
            }
            Op::LogSumExp(xs) => {
                let y = self.nodes[idx].values[0];
                let gd = g[0];
                for &xi in xs {
                    if self.nodes[xi].needs_grad {
                        let w = (self.nodes[xi].values[0] - y).exp();
                        add_into(work, xi, 1, &mut |buf| {
                            buf[0] += gd * w;
                        });
                    }
                }
            }
        }
    }
}

/// In-place softmax with max subtraction; `-inf` entries become exactly 0.
fn softmax_slice(slice: &mut [f64]) -> Result<()> {
    let m = slice.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return Err(Error::UndefinedDistribution);
    }
    let mut sum = 0.0;
    for v in slice.iter_mut() {
        *v = (*v - m).exp();
        sum += *v;
    }
    for v in slice.iter_mut() {
        *v /= sum;
    }
    Ok(())
}

const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

fn gelu_exact(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

fn gelu_exact_deriv(x: f64) -> f64 {
    let cdf = 0.5 * (1.0 + libm::erf(x / std::f64::consts::SQRT_2));
    let pdf = FRAC_1_SQRT_2PI * (-0.5 * x * x).exp();
    cdf + x * pdf
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], values: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), values.to_vec()).unwrap()
    }

    #[test]
    fn conv1d_hand_examples() {
        // [1,2,3] with box filter [1,1,1], pad 1 -> [3,6,5]
        let mut g = Graph::new();
        let x = g.leaf(&t(&[3, 1], &[1.0, 2.0, 3.0]));
        let w = g.leaf(&t(&[3, 1, 1], &[1.0, 1.0, 1.0]));
        let y = g.conv1d(x, w, 1, 1).unwrap();
        assert_eq!(g.values(y), &[3.0, 6.0, 5.0]);

        // identity kernel [0,1,0]
        let w2 = g.leaf(&t(&[3, 1, 1], &[0.0, 1.0, 0.0]));
        let y2 = g.conv1d(x, w2, 1, 1).unwrap();
        assert_eq!(g.values(y2), &[1.0, 2.0, 3.0]);
    }

    /// Naive triple-loop reference convolution.
    fn conv_oracle(
        x: &[f64],
        l: usize,
        c_in: usize,
        w: &[f64],
        f: usize,
        c_out: usize,
        stride: usize,
        pad: usize,
    ) -> Vec<f64> {
        let l_out = (l + 2 * pad - f) / stride + 1;
        let mut out = vec![0.0; l_out * c_out];
        for lo in 0..l_out {
            for co in 0..c_out {
                let mut acc = 0.0;
                for fi in 0..f {
                    let li = (lo * stride + fi) as isize - pad as isize;
                    if li < 0 || li as usize >= l {
                        continue;
                    }
                    for ci in 0..c_in {
                        acc += x[li as usize * c_in + ci] * w[(fi * c_in + ci) * c_out + co];
                    }
                }
                out[lo * c_out + co] = acc;
            }
        }
        out
    }

    #[test]
    fn conv1d_matches_naive_oracle() {
        let mut rng = 0x9e3779b97f4a7c15u64;
        let mut next = move || {
            rng ^= rng << 13;
            rng ^= rng >> 7;
            rng ^= rng << 17;
            (rng >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        };
        for &(l, c_in, c_out, f, stride, pad) in &[
            (7usize, 2usize, 3usize, 3usize, 1usize, 1usize),
            (16, 1, 1, 5, 1, 2),
            (9, 3, 2, 3, 2, 1),
            (5, 2, 2, 5, 1, 0),
            (12, 4, 4, 1, 1, 0),
        ] {
            let xv: Vec<f64> = (0..l * c_in).map(|_| next()).collect();
            let wv: Vec<f64> = (0..f * c_in * c_out).map(|_| next()).collect();
            let mut g = Graph::new();
            let x = g.leaf(&t(&[l, c_in], &xv));
            let w = g.leaf(&t(&[f, c_in, c_out], &wv));
            let y = g.conv1d(x, w, stride, pad).unwrap();
            let expect = conv_oracle(&xv, l, c_in, &wv, f, c_out, stride, pad);
            for (a, b) in g.values(y).iter().zip(&expect) {
                assert!((a - b).abs() <= 1e-12, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn conv1d_batched_matches_per_sample() {
        let xv: Vec<f64> = (0..2 * 5 * 3).map(|i| (i as f64 * 0.37).sin()).collect();
        let wv: Vec<f64> = (0..3 * 3 * 2).map(|i| (i as f64 * 0.23).cos()).collect();
        let mut g = Graph::new();
        let xb = g.leaf(&t(&[2, 5, 3], &xv));
        let w = g.leaf(&t(&[3, 3, 2], &wv));
        let yb = g.conv1d(xb, w, 1, 1).unwrap();
        for b in 0..2 {
            let mut g2 = Graph::new();
            let x = g2.leaf(&t(&[5, 3], &xv[b * 15..(b + 1) * 15]));
            let w2 = g2.leaf(&t(&[3, 3, 2], &wv));
            let y = g2.conv1d(x, w2, 1, 1).unwrap();
            assert_eq!(&g.values(yb)[b * 10..(b + 1) * 10], g2.values(y));
        }
    }

    #[test]
    fn conv1d_empty_output_is_geometry_error() {
        let mut g = Graph::new();
        let x = g.leaf(&t(&[2, 1], &[1.0, 2.0]));
        let w = g.leaf(&t(&[5, 1, 1], &[1.0; 5]));
        assert!(matches!(g.conv1d(x, w, 1, 0), Err(Error::InvalidGeometry(_))));
    }

    #[test]
    fn softmax_examples() {
        let mut g = Graph::new();
        let x = g.leaf(&t(&[2], &[1.0, 1.0]));
        let y = g.softmax_lastdim(x).unwrap();
        assert_eq!(g.values(y), &[0.5, 0.5]);

        let x2 = g.leaf(&t(&[2], &[0.0, 3f64.ln()]));
        let y2 = g.softmax_lastdim(x2).unwrap();
        assert!((g.values(y2)[0] - 0.25).abs() < 1e-15);
        assert!((g.values(y2)[1] - 0.75).abs() < 1e-15);

        // stability under large inputs
        let x3 = g.leaf(&t(&[2], &[1000.0, 1000.0]));
        let y3 = g.softmax_lastdim(x3).unwrap();
        assert_eq!(g.values(y3), &[0.5, 0.5]);
    }

    #[test]
    fn softmax_neg_inf_maps_to_zero() {
        let mut g = Graph::new();
        let x = g.leaf(&t(&[3], &[0.0, f64::NEG_INFINITY, 0.0]));
        let y = g.softmax_lastdim(x).unwrap();
        assert_eq!(g.values(y)[1], 0.0);
        assert_eq!(g.values(y)[0], 0.5);

        let all = g.leaf(&t(&[2], &[f64::NEG_INFINITY, f64::NEG_INFINITY]));
        assert!(matches!(g.softmax_lastdim(all), Err(Error::UndefinedDistribution)));
    }

    #[test]
    fn layer_norm_examples() {
        let mut g = Graph::new();
        let gamma = g.leaf(&t(&[3], &[1.0, 1.0, 1.0]));
        let beta = g.leaf(&t(&[3], &[0.0, 0.0, 0.0]));
        let x = g.leaf(&t(&[3], &[5.0, 5.0, 5.0]));
        let y = g.layer_norm(x, gamma, beta, 1e-5).unwrap();
        for v in g.values(y) {
            assert!(v.abs() < 1e-9);
        }

        // already zero-mean unit-variance, tiny eps
        let gamma2 = g.leaf(&t(&[2], &[1.0, 1.0]));
        let beta2 = g.leaf(&t(&[2], &[0.0, 0.0]));
        let x2 = g.leaf(&t(&[2], &[1.0, -1.0]));
        let y2 = g.layer_norm(x2, gamma2, beta2, 1e-300).unwrap();
        assert!((g.values(y2)[0] - 1.0).abs() < 1e-12);
        assert!((g.values(y2)[1] + 1.0).abs() < 1e-12);
    }

    #[test]
    fn layer_norm_matches_direct_formula() {
        let xv = [0.3, -1.2, 2.5, 0.7];
        let gv = [1.1, 0.9, -0.5, 2.0];
        let bv = [0.1, 0.0, -0.3, 0.5];
        let eps = 1e-5;
        let mut g = Graph::new();
        let x = g.leaf(&t(&[4], &xv));
        let gamma = g.leaf(&t(&[4], &gv));
        let beta = g.leaf(&t(&[4], &bv));
        let y = g.layer_norm(x, gamma, beta, eps).unwrap();

        let mean: f64 = xv.iter().sum::<f64>() / 4.0;
        let var: f64 = xv.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 4.0;
        for i in 0..4 {
            let expect = (xv[i] - mean) / (var + eps).sqrt() * gv[i] + bv[i];
            assert!((g.values(y)[i] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn backward_square_sum() {
        let mut g = Graph::new();
        let x = g.leaf(&t(&[2], &[1.0, 2.0]).with_grad());
        let sq = g.mul(x, x).unwrap();
        let loss = g.sum(sq).unwrap();
        g.backward(loss).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[2.0, 4.0]);
    }

    #[test]
    fn backward_softmax_sum_is_zero() {
        let mut g = Graph::new();
        let x = g.leaf(&t(&[3], &[0.3, -1.0, 2.0]).with_grad());
        let y = g.softmax_lastdim(x).unwrap();
        let loss = g.sum(y).unwrap();
        g.backward(loss).unwrap();
        for v in g.grad(x).unwrap() {
            assert!(v.abs() < 1e-12);
        }
    }

    #[test]
    fn repeated_backward_accumulates() {
        let mut g = Graph::new();
        let x = g.leaf(&t(&[2], &[1.0, 2.0]).with_grad());
        let sq = g.mul(x, x).unwrap();
        let loss = g.sum(sq).unwrap();
        g.backward(loss).unwrap();
        g.backward(loss).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[4.0, 8.0]);
    }

    #[test]
    fn backward_rejects_foreign_var() {
        let mut g1 = Graph::new();
        let mut g2 = Graph::new();
        let x = g1.leaf(&t(&[1], &[2.0]));
        assert!(matches!(g2.backward(x), Err(Error::NoGraph)));
        let y = g2.leaf(&t(&[1], &[1.0]));
        assert!(g2.add(x, y).is_err());
    }

    #[test]
    fn backward_requires_scalar_loss() {
        let mut g = Graph::new();
        let x = g.leaf(&t(&[2], &[1.0, 2.0]).with_grad());
        assert!(matches!(g.backward(x), Err(Error::Shape(_))));
    }

    /// Central-difference gradient of a scalar-valued builder over a flat
    /// input vector.
    fn numeric_grad<F>(f: F, x0: &[f64], eps: f64) -> Vec<f64>
    where
        F: Fn(&[f64]) -> f64,
    {
        let mut out = vec![0.0; x0.len()];
        let mut x = x0.to_vec();
        for i in 0..x.len() {
            x[i] = x0[i] + eps;
            let plus = f(&x);
            x[i] = x0[i] - eps;
            let minus = f(&x);
            x[i] = x0[i];
            out[i] = (plus - minus) / (2.0 * eps);
        }
        out
    }

    #[test]
    fn composite_conv_ln_gelu_matches_finite_differences() {
        let l = 6;
        let c = 3;
        let xv: Vec<f64> = (0..l * c).map(|i| ((i * 7 % 11) as f64 - 5.0) * 0.3).collect();
        let wv: Vec<f64> = (0..3 * c * c).map(|i| ((i * 5 % 13) as f64 - 6.0) * 0.15).collect();
        let gv = vec![1.0; c];
        let bv = vec![0.0; c];

        let run = |w: &[f64]| -> f64 {
            let mut g = Graph::new();
            let x = g.leaf(&t(&[l, c], &xv));
            let wt = g.leaf(&t(&[3, c, c], w));
            let gamma = g.leaf(&t(&[c], &gv));
            let beta = g.leaf(&t(&[c], &bv));
            let conv = g.conv1d(x, wt, 1, 1).unwrap();
            let ln = g.layer_norm(conv, gamma, beta, 1e-5).unwrap();
            let act = g.gelu(ln).unwrap();
            let loss = g.sum(act).unwrap();
            g.item(loss)
        };

        let mut g = Graph::new();
        let x = g.leaf(&t(&[l, c], &xv));
        let wt = g.leaf(&t(&[3, c, c], &wv).with_grad());
        let gamma = g.leaf(&t(&[c], &gv));
        let beta = g.leaf(&t(&[c], &bv));
        let conv = g.conv1d(x, wt, 1, 1).unwrap();
        let ln = g.layer_norm(conv, gamma, beta, 1e-5).unwrap();
        let act = g.gelu(ln).unwrap();
        let loss = g.sum(act).unwrap();
        g.backward(loss).unwrap();

        let analytic = g.grad(wt).unwrap();
        let numeric = numeric_grad(run, &wv, 1e-4);
        for (a, n) in analytic.iter().zip(&numeric) {
            let rel = (a - n).abs() / a.abs().max(n.abs()).max(1e-8);
            assert!(rel < 1e-4, "analytic {a} vs numeric {n}");
        }
    }

    #[test]
    fn matmul_and_bias_backward_matches_fd() {
        let a0 = [0.5, -1.0, 2.0, 0.3, 0.9, -0.4];
        let b0 = [1.2, 0.4, -0.7, 0.6];
        let bias0 = [0.2, -0.1];
        let run = |a: &[f64], b: &[f64], bias: &[f64]| -> f64 {
            let mut g = Graph::new();
            let av = g.leaf(&t(&[3, 2], a));
            let bv = g.leaf(&t(&[2, 2], b));
            let biasv = g.leaf(&t(&[2], bias));
            let mm = g.matmul(av, bv).unwrap();
            let y = g.add_bias(mm, biasv).unwrap();
            let act = g.gelu(y).unwrap();
            let loss = g.sum(act).unwrap();
            g.item(loss)
        };

        let mut g = Graph::new();
        let av = g.leaf(&t(&[3, 2], &a0).with_grad());
        let bv = g.leaf(&t(&[2, 2], &b0).with_grad());
        let biasv = g.leaf(&t(&[2], &bias0).with_grad());
        let mm = g.matmul(av, bv).unwrap();
        let y = g.add_bias(mm, biasv).unwrap();
        let act = g.gelu(y).unwrap();
        let loss = g.sum(act).unwrap();
        g.backward(loss).unwrap();

        let na = numeric_grad(|a| run(a, &b0, &bias0), &a0, 1e-5);
        let nb = numeric_grad(|b| run(&a0, b, &bias0), &b0, 1e-5);
        let nbias = numeric_grad(|bias| run(&a0, &b0, bias), &bias0, 1e-5);
        for (a, n) in g.grad(av).unwrap().iter().zip(&na) {
            assert!((a - n).abs() / a.abs().max(n.abs()).max(1e-8) < 1e-6);
        }
        for (a, n) in g.grad(bv).unwrap().iter().zip(&nb) {
            assert!((a - n).abs() / a.abs().max(n.abs()).max(1e-8) < 1e-6);
        }
        for (a, n) in g.grad(biasv).unwrap().iter().zip(&nbias) {
            assert!((a - n).abs() / a.abs().max(n.abs()).max(1e-8) < 1e-6);
        }
    }

    #[test]
    fn gather_max_weighted_ops_backward_fd() {
        // gather -> stack-free 3D reshape -> weighted sum, checked against FD
        let x0: Vec<f64> = (0..12).map(|i| (i as f64 * 0.7).sin()).collect();
        let w0 = [0.3, 0.5, 0.2, 0.8, 0.1, 0.1];
        let idx = [0usize, 2, 3, 1, 1, 2];
        let run = |x: &[f64], w: &[f64]| -> f64 {
            let mut g = Graph::new();
            let xv = g.leaf(&t(&[4, 3], x));
            let wv = g.leaf(&t(&[2, 3], w));
            let gathered = g.gather_rows(xv, &idx).unwrap();
            let cube = g.reshape(gathered, vec![2, 3, 3]).unwrap();
            let ws = g.weighted_sum_axis1(cube, wv).unwrap();
            let mx = g.reshape(ws, vec![1, 2, 3]).unwrap();
            let pooled = g.max_axis1(mx).unwrap();
            let loss = g.sum(pooled).unwrap();
            g.item(loss)
        };
        let mut g = Graph::new();
        let xv = g.leaf(&t(&[4, 3], &x0).with_grad());
        let wv = g.leaf(&t(&[2, 3], &w0).with_grad());
        let gathered = g.gather_rows(xv, &idx).unwrap();
        let cube = g.reshape(gathered, vec![2, 3, 3]).unwrap();
        let ws = g.weighted_sum_axis1(cube, wv).unwrap();
        let mx = g.reshape(ws, vec![1, 2, 3]).unwrap();
        let pooled = g.max_axis1(mx).unwrap();
        let loss = g.sum(pooled).unwrap();
        g.backward(loss).unwrap();

        let nx = numeric_grad(|x| run(x, &w0), &x0, 1e-5);
        let nw = numeric_grad(|w| run(&x0, w), &w0, 1e-5);
        for (a, n) in g.grad(xv).unwrap().iter().zip(&nx) {
            assert!((a - n).abs() / a.abs().max(n.abs()).max(1e-8) < 1e-6, "{a} vs {n}");
        }
        for (a, n) in g.grad(wv).unwrap().iter().zip(&nw) {
            assert!((a - n).abs() / a.abs().max(n.abs()).max(1e-8) < 1e-6, "{a} vs {n}");
        }
    }

    #[test]
    fn logsumexp_and_pick_backward() {
        let x0 = [0.2, -0.5, 1.4];
        let run = |x: &[f64]| -> f64 {
            let mut g = Graph::new();
            let xv = g.leaf(&t(&[3], x));
            let a = g.pick(xv, 0).unwrap();
            let b = g.pick(xv, 1).unwrap();
            let c = g.pick(xv, 2).unwrap();
            let l = g.logsumexp(&[a, b, c]).unwrap();
            g.item(l)
        };
        let mut g = Graph::new();
        let xv = g.leaf(&t(&[3], &x0).with_grad());
        let a = g.pick(xv, 0).unwrap();
        let b = g.pick(xv, 1).unwrap();
        let c = g.pick(xv, 2).unwrap();
        let l = g.logsumexp(&[a, b, c]).unwrap();
        g.backward(l).unwrap();
        let numeric = numeric_grad(run, &x0, 1e-6);
        for (a, n) in g.grad(xv).unwrap().iter().zip(&numeric) {
            assert!((a - n).abs() < 1e-8);
        }
        // gradient of LSE is a softmax: sums to one
        let s: f64 = g.grad(xv).unwrap().iter().sum();
        assert!((s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn maxpool_halves_and_routes_to_first_max() {
        let mut g = Graph::new();
        let x = g.leaf(&t(&[5, 1], &[1.0, 3.0, 3.0, 0.0, 7.0]).with_grad());
        let y = g.maxpool1d(x, 2, 2).unwrap();
        assert_eq!(g.shape(y), &[2, 1]);
        assert_eq!(g.values(y), &[3.0, 3.0]);
        let loss = g.sum(y).unwrap();
        g.backward(loss).unwrap();
        // window [1,3] -> index 1; window [3,0] -> index 2 (first max)
        assert_eq!(g.grad(x).unwrap(), &[0.0, 1.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn non_finite_forward_is_error() {
        let mut g = Graph::new();
        let x = g.leaf(&t(&[1], &[1e308]));
        let y = g.mul(x, x); // overflows to inf
        assert!(matches!(y, Err(Error::NonFinite { .. })));
    }
}

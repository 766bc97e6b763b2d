//! Temporal gloss encoder: a two-level 1D-convolutional stack.
//!
//! Level 1 is two blocks of conv -> ReLU -> max-pool (M2-S2), shrinking T to
//! floor(T/4). Level 2 is one length-preserving conv, and a per-position
//! affine classifier produces gloss logits.
//!
//! The level-1 receptive field must equal the largest fusion window radius,
//! so that one encoded position summarizes exactly the span the widest
//! selector saw. With per-block filter sizes (fa, fb) the receptive field is
//! fa + 2*fb + 1; the constructor rejects any mismatch.

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::init;
use crate::tensor::{Graph, ParamStore, Var};

/// Receptive field of one input position seen by a level-1 output position:
/// conv fa (jump 1), pool 2 (jump 2), conv fb (jump 2), pool 2.
pub fn level1_receptive_field(filters: (usize, usize)) -> usize {
    filters.0 + 2 * filters.1 + 1
}

/// Encoder geometry. Channel widths are free; the receptive-field equality
/// with the fusion scale is the architectural invariant.
#[derive(Debug, Clone)]
pub struct Encoder {
    /// Input channels C (same as the fusion output).
    pub dim: usize,
    /// Level-2 output channels.
    pub out_dim: usize,
    /// Vocabulary size V including blank.
    pub vocab: usize,
    /// Level-1 conv filter sizes (block 1, block 2); both odd.
    pub filters: (usize, usize),
}

impl Encoder {
    /// `k1` is the largest fusion window radius; the level-1 receptive field
    /// must equal it.
    pub fn new(
        dim: usize,
        out_dim: usize,
        vocab: usize,
        filters: (usize, usize),
        k1: usize,
    ) -> Result<Self> {
        if dim < 1 || out_dim < 1 {
            return Err(Error::Config("encoder: channel widths must be >= 1".into()));
        }
        if vocab < 2 {
            return Err(Error::Config(format!(
                "encoder: vocabulary needs blank plus one gloss, got {vocab}"
            )));
        }
        let (fa, fb) = filters;
        if fa < 1 || fb < 1 || fa % 2 == 0 || fb % 2 == 0 {
            return Err(Error::Config(format!(
                "encoder: filter sizes must be odd and positive, got ({fa}, {fb})"
            )));
        }
        let rf = level1_receptive_field(filters);
        if rf != k1 {
            return Err(Error::InvalidGeometry(format!(
                "encoder: level-1 receptive field {rf} (filters {fa}/{fb}) must equal the largest window radius {k1}"
            )));
        }
        Ok(Encoder { dim, out_dim, vocab, filters })
    }

    /// Output length after the two pooling stages.
    pub fn out_len(t: usize) -> usize {
        t / 2 / 2
    }

    pub fn init_params(&self, store: &mut ParamStore, rng: &mut ChaCha8Rng) -> Result<()> {
        let (fa, fb) = self.filters;
        let c = self.dim;
        store.insert("encoder.l1a.weight", init::uniform(rng, vec![fa, c, c], fa * c))?;
        store.insert("encoder.l1a.bias", init::zeros(vec![c]))?;
        store.insert("encoder.l1b.weight", init::uniform(rng, vec![fb, c, c], fb * c))?;
        store.insert("encoder.l1b.bias", init::zeros(vec![c]))?;
        store.insert("encoder.l2.weight", init::uniform(rng, vec![3, c, self.out_dim], 3 * c))?;
        store.insert("encoder.l2.bias", init::zeros(vec![self.out_dim]))?;
        store.insert(
            "classifier.weight",
            init::uniform(rng, vec![self.out_dim, self.vocab], self.out_dim),
        )?;
        store.insert("classifier.bias", init::zeros(vec![self.vocab]))?;
        Ok(())
    }

    /// Two conv -> ReLU -> pool blocks; `[T, C] -> [T/4, C]`.
    pub fn level1_forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let shape = g.shape(x);
        if shape.len() != 2 || shape[1] != self.dim {
            return Err(Error::Shape(format!(
                "encoder level 1: input {shape:?}, expected [T, {}]",
                self.dim
            )));
        }
        if shape[0] < 4 {
            return Err(Error::InvalidGeometry(format!(
                "encoder level 1: need T >= 4 frames, got {}",
                shape[0]
            )));
        }
        let mut cur = x;
        for (block, f) in [("l1a", self.filters.0), ("l1b", self.filters.1)] {
            let w = g.param(store, &format!("encoder.{block}.weight"))?;
            let b = g.param(store, &format!("encoder.{block}.bias"))?;
            cur = g.conv1d(cur, w, 1, f / 2)?;
            cur = g.add_bias(cur, b)?;
            cur = g.relu(cur)?;
            cur = g.maxpool1d(cur, 2, 2)?;
        }
        Ok(cur)
    }

    /// Length-preserving conv -> ReLU; `[T', C] -> [T', C_out]`.
    pub fn level2_forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let w = g.param(store, "encoder.l2.weight")?;
        let b = g.param(store, "encoder.l2.bias")?;
        let y = g.conv1d(x, w, 1, 1)?;
        let y = g.add_bias(y, b)?;
        g.relu(y)
    }

    /// Per-position affine map to vocabulary logits; `[T', C_out] -> [T', V]`.
    pub fn classify(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let w = g.param(store, "classifier.weight")?;
        let b = g.param(store, "classifier.bias")?;
        let y = g.matmul(x, w)?;
        g.add_bias(y, b)
    }

    /// Full stack `[T, C] -> [T/4, V]` pre-softmax.
    pub fn forward_logits(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let l1 = self.level1_forward(g, store, x)?;
        let l2 = self.level2_forward(g, store, l1)?;
        self.classify(g, store, l2)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::subrng;
    use crate::tensor::Tensor;
    use rand_distr::StandardNormal;

    fn randn(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        use rand::Rng;
        (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
    }

    fn enc(dim: usize, out_dim: usize, vocab: usize) -> Encoder {
        // filters (5, 1) give receptive field 8
        Encoder::new(dim, out_dim, vocab, (5, 1), 8).unwrap()
    }

    fn store_for(e: &Encoder, seed: u64) -> ParamStore {
        let mut s = ParamStore::new();
        let mut rng = subrng(seed, "init", 0);
        e.init_params(&mut s, &mut rng).unwrap();
        s
    }

    #[test]
    fn receptive_field_arithmetic() {
        assert_eq!(level1_receptive_field((5, 5)), 16);
        assert_eq!(level1_receptive_field((5, 1)), 8);
        assert_eq!(level1_receptive_field((3, 3)), 10);
    }

    #[test]
    fn constructor_enforces_receptive_field() {
        assert!(Encoder::new(4, 8, 5, (5, 5), 16).is_ok());
        assert!(matches!(
            Encoder::new(4, 8, 5, (5, 5), 12),
            Err(Error::InvalidGeometry(_))
        ));
        // even filter sizes break the length-preserving padding
        assert!(Encoder::new(4, 8, 5, (4, 2), 11).is_err());
    }

    #[test]
    fn time_contracts_by_four_with_floor() {
        let e = enc(3, 4, 5);
        let store = store_for(&e, 1);
        let mut rng = subrng(2, "t4", 0);
        for (t, expect) in [(8usize, 2usize), (10, 2), (12, 3), (17, 4), (64, 16)] {
            let x = Tensor::new(vec![t, 3], randn(&mut rng, t * 3)).unwrap();
            let mut g = Graph::new();
            let xv = g.leaf(&x);
            let y = e.level1_forward(&mut g, &store, xv).unwrap();
            assert_eq!(g.shape(y), &[expect, 3], "T={t}");
            assert_eq!(Encoder::out_len(t), expect);
            let logits = e.forward_logits(&mut g, &store, xv).unwrap();
            assert_eq!(g.shape(logits), &[expect, 5]);
        }
    }

    #[test]
    fn too_short_input_is_geometry_error() {
        let e = enc(3, 4, 5);
        let store = store_for(&e, 1);
        let x = Tensor::new(vec![3, 3], vec![0.5; 9]).unwrap();
        let mut g = Graph::new();
        let xv = g.leaf(&x);
        assert!(matches!(
            e.level1_forward(&mut g, &store, xv),
            Err(Error::InvalidGeometry(_))
        ));
    }

    /// Plain-loop level-1 reference: conv+bias, relu, non-overlapping
    /// max-pool pairs, twice.
    fn level1_oracle(
        x: &[f64],
        t: usize,
        c: usize,
        stages: [(&[f64], &[f64], usize); 2],
    ) -> (Vec<f64>, usize) {
        let mut cur = x.to_vec();
        let mut len = t;
        for (w, b, f) in stages {
            let pad = f / 2;
            let mut conv = vec![0.0; len * c];
            for pos in 0..len {
                for co in 0..c {
                    let mut acc = b[co];
                    for fi in 0..f {
                        let q = pos as isize + fi as isize - pad as isize;
                        if q < 0 || q >= len as isize {
                            continue;
                        }
                        for ci in 0..c {
                            acc += cur[q as usize * c + ci] * w[(fi * c + ci) * c + co];
                        }
                    }
                    conv[pos * c + co] = acc.max(0.0);
                }
            }
            let half = len / 2;
            let mut pooled = vec![0.0; half * c];
            for pos in 0..half {
                for ch in 0..c {
                    pooled[pos * c + ch] =
                        conv[2 * pos * c + ch].max(conv[(2 * pos + 1) * c + ch]);
                }
            }
            cur = pooled;
            len = half;
        }
        (cur, len)
    }

    #[test]
    fn level1_matches_scripted_oracle() {
        let e = enc(3, 4, 5);
        let store = store_for(&e, 7);
        let mut rng = subrng(8, "l1-oracle", 0);
        let t = 13;
        let xv = randn(&mut rng, t * 3);
        let x = Tensor::new(vec![t, 3], xv.clone()).unwrap();
        let mut g = Graph::new();
        let s = g.leaf(&x);
        let y = e.level1_forward(&mut g, &store, s).unwrap();

        let wa = store.get("encoder.l1a.weight").unwrap().values().to_vec();
        let ba = store.get("encoder.l1a.bias").unwrap().values().to_vec();
        let wb = store.get("encoder.l1b.weight").unwrap().values().to_vec();
        let bb = store.get("encoder.l1b.bias").unwrap().values().to_vec();
        let (expect, out_len) =
            level1_oracle(&xv, t, 3, [(&wa, &ba, 5), (&wb, &bb, 1)]);
        assert_eq!(g.shape(y), &[out_len, 3]);
        for (a, b) in g.values(y).iter().zip(&expect) {
            assert!((a - b).abs() <= 1e-10, "{a} vs {b}");
        }
    }

    #[test]
    fn level2_preserves_length_and_matches_oracle() {
        let e = enc(3, 4, 5);
        let store = store_for(&e, 9);
        let mut rng = subrng(10, "l2", 0);

        // single-position input stays single-position
        let one = Tensor::new(vec![1, 3], randn(&mut rng, 3)).unwrap();
        let mut g = Graph::new();
        let o = g.leaf(&one);
        let y1 = e.level2_forward(&mut g, &store, o).unwrap();
        assert_eq!(g.shape(y1), &[1, 4]);

        let t = 6;
        let xv = randn(&mut rng, t * 3);
        let x = Tensor::new(vec![t, 3], xv.clone()).unwrap();
        let s = g.leaf(&x);
        let y = e.level2_forward(&mut g, &store, s).unwrap();
        let w = store.get("encoder.l2.weight").unwrap().values();
        let b = store.get("encoder.l2.bias").unwrap().values();
        for pos in 0..t {
            for co in 0..4 {
                let mut acc = b[co];
                for fi in 0..3 {
                    let q = pos as isize + fi as isize - 1;
                    if q < 0 || q >= t as isize {
                        continue;
                    }
                    for ci in 0..3 {
                        acc += xv[q as usize * 3 + ci] * w[(fi * 3 + ci) * 4 + co];
                    }
                }
                let expect = acc.max(0.0);
                assert!((g.values(y)[pos * 4 + co] - expect).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn level2_zero_params_give_zero() {
        let e = enc(2, 3, 4);
        let mut store = store_for(&e, 11);
        for n in ["encoder.l2.weight", "encoder.l2.bias"] {
            for v in store.get_mut(n).unwrap().values_mut() {
                *v = 0.0;
            }
        }
        let x = Tensor::new(vec![4, 2], vec![1.0; 8]).unwrap();
        let mut g = Graph::new();
        let s = g.leaf(&x);
        let y = e.level2_forward(&mut g, &store, s).unwrap();
        assert!(g.values(y).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn classifier_affine_cases() {
        let e = enc(2, 2, 3);
        let mut store = store_for(&e, 12);

        // zero weights: every row equals the bias
        for v in store.get_mut("classifier.weight").unwrap().values_mut() {
            *v = 0.0;
        }
        store
            .get_mut("classifier.bias")
            .unwrap()
            .values_mut()
            .copy_from_slice(&[0.5, -1.0, 2.0]);
        let x = Tensor::new(vec![3, 2], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let mut g = Graph::new();
        let s = g.leaf(&x);
        let y = e.classify(&mut g, &store, s).unwrap();
        for row in g.values(y).chunks(3) {
            assert_eq!(row, &[0.5, -1.0, 2.0]);
        }

        // identity-like weights pass inputs through
        let e2 = enc(2, 2, 2);
        let mut store2 = store_for(&e2, 13);
        store2
            .get_mut("classifier.weight")
            .unwrap()
            .values_mut()
            .copy_from_slice(&[1.0, 0.0, 0.0, 1.0]);
        for v in store2.get_mut("classifier.bias").unwrap().values_mut() {
            *v = 0.0;
        }
        let mut g2 = Graph::new();
        let s2 = g2.leaf(&x);
        let y2 = e2.classify(&mut g2, &store2, s2).unwrap();
        assert_eq!(g2.values(y2), x.values());
    }

    #[test]
    fn encoder_gradients_match_finite_differences() {
        use crate::tensor::finite_diff_check;
        let e = enc(3, 4, 5);
        let store = store_for(&e, 21);
        let mut rng = subrng(22, "enc-fd", 0);
        let t = 9;
        let x = Tensor::new(vec![t, 3], randn(&mut rng, t * 3)).unwrap();
        let report = finite_diff_check(&store, 1e-4, 1e-4, |ps, g| {
            let s = g.leaf(&x);
            let logits = e.forward_logits(g, ps, s)?;
            let sq = g.mul(logits, logits)?;
            g.sum(sq)
        })
        .unwrap();
        assert!(report.passed(), "{report}");
    }
}

//! Full recognition model: fusion front end, temporal encoder, CTC loss.

use crate::config::Config;
use crate::ctc;
use crate::data::{pad_short_sequence, subrng, FeatureSeq};
use crate::encoder::Encoder;
use crate::error::Result;
use crate::fusion::Fusion;
use crate::tensor::{Graph, ParamStore, Var};

pub struct Model {
    pub fusion: Fusion,
    pub encoder: Encoder,
    /// When false the fusion stage is skipped and frames go straight to the
    /// encoder.
    pub use_fusion: bool,
}

impl Model {
    pub fn from_config(cfg: &Config, vocab_size: usize) -> Result<Model> {
        cfg.validate()?;
        Ok(Model {
            fusion: cfg.fusion()?,
            encoder: cfg.encoder(vocab_size)?,
            use_fusion: cfg.use_mltsf,
        })
    }

    /// Fresh parameters from the run seed. The fusion parameters are created
    /// even when fusion is bypassed so that checkpoints from the two settings
    /// stay structurally comparable; they receive no gradient in that case.
    pub fn init_params(&self, seed: u64) -> Result<ParamStore> {
        let mut store = ParamStore::new();
        let mut rng = subrng(seed, "init", 0);
        self.fusion.init_params(&mut store, &mut rng)?;
        self.encoder.init_params(&mut store, &mut rng)?;
        Ok(store)
    }

    /// Shortest input length the model accepts for a given label sequence.
    /// The encoder halves the time axis twice, so the CTC frame budget
    /// requires 4x the extended-label frame count; the fusion windows need
    /// at least largest-scale + 1 frames; the pooling stages need 4.
    pub fn min_frames(&self, labels: &[usize]) -> usize {
        let ctc_frames = 4 * ctc::required_frames(labels);
        let fusion_frames = if self.use_fusion { self.fusion.max_scale() + 1 } else { 0 };
        ctc_frames.max(fusion_frames).max(4)
    }

    /// Per-frame class scores, shape [T/4, vocab].
    pub fn logits(&self, g: &mut Graph, store: &ParamStore, features: &FeatureSeq) -> Result<Var> {
        let x = g.leaf(&features.to_tensor());
        let encoded = if self.use_fusion {
            self.fusion.forward(g, store, x)?
        } else {
            x
        };
        self.encoder.forward_logits(g, store, encoded)
    }

    /// CTC loss of one (features, labels) pair. The caller is responsible for
    /// padding short inputs first; see [`Model::prepare`].
    pub fn sample_loss(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        features: &FeatureSeq,
        labels: &[usize],
    ) -> Result<Var> {
        let logits = self.logits(g, store, features)?;
        ctc::ctc_nll(g, logits, labels)
    }

    /// Repeat-pad a sequence up to the minimum usable length.
    pub fn prepare(&self, features: &FeatureSeq, labels: &[usize]) -> Result<FeatureSeq> {
        pad_short_sequence(features, self.min_frames(labels))
    }

    /// Greedy decode of one sequence into label ids. `labels_hint` only sets
    /// the padding budget; pass the reference labels when known, or empty.
    pub fn decode(
        &self,
        store: &ParamStore,
        features: &FeatureSeq,
        labels_hint: &[usize],
    ) -> Result<Vec<usize>> {
        let padded = self.prepare(features, labels_hint)?;
        let mut g = Graph::new();
        let logits = self.logits(&mut g, store, &padded)?;
        let values = g.values(logits).to_vec();
        Ok(ctc::greedy_decode(&values, self.encoder.vocab))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth_sample;

    fn small_config() -> Config {
        let mut cfg = Config::default();
        cfg.scales = vec![8, 4];
        cfg.feat_dim = 6;
        cfg.out_dim = 8;
        cfg.n_glosses = 3;
        cfg
    }

    #[test]
    fn logits_shape_follows_time_contraction() {
        let cfg = small_config();
        let model = Model::from_config(&cfg, 4).unwrap();
        let store = model.init_params(7).unwrap();
        let sample = synth_sample(&cfg.synth(), 2, 11).unwrap();
        let padded = model.prepare(&sample.features, &sample.labels).unwrap();
        let mut g = Graph::new();
        let logits = model.logits(&mut g, &store, &padded).unwrap();
        assert_eq!(g.shape(logits), [padded.len() / 4, 4]);
    }

    #[test]
    fn min_frames_covers_label_budget_and_window() {
        let cfg = small_config();
        let model = Model::from_config(&cfg, 4).unwrap();
        // one label needs 4 frames for the ctc budget but the windows need 9
        assert_eq!(model.min_frames(&[1]), 9);
        // repeated label doubles the extended budget: 4 * (2 + 1) = 12
        assert_eq!(model.min_frames(&[1, 1]), 12);

        let mut bare = cfg.clone();
        bare.use_mltsf = false;
        let baseline = Model::from_config(&bare, 4).unwrap();
        assert_eq!(baseline.min_frames(&[1]), 4);
    }

    #[test]
    fn bypass_matches_encoder_alone() {
        let mut cfg = small_config();
        cfg.use_mltsf = false;
        let model = Model::from_config(&cfg, 4).unwrap();
        let store = model.init_params(3).unwrap();
        let sample = synth_sample(&cfg.synth(), 3, 5).unwrap();
        let padded = model.prepare(&sample.features, &sample.labels).unwrap();

        let mut g = Graph::new();
        let via_model = model.logits(&mut g, &store, &padded).unwrap();
        let a = g.values(via_model).to_vec();

        let mut g2 = Graph::new();
        let x = g2.leaf(&padded.to_tensor());
        let direct = model.encoder.forward_logits(&mut g2, &store, x).unwrap();
        let b = g2.values(direct).to_vec();
        assert_eq!(a, b);
    }

    #[test]
    fn sample_loss_is_finite_and_positive() {
        let cfg = small_config();
        let model = Model::from_config(&cfg, 4).unwrap();
        let store = model.init_params(9).unwrap();
        let sample = synth_sample(&cfg.synth(), 2, 21).unwrap();
        let padded = model.prepare(&sample.features, &sample.labels).unwrap();
        let mut g = Graph::new();
        let loss = model
            .sample_loss(&mut g, &store, &padded, &sample.labels)
            .unwrap();
        let v = g.item(loss);
        assert!(v.is_finite() && v > 0.0);
    }

    #[test]
    fn init_is_seed_deterministic() {
        let cfg = small_config();
        let model = Model::from_config(&cfg, 4).unwrap();
        let a = model.init_params(42).unwrap();
        let b = model.init_params(42).unwrap();
        let c = model.init_params(43).unwrap();
        for name in a.names() {
            assert_eq!(a.get(name).unwrap().values(), b.get(name).unwrap().values());
        }
        let diff = a
            .names()
            .any(|n| a.get(n).unwrap().values() != c.get(n).unwrap().values());
        assert!(diff, "different seeds must differ somewhere");
    }
}

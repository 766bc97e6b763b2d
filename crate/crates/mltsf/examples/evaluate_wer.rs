//! Scores a model on a held-out split and breaks the word error rate down
//! into substitutions, deletions and insertions.
//!
//! Evaluates the same dev split twice: once with freshly initialized
//! parameters (the error rate should sit far above zero but below the
//! degenerate all-insertions regime) and once after a short training run.
//! Also prints a few decoded transcripts next to their references.
//!
//! Run with: cargo run --release --example evaluate_wer

use mltsf::config::Config;
use mltsf::data::{synth_split, Dataset};
use mltsf::model::Model;
use mltsf::train::{evaluate, train};
use mltsf::Result;

fn main() -> Result<()> {
    let mut cfg = Config::default();
    cfg.feat_dim = 12;
    cfg.out_dim = 16;
    cfg.n_glosses = 6;
    cfg.sigma = 0.4;
    cfg.lr = 2e-3;
    cfg.epochs = 30;
    cfg.decay_start = 20;
    cfg.decay_interval = 5;
    cfg.seed = 5;
    cfg.validate()?;

    let synth = cfg.synth();
    let vocab = synth.vocab()?;
    let train_set = Dataset { vocab: vocab.clone(), samples: synth_split(&synth, "train", 40, (2, 4))? };
    let dev_set = Dataset { vocab: vocab.clone(), samples: synth_split(&synth, "dev", 12, (2, 4))? };

    let model = Model::from_config(&cfg, vocab.size())?;
    let fresh = model.init_params(cfg.seed)?;
    let (before, _) = evaluate(&model, &fresh, &dev_set)?;
    println!("untrained: {before}");

    let report = train(&cfg, &model, &train_set, Some(&dev_set), None)?;
    let store = &report.state.store;
    let (after, stats) = evaluate(&model, store, &dev_set)?;
    println!("trained:   {after}");
    println!(
        "           {} sub, {} del, {} ins over {} reference words",
        stats.substitutions, stats.deletions, stats.insertions, stats.ref_len
    );

    println!();
    for sample in dev_set.samples.iter().take(4) {
        let hyp = model.decode(store, &sample.features, &sample.labels)?;
        let render = |ids: &[usize]| {
            ids.iter()
                .map(|&i| vocab.name(i).unwrap_or("?").to_string())
                .collect::<Vec<_>>()
                .join(" ")
        };
        println!("ref: {}", render(&sample.labels));
        println!("hyp: {}", render(&hyp));
        println!();
    }
    Ok(())
}

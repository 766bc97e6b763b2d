//! Trains the full multi-scale model on a small synthetic task end to end.
//!
//! Generates train and dev splits, runs a handful of epochs with the Adam
//! loop, prints the per-epoch trace, then round-trips the result through a
//! checkpoint file and confirms the reloaded parameters score identically.
//!
//! Run with: cargo run --release --example train_small

use std::env;

use mltsf::checkpoint::{self, Checkpoint};
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
    cfg.seed = 3;
    cfg.validate()?;

    let synth = cfg.synth();
    let vocab = synth.vocab()?;
    let train_set = Dataset { vocab: vocab.clone(), samples: synth_split(&synth, "train", 40, (2, 4))? };
    let dev_set = Dataset { vocab, samples: synth_split(&synth, "dev", 12, (2, 4))? };

    let model = Model::from_config(&cfg, train_set.vocab.size())?;
    println!("training on {} samples, vocab {}", train_set.samples.len(), train_set.vocab.size());

    let report = train(&cfg, &model, &train_set, Some(&dev_set), None)?;
    for tr in &report.traces {
        let wer = tr.dev_wer.map(|w| format!("{:.2}%", 100.0 * w)).unwrap_or_else(|| "-".into());
        println!(
            "epoch {:>2}  loss {:>8.4}  lr {:.2e}  dev wer {wer}",
            tr.epoch, tr.mean_loss, tr.lr
        );
    }

    let (wer_direct, _) = evaluate(&model, &report.state.store, &dev_set)?;

    let path = env::temp_dir().join("mltsf-train-small.ckpt");
    checkpoint::save(&path, &Checkpoint { config: cfg.clone(), state: report.state })?;
    let restored = checkpoint::load(&path)?;
    let model2 = Model::from_config(&restored.config, restored.vocab_size()?)?;
    let (wer_restored, stats) = evaluate(&model2, &restored.state.store, &dev_set)?;

    println!();
    println!("dev {}", wer_direct);
    println!(
        "after checkpoint round trip: {} ({} sub, {} del, {} ins over {} ref words)",
        wer_restored, stats.substitutions, stats.deletions, stats.insertions, stats.ref_len
    );
    assert_eq!(wer_direct.wer, wer_restored.wer);
    let _ = std::fs::remove_file(&path);
    Ok(())
}

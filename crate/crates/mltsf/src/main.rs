//! Command-line entry points. All logic lives in the library; this file
//! only parses arguments, wires files to library calls, and prints results.

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};
use mltsf::ablate;
use mltsf::checkpoint::{self, Checkpoint};
use mltsf::config::Config;
use mltsf::data::{self, load_dataset, synth_split};
use mltsf::model::Model;
use mltsf::train::{evaluate, train, TrainState};
use mltsf::Result;

#[derive(Parser)]
#[command(name = "mltsf", about = "Multi-scale temporal similarity fusion for sequence recognition")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model on a feature directory and write a checkpoint.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Directory of .mlts feature files plus vocab.txt.
        #[arg(long)]
        data_dir: PathBuf,
        /// Optional held-out directory scored after every epoch.
        #[arg(long)]
        dev_dir: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Continue from an existing checkpoint instead of fresh parameters.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Score a checkpoint against a feature directory.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data_dir: PathBuf,
    },
    /// Greedy-decode one feature file.
    Decode {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        features: PathBuf,
    },
    /// Compare analytic gradients against central finite differences.
    Gradcheck {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 1e-4)]
        eps: f64,
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
    },
    /// Generate a synthetic feature directory.
    Synth {
        #[arg(long)]
        config: PathBuf,
        /// Sample count.
        #[arg(long)]
        n: usize,
        #[arg(long)]
        out: PathBuf,
        /// Split name; it seeds the draw, so train/dev splits differ.
        #[arg(long, default_value = "train")]
        split: String,
    },
    /// Run a named variant grid on the synthetic benchmark.
    Ablate {
        /// One of: scales, components, selector, aggregator, attention.
        #[arg(long)]
        suite: String,
        #[arg(long, value_delimiter = ',', default_values_t = [1u64, 2, 3])]
        seeds: Vec<u64>,
        #[arg(long, default_value_t = 300)]
        train_n: usize,
        #[arg(long, default_value_t = 60)]
        dev_n: usize,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Train { config, data_dir, dev_dir, out, resume } => {
            let cfg = Config::from_file(&config)?;
            let train_set = load_dataset(&data_dir)?;
            let dev_set = dev_dir.map(|d| load_dataset(&d)).transpose()?;
            let model = Model::from_config(&cfg, train_set.vocab.size())?;
            let start: Option<TrainState> = match resume {
                Some(path) => Some(checkpoint::load(&path)?.state),
                None => None,
            };
            let t0 = Instant::now();
            let report = train(&cfg, &model, &train_set, dev_set.as_ref(), start)?;
            for tr in &report.traces {
                match tr.dev_wer {
                    Some(w) => println!(
                        "epoch {:>3}  loss {:>8.4}  lr {:.2e}  dev wer {:>6.2}%",
                        tr.epoch,
                        tr.mean_loss,
                        tr.lr,
                        100.0 * w
                    ),
                    None => println!(
                        "epoch {:>3}  loss {:>8.4}  lr {:.2e}",
                        tr.epoch, tr.mean_loss, tr.lr
                    ),
                }
            }
            let epochs_done = report.state.epochs_done;
            checkpoint::save(&out, &Checkpoint { config: cfg, state: report.state })?;
            match report.diverged {
                Some((epoch, step)) => {
                    eprintln!(
                        "diverged at epoch {epoch} step {step}; wrote last finite state to {}",
                        out.display()
                    );
                    return Err(mltsf::Error::Diverged { epoch, step });
                }
                None => println!(
                    "saved {} after {epochs_done} epochs in {:.1}s",
                    out.display(),
                    t0.elapsed().as_secs_f64()
                ),
            }
            Ok(())
        }
        Command::Eval { ckpt, data_dir } => {
            let loaded = checkpoint::load(&ckpt)?;
            let data = load_dataset(&data_dir)?;
            let model = Model::from_config(&loaded.config, loaded.vocab_size()?)?;
            let (report, stats) = evaluate(&model, &loaded.state.store, &data)?;
            println!("{report}");
            println!("{}", report.to_kv());
            println!("errors={} ref_len={}", stats.total(), stats.ref_len);
            Ok(())
        }
        Command::Decode { ckpt, features } => {
            let loaded = checkpoint::load(&ckpt)?;
            let model = Model::from_config(&loaded.config, loaded.vocab_size()?)?;
            let sample = data::read_features(&features)?;
            let hyp = model.decode(&loaded.state.store, &sample.features, &[])?;
            // synthetic runs can name their glosses; otherwise print ids
            let vocab = loaded.config.synth().vocab().ok().filter(|v| v.size() == model.encoder.vocab);
            let render = |ids: &[usize]| -> String {
                ids.iter()
                    .map(|&id| match &vocab {
                        Some(v) => v.name(id).unwrap_or("?").to_string(),
                        None => id.to_string(),
                    })
                    .collect::<Vec<_>>()
                    .join(" ")
            };
            println!("reference: {}", render(&sample.labels));
            println!("hypothesis: {}", render(&hyp));
            Ok(())
        }
        Command::Gradcheck { config, eps, tolerance } => {
            let cfg = match config {
                Some(path) => Config::from_file(&path)?,
                None => Config::default(),
            };
            let report = gradcheck_model(&cfg, eps, tolerance)?;
            print!("{report}");
            if report.passed() {
                println!("gradcheck passed");
                Ok(())
            } else {
                Err(mltsf::Error::CheckAborted(format!(
                    "max relative error {:.3e} exceeds tolerance {tolerance:.3e}",
                    report.max_rel_err
                )))
            }
        }
        Command::Synth { config, n, out, split } => {
            let cfg = Config::from_file(&config)?;
            let sc = cfg.synth();
            let samples = synth_split(&sc, &split, n, (cfg.glosses_min, cfg.glosses_max))?;
            data::write_split(&out, &split, &samples)?;
            data::write_vocab(&out.join("vocab.txt"), &sc.vocab()?)?;
            let frames: usize = samples.iter().map(|s| s.features.len()).sum();
            println!(
                "wrote {} samples ({frames} frames, dim {}) to {}",
                samples.len(),
                cfg.feat_dim,
                out.display()
            );
            Ok(())
        }
        Command::Ablate { suite, seeds, train_n, dev_n } => {
            let entries = ablate::suite(&suite)?;
            let t0 = Instant::now();
            let rows = ablate::run_suite(&entries, &seeds, train_n, dev_n, |outcome| {
                println!(
                    "[{:>6.1}s] {} seed {}: dev wer {:.2}%, final loss {:.3}",
                    t0.elapsed().as_secs_f64(),
                    outcome.label,
                    outcome.seed,
                    100.0 * outcome.dev_wer,
                    outcome.final_loss
                );
            })?;
            println!();
            print!("{}", ablate::format_table(&rows, &seeds));
            Ok(())
        }
    }
}

/// Full-model gradient check on one synthetic sample at the config's sizes.
fn gradcheck_model(cfg: &Config, eps: f64, tolerance: f64) -> Result<mltsf::tensor::GradReport> {
    let vocab = cfg.n_glosses + 1;
    let model = Model::from_config(cfg, vocab)?;
    let sample = data::synth_sample(&cfg.synth(), cfg.glosses_min.min(2), 7)?;
    let padded = model.prepare(&sample.features, &sample.labels)?;
    let params = model.init_params(cfg.seed)?;
    let labels = sample.labels.clone();
    mltsf::tensor::finite_diff_check(&params, eps, tolerance, move |store, g| {
        let data_loss = model.sample_loss(g, store, &padded, &labels)?;
        mltsf::train::total_loss(g, store, data_loss, cfg.l2)
    })
}

//! Runs a compact ablation grid: the full model against variants with one
//! piece disabled or swapped, all trained on identical data.
//!
//! The variants cover the scale set, the neighbor selector, the scale
//! aggregator and fusion as a whole. Usage:
//!
//!   cargo run --release --example ablation_grid [train_n] [dev_n] [seed...]
//!
//! The default sizes (60 train / 20 dev, one seed) finish in about a minute
//! and demonstrate the machinery, but at that corpus size the fused variants
//! underfit and the plain encoder usually comes out ahead. The comparison
//! only converges on the full benchmark corpus: rerun with `300 60 1 2 3`
//! (roughly ten minutes) to see the fused model in front.

use mltsf::ablate::{benchmark_config, format_table, run_suite, with_single_scale};
use mltsf::fusion::{AggMode, SelectMode};
use mltsf::Result;

fn main() -> Result<()> {
    let mut args = std::env::args().skip(1);
    let train_n: usize = args.next().map(|s| s.parse().unwrap()).unwrap_or(60);
    let dev_n: usize = args.next().map(|s| s.parse().unwrap()).unwrap_or(20);
    let mut seeds: Vec<u64> = args.map(|s| s.parse().unwrap()).collect();
    if seeds.is_empty() {
        seeds.push(1);
    }

    let base = benchmark_config();
    let mut fixed_window = base.clone();
    fixed_window.selector = SelectMode::Center;
    let mut mean_agg = base.clone();
    mean_agg.aggregator = AggMode::Average;
    let mut no_fusion = base.clone();
    no_fusion.use_mltsf = false;

    let entries = vec![
        ("full model".to_string(), base.clone()),
        ("single scale {6}".to_string(), with_single_scale(&base, 6)?),
        ("fixed window".to_string(), fixed_window),
        ("mean aggregation".to_string(), mean_agg),
        ("no fusion".to_string(), no_fusion),
    ];

    println!("{} train / {} dev samples, seeds {seeds:?}", train_n, dev_n);
    let rows = run_suite(&entries, &seeds, train_n, dev_n, |o| {
        println!("{} seed {}: dev wer {:.2}%", o.label, o.seed, 100.0 * o.dev_wer);
    })?;

    println!();
    print!("{}", format_table(&rows, &seeds));
    if train_n < 150 {
        println!();
        println!(
            "note: {train_n} training samples is smoke scale; the fused variants \
             underfit here. Run with `300 60 1 2 3` for the converged comparison."
        );
    }
    Ok(())
}

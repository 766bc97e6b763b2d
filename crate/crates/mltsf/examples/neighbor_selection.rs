//! Shows how similarity-guided neighbor selection reacts to corrupted frames.
//!
//! Builds a short feature sequence in which most frames carry one of two
//! block templates, then blanks a few frames entirely. For one center frame
//! per region the demo prints the similarity row and the neighborhoods picked
//! by the three selection modes, so you can see the local top-k skipping the
//! blanked frames while the fixed window cannot.
//!
//! Run with: cargo run --example neighbor_selection

use mltsf::data::subrng;
use mltsf::fusion::{select_neighbors, similarity_matrix, SelectMode, SimilarityKind};
use mltsf::Result;
use rand::Rng;
use rand_distr::StandardNormal;

const T: usize = 16;
const C: usize = 8;
const SIGMA: f64 = 0.25;

fn main() -> Result<()> {
    // Frames 0..8 carry template A, frames 8..16 template B. Frames 3, 5 and
    // 11 are dropped: noise only, no template.
    let template_a = [1.0, 1.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0];
    let template_b = [0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 1.0];
    let dropped = [3usize, 5, 11];

    let mut rng = subrng(7, "selection-demo", 0);
    let mut features = Vec::with_capacity(T * C);
    for t in 0..T {
        let base: &[f64] = if dropped.contains(&t) {
            &[0.0; C]
        } else if t < T / 2 {
            &template_a
        } else {
            &template_b
        };
        for &v in base {
            features.push(v + SIGMA * rng.sample::<f64, _>(StandardNormal));
        }
    }

    let d = similarity_matrix(&features, T, C, SimilarityKind::DotOverDim)?;

    println!("frame layout: A A A . A . A A B B B . B B B B  (. = dropped)");
    println!();

    for &center in &[4usize, 12] {
        println!("center frame {center}:");
        let row = d.row(center);
        let rendered: Vec<String> = row.iter().map(|v| format!("{v:5.2}")).collect();
        println!("  similarity row (softmax over frames): [{}]", rendered.join(" "));

        for (label, mode) in [
            ("local top-k (k=3)", SelectMode::LocalTopK),
            ("fixed window     ", SelectMode::Center),
            ("global top-k     ", SelectMode::Global),
        ] {
            let n = select_neighbors(&d, center, 3, mode)?;
            let marks: Vec<String> = n
                .indices
                .iter()
                .map(|&i| {
                    if dropped.contains(&i) {
                        format!("{i}!")
                    } else {
                        format!("{i}")
                    }
                })
                .collect();
            println!("  {label} -> [{}]  (! = dropped frame kept)", marks.join(" "));
        }
        println!();
    }

    println!("The local top-k neighborhoods route around the blanked frames;");
    println!("the fixed window is forced to include whatever sits at those offsets.");
    Ok(())
}

//! Trains a sentence-only baseline and a KB-augmented encoder on a synthetic
//! corpus where fine-grained person classes are only recoverable from the KB.
//!
//! ```text
//! cargo run --release --example synthetic_ab -- [seed...]
//! ```

use kbner::synthetic::{run_synthetic_ab, without_occupation, SyntheticConfig};

fn main() -> kbner::Result<()> {
    let seeds: Vec<u64> = std::env::args()
        .skip(1)
        .map(|s| s.parse().expect("seed must be an integer"))
        .collect();
    let seeds = if seeds.is_empty() {
        vec![1, 2, 3]
    } else {
        seeds
    };
    for seed in seeds {
        let start = std::time::Instant::now();
        let report = run_synthetic_ab(&SyntheticConfig::with_seed(seed))?;
        println!(
            "seed {seed}: baseline {:.3}  augmented {:.3}  gap {:+.3}  ({:.1}s)",
            report.baseline_f1,
            report.augmented_f1,
            report.gap,
            start.elapsed().as_secs_f64()
        );
        let mut ablated = SyntheticConfig::with_seed(seed);
        ablated.property_mask = without_occupation();
        let report = run_synthetic_ab(&ablated)?;
        println!(
            "seed {seed} without occupation: baseline {:.3}  augmented {:.3}  gap {:+.3}",
            report.baseline_f1, report.augmented_f1, report.gap
        );
    }
    Ok(())
}

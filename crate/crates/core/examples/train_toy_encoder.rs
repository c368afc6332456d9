//! Trains the toy encoder on a small synthetic corpus, checks its gradients
//! against finite differences and round-trips the model file.
//!
//! ```text
//! cargo run --release --example train_toy_encoder
//! ```

use kbner::augment::MaskMode;
use kbner::encoder::{gradient_check, train, EncoderConfig, ToyEncoder, TrainConfig};
use kbner::kb::PropertyMask;
use kbner::synthetic::{Experiment, SyntheticConfig};

fn main() -> kbner::Result<()> {
    let experiment = Experiment::new(SyntheticConfig {
        n_train: 120,
        n_test: 60,
        ..SyntheticConfig::default()
    });
    let (train_set, test_set) =
        experiment.knowledge_examples(PropertyMask::all(), MaskMode::Default)?;
    let config = TrainConfig {
        epochs: 8,
        ..TrainConfig::default()
    };
    let (model, log) = train(&train_set, EncoderConfig::default(), &config)?;
    for (epoch, loss) in log.epoch_losses.iter().enumerate() {
        println!("epoch {:>2}  loss {loss:.4}", epoch + 1);
    }
    println!(
        "held-out micro F1 {:.3}",
        experiment.train_and_score(&train_set, &test_set)?
    );

    let (aug, mask) = &test_set[0];
    let check = gradient_check(&model, aug, mask, 1e-4, 64, 7)?;
    println!(
        "gradient check over {} coordinates: max relative error {:.2e}",
        check.coordinates.len(),
        check.max_relative_error
    );

    let path = std::env::temp_dir().join("kbner-toy-encoder.json");
    model.save(&path)?;
    let restored = ToyEncoder::load(&path)?;
    assert_eq!(restored.predict(aug, mask)?, model.predict(aug, mask)?);
    println!("saved and reloaded {}", path.display());
    Ok(())
}

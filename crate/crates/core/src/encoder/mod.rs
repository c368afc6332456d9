//! A desk-scale masked transformer tagger.
//!
//! Stands in for a pretrained encoder so the entity-aware attention mask can be
//! exercised end to end: the mask is applied in every layer and head, labels
//! exist only on sentence positions, and training is deterministic per seed.

mod attention;
mod linalg;
mod model;

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use log::debug;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use attention::{masked_attention, AttentionOutput};
pub use linalg::Matrix;
pub use model::{EncoderConfig, ForwardTrace, LayerParams, Params, ToyEncoder, Vocab, UNK};

use crate::augment::{AttentionMask, AugmentedInput};
use crate::error::{Error, Result};

const MODEL_FORMAT: &str = "kbner-toy-encoder";
const MODEL_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    /// Drives initialization and the per-epoch shuffle.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.05,
            epochs: 20,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    /// Mean per-sentence loss of each epoch.
    pub epoch_losses: Vec<f64>,
}

/// One training example: the augmented input and the mask it is trained with.
pub type Example = (AugmentedInput, AttentionMask);

/// Builds vocabulary and label set from `dataset` and trains a fresh model.
///
/// `encoder.seed` is overridden by `config.seed`.
pub fn train(
    dataset: &[Example],
    encoder: EncoderConfig,
    config: &TrainConfig,
) -> Result<(ToyEncoder, TrainLog)> {
    if dataset.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    let labels: BTreeSet<&str> = dataset
        .iter()
        .flat_map(|(a, _)| a.gold_tags.iter().flatten())
        .map(String::as_str)
        .collect();
    let vocab = Vocab::build(
        dataset
            .iter()
            .flat_map(|(a, _)| a.tokens.iter().map(String::as_str)),
    );
    let encoder = EncoderConfig {
        seed: config.seed,
        ..encoder
    };
    let mut model = ToyEncoder::new(
        encoder,
        vocab,
        labels.into_iter().map(str::to_owned).collect(),
    )?;
    let log = fit(&mut model, dataset, config)?;
    Ok((model, log))
}

/// Plain per-example gradient descent on an existing model.
pub fn fit(model: &mut ToyEncoder, dataset: &[Example], config: &TrainConfig) -> Result<TrainLog> {
    if dataset.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_5eed);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut log = TrainLog::default();
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for &i in &order {
            let (aug, mask) = &dataset[i];
            let (loss, grads) = model.loss_and_grads(aug, mask)?;
            if !loss.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    loss,
                    learning_rate: config.learning_rate,
                });
            }
            total += loss;
            model.params.descend(&grads, config.learning_rate);
        }
        let mean = total / dataset.len() as f64;
        if !mean.is_finite() || !model.params.is_finite() {
            return Err(Error::Diverged {
                epoch,
                loss: mean,
                learning_rate: config.learning_rate,
            });
        }
        debug!("epoch {epoch}: loss {mean:.6}");
        log.epoch_losses.push(mean);
    }
    Ok(log)
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format: String,
    version: u32,
    model: ToyEncoder,
}

impl ToyEncoder {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&ModelFile {
            format: MODEL_FORMAT.into(),
            version: MODEL_VERSION,
            model: self.clone(),
        })?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(text)?;
        if file.format != MODEL_FORMAT || file.version != MODEL_VERSION {
            return Err(Error::Config(format!(
                "unsupported model file {} v{}",
                file.format, file.version
            )));
        }
        file.model.config.validate()?;
        Ok(file.model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        ToyEncoder::from_json(&text)
    }
}

/// One checked coordinate.
#[derive(Debug, Clone, PartialEq)]
pub struct CoordinateCheck {
    pub group: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub relative_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientCheck {
    pub max_relative_error: f64,
    pub coordinates: Vec<CoordinateCheck>,
}

/// Gradients smaller than this are compared on an absolute scale.
pub const GRADIENT_CHECK_FLOOR: f64 = 1e-6;

/// `|a − n| / max(|a|, |n|, GRADIENT_CHECK_FLOOR)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(GRADIENT_CHECK_FLOOR)
}

/// Compares analytic gradients with central differences on at least
/// `min_coordinates` sampled coordinates, covering every parameter group.
/// Embedding coordinates are drawn from rows of tokens present in `aug`.
pub fn gradient_check(
    model: &ToyEncoder,
    aug: &AugmentedInput,
    mask: &AttentionMask,
    epsilon: f64,
    min_coordinates: usize,
    seed: u64,
) -> Result<GradientCheck> {
    let (_, grads) = model.loss_and_grads(aug, mask)?;
    let groups: Vec<(String, usize)> = grads
        .tensors()
        .iter()
        .map(|(name, t)| (name.clone(), t.data.len()))
        .collect();
    let per_group = min_coordinates.div_ceil(groups.len()).max(1);
    let used_rows: Vec<usize> = {
        let mut ids: Vec<usize> = aug.tokens.iter().map(|t| model.vocab.id(t)).collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    };
    let d = model.config.d_model;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut probe = model.clone();
    let mut coordinates = Vec::new();
    for (g, (name, len)) in groups.iter().enumerate() {
        for _ in 0..per_group {
            let index = if g == 0 {
                used_rows[rng.random_range(0..used_rows.len())] * d + rng.random_range(0..d)
            } else {
                rng.random_range(0..*len)
            };
            let analytic = grads.tensors()[g].1.data[index];
            let original = model.params.tensors()[g].1.data[index];
            probe.params.tensors_mut()[g].data[index] = original + epsilon;
            let plus = probe.loss(aug, mask)?;
            probe.params.tensors_mut()[g].data[index] = original - epsilon;
            let minus = probe.loss(aug, mask)?;
            probe.params.tensors_mut()[g].data[index] = original;
            let numeric = (plus - minus) / (2.0 * epsilon);
            coordinates.push(CoordinateCheck {
                group: name.clone(),
                index,
                analytic,
                numeric,
                relative_error: relative_error(analytic, numeric),
            });
        }
    }
    let max_relative_error = coordinates
        .iter()
        .map(|c| c.relative_error)
        .fold(0.0, f64::max);
    Ok(GradientCheck {
        max_relative_error,
        coordinates,
    })
}

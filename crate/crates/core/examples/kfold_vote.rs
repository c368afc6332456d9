//! K-fold ensemble: train one model per fold, weight each by its validation
//! F1, vote on the test set and compare against the single models.
//!
//! ```text
//! cargo run --release --example kfold_vote
//! ```

use kbner::augment::MaskMode;
use kbner::encoder::{train, Example, ToyEncoder};
use kbner::ensemble::{
    kfold_split, repair_bio, weighted_vote, PredictionSet, SentencePrediction, VoteMode,
    WeightedPredictions,
};
use kbner::eval::score;
use kbner::kb::PropertyMask;
use kbner::synthetic::{Experiment, SyntheticConfig};

const K: usize = 4;

fn f1(model: &ToyEncoder, data: &[&Example]) -> kbner::Result<f64> {
    let mut gold = Vec::new();
    let mut pred = Vec::new();
    for (aug, mask) in data {
        gold.push(aug.gold_tags.clone().unwrap_or_default());
        pred.push(repair_bio(&model.predict_tags(aug, mask)?)?);
    }
    Ok(score(&gold, &pred)?.micro_f1())
}

fn main() -> kbner::Result<()> {
    let mut config = SyntheticConfig::with_seed(5);
    config.n_train = 160;
    config.n_test = 80;
    config.train.epochs = 6;
    let experiment = Experiment::new(config);
    let (train_set, test_set) =
        experiment.knowledge_examples(PropertyMask::all(), MaskMode::Default)?;

    let ids: Vec<&str> = train_set.iter().map(|(a, _)| a.id.as_str()).collect();
    let plan = kfold_split(&ids, K, 5)?;
    println!("fold sizes {:?}", plan.fold_sizes());

    let test_refs: Vec<&Example> = test_set.iter().collect();
    let mut folds = Vec::new();
    for fold in 0..K {
        let fold_train: Vec<Example> = plan
            .train_indices(fold)
            .into_iter()
            .map(|i| train_set[i].clone())
            .collect();
        let validation: Vec<&Example> = plan
            .validation_indices(fold)
            .into_iter()
            .map(|i| &train_set[i])
            .collect();
        let (model, _) = train(
            &fold_train,
            experiment.config.encoder.clone(),
            &experiment.config.train,
        )?;
        let weight = f1(&model, &validation)?;
        println!(
            "fold {fold}: validation F1 {weight:.3}  test F1 {:.3}",
            f1(&model, &test_refs)?
        );
        let sentences = test_set
            .iter()
            .map(|(aug, mask)| {
                Ok(SentencePrediction {
                    id: aug.id.clone(),
                    tokens: aug.sentence_tokens().to_vec(),
                    distributions: model.predict(aug, mask)?,
                })
            })
            .collect::<kbner::Result<_>>()?;
        folds.push((
            weight,
            PredictionSet {
                labels: model.labels.clone(),
                sentences,
            },
        ));
    }

    let gold: Vec<Vec<String>> = test_set
        .iter()
        .map(|(a, _)| a.gold_tags.clone().unwrap_or_default())
        .collect();
    let preds = WeightedPredictions { folds };
    for mode in [VoteMode::Soft, VoteMode::Hard] {
        let voted = weighted_vote(&preds, mode)?;
        println!(
            "{mode:?} vote test F1 {:.3}",
            score(&gold, &voted)?.micro_f1()
        );
    }
    Ok(())
}

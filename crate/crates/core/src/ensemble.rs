//! K-fold splitting, F1-weighted voting across fold models, and BIO repair.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::Bio;

/// Assignment of every sentence id to one of `k` folds.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldPlan {
    pub k: usize,
    pub seed: u64,
    /// `(sentence id, fold)` in dataset order.
    pub assignments: Vec<(String, usize)>,
}

impl FoldPlan {
    pub fn fold_of(&self, id: &str) -> Option<usize> {
        self.assignments
            .iter()
            .find(|(i, _)| i == id)
            .map(|(_, f)| *f)
    }

    /// Dataset indices held out in `fold`.
    pub fn validation_indices(&self, fold: usize) -> Vec<usize> {
        self.indices(|f| f == fold)
    }

    /// Dataset indices used for training when `fold` is held out.
    pub fn train_indices(&self, fold: usize) -> Vec<usize> {
        self.indices(|f| f != fold)
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for (_, f) in &self.assignments {
            sizes[*f] += 1;
        }
        sizes
    }

    fn indices(&self, keep: impl Fn(usize) -> bool) -> Vec<usize> {
        self.assignments
            .iter()
            .enumerate()
            .filter(|(_, (_, f))| keep(*f))
            .map(|(i, _)| i)
            .collect()
    }

    /// `# k=<k> seed=<seed>` header then `id<TAB>fold` lines.
    pub fn to_tsv(&self) -> String {
        let mut out = format!("# k={} seed={}\n", self.k, self.seed);
        for (id, fold) in &self.assignments {
            writeln!(out, "{id}\t{fold}").unwrap();
        }
        out
    }
}

impl FromStr for FoldPlan {
    type Err = Error;

    fn from_str(text: &str) -> Result<Self> {
        let bad = |m: &str| Error::Config(format!("fold plan: {m}"));
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| bad("empty file"))?;
        let mut k = None;
        let mut seed = None;
        for field in header.trim_start_matches('#').split_whitespace() {
            match field.split_once('=') {
                Some(("k", v)) => k = v.parse().ok(),
                Some(("seed", v)) => seed = v.parse().ok(),
                _ => return Err(bad("malformed header")),
            }
        }
        let (k, seed) = k.zip(seed).ok_or_else(|| bad("header needs k and seed"))?;
        let assignments = lines
            .filter(|l| !l.trim().is_empty())
            .map(|l| {
                let (id, fold) = l
                    .split_once('\t')
                    .ok_or_else(|| bad("expected id<TAB>fold"))?;
                let fold: usize = fold.parse().map_err(|_| bad("fold is not a number"))?;
                if fold >= k {
                    return Err(bad("fold index out of range"));
                }
                Ok((id.to_owned(), fold))
            })
            .collect::<Result<_>>()?;
        Ok(FoldPlan {
            k,
            seed,
            assignments,
        })
    }
}

/// Seeded shuffle, then round-robin assignment. Fold sizes differ by at most one.
pub fn kfold_split<S: AsRef<str>>(ids: &[S], k: usize, seed: u64) -> Result<FoldPlan> {
    if k < 2 {
        return Err(Error::Config(format!("k must be at least 2, got {k}")));
    }
    if ids.len() < k {
        return Err(Error::Config(format!(
            "k={k} exceeds dataset size {}",
            ids.len()
        )));
    }
    let mut seen: HashSet<&str> = HashSet::new();
    if let Some(dup) = ids.iter().map(AsRef::as_ref).find(|id| !seen.insert(id)) {
        return Err(Error::Config(format!("duplicate sentence id {dup:?}")));
    }
    let mut order: Vec<usize> = (0..ids.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut fold = vec![0; ids.len()];
    for (pos, &idx) in order.iter().enumerate() {
        fold[idx] = pos % k;
    }
    Ok(FoldPlan {
        k,
        seed,
        assignments: ids
            .iter()
            .zip(fold)
            .map(|(id, f)| (id.as_ref().to_owned(), f))
            .collect(),
    })
}

/// Per-token label distributions produced by one model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionSet {
    pub labels: Vec<String>,
    pub sentences: Vec<SentencePrediction>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SentencePrediction {
    pub id: String,
    pub tokens: Vec<String>,
    /// One distribution over `labels` per token.
    pub distributions: Vec<Vec<f64>>,
}

/// Fold predictions paired with their voting weight (validation micro F1).
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedPredictions {
    pub folds: Vec<(f64, PredictionSet)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum VoteMode {
    /// Sum weighted probability distributions.
    #[default]
    Soft,
    /// Each fold casts its weight for its own argmax label.
    Hard,
}

/// Weighted vote per token, argmax with ties to the lexicographically
/// smallest label, followed by [`repair_bio`].
pub fn weighted_vote(preds: &WeightedPredictions, mode: VoteMode) -> Result<Vec<Vec<String>>> {
    let folds = &preds.folds;
    let Some((_, first)) = folds.first() else {
        return Err(Error::Config("no fold predictions to vote over".into()));
    };
    if folds.iter().any(|(w, _)| !w.is_finite() || *w < 0.0) {
        return Err(Error::Config(
            "fold weights must be finite and non-negative".into(),
        ));
    }
    if !folds.iter().any(|(w, _)| *w > 0.0) {
        return Err(Error::Config(
            "at least one fold weight must be positive".into(),
        ));
    }
    for (f, (_, set)) in folds.iter().enumerate() {
        if set.sentences.len() != first.sentences.len() {
            return Err(Error::Alignment(format!(
                "fold {f} has {} sentences, fold 0 has {}",
                set.sentences.len(),
                first.sentences.len()
            )));
        }
        for (s, base) in set.sentences.iter().zip(&first.sentences) {
            if s.id != base.id || s.distributions.len() != base.distributions.len() {
                return Err(Error::Alignment(format!(
                    "fold {f}: sentence {:?} ({} tokens) does not align with {:?} ({} tokens)",
                    s.id,
                    s.distributions.len(),
                    base.id,
                    base.distributions.len()
                )));
            }
            if let Some(d) = s.distributions.iter().find(|d| d.len() != set.labels.len()) {
                return Err(Error::Alignment(format!(
                    "fold {f}: distribution of size {} over {} labels",
                    d.len(),
                    set.labels.len()
                )));
            }
        }
    }

    let mut out = Vec::with_capacity(first.sentences.len());
    for s in 0..first.sentences.len() {
        let n = first.sentences[s].distributions.len();
        let mut tags = Vec::with_capacity(n);
        for t in 0..n {
            let mut scores: BTreeMap<&str, f64> = BTreeMap::new();
            for (weight, set) in folds {
                let dist = &set.sentences[s].distributions[t];
                match mode {
                    VoteMode::Soft => {
                        for (label, p) in set.labels.iter().zip(dist) {
                            *scores.entry(label).or_default() += weight * p;
                        }
                    }
                    VoteMode::Hard => {
                        let scored = set
                            .labels
                            .iter()
                            .map(String::as_str)
                            .zip(dist.iter().copied());
                        if let Some(best) = argmax(scored) {
                            *scores.entry(best).or_default() += weight;
                        }
                    }
                }
            }
            let best = argmax(scores.into_iter())
                .ok_or_else(|| Error::Config("empty label set".into()))?;
            tags.push(best.to_owned());
        }
        out.push(repair_bio(&tags)?);
    }
    Ok(out)
}

/// Highest score; scores within a relative 1e-12 of each other tie and the
/// lexicographically smallest label wins.
fn argmax<'a>(scores: impl Iterator<Item = (&'a str, f64)>) -> Option<&'a str> {
    let mut best: Option<(&str, f64)> = None;
    for (label, score) in scores {
        best = match best {
            None => Some((label, score)),
            Some((bl, bs)) => {
                let tol = 1e-12 * bs.abs().max(score.abs());
                if score > bs + tol || ((score - bs).abs() <= tol && label < bl) {
                    Some((label, score))
                } else {
                    Some((bl, bs))
                }
            }
        };
    }
    best.map(|(l, _)| l)
}

/// Turns every `I-X` that follows `O`, the sequence start, or an entity of
/// another type into `B-X`. Idempotent.
pub fn repair_bio<S: AsRef<str>>(tags: &[S]) -> Result<Vec<String>> {
    let mut out = Vec::with_capacity(tags.len());
    let mut prev: Option<String> = None;
    for tag in tags {
        let tag = tag.as_ref();
        let repaired = match Bio::parse(tag)? {
            Bio::Inside(ty) if prev.as_deref() != Some(ty) => format!("B-{ty}"),
            _ => tag.to_owned(),
        };
        prev = Bio::parse(&repaired)?.entity_type().map(str::to_owned);
        out.push(repaired);
    }
    Ok(out)
}

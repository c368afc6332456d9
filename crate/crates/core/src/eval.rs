//! Entity-level scoring over BIO tag sequences.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Bump when the JSON layout of [`EvalReport`] changes.
pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// One BIO tag, borrowed from its string form.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Bio<'a> {
    Outside,
    Begin(&'a str),
    Inside(&'a str),
}

impl<'a> Bio<'a> {
    pub fn parse(tag: &'a str) -> Result<Self> {
        if tag == "O" {
            return Ok(Bio::Outside);
        }
        match tag.split_once('-') {
            Some(("B", ty)) if !ty.is_empty() => Ok(Bio::Begin(ty)),
            Some(("I", ty)) if !ty.is_empty() => Ok(Bio::Inside(ty)),
            _ => Err(Error::Tags(format!("unknown tag {tag:?}"))),
        }
    }

    pub fn entity_type(self) -> Option<&'a str> {
        match self {
            Bio::Outside => None,
            Bio::Begin(t) | Bio::Inside(t) => Some(t),
        }
    }
}

/// Half-open token span `[start, end)` with its entity type.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
    pub label: String,
}

impl Span {
    pub fn new(start: usize, end: usize, label: impl Into<String>) -> Self {
        Span {
            start,
            end,
            label: label.into(),
        }
    }
}

/// Maximal `B-X (I-X)*` runs, in order. Fails on an `I-X` that does not
/// continue an `X` entity; run [`crate::ensemble::repair_bio`] first on
/// untrusted input.
pub fn extract_spans<S: AsRef<str>>(tags: &[S]) -> Result<Vec<Span>> {
    let mut spans = Vec::new();
    let mut open: Option<(usize, &str)> = None;
    for (i, tag) in tags.iter().enumerate() {
        match Bio::parse(tag.as_ref())? {
            Bio::Inside(ty) => match open {
                Some((_, cur)) if cur == ty => continue,
                _ => {
                    return Err(Error::Tags(format!(
                        "I-{ty} at position {i} does not continue an entity of that type"
                    )))
                }
            },
            other => {
                if let Some((start, ty)) = open.take() {
                    spans.push(Span::new(start, i, ty));
                }
                if let Bio::Begin(ty) = other {
                    open = Some((i, ty));
                }
            }
        }
    }
    if let Some((start, ty)) = open {
        spans.push(Span::new(start, tags.len(), ty));
    }
    Ok(spans)
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl Counts {
    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn f1(&self) -> f64 {
        let (p, r) = (self.precision(), self.recall());
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }

    fn scores(&self) -> Scores {
        Scores {
            counts: *self,
            precision: self.precision(),
            recall: self.recall(),
            f1: self.f1(),
        }
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    #[serde(flatten)]
    pub counts: Counts,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub schema_version: u32,
    pub micro: Scores,
    /// Mean per-class F1 over the classes that occur in gold.
    pub macro_f1: f64,
    pub per_class: BTreeMap<String, Scores>,
}

impl EvalReport {
    pub fn micro_f1(&self) -> f64 {
        self.micro.f1
    }

    pub fn to_text(&self) -> String {
        let mut out = format!(
            "{:<24} {:>6} {:>6} {:>6} {:>8} {:>8} {:>8}\n",
            "class", "tp", "fp", "fn", "prec", "recall", "f1"
        );
        let rows = self
            .per_class
            .iter()
            .map(|(c, s)| (c.as_str(), s))
            .chain(std::iter::once(("<micro>", &self.micro)));
        for (class, s) in rows {
            out.push_str(&format!(
                "{:<24} {:>6} {:>6} {:>6} {:>8.4} {:>8.4} {:>8.4}\n",
                class, s.counts.tp, s.counts.fp, s.counts.fn_, s.precision, s.recall, s.f1
            ));
        }
        out.push_str(&format!("macro f1 {:.4}\n", self.macro_f1));
        out
    }
}

/// Exact-match entity scoring over aligned sentences.
pub fn score<S: AsRef<str>>(gold: &[Vec<S>], pred: &[Vec<S>]) -> Result<EvalReport> {
    if gold.len() != pred.len() {
        return Err(Error::Alignment(format!(
            "{} gold sentences vs {} predicted",
            gold.len(),
            pred.len()
        )));
    }
    let mut per_class: BTreeMap<String, Counts> = BTreeMap::new();
    let mut gold_classes = BTreeSet::new();
    for (i, (g, p)) in gold.iter().zip(pred).enumerate() {
        if g.len() != p.len() {
            return Err(Error::Alignment(format!(
                "sentence {i}: {} gold tags vs {} predicted",
                g.len(),
                p.len()
            )));
        }
        let gold_spans: BTreeSet<Span> = extract_spans(g)?.into_iter().collect();
        let pred_spans: BTreeSet<Span> = extract_spans(p)?.into_iter().collect();
        for span in &pred_spans {
            let c = per_class.entry(span.label.clone()).or_default();
            if gold_spans.contains(span) {
                c.tp += 1;
            } else {
                c.fp += 1;
            }
        }
        for span in gold_spans.difference(&pred_spans) {
            per_class.entry(span.label.clone()).or_default().fn_ += 1;
        }
        gold_classes.extend(gold_spans.into_iter().map(|s| s.label));
    }

    let micro = per_class.values().fold(Counts::default(), |acc, c| Counts {
        tp: acc.tp + c.tp,
        fp: acc.fp + c.fp,
        fn_: acc.fn_ + c.fn_,
    });
    let macro_f1 = if gold_classes.is_empty() {
        0.0
    } else {
        gold_classes.iter().map(|c| per_class[c].f1()).sum::<f64>() / gold_classes.len() as f64
    };
    Ok(EvalReport {
        schema_version: REPORT_SCHEMA_VERSION,
        micro: micro.scores(),
        macro_f1,
        per_class: per_class
            .into_iter()
            .map(|(k, c)| (k, c.scores()))
            .collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tags(s: &str) -> Vec<String> {
        s.split_whitespace().map(str::to_owned).collect()
    }

    #[test]
    fn spans_basic() {
        assert_eq!(
            extract_spans(&tags("B-PER I-PER O")).unwrap(),
            vec![Span::new(0, 2, "PER")]
        );
        assert!(extract_spans(&tags("O O O")).unwrap().is_empty());
        assert_eq!(
            extract_spans(&tags("B-PER B-PER")).unwrap(),
            vec![Span::new(0, 1, "PER"), Span::new(1, 2, "PER")]
        );
    }

    #[test]
    fn spans_reject_invalid() {
        assert!(extract_spans(&tags("O I-PER")).is_err());
        assert!(extract_spans(&tags("B-PER I-LOC")).is_err());
        assert!(extract_spans(&tags("B-")).is_err());
        assert!(extract_spans(&tags("X-PER")).is_err());
    }

    #[test]
    fn perfect_and_empty_predictions() {
        let gold = vec![tags("B-PER I-PER O B-LOC")];
        let r = score(&gold, &gold).unwrap();
        assert_eq!(r.micro.f1, 1.0);
        assert_eq!(r.macro_f1, 1.0);
        let r = score(&gold, &[tags("O O O O")]).unwrap();
        assert_eq!(r.micro.f1, 0.0);
    }

    #[test]
    fn hand_worked_mixed_case() {
        let gold = vec![tags("B-PER I-PER O B-LOC")];
        let pred = vec![tags("B-PER I-PER O B-PER")];
        let r = score(&gold, &pred).unwrap();
        assert_eq!(r.micro.precision, 0.5);
        assert_eq!(r.micro.recall, 0.5);
        assert_eq!(r.micro.f1, 0.5);
        assert!((r.per_class["PER"].f1 - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(r.per_class["LOC"].f1, 0.0);
        assert!((r.macro_f1 - 1.0 / 3.0).abs() < 1e-9);
        assert_eq!(r.per_class["LOC"].counts.fn_, 1);
    }

    #[test]
    fn macro_ignores_classes_absent_from_gold() {
        let gold = vec![tags("B-PER O")];
        let pred = vec![tags("B-PER B-ORG")];
        let r = score(&gold, &pred).unwrap();
        assert_eq!(r.macro_f1, 1.0);
        assert_eq!(r.per_class["ORG"].counts.fp, 1);
    }

    #[test]
    fn length_mismatch() {
        assert!(matches!(
            score(&[tags("O O")], &[tags("O")]),
            Err(Error::Alignment(_))
        ));
        assert!(score(&[tags("O")], &[]).is_err());
    }

    #[test]
    fn json_report_has_schema_version() {
        let r = score(&[tags("B-A")], &[tags("B-A")]).unwrap();
        let v: serde_json::Value = serde_json::to_value(&r).unwrap();
        assert_eq!(v["schema_version"], 1);
        assert_eq!(v["micro"]["fn"], 0);
    }

    fn bio_sequence() -> impl Strategy<Value = Vec<String>> {
        prop::collection::vec((0u8..3, 0u8..3), 1..12).prop_map(|raw| {
            let mut out: Vec<String> = Vec::new();
            let mut open: Option<u8> = None;
            for (kind, ty) in raw {
                let label = ["A", "B", "C"][ty as usize];
                match (kind, open) {
                    (0, _) => {
                        out.push("O".into());
                        open = None;
                    }
                    (2, Some(t)) => out.push(format!("I-{}", ["A", "B", "C"][t as usize])),
                    _ => {
                        out.push(format!("B-{label}"));
                        open = Some(ty);
                    }
                }
            }
            out
        })
    }

    proptest! {
        #[test]
        fn micro_invariant_to_sentence_order(
            pairs in prop::collection::vec((bio_sequence(), bio_sequence()), 1..6)
        ) {
            let (gold, pred): (Vec<_>, Vec<_>) = pairs
                .into_iter()
                .map(|(g, p)| {
                    let n = g.len().min(p.len());
                    (g[..n].to_vec(), p[..n].to_vec())
                })
                .unzip();
            // Truncation can leave a dangling I- only at the end, which is still valid.
            let r = score(&gold, &pred).unwrap();
            let mut g2 = gold.clone();
            let mut p2 = pred.clone();
            g2.reverse();
            p2.reverse();
            let r2 = score(&g2, &p2).unwrap();
            prop_assert_eq!(r.micro.f1, r2.micro.f1);
            prop_assert!((0.0..=1.0).contains(&r.micro.f1));
            let f1s: Vec<f64> = r
                .per_class
                .iter()
                .filter(|(_, s)| s.counts.tp + s.counts.fn_ > 0)
                .map(|(_, s)| s.f1)
                .collect();
            if !f1s.is_empty() {
                let lo = f1s.iter().cloned().fold(f64::INFINITY, f64::min);
                let hi = f1s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                prop_assert!(r.macro_f1 >= lo - 1e-12 && r.macro_f1 <= hi + 1e-12);
            }
            let same = gold
                .iter()
                .zip(&pred)
                .all(|(g, p)| extract_spans(g).unwrap() == extract_spans(p).unwrap());
            let any_gold = gold.iter().any(|g| !extract_spans(g).unwrap().is_empty());
            if any_gold {
                prop_assert_eq!(r.micro.f1 == 1.0, same);
            }
        }
    }
}

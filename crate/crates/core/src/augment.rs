//! Knowledge-augmented input assembly and the entity-aware attention mask.
//!
//! Layout: `[CLS] sentence [SEP] seg_0 $ seg_1 $ ... seg_{m-1}` where each
//! segment is the entity's surface tokens followed by its context tokens.
//! Contexts keep `|` as a token of its own.

use std::collections::BTreeMap;
use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::conll::Sentence;
use crate::error::{Error, Result};
use crate::kb::Qid;
use crate::matcher::EntityMatch;

pub const CLS: &str = "[CLS]";
pub const SEP: &str = "[SEP]";
pub const SEGMENT_SEPARATOR: &str = "$";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MaskMode {
    /// Entity↔context in both directions, segment-internal attention, and
    /// self-attention on separators: every row has a set bit.
    #[default]
    Default,
    /// Only the sentence block and entity→own-context. Context and
    /// separator rows are all zero.
    StrictPaper,
}

impl fmt::Display for MaskMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MaskMode::Default => "default",
            MaskMode::StrictPaper => "strict-paper",
        })
    }
}

impl FromStr for MaskMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "default" => Ok(MaskMode::Default),
            "strict-paper" => Ok(MaskMode::StrictPaper),
            _ => Err(Error::Config(format!(
                "unknown mask mode {s:?} (expected default or strict-paper)"
            ))),
        }
    }
}

/// One kept entity span and the appended region describing it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    /// Positions of the entity inside the sentence copy, `[CLS]`-shifted.
    pub entity: Range<usize>,
    /// The whole appended segment: surface echo plus context tokens.
    pub context: Range<usize>,
    pub qids: Vec<Qid>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AugmentedInput {
    pub id: String,
    pub tokens: Vec<String>,
    pub n_sentence: usize,
    pub segments: Vec<Segment>,
    /// Positions of `$` separators between segments.
    pub separators: Vec<usize>,
    pub gold_tags: Option<Vec<String>>,
}

impl AugmentedInput {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Positions `1..=n_sentence`, the only ones that carry labels.
    pub fn label_positions(&self) -> Range<usize> {
        1..self.n_sentence + 1
    }

    /// Per position: the sentence token index whose label it carries, or
    /// `None` (ignored by the loss).
    pub fn label_alignment(&self) -> Vec<Option<usize>> {
        (0..self.len())
            .map(|p| self.label_positions().contains(&p).then(|| p - 1))
            .collect()
    }

    pub fn sentence_tokens(&self) -> &[String] {
        &self.tokens[self.label_positions()]
    }

    /// A copy without any knowledge segments.
    pub fn without_knowledge(&self) -> AugmentedInput {
        AugmentedInput {
            id: self.id.clone(),
            tokens: self.tokens[..self.n_sentence + 2].to_vec(),
            n_sentence: self.n_sentence,
            segments: Vec::new(),
            separators: Vec::new(),
            gold_tags: self.gold_tags.clone(),
        }
    }
}

/// Builds the concatenated input. Pairs sharing a span form one segment whose
/// contexts are joined with `|`. When the budget is tight, segments are kept
/// whole in order of entity length (then start) and skipped if they do not fit.
pub fn assemble(
    sentence: &Sentence,
    pairs: &[EntityMatch],
    max_len: usize,
) -> Result<AugmentedInput> {
    let n = sentence.tokens.len();
    if max_len < n + 2 {
        return Err(Error::SentenceTooLong {
            n_sentence: n,
            needed: n + 2,
            max_len,
        });
    }

    let mut groups: BTreeMap<(usize, usize), Vec<&EntityMatch>> = BTreeMap::new();
    for p in pairs {
        if p.start >= p.end || p.end > n {
            return Err(Error::Config(format!(
                "pair span {}..{} outside sentence of {n} tokens",
                p.start, p.end
            )));
        }
        groups.entry((p.start, p.end)).or_default().push(p);
    }
    let spans: Vec<(usize, usize)> = groups.keys().copied().collect();
    if let Some(w) = spans.windows(2).find(|w| w[1].0 < w[0].1) {
        return Err(Error::Config(format!(
            "pairs overlap: {}..{} and {}..{}",
            w[0].0, w[0].1, w[1].0, w[1].1
        )));
    }

    struct Pending {
        start: usize,
        end: usize,
        tokens: Vec<String>,
        qids: Vec<Qid>,
    }
    let mut pending: Vec<Pending> = groups
        .into_iter()
        .map(|((start, end), mut members)| {
            members.sort_by_key(|m| m.qid);
            members.dedup_by_key(|m| m.qid);
            let mut tokens: Vec<String> = sentence.tokens[start..end].to_vec();
            let mut first = true;
            for m in &members {
                if m.context.trim().is_empty() {
                    continue;
                }
                if !first {
                    tokens.push("|".into());
                }
                first = false;
                tokens.extend(m.context.split_whitespace().map(str::to_owned));
            }
            Pending {
                start,
                end,
                tokens,
                qids: members.iter().map(|m| m.qid).collect(),
            }
        })
        .collect();

    pending.sort_by(|a, b| {
        (b.end - b.start)
            .cmp(&(a.end - a.start))
            .then(a.start.cmp(&b.start))
    });
    let mut total = n + 2;
    let mut kept = Vec::new();
    for seg in pending {
        let cost = seg.tokens.len() + usize::from(!kept.is_empty());
        if total + cost <= max_len {
            total += cost;
            kept.push(seg);
        }
    }
    kept.sort_by_key(|s| s.start);

    let mut tokens = Vec::with_capacity(total);
    tokens.push(CLS.to_owned());
    tokens.extend(sentence.tokens.iter().cloned());
    tokens.push(SEP.to_owned());
    let mut segments = Vec::with_capacity(kept.len());
    let mut separators = Vec::new();
    for (k, seg) in kept.into_iter().enumerate() {
        if k > 0 {
            separators.push(tokens.len());
            tokens.push(SEGMENT_SEPARATOR.to_owned());
        }
        let begin = tokens.len();
        tokens.extend(seg.tokens);
        segments.push(Segment {
            entity: seg.start + 1..seg.end + 1,
            context: begin..tokens.len(),
            qids: seg.qids,
        });
    }
    debug_assert_eq!(tokens.len(), total);

    Ok(AugmentedInput {
        id: sentence.id.clone(),
        tokens,
        n_sentence: n,
        segments,
        separators,
        gold_tags: sentence.gold_tags.clone(),
    })
}

/// Square binary matrix; `get(i, j)` means query `i` may attend key `j`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttentionMask {
    size: usize,
    bits: Vec<bool>,
}

impl AttentionMask {
    pub fn zeros(size: usize) -> Self {
        AttentionMask {
            size,
            bits: vec![false; size * size],
        }
    }

    pub fn ones(size: usize) -> Self {
        AttentionMask {
            size,
            bits: vec![true; size * size],
        }
    }

    pub fn identity(size: usize) -> Self {
        let mut m = AttentionMask::zeros(size);
        for i in 0..size {
            m.set(i, i, true);
        }
        m
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn get(&self, i: usize, j: usize) -> bool {
        self.bits[i * self.size + j]
    }

    pub fn set(&mut self, i: usize, j: usize, value: bool) {
        self.bits[i * self.size + j] = value;
    }

    pub fn row(&self, i: usize) -> &[bool] {
        &self.bits[i * self.size..(i + 1) * self.size]
    }

    pub fn row_sum(&self, i: usize) -> usize {
        self.row(i).iter().filter(|b| **b).count()
    }

    fn fill(&mut self, rows: Range<usize>, cols: Range<usize>) {
        for i in rows {
            for j in cols.clone() {
                self.set(i, j, true);
            }
        }
    }

    /// Set cells outside the leading `block × block` square, row-major.
    pub fn bits_outside_block(&self, block: usize) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for i in 0..self.size {
            for j in 0..self.size {
                if (i >= block || j >= block) && self.get(i, j) {
                    out.push((i, j));
                }
            }
        }
        out
    }
}

pub fn build_attention_mask(aug: &AugmentedInput, mode: MaskMode) -> AttentionMask {
    let mut m = AttentionMask::zeros(aug.len());
    let block = aug.n_sentence + 2;
    m.fill(0..block, 0..block);
    for seg in &aug.segments {
        m.fill(seg.entity.clone(), seg.context.clone());
        if mode == MaskMode::Default {
            m.fill(seg.context.clone(), seg.entity.clone());
            m.fill(seg.context.clone(), seg.context.clone());
        }
    }
    if mode == MaskMode::Default {
        for &p in &aug.separators {
            m.set(p, p, true);
        }
    }
    m
}

/// One line of an augmented-input file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AugmentedRecord {
    pub id: String,
    pub tokens: Vec<String>,
    pub n_sentence: usize,
    pub gold: Option<Vec<String>>,
    pub segments: Vec<Segment>,
    pub separators: Vec<usize>,
    pub mask_mode: MaskMode,
    /// Set bits outside the implicit all-ones sentence block.
    pub mask: Vec<(usize, usize)>,
}

impl AugmentedRecord {
    pub fn new(aug: &AugmentedInput, mode: MaskMode) -> Self {
        let mask = build_attention_mask(aug, mode);
        AugmentedRecord {
            id: aug.id.clone(),
            tokens: aug.tokens.clone(),
            n_sentence: aug.n_sentence,
            gold: aug.gold_tags.clone(),
            segments: aug.segments.clone(),
            separators: aug.separators.clone(),
            mask_mode: mode,
            mask: mask.bits_outside_block(aug.n_sentence + 2),
        }
    }

    pub fn into_parts(self) -> Result<(AugmentedInput, AttentionMask)> {
        let size = self.tokens.len();
        let block = self.n_sentence + 2;
        if block > size {
            return Err(Error::Config(format!(
                "{}: n_sentence {} does not fit {} tokens",
                self.id, self.n_sentence, size
            )));
        }
        if let Some(g) = &self.gold {
            if g.len() != self.n_sentence {
                return Err(Error::Alignment(format!(
                    "{}: {} gold tags for {} tokens",
                    self.id,
                    g.len(),
                    self.n_sentence
                )));
            }
        }
        let in_range = |r: &Range<usize>| r.start <= r.end && r.end <= size;
        if self
            .segments
            .iter()
            .any(|s| !in_range(&s.entity) || !in_range(&s.context))
            || self.separators.iter().any(|&p| p >= size)
        {
            return Err(Error::Config(format!(
                "{}: segment outside sequence",
                self.id
            )));
        }
        let mut mask = AttentionMask::zeros(size);
        mask.fill(0..block, 0..block);
        for &(i, j) in &self.mask {
            if i >= size || j >= size {
                return Err(Error::Config(format!(
                    "{}: mask bit ({i},{j}) out of range",
                    self.id
                )));
            }
            mask.set(i, j, true);
        }
        let aug = AugmentedInput {
            id: self.id,
            tokens: self.tokens,
            n_sentence: self.n_sentence,
            segments: self.segments,
            separators: self.separators,
            gold_tags: self.gold,
        };
        Ok((aug, mask))
    }
}

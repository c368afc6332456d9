//! Token-level multi-pattern matching of KB surfaces against sentences.
//!
//! Surfaces are split into normalized token pieces and compiled into an
//! Aho-Corasick automaton over piece ids, so one left-to-right pass over a
//! sentence reports every occurrence of every surface. Matches always begin
//! and end on token boundaries.

use std::collections::{HashMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::conll::Sentence;
use crate::error::{Error, Result};
use crate::kb::{KnowledgeBase, Qid};
use crate::normalize::normalize_token;

const ROOT: u32 = 0;
const NONE: u32 = u32::MAX;

#[derive(Debug, Clone)]
struct Node {
    /// Sorted by piece id.
    children: Vec<(u32, u32)>,
    fail: u32,
    /// Nearest proper suffix state (via fail links) that ends a pattern.
    dict_link: u32,
    /// Pattern ending exactly here.
    pattern: u32,
    depth: u32,
}

impl Node {
    fn new(depth: u32) -> Self {
        Node {
            children: Vec::new(),
            fail: ROOT,
            dict_link: NONE,
            pattern: NONE,
            depth,
        }
    }

    fn child(&self, piece: u32) -> Option<u32> {
        self.children
            .binary_search_by_key(&piece, |c| c.0)
            .ok()
            .map(|i| self.children[i].1)
    }
}

#[derive(Debug, Clone)]
struct Pattern {
    surface: String,
    qids: Vec<Qid>,
}

/// Immutable automaton over every surface of a [`KnowledgeBase`].
#[derive(Debug, Clone)]
pub struct Matcher {
    piece_ids: HashMap<String, u32>,
    nodes: Vec<Node>,
    patterns: Vec<Pattern>,
}

/// A span of the sentence whose normalized text is a KB surface, for one qid.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Candidate {
    pub start: usize,
    /// Exclusive.
    pub end: usize,
    pub surface: String,
    pub qid: Qid,
}

impl Candidate {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }

    pub fn overlaps(&self, other: &Candidate) -> bool {
        self.start < other.end && other.start < self.end
    }
}

/// A retrieved `(entity, context)` pair.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityMatch {
    pub start: usize,
    pub end: usize,
    #[serde(skip)]
    pub surface: String,
    pub qid: Qid,
    pub context: String,
}

impl EntityMatch {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }
}

/// Compiles every surface of `kb`. Construction is deterministic.
pub fn build_matcher(kb: &KnowledgeBase) -> Matcher {
    let mut piece_ids: HashMap<String, u32> = HashMap::new();
    let mut nodes = vec![Node::new(0)];
    let mut patterns = Vec::new();

    for (surface, qids) in kb.surfaces() {
        let mut state = ROOT;
        for piece in surface.split(' ') {
            let next_id = piece_ids.len() as u32;
            let id = *piece_ids.entry(piece.to_owned()).or_insert(next_id);
            state = match nodes[state as usize].child(id) {
                Some(s) => s,
                None => {
                    let s = nodes.len() as u32;
                    let depth = nodes[state as usize].depth + 1;
                    nodes.push(Node::new(depth));
                    let children = &mut nodes[state as usize].children;
                    let pos = children.partition_point(|c| c.0 < id);
                    children.insert(pos, (id, s));
                    s
                }
            };
        }
        nodes[state as usize].pattern = patterns.len() as u32;
        patterns.push(Pattern {
            surface: surface.to_owned(),
            qids: qids.to_vec(),
        });
    }

    // Breadth-first failure links.
    let mut queue: VecDeque<u32> = nodes[ROOT as usize].children.iter().map(|c| c.1).collect();
    while let Some(state) = queue.pop_front() {
        let children = nodes[state as usize].children.clone();
        for (piece, child) in children {
            let mut f = nodes[state as usize].fail;
            let fail = loop {
                if let Some(s) = nodes[f as usize].child(piece) {
                    break s;
                }
                if f == ROOT {
                    break ROOT;
                }
                f = nodes[f as usize].fail;
            };
            let fail_node = &nodes[fail as usize];
            let dict_link = if fail_node.pattern != NONE {
                fail
            } else {
                fail_node.dict_link
            };
            let node = &mut nodes[child as usize];
            node.fail = fail;
            node.dict_link = dict_link;
            queue.push_back(child);
        }
    }

    Matcher {
        piece_ids,
        nodes,
        patterns,
    }
}

impl Matcher {
    pub fn pattern_count(&self) -> usize {
        self.patterns.len()
    }

    fn step(&self, mut state: u32, piece: u32) -> u32 {
        if piece == NONE {
            return ROOT;
        }
        loop {
            if let Some(next) = self.nodes[state as usize].child(piece) {
                return next;
            }
            if state == ROOT {
                return ROOT;
            }
            state = self.nodes[state as usize].fail;
        }
    }

    /// Every `(span, qid)` whose normalized span text is a KB surface.
    ///
    /// Tokens are normalized here with the KB normalizer. Tokens that
    /// normalize to nothing (whitespace) never start or end a match.
    /// Output is sorted by `(start, end, qid)`.
    pub fn find_candidates(&self, tokens: &[String]) -> Vec<Candidate> {
        // (piece id, token index, first piece of token, last piece of token)
        let mut pieces: Vec<(u32, usize, bool, bool)> = Vec::new();
        for (t, token) in tokens.iter().enumerate() {
            let parts = normalize_token(token);
            let last = parts.len().saturating_sub(1);
            for (k, part) in parts.iter().enumerate() {
                let id = self.piece_ids.get(part).copied().unwrap_or(NONE);
                pieces.push((id, t, k == 0, k == last));
            }
        }

        let mut out = Vec::new();
        let mut state = ROOT;
        for (p, &(id, token, _, is_last)) in pieces.iter().enumerate() {
            state = self.step(state, id);
            if !is_last {
                continue;
            }
            let mut s = if self.nodes[state as usize].pattern != NONE {
                state
            } else {
                self.nodes[state as usize].dict_link
            };
            while s != NONE {
                let node = &self.nodes[s as usize];
                let first = p + 1 - node.depth as usize;
                let (_, start_token, is_first, _) = pieces[first];
                if is_first {
                    let pattern = &self.patterns[node.pattern as usize];
                    for &qid in &pattern.qids {
                        out.push(Candidate {
                            start: start_token,
                            end: token + 1,
                            surface: pattern.surface.clone(),
                            qid,
                        });
                    }
                }
                s = node.dict_link;
            }
        }
        out.sort();
        out
    }
}

/// Keeps longer entities: greedy by (length desc, start asc). All qids of a
/// selected span survive together. Output sorted by `(start, qid)`.
pub fn resolve_overlaps(candidates: &[Candidate]) -> Vec<Candidate> {
    let mut spans: Vec<(usize, usize)> = candidates.iter().map(|c| (c.start, c.end)).collect();
    spans.sort_by(|a, b| (b.1 - b.0).cmp(&(a.1 - a.0)).then(a.0.cmp(&b.0)));
    spans.dedup();

    let mut selected: Vec<(usize, usize)> = Vec::new();
    for (start, end) in spans {
        if selected.iter().all(|&(s, e)| end <= s || e <= start) {
            selected.push((start, end));
        }
    }
    let mut out: Vec<Candidate> = candidates
        .iter()
        .filter(|c| selected.contains(&(c.start, c.end)))
        .cloned()
        .collect();
    out.sort_by(|a, b| a.start.cmp(&b.start).then(a.qid.cmp(&b.qid)));
    out.dedup();
    out
}

/// Candidates, overlap resolution, then contexts from the KB.
///
/// A qid without a context means `matcher` was not built from `kb`; that is
/// reported as [`Error::Internal`].
pub fn retrieve(
    kb: &KnowledgeBase,
    matcher: &Matcher,
    sentence: &Sentence,
) -> Result<Vec<EntityMatch>> {
    resolve_overlaps(&matcher.find_candidates(&sentence.tokens))
        .into_iter()
        .map(|c| {
            let context = kb.context(c.qid).ok_or_else(|| {
                Error::Internal(format!(
                    "{} matched surface {:?} but has no context in the KB",
                    c.qid, c.surface
                ))
            })?;
            Ok(EntityMatch {
                start: c.start,
                end: c.end,
                surface: c.surface,
                qid: c.qid,
                context: context.to_owned(),
            })
        })
        .collect()
}

//! Acceptance gate: one PASS/FAIL line per criterion, non-zero exit on any
//! failure. Tolerances and budgets are pinned below.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use kbner::augment::{
    assemble, build_attention_mask, AttentionMask, AugmentedInput, AugmentedRecord, MaskMode,
};
use kbner::conll::{format_conll, Sentence};
use kbner::encoder::{gradient_check, masked_attention, EncoderConfig, Matrix, ToyEncoder, Vocab};
use kbner::ensemble::{
    weighted_vote, PredictionSet, SentencePrediction, VoteMode, WeightedPredictions,
};
use kbner::eval::score;
use kbner::kb::{
    build_knowledge_base, coverage_rate, parse_dump, EntityRecord, KbBuilder, KnowledgeBase,
    PropertyMask, Qid,
};
use kbner::matcher::{build_matcher, resolve_overlaps, Candidate, EntityMatch};
use kbner::normalize::normalize;
use kbner::synthetic::{generate_corpus, without_occupation, Experiment, SyntheticConfig};

const MATCHER_CASES: usize = 1_000;
const MATCHER_BUDGET: Duration = Duration::from_secs(10);
const MASK_CASES: usize = 10_000;
const MASK_BUDGET: Duration = Duration::from_secs(30);
const ATTENTION_CASES: usize = 500;
const ROW_SUM_TOLERANCE: f64 = 1e-9;
const GRADIENT_TRIALS: usize = 20;
const GRADIENT_EPSILON: f64 = 1e-4;
const GRADIENT_TOLERANCE: f64 = 1e-4;
const ATTENTION_BUDGET: Duration = Duration::from_secs(60);
const ISOLATION_TRIALS: usize = 100;
const GOLDEN_TOLERANCE: f64 = 1e-9;
const ENSEMBLE_CASES: usize = 1_000;
const AB_SEEDS: [u64; 3] = [1, 2, 3];
const AB_MIN_GAP: f64 = 0.30;
const AB_MAX_ABLATED_GAP: f64 = 0.10;
const AB_BUDGET: Duration = Duration::from_secs(300);

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(budget: Duration, start: Instant) -> Result<(), String> {
    let took = start.elapsed();
    ensure(took < budget, || {
        format!("took {took:.1?}, budget {budget:?}")
    })
}

fn main() {
    let criteria: [Criterion; 9] = [
        ("matcher equals brute-force oracle", matcher_oracle),
        ("attention mask property suite", mask_suite),
        (
            "masked attention and gradient checks",
            attention_correctness,
        ),
        ("strict one-layer context isolation", context_isolation),
        ("scorer and coverage golden values", scorer_golden),
        ("KB golden contexts and stable files", kb_golden),
        ("ensemble voting properties", ensemble_properties),
        ("synthetic A/B gap", synthetic_ab),
        ("CLI artifacts are deterministic", determinism),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(check).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let took = start.elapsed();
        match outcome {
            Ok(detail) => println!("PASS  {}. {name}: {detail} [{took:.1?}]", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL  {}. {name}: {detail} [{took:.1?}]", i + 1);
            }
        }
    }
    println!(
        "{} of {} criteria passed",
        criteria.len() - failed,
        criteria.len()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}

// ---------------------------------------------------------------- matcher

const WORDS: [&str; 9] = ["a", "b", "c", "ab", "A", "Ａ", "x y", " ", "Ｂ"];

fn random_tokens(rng: &mut ChaCha8Rng, max: usize) -> Vec<String> {
    let n = rng.random_range(1..=max);
    (0..n)
        .map(|_| WORDS.choose(rng).unwrap().to_string())
        .collect()
}

fn labelled(qid: u64, label: &str) -> EntityRecord {
    let mut r = EntityRecord::new(Qid::new(qid));
    r.labels.insert("en".into(), label.into());
    r
}

/// Every span whose first and last tokens carry text and whose joined,
/// normalized text is a KB surface; one candidate per qid.
fn brute_force(kb: &KnowledgeBase, tokens: &[String]) -> BTreeSet<Candidate> {
    let mut out = BTreeSet::new();
    let has_text = |t: &String| !normalize(t).is_empty();
    for i in 0..tokens.len() {
        for j in i + 1..=tokens.len() {
            if !has_text(&tokens[i]) || !has_text(&tokens[j - 1]) {
                continue;
            }
            let surface = normalize(&tokens[i..j].join(" "));
            for qid in kb.qids(&surface).unwrap_or_default() {
                out.insert(Candidate {
                    start: i,
                    end: j,
                    surface: surface.clone(),
                    qid: *qid,
                });
            }
        }
    }
    out
}

fn greedy_oracle(candidates: &BTreeSet<Candidate>) -> BTreeSet<(usize, usize)> {
    let mut spans: Vec<(usize, usize)> = candidates.iter().map(|c| (c.start, c.end)).collect();
    spans.sort_by_key(|&(s, e)| (std::cmp::Reverse(e - s), s));
    spans.dedup();
    let mut kept: Vec<(usize, usize)> = Vec::new();
    for (s, e) in spans {
        if kept.iter().all(|&(ks, ke)| e <= ks || ke <= s) {
            kept.push((s, e));
        }
    }
    kept.into_iter().collect()
}

fn matcher_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut total = 0;
    for case in 0..MATCHER_CASES {
        let n_surfaces = rng.random_range(1..=50);
        let records: Vec<EntityRecord> = (0..n_surfaces)
            .map(|i| labelled(i as u64 + 1, &random_tokens(&mut rng, 3).join(" ")))
            .collect();
        let kb = build_knowledge_base(|| records.clone(), "en", PropertyMask::all());
        let matcher = build_matcher(&kb);
        let tokens = random_tokens(&mut rng, 20);
        let found: BTreeSet<Candidate> = matcher.find_candidates(&tokens).into_iter().collect();
        let expected = brute_force(&kb, &tokens);
        ensure(found == expected, || {
            format!("case {case}: tokens {tokens:?}: matcher {found:?} vs oracle {expected:?}")
        })?;
        total += expected.len();

        let found: Vec<Candidate> = found.into_iter().collect();
        let kept = resolve_overlaps(&found);
        let spans: BTreeSet<(usize, usize)> = kept.iter().map(|c| (c.start, c.end)).collect();
        ensure(spans == greedy_oracle(&expected), || {
            format!("case {case}: greedy spans {spans:?}")
        })?;
        for a in &spans {
            for b in &spans {
                ensure(a == b || a.1 <= b.0 || b.1 <= a.0, || {
                    format!("case {case}: {a:?} overlaps {b:?}")
                })?;
            }
        }
        for c in &found {
            let is_kept = spans.contains(&(c.start, c.end));
            ensure(is_kept == kept.contains(c), || {
                format!("case {case}: qids of {c:?} not all kept")
            })?;
            let blocked = spans
                .iter()
                .any(|&(s, e)| s < c.end && c.start < e && e - s >= c.len());
            ensure(is_kept || blocked, || {
                format!("case {case}: {c:?} dropped without a longer blocker")
            })?;
        }
    }
    within(MATCHER_BUDGET, start)?;
    Ok(format!("{MATCHER_CASES} cases, {total} candidates"))
}

// ---------------------------------------------------------------- masks

fn random_augmented(rng: &mut ChaCha8Rng, case: usize) -> AugmentedInput {
    let n = rng.random_range(1..=12);
    let tokens: Vec<String> = (0..n).map(|i| format!("w{i}")).collect();
    let mut pairs = Vec::new();
    let mut pos = 0;
    while pos < n {
        if rng.random_bool(0.4) {
            let len = rng.random_range(1..=3.min(n - pos));
            for _ in 0..rng.random_range(1..=2) {
                let ctx_len = rng.random_range(0..=4);
                pairs.push(EntityMatch {
                    start: pos,
                    end: pos + len,
                    surface: String::new(),
                    qid: Qid::new(rng.random_range(1..1000)),
                    context: (0..ctx_len)
                        .map(|k| format!("c{k}"))
                        .collect::<Vec<_>>()
                        .join(" | "),
                });
            }
            pos += len;
        } else {
            pos += 1;
        }
    }
    pairs.sort_by_key(|p| (p.start, p.qid));
    pairs.dedup_by_key(|p| (p.start, p.qid));
    let slack = rng.random_range(0..40);
    let sentence = Sentence::new(format!("m{case}"), tokens, None);
    assemble(&sentence, &pairs, n + 2 + slack).expect("budget covers the sentence")
}

/// Cell rule applied directly, without filling blocks.
fn rule(aug: &AugmentedInput, mode: MaskMode, i: usize, j: usize) -> bool {
    let block = aug.n_sentence + 2;
    let a = i < block && j < block;
    let b = aug
        .segments
        .iter()
        .any(|s| s.entity.contains(&i) && s.context.contains(&j));
    if mode == MaskMode::StrictPaper {
        return a || b;
    }
    let c = aug
        .segments
        .iter()
        .any(|s| s.context.contains(&i) && s.entity.contains(&j));
    let d = aug
        .segments
        .iter()
        .any(|s| s.context.contains(&i) && s.context.contains(&j));
    let e = i == j && aug.tokens[i] == "$";
    a || b || c || d || e
}

fn check_layout(aug: &AugmentedInput) -> Result<(), String> {
    let n = aug.n_sentence;
    ensure(
        aug.tokens[0] == "[CLS]" && aug.tokens[n + 1] == "[SEP]",
        || "frame tokens".into(),
    )?;
    let mut cursor = n + 2;
    for (k, s) in aug.segments.iter().enumerate() {
        if k > 0 {
            ensure(
                aug.tokens[cursor] == "$" && aug.separators[k - 1] == cursor,
                || "separator".into(),
            )?;
            cursor += 1;
        }
        ensure(s.context.start == cursor, || {
            format!("segment {k} not contiguous")
        })?;
        let echo = &aug.tokens[s.context.start..s.context.start + s.entity.len()];
        ensure(echo == &aug.tokens[s.entity.clone()], || {
            format!("segment {k} echo")
        })?;
        cursor = s.context.end;
    }
    ensure(cursor == aug.len(), || "trailing tokens".into())?;
    ensure(
        aug.separators.len() == aug.segments.len().saturating_sub(1),
        || "separator count".into(),
    )
}

fn mask_suite() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut cells = 0usize;
    for case in 0..MASK_CASES {
        let aug = random_augmented(&mut rng, case);
        check_layout(&aug).map_err(|e| format!("case {case}: {e}"))?;
        let block = aug.n_sentence + 2;
        for mode in [MaskMode::Default, MaskMode::StrictPaper] {
            let m = build_attention_mask(&aug, mode);
            for i in 0..aug.len() {
                for j in 0..aug.len() {
                    ensure(m.get(i, j) == rule(&aug, mode, i, j), || {
                        format!("case {case} {mode}: cell ({i},{j}) in {:?}", aug.tokens)
                    })?;
                }
                if mode == MaskMode::Default {
                    ensure(m.row_sum(i) >= 1, || format!("case {case}: empty row {i}"))?;
                } else if i >= block {
                    ensure(m.row_sum(i) == 0, || {
                        format!("case {case}: strict row {i} not empty")
                    })?;
                }
            }
            cells += aug.len() * aug.len();
            for i in 0..block {
                for j in 0..block {
                    ensure(m.get(i, j), || {
                        format!("case {case}: sentence block ({i},{j})")
                    })?;
                }
            }
            for (k, sk) in aug.segments.iter().enumerate() {
                for (l, sl) in aug.segments.iter().enumerate() {
                    if k != l {
                        for i in sk.entity.clone() {
                            for j in sl.context.clone() {
                                ensure(!m.get(i, j), || {
                                    format!("case {case}: entity {k} sees context {l}")
                                })?;
                            }
                        }
                    }
                }
            }
            if case % 10 == 0 {
                let record = AugmentedRecord::new(&aug, mode);
                let line = serde_json::to_string(&record).map_err(|e| e.to_string())?;
                let back: AugmentedRecord =
                    serde_json::from_str(&line).map_err(|e| e.to_string())?;
                let (aug2, m2) = back.into_parts().map_err(|e| e.to_string())?;
                ensure(aug2 == aug && m2 == m, || {
                    format!("case {case}: record round trip")
                })?;
            }
        }
    }
    within(MASK_BUDGET, start)?;
    Ok(format!("{MASK_CASES} inputs, {cells} cells compared"))
}

// ---------------------------------------------------------------- attention

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    Matrix::from_vec(
        rows,
        cols,
        (0..rows * cols)
            .map(|_| rng.random_range(-2.0..2.0))
            .collect(),
    )
}

fn attention_correctness() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let mut worst_row = 0.0f64;
    for case in 0..ATTENTION_CASES {
        let n = rng.random_range(1..=12);
        let d = rng.random_range(1..=8);
        let (q, k, v) = (
            random_matrix(&mut rng, n, d),
            random_matrix(&mut rng, n, d),
            random_matrix(&mut rng, n, d),
        );
        let mut mask = AttentionMask::zeros(n);
        for i in 0..n {
            for j in 0..n {
                mask.set(i, j, rng.random_bool(0.5));
            }
            let forced = rng.random_range(0..n);
            mask.set(i, forced, true);
        }
        let out = masked_attention(&q, &k, &v, &mask).map_err(|e| e.to_string())?;
        for i in 0..n {
            let mut sum = 0.0;
            for j in 0..n {
                let w = out.weights.get(i, j);
                ensure(mask.get(i, j) || w == 0.0, || {
                    format!("case {case}: masked weight {w}")
                })?;
                sum += w;
            }
            worst_row = worst_row.max((sum - 1.0).abs());
        }
        let id =
            masked_attention(&q, &k, &v, &AttentionMask::identity(n)).map_err(|e| e.to_string())?;
        ensure(id.output == v, || {
            format!("case {case}: identity mask output differs from V")
        })?;
    }
    ensure(worst_row <= ROW_SUM_TOLERANCE, || {
        format!("row sum off by {worst_row:e}")
    })?;

    let mut worst = 0.0f64;
    for trial in 0..GRADIENT_TRIALS {
        let aug = random_augmented(&mut rng, trial);
        let mode = if trial % 2 == 0 {
            MaskMode::Default
        } else {
            MaskMode::StrictPaper
        };
        let mask = build_attention_mask(&aug, mode);
        let config = EncoderConfig {
            d_model: 8,
            n_heads: 2,
            n_layers: rng.random_range(1..=2),
            d_ff: 12,
            max_len: 64,
            seed: trial as u64,
        };
        let vocab = Vocab::build(aug.tokens.iter().map(String::as_str));
        let labels = vec!["B-X".to_string(), "I-X".into(), "O".into()];
        let mut aug = aug;
        aug.gold_tags = Some((0..aug.n_sentence).map(|i| labels[i % 3].clone()).collect());
        let model = ToyEncoder::new(config, vocab, labels).map_err(|e| e.to_string())?;
        let check = gradient_check(&model, &aug, &mask, GRADIENT_EPSILON, 48, trial as u64)
            .map_err(|e| e.to_string())?;
        worst = worst.max(check.max_relative_error);
    }
    ensure(worst < GRADIENT_TOLERANCE, || {
        format!("gradient relative error {worst:e}")
    })?;
    within(ATTENTION_BUDGET, start)?;
    Ok(format!(
        "{ATTENTION_CASES} attention cases, row-sum error {worst_row:.1e}; {GRADIENT_TRIALS} gradient checks, max rel error {worst:.1e}"
    ))
}

// ---------------------------------------------------------------- isolation

fn context_isolation() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let mut trials = 0;
    let mut mutations = 0;
    while trials < ISOLATION_TRIALS {
        let aug = random_augmented(&mut rng, trials);
        if aug.segments.len() < 2 {
            continue;
        }
        let mask = build_attention_mask(&aug, MaskMode::StrictPaper);
        let mut vocab_tokens: Vec<String> = aug.tokens.clone();
        vocab_tokens.push("mutant".into());
        let vocab = Vocab::build(vocab_tokens.iter().map(String::as_str));
        let config = EncoderConfig {
            n_layers: 1,
            max_len: 64,
            seed: trials as u64,
            ..EncoderConfig::default()
        };
        let model = ToyEncoder::new(config, vocab, vec!["O".into()]).map_err(|e| e.to_string())?;
        let before = model.trace(&aug, &mask).map_err(|e| e.to_string())?;
        for (l, seg) in aug.segments.iter().enumerate() {
            for pos in seg.context.clone() {
                let mut mutated = aug.clone();
                mutated.tokens[pos] = "mutant".into();
                let after = model.trace(&mutated, &mask).map_err(|e| e.to_string())?;
                mutations += 1;
                for (k, other) in aug.segments.iter().enumerate() {
                    if k == l {
                        continue;
                    }
                    for i in other.entity.clone() {
                        for h in [1, before.hidden.len() - 1] {
                            ensure(before.hidden[h].row(i) == after.hidden[h].row(i), || {
                                format!("trial {trials}: context {l} token {pos} changed entity {k} row {i}")
                            })?;
                        }
                    }
                }
            }
        }
        trials += 1;
    }
    Ok(format!(
        "{trials} trials, {mutations} context mutations, entity rows bit-identical"
    ))
}

// ---------------------------------------------------------------- golden values

fn tags(s: &str) -> Vec<String> {
    s.split_whitespace().map(String::from).collect()
}

fn scorer_golden() -> Outcome {
    let gold = vec![tags("B-PER I-PER O B-LOC")];
    let same = score(&gold, &gold).map_err(|e| e.to_string())?;
    ensure(same.micro_f1() == 1.0 && same.macro_f1 == 1.0, || {
        format!("identity: {same:?}")
    })?;
    let none = score(&gold, &[tags("O O O O")]).map_err(|e| e.to_string())?;
    ensure(none.micro_f1() == 0.0, || {
        format!("all O: {}", none.micro_f1())
    })?;
    let r = score(&gold, &[tags("B-PER I-PER O B-PER")]).map_err(|e| e.to_string())?;
    let close = |a: f64, b: f64| (a - b).abs() <= GOLDEN_TOLERANCE;
    ensure(
        close(r.micro.precision, 0.5) && close(r.micro.recall, 0.5) && close(r.micro_f1(), 0.5),
        || format!("micro {:?}", r.micro),
    )?;
    ensure(
        close(r.per_class["PER"].f1, 2.0 / 3.0) && close(r.per_class["LOC"].f1, 0.0),
        || format!("per class {:?}", r.per_class),
    )?;
    ensure(close(r.macro_f1, 1.0 / 3.0), || {
        format!("macro {}", r.macro_f1)
    })?;

    let data = vec![
        Sentence::new(
            "1",
            tags("Victor Cousin met Hegel"),
            Some(tags("B-PER I-PER O B-PER")),
        ),
        Sentence::new("2", tags("in Paris"), Some(tags("O B-LOC"))),
    ];
    let kb_of = |names: &[&str]| {
        let records: Vec<EntityRecord> = names
            .iter()
            .enumerate()
            .map(|(i, n)| labelled(i as u64 + 1, n))
            .collect();
        build_knowledge_base(|| records.clone(), "en", PropertyMask::all())
    };
    let rates = [
        coverage_rate(&kb_of(&["victor cousin", "Hegel", "PARIS"]), &data),
        coverage_rate(&kb_of(&["Berlin"]), &data),
        coverage_rate(&kb_of(&["Victor Cousin", "Paris"]), &data),
    ];
    let rates: Vec<f64> = rates
        .into_iter()
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;
    for (got, want) in rates.iter().zip([1.0, 0.0, 2.0 / 3.0]) {
        ensure(close(*got, want), || format!("coverage {got} != {want}"))?;
    }
    Ok(format!(
        "micro 0.5, PER 2/3, macro {:.6}; coverage {rates:.4?}",
        r.macro_f1
    ))
}

const COUSIN_HUMAN_DUMP: &str = r#"{"id": "Q434346", "labels": {"en": "Victor Cousin"}, "aliases": {"en": []}, "sitelinks": {"enwiki": "Victor Cousin"}, "claims": {"P31": ["Q5"], "P106": ["Q4964182", "Q82955", "Q333634"]}}
{"id": "Q5", "labels": {"en": "human"}, "aliases": {"en": ["human being", "humankind"]}, "sitelinks": {"enwiki": "Human"}, "claims": {"P31": ["Q55983715"], "P279": ["Q154954", "Q164509", "Q7377"]}}
{"id": "Q4964182", "labels": {"en": "philosopher"}}
{"id": "Q82955", "labels": {"en": "politician"}}
{"id": "Q154954", "labels": {"en": "natural person"}}
{"id": "Q164509", "labels": {"en": "omnivore"}}
{"id": "Q7377", "labels": {"en": "mammal"}}
"#;

fn read_dir_bytes(dir: &Path) -> Result<BTreeMap<String, Vec<u8>>, String> {
    let mut out = BTreeMap::new();
    for entry in std::fs::read_dir(dir).map_err(|e| e.to_string())? {
        let entry = entry.map_err(|e| e.to_string())?;
        let bytes = std::fs::read(entry.path()).map_err(|e| e.to_string())?;
        out.insert(entry.file_name().to_string_lossy().into_owned(), bytes);
    }
    Ok(out)
}

fn kb_golden() -> Outcome {
    let build = || {
        KbBuilder::new("en", PropertyMask::all())
            .build(|| parse_dump(COUSIN_HUMAN_DUMP.as_bytes()))
            .0
    };
    let kb = build();
    let q = |s: &str| s.parse::<Qid>().unwrap();
    let cousin = kb.context(q("Q434346")).unwrap_or_default();
    let human = kb.context(q("Q5")).unwrap_or_default();
    ensure(cousin == "human | philosopher | politician", || {
        format!("Q434346 -> {cousin:?}")
    })?;
    ensure(human == "natural person | omnivore | mammal", || {
        format!("Q5 -> {human:?}")
    })?;
    for name in ["human", "human being", "humankind", "victor cousin"] {
        ensure(kb.contains_surface(name), || {
            format!("surface {name:?} missing")
        })?;
    }
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for dir in [&a, &b] {
        std::fs::create_dir_all(dir).map_err(|e| e.to_string())?;
    }
    kb.save(&a).map_err(|e| e.to_string())?;
    build().save(&b).map_err(|e| e.to_string())?;
    let (fa, fb) = (read_dir_bytes(&a)?, read_dir_bytes(&b)?);
    ensure(fa == fb, || "KB files differ between runs".into())?;
    let reloaded = KnowledgeBase::load(&a).map_err(|e| e.to_string())?;
    ensure(reloaded == kb, || "reloaded KB differs".into())?;
    Ok(format!(
        "{cousin:?}, {human:?}; {} files byte-identical",
        fa.len()
    ))
}

// ---------------------------------------------------------------- ensemble

const LABELS: [&str; 5] = ["B-LOC", "B-PER", "I-LOC", "I-PER", "O"];

fn random_bio(rng: &mut ChaCha8Rng, n: usize) -> Vec<String> {
    let mut out: Vec<String> = Vec::with_capacity(n);
    for _ in 0..n {
        let prev_type = out.last().and_then(|t| t.get(2..)).map(String::from);
        let tag = match (rng.random_range(0..3), prev_type) {
            (0, Some(t)) => format!("I-{t}"),
            (1, _) => format!("B-{}", ["LOC", "PER"].choose(rng).unwrap()),
            _ => "O".into(),
        };
        out.push(tag);
    }
    out
}

fn prediction_set(labels: &[String], sentences: Vec<Vec<Vec<f64>>>) -> PredictionSet {
    PredictionSet {
        labels: labels.to_vec(),
        sentences: sentences
            .into_iter()
            .enumerate()
            .map(|(i, distributions)| SentencePrediction {
                id: i.to_string(),
                tokens: vec!["t".into(); distributions.len()],
                distributions,
            })
            .collect(),
    }
}

/// Orphan `I-X` becomes `B-X`.
fn repair_oracle(tags: Vec<String>) -> Vec<String> {
    let mut out: Vec<String> = Vec::with_capacity(tags.len());
    for tag in tags {
        let fixed = match tag.strip_prefix("I-") {
            Some(t) if out.last().and_then(|p| p.get(2..)) != Some(t) => format!("B-{t}"),
            _ => tag,
        };
        out.push(fixed);
    }
    out
}

fn ensemble_properties() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(707);
    let labels: Vec<String> = LABELS.iter().map(|s| s.to_string()).collect();
    let peaked = |rng: &mut ChaCha8Rng, winner: usize| -> Vec<f64> {
        let mut d: Vec<f64> = (0..LABELS.len())
            .map(|_| rng.random_range(0.0..0.1))
            .collect();
        d[winner] = rng.random_range(0.5..1.0);
        let s: f64 = d.iter().sum();
        d.iter().map(|x| x / s).collect()
    };
    for case in 0..ENSEMBLE_CASES {
        let n_folds = rng.random_range(1..=6);
        let n_sent = rng.random_range(1..=3);
        let truth: Vec<Vec<String>> = (0..n_sent)
            .map(|_| {
                let n = rng.random_range(1..=8);
                random_bio(&mut rng, n)
            })
            .collect();
        let folds = (0..n_folds)
            .map(|_| {
                let dists = truth
                    .iter()
                    .map(|s| {
                        s.iter()
                            .map(|t| peaked(&mut rng, labels.iter().position(|l| l == t).unwrap()))
                            .collect()
                    })
                    .collect();
                (rng.random_range(0.01..1.0), prediction_set(&labels, dists))
            })
            .collect();
        let preds = WeightedPredictions { folds };
        for mode in [VoteMode::Soft, VoteMode::Hard] {
            let voted = weighted_vote(&preds, mode).map_err(|e| e.to_string())?;
            ensure(voted == truth, || {
                format!("unanimity case {case} {mode:?}: {voted:?} vs {truth:?}")
            })?;
        }
    }

    for case in 0..ENSEMBLE_CASES {
        let n_folds = rng.random_range(1..=6);
        let lens: Vec<usize> = (0..rng.random_range(1..=3))
            .map(|_| rng.random_range(1..=8))
            .collect();
        let folds: Vec<(f64, PredictionSet)> = (0..n_folds)
            .map(|_| {
                let dists = lens
                    .iter()
                    .map(|&n| {
                        (0..n)
                            .map(|_| {
                                let winner = rng.random_range(0..LABELS.len());
                                peaked(&mut rng, winner)
                            })
                            .collect()
                    })
                    .collect();
                (rng.random_range(0.01..1.0), prediction_set(&labels, dists))
            })
            .collect();
        let scale = 10f64.powf(rng.random_range(-3.0..3.0));
        let scaled = WeightedPredictions {
            folds: folds.iter().map(|(w, p)| (w * scale, p.clone())).collect(),
        };
        let preds = WeightedPredictions { folds };
        for mode in [VoteMode::Soft, VoteMode::Hard] {
            let a = weighted_vote(&preds, mode).map_err(|e| e.to_string())?;
            let b = weighted_vote(&scaled, mode).map_err(|e| e.to_string())?;
            ensure(a == b, || {
                format!("scale case {case} {mode:?}: x{scale} changed the vote")
            })?;
        }
    }

    let mut ties = 0;
    for case in 0..ENSEMBLE_CASES {
        let n_folds = rng.random_range(1..=6);
        let lens: Vec<usize> = (0..rng.random_range(1..=3))
            .map(|_| rng.random_range(1..=8))
            .collect();
        let picks: Vec<Vec<Vec<usize>>> = (0..n_folds)
            .map(|_| {
                lens.iter()
                    .map(|&n| (0..n).map(|_| rng.random_range(0..LABELS.len())).collect())
                    .collect()
            })
            .collect();
        let weights: Vec<f64> = (0..n_folds)
            .map(|_| rng.random_range(1..=3) as f64 * 0.1)
            .collect();
        let folds = picks
            .iter()
            .zip(&weights)
            .map(|(fold, w)| {
                let dists = fold
                    .iter()
                    .map(|s| {
                        s.iter()
                            .map(|&p| {
                                (0..LABELS.len())
                                    .map(|l| if l == p { 1.0 } else { 0.0 })
                                    .collect()
                            })
                            .collect()
                    })
                    .collect();
                (*w, prediction_set(&labels, dists))
            })
            .collect();
        let voted = weighted_vote(&WeightedPredictions { folds }, VoteMode::Soft)
            .map_err(|e| e.to_string())?;
        for (s, len) in lens.iter().enumerate() {
            let raw: Vec<String> = (0..*len)
                .map(|t| {
                    let mut counts = [0.0f64; LABELS.len()];
                    for (f, w) in weights.iter().enumerate() {
                        counts[picks[f][s][t]] += w;
                    }
                    let best = counts.iter().cloned().fold(f64::MIN, f64::max);
                    let winners: Vec<usize> = (0..LABELS.len())
                        .filter(|&l| (counts[l] - best).abs() <= 1e-9)
                        .collect();
                    if winners.len() > 1 {
                        ties += 1;
                    }
                    LABELS[winners[0]].to_string()
                })
                .collect();
            let want = repair_oracle(raw);
            ensure(voted[s] == want, || {
                format!("count case {case}: {:?} vs {want:?}", voted[s])
            })?;
        }
    }
    Ok(format!(
        "3 x {ENSEMBLE_CASES} cases, {ties} tied tokens broken consistently"
    ))
}

// ---------------------------------------------------------------- synthetic A/B

fn synthetic_ab() -> Outcome {
    let start = Instant::now();
    let mut lines = Vec::new();
    let mut failures = Vec::new();
    for seed in AB_SEEDS {
        let experiment = Experiment::new(SyntheticConfig::with_seed(seed));
        let baseline = experiment.baseline_f1().map_err(|e| e.to_string())?;
        let full = experiment
            .augmented_f1(PropertyMask::all(), MaskMode::Default)
            .map_err(|e| e.to_string())?;
        let ablated = experiment
            .augmented_f1(without_occupation(), MaskMode::Default)
            .map_err(|e| e.to_string())?;
        let (gap, ablated_gap) = (full - baseline, ablated - baseline);
        lines.push(format!(
            "seed {seed}: gap {gap:+.3}, without occupation {ablated_gap:+.3}"
        ));
        if gap < AB_MIN_GAP {
            failures.push(format!("seed {seed}: gap {gap:.3} < {AB_MIN_GAP}"));
        }
        if ablated_gap >= AB_MAX_ABLATED_GAP {
            failures.push(format!(
                "seed {seed}: ablated gap {ablated_gap:.3} >= {AB_MAX_ABLATED_GAP}"
            ));
        }
    }
    within(AB_BUDGET, start)?;
    ensure(failures.is_empty(), || {
        format!("{}; {}", failures.join("; "), lines.join("; "))
    })?;
    Ok(lines.join("; "))
}

// ---------------------------------------------------------------- determinism

fn kbner(args: &[&str], dir: &Path) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_kbner"))
        .args(args)
        .current_dir(dir)
        .output()
        .map_err(|e| e.to_string())?;
    ensure(out.status.success(), || {
        format!(
            "kbner {}: {}",
            args.join(" "),
            String::from_utf8_lossy(&out.stderr)
        )
    })
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let dir = tmp.path();
    let mut config = SyntheticConfig::with_seed(9);
    config.n_train = 40;
    config.n_test = 10;
    let corpus = generate_corpus(&config);
    std::fs::write(dir.join("dump.jsonl"), corpus.dump.join("\n")).map_err(|e| e.to_string())?;
    std::fs::write(dir.join("train.conll"), format_conll(&corpus.train))
        .map_err(|e| e.to_string())?;

    let mut artifacts = Vec::new();
    for run in ["1", "2"] {
        let kb = format!("kb{run}");
        kbner(
            &[
                "build-kb",
                "--dump",
                "dump.jsonl",
                "--lang",
                "en",
                "--out",
                &kb,
            ],
            dir,
        )?;
        kbner(
            &[
                "split",
                "--data",
                "train.conll",
                "--k",
                "4",
                "--seed",
                "3",
                "--out",
                &format!("plan{run}.tsv"),
            ],
            dir,
        )?;
        kbner(
            &[
                "augment",
                "--kb",
                &kb,
                "--data",
                "train.conll",
                "--out",
                &format!("aug{run}.jsonl"),
                "--max-len",
                "64",
            ],
            dir,
        )?;
        kbner(
            &[
                "train",
                "--aug",
                &format!("aug{run}.jsonl"),
                "--out",
                &format!("model{run}.json"),
                "--seed",
                "3",
                "--epochs",
                "3",
            ],
            dir,
        )?;
        kbner(
            &[
                "synthetic-ab",
                "--seed",
                "3",
                "--epochs",
                "3",
                "--out",
                &format!("ab{run}.json"),
            ],
            dir,
        )?;
        artifacts.push((
            read_dir_bytes(&dir.join(&kb))?,
            ["plan", "aug", "model", "ab"]
                .iter()
                .zip(["tsv", "jsonl", "json", "json"])
                .map(|(stem, ext)| {
                    std::fs::read(dir.join(format!("{stem}{run}.{ext}"))).map_err(|e| e.to_string())
                })
                .collect::<Result<Vec<_>, _>>()?,
        ));
    }
    ensure(artifacts[0].0 == artifacts[1].0, || {
        "build-kb output differs".into()
    })?;
    for (name, (a, b)) in ["split", "augment", "train", "synthetic-ab"]
        .iter()
        .zip(artifacts[0].1.iter().zip(&artifacts[1].1))
    {
        ensure(a == b, || format!("{name} output differs between runs"))?;
    }
    Ok("build-kb, split, augment, train, synthetic-ab byte-identical across two runs".into())
}

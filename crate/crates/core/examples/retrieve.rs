//! Matches sentences against a KB and prints the retrieved entity-context
//! pairs, showing normalization and longest-match overlap resolution.
//!
//! ```text
//! cargo run --example retrieve
//! ```

use kbner::conll::Sentence;
use kbner::kb::{build_knowledge_base, EntityRecord, PropertyMask, Qid};
use kbner::matcher::{build_matcher, resolve_overlaps, retrieve};

fn record(qid: &str, label: &str, instanceof: &[&str]) -> EntityRecord {
    let mut r = EntityRecord::new(qid.parse().unwrap());
    r.labels.insert("en".into(), label.into());
    r.instanceof = instanceof
        .iter()
        .map(|q| q.parse::<Qid>().unwrap())
        .collect();
    r
}

fn main() -> kbner::Result<()> {
    let records = vec![
        record("Q1", "New York", &["Q10"]),
        record("Q2", "New York Times", &["Q11"]),
        record("Q3", "York", &["Q10"]),
        record("Q4", "Straße", &["Q12"]),
        record("Q10", "city", &[]),
        record("Q11", "newspaper", &[]),
        record("Q12", "street", &[]),
    ];
    let kb = build_knowledge_base(|| records.clone(), "en", PropertyMask::all());
    let matcher = build_matcher(&kb);

    for text in [
        "she reads the new york times in York",
        "ＳＴＲＡＳＳＥ is not Straße",
    ] {
        let tokens: Vec<String> = text.split(' ').map(String::from).collect();
        let candidates = matcher.find_candidates(&tokens);
        let kept = resolve_overlaps(&candidates);
        println!("{text}");
        println!(
            "  {} candidates, {} kept after overlap resolution",
            candidates.len(),
            kept.len()
        );
        let sentence = Sentence::new("demo", tokens, None);
        for m in retrieve(&kb, &matcher, &sentence)? {
            let span = sentence.tokens[m.start..m.end].join(" ");
            println!(
                "  [{}..{}) {span:<16} {} -> {:?}",
                m.start, m.end, m.qid, m.context
            );
        }
    }
    Ok(())
}

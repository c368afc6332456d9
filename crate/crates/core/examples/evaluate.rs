//! Entity-level scoring and KB coverage on hand-written examples.
//!
//! ```text
//! cargo run --example evaluate
//! ```

use kbner::conll::parse_conll;
use kbner::eval::score;
use kbner::kb::{build_knowledge_base, coverage_rate, EntityRecord, PropertyMask};

const GOLD: &str = "\
# id 1
Victor _ _ B-PER
Cousin _ _ I-PER
in _ _ O
Paris _ _ B-LOC

# id 2
Hegel _ _ B-PER
wrote _ _ O
";

const PRED: &str = "\
# id 1
Victor\tB-PER
Cousin\tI-PER
in\tO
Paris\tB-PER

# id 2
Hegel\tO
wrote\tO
";

fn main() -> kbner::Result<()> {
    let origin = std::path::Path::new("inline");
    let gold = parse_conll(GOLD, origin)?;
    let pred = parse_conll(PRED, origin)?;
    let tags = |d: &[kbner::conll::Sentence]| -> Vec<Vec<String>> {
        d.iter()
            .map(|s| s.gold_tags.clone().unwrap_or_default())
            .collect()
    };
    let report = score(&tags(&gold), &tags(&pred))?;
    print!("{}", report.to_text());

    let names = ["Victor Cousin", "Paris"];
    let records: Vec<EntityRecord> = names
        .iter()
        .enumerate()
        .map(|(i, n)| {
            let mut r = EntityRecord::new(kbner::kb::Qid::new(i as u64 + 1));
            r.labels.insert("en".into(), (*n).into());
            r
        })
        .collect();
    let kb = build_knowledge_base(|| records.clone(), "en", PropertyMask::all());
    println!(
        "\ncoverage of gold mentions: {:.4}",
        coverage_rate(&kb, &gold)?
    );
    Ok(())
}

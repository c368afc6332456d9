//! Compiles a small WikiData-style dump into a knowledge base, prints the
//! entity contexts and writes the KB files.
//!
//! ```text
//! cargo run --example build_kb -- [out-dir]
//! ```

use kbner::kb::{parse_dump, KbBuilder, PropertyKind, PropertyMask};

const DUMP: &str = r#"[
{"id": "Q434346", "labels": {"en": {"language": "en", "value": "Victor Cousin"}}, "claims": {"P31": [{"mainsnak": {"datavalue": {"value": {"id": "Q5"}}}}], "P106": [{"mainsnak": {"datavalue": {"value": {"id": "Q4964182"}}}}, {"mainsnak": {"datavalue": {"value": {"id": "Q82955"}}}}]}},
{"id": "Q5", "labels": {"en": "human"}, "aliases": {"en": ["human being", "humankind"]}, "claims": {"P279": ["Q154954", "Q164509", "Q7377"], "P31": ["Q55983715"]}},
{"id": "Q4964182", "labels": {"en": "philosopher"}},
{"id": "Q82955", "labels": {"en": "politician"}},
{"id": "Q154954", "labels": {"en": "natural person"}},
{"id": "Q164509", "labels": {"en": "omnivore"}},
{"id": "Q7377", "labels": {"en": "mammal"}}
]"#;

fn main() -> kbner::Result<()> {
    let full = PropertyMask::all();
    let (kb, report) = KbBuilder::new("en", full).build(|| parse_dump(DUMP.as_bytes()));
    println!(
        "{} records, {} surfaces",
        report.records,
        kb.surface_count()
    );
    for (surface, qids) in kb.surfaces() {
        let ctx = kb.context(qids[0]).unwrap_or_default();
        println!("{surface:<16} {:<10} {ctx}", qids[0].to_string());
    }

    // Dropping a property shrinks every context to a sub-list.
    let no_occupation = full.without(PropertyKind::Occupation);
    let (ablated, _) = KbBuilder::new("en", no_occupation).build(|| parse_dump(DUMP.as_bytes()));
    let cousin = "Q434346".parse()?;
    println!(
        "\nVictor Cousin with {no_occupation}: {:?}",
        ablated.context(cousin).unwrap_or_default()
    );

    if let Some(dir) = std::env::args().nth(1) {
        let dir = std::path::PathBuf::from(dir);
        std::fs::create_dir_all(&dir).map_err(|e| kbner::Error::Config(e.to_string()))?;
        kb.save(&dir)?;
        println!("saved to {}", dir.display());
    }
    Ok(())
}

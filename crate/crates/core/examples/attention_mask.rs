//! Assembles an augmented input and draws its entity-aware attention mask in
//! both modes.
//!
//! ```text
//! cargo run --example attention_mask
//! ```

use kbner::augment::{assemble, build_attention_mask, AttentionMask, AugmentedInput, MaskMode};
use kbner::conll::Sentence;
use kbner::matcher::EntityMatch;

fn draw(aug: &AugmentedInput, mask: &AttentionMask) {
    let width = aug
        .tokens
        .iter()
        .map(|t| t.chars().count())
        .max()
        .unwrap_or(0);
    for (i, token) in aug.tokens.iter().enumerate() {
        let row: String = (0..mask.size())
            .map(|j| if mask.get(i, j) { '#' } else { '.' })
            .collect();
        println!("{token:>width$} {row}");
    }
}

fn main() -> kbner::Result<()> {
    let tokens = ["Victor", "Cousin", "met", "Hegel"]
        .map(String::from)
        .to_vec();
    let sentence = Sentence::new("demo", tokens, None);
    let pairs = vec![
        EntityMatch {
            start: 0,
            end: 2,
            surface: "victor cousin".into(),
            qid: "Q434346".parse()?,
            context: "human | philosopher".into(),
        },
        EntityMatch {
            start: 3,
            end: 4,
            surface: "hegel".into(),
            qid: "Q9235".parse()?,
            context: "human | philosopher".into(),
        },
    ];
    let aug = assemble(&sentence, &pairs, 64)?;
    println!("{}\n", aug.tokens.join(" "));
    for mode in [MaskMode::Default, MaskMode::StrictPaper] {
        println!("mode {mode}:");
        draw(&aug, &build_attention_mask(&aug, mode));
        println!();
    }

    // A tight budget drops whole segments, never parts of one.
    let tight = assemble(&sentence, &pairs, 14)?;
    println!(
        "max_len 14 keeps {} of {} segments: {}",
        tight.segments.len(),
        pairs.len(),
        tight.tokens.join(" ")
    );
    Ok(())
}

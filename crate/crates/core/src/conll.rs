//! CoNLL-style dataset reader and writer.
//!
//! Sentences are blank-line separated blocks with an optional `# id <id>`
//! header. Token lines are `token _ _ TAG`, a bare `token` for unlabeled data,
//! or `token<TAB>TAG` as written by prediction output.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sentence {
    pub id: String,
    pub tokens: Vec<String>,
    pub gold_tags: Option<Vec<String>>,
}

impl Sentence {
    pub fn new(id: impl Into<String>, tokens: Vec<String>, gold_tags: Option<Vec<String>>) -> Self {
        Sentence {
            id: id.into(),
            tokens,
            gold_tags,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

pub fn read_conll(path: &Path) -> Result<Vec<Sentence>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_conll(&text, path)
}

/// Parses dataset text; `origin` only labels error messages.
pub fn parse_conll(text: &str, origin: &Path) -> Result<Vec<Sentence>> {
    let mut sentences = Vec::new();
    let mut block = Block::default();
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            block.finish(&mut sentences, origin, lineno)?;
            continue;
        }
        if block.tokens.is_empty() && block.id.is_none() {
            if let Some(rest) = header_rest(trimmed) {
                let id = rest.split_whitespace().next().unwrap_or("");
                if id.is_empty() {
                    return Err(Error::parse(origin, lineno, "empty sentence id"));
                }
                block.id = Some(id.to_owned());
                continue;
            }
        }
        let (token, tag) = split_token_line(line).map_err(|m| Error::parse(origin, lineno, m))?;
        match (&mut block.tags, tag, block.tokens.is_empty()) {
            (tags, Some(tag), true) => *tags = Some(vec![tag.to_owned()]),
            (Some(tags), Some(tag), false) => tags.push(tag.to_owned()),
            (None, None, _) => {}
            _ => {
                return Err(Error::parse(
                    origin,
                    lineno,
                    "sentence mixes tagged and untagged token lines",
                ))
            }
        }
        block.tokens.push(token.to_owned());
    }
    block.finish(&mut sentences, origin, text.lines().count() + 1)?;
    Ok(sentences)
}

fn header_rest(line: &str) -> Option<&str> {
    let rest = line.strip_prefix('#')?.trim_start();
    let rest = rest.strip_prefix("id")?;
    (rest.is_empty() || rest.starts_with(char::is_whitespace)).then_some(rest)
}

fn split_token_line(line: &str) -> std::result::Result<(&str, Option<&str>), String> {
    if let Some((token, tag)) = line.split_once('\t') {
        let tag = tag.trim();
        if token.is_empty() || tag.is_empty() || tag.contains('\t') {
            return Err("expected token<TAB>tag".into());
        }
        return Ok((token, Some(tag)));
    }
    let cols: Vec<&str> = line.split_whitespace().collect();
    match cols.as_slice() {
        [token] => Ok((token, None)),
        [token, _, _, tag] => Ok((token, Some(tag))),
        other => Err(format!(
            "expected 1 or 4 whitespace-separated columns, found {}",
            other.len()
        )),
    }
}

#[derive(Default)]
struct Block {
    id: Option<String>,
    tokens: Vec<String>,
    tags: Option<Vec<String>>,
}

impl Block {
    fn finish(&mut self, out: &mut Vec<Sentence>, origin: &Path, lineno: usize) -> Result<()> {
        let block = std::mem::take(self);
        if block.tokens.is_empty() {
            if block.id.is_some() {
                return Err(Error::parse(
                    origin,
                    lineno,
                    "sentence header without tokens",
                ));
            }
            return Ok(());
        }
        let id = block.id.unwrap_or_else(|| (out.len() + 1).to_string());
        out.push(Sentence::new(id, block.tokens, block.tags));
        Ok(())
    }
}

/// Canonical form: `# id` header, `token _ _ TAG` lines, one blank line after
/// each block.
pub fn format_conll(sentences: &[Sentence]) -> String {
    let mut out = String::new();
    for s in sentences {
        writeln!(out, "# id {}", s.id).unwrap();
        for (i, token) in s.tokens.iter().enumerate() {
            match &s.gold_tags {
                Some(tags) => writeln!(out, "{token} _ _ {}", tags[i]).unwrap(),
                None => writeln!(out, "{token}").unwrap(),
            }
        }
        out.push('\n');
    }
    out
}

pub fn write_conll(path: &Path, sentences: &[Sentence]) -> Result<()> {
    fs::write(path, format_conll(sentences)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn parse(text: &str) -> Result<Vec<Sentence>> {
        parse_conll(text, Path::new("test.conll"))
    }

    #[test]
    fn reads_block_with_header() {
        let s = parse("# id 1\nVictor _ _ B-PER\nCousin _ _ I-PER\n").unwrap();
        assert_eq!(
            s,
            vec![Sentence::new(
                "1",
                vec!["Victor".into(), "Cousin".into()],
                Some(vec!["B-PER".into(), "I-PER".into()])
            )]
        );
    }

    #[test]
    fn multiconer_header_and_tab_lines() {
        let text = "# id 5f3a domain=en\nVictor\tB-PER\n\n\n# id b\nhello\nworld\n";
        let s = parse(text).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s[0].id, "5f3a");
        assert_eq!(s[0].gold_tags, Some(vec!["B-PER".into()]));
        assert_eq!(s[1].gold_tags, None);
        assert_eq!(s[1].tokens, vec!["hello", "world"]);
    }

    #[test]
    fn empty_file() {
        assert!(parse("").unwrap().is_empty());
        assert!(parse("\n\n").unwrap().is_empty());
    }

    #[test]
    fn wrong_columns_report_line() {
        let err = parse("# id 1\nVictor _ B-PER\n").unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("{other}"),
        }
        assert!(parse("a _ _ O\nb\n").is_err());
    }

    #[test]
    fn hash_token_is_not_a_header() {
        let s = parse("# _ _ O\nidea _ _ O\n").unwrap();
        assert_eq!(s[0].tokens, vec!["#", "idea"]);
        assert_eq!(s[0].id, "1");
    }

    fn sentence_strategy() -> impl Strategy<Value = Sentence> {
        let token = "[A-Za-z0-9#$|.,]{1,8}";
        let tag = prop_oneof![Just("O".to_string()), "[BI]-[A-Z]{1,4}"];
        (
            "[a-z0-9-]{1,10}",
            prop::collection::vec((token, tag), 1..12),
            any::<bool>(),
        )
            .prop_map(|(id, pairs, tagged)| {
                let (tokens, tags): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
                Sentence::new(id, tokens, tagged.then_some(tags))
            })
    }

    proptest! {
        #[test]
        fn canonical_round_trip(sentences in prop::collection::vec(sentence_strategy(), 0..6)) {
            let text = format_conll(&sentences);
            let parsed = parse(&text).unwrap();
            prop_assert_eq!(&parsed, &sentences);
            prop_assert_eq!(format_conll(&parsed), text);
        }
    }
}

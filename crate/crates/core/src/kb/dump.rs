//! Line-oriented reader for WikiData-style JSON dumps.
//!
//! Each line holds one entity. Both the compact form
//! `{"id": "Q5", "labels": {"en": "human"}, "claims": {"P31": ["Q55983715"]}}`
//! and the verbose form of official dumps (`{"value": ...}` label objects,
//! `mainsnak` claim statements, `[`/`]` array framing and trailing commas)
//! are accepted.

use std::io::BufRead;

use serde_json::{Map, Value};

use super::record::{EntityRecord, PropertyKind, Qid};

/// A line that could not be turned into an [`EntityRecord`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DumpError {
    /// 1-based line number.
    pub line: usize,
    pub message: String,
}

/// Streaming iterator over the records of a dump.
///
/// Bad lines are skipped and recorded; inspect them with [`DumpReader::errors`]
/// once the iterator is drained. An I/O failure ends the stream and is
/// recorded as the last error.
pub struct DumpReader<R> {
    reader: R,
    buf: Vec<u8>,
    line: usize,
    errors: Vec<DumpError>,
    skipped_non_items: usize,
    done: bool,
}

/// Wraps a byte stream as a record stream.
pub fn parse_dump<R: BufRead>(reader: R) -> DumpReader<R> {
    DumpReader {
        reader,
        buf: Vec::new(),
        line: 0,
        errors: Vec::new(),
        skipped_non_items: 0,
        done: false,
    }
}

impl<R: BufRead> DumpReader<R> {
    pub fn errors(&self) -> &[DumpError] {
        &self.errors
    }

    pub fn into_errors(self) -> Vec<DumpError> {
        self.errors
    }

    /// Property (`P…`) and lexeme (`L…`) entities are not items; they are
    /// skipped without being reported as errors.
    pub fn skipped_non_items(&self) -> usize {
        self.skipped_non_items
    }

    fn error(&mut self, message: impl Into<String>) {
        self.errors.push(DumpError {
            line: self.line,
            message: message.into(),
        });
    }
}

impl<R: BufRead> Iterator for DumpReader<R> {
    type Item = EntityRecord;

    fn next(&mut self) -> Option<EntityRecord> {
        while !self.done {
            self.buf.clear();
            match self.reader.read_until(b'\n', &mut self.buf) {
                Ok(0) => self.done = true,
                Ok(_) => {
                    self.line += 1;
                    let text = match std::str::from_utf8(&self.buf) {
                        Ok(t) => t.trim(),
                        Err(e) => {
                            self.error(format!("invalid UTF-8: {e}"));
                            continue;
                        }
                    };
                    let text = text.strip_suffix(',').unwrap_or(text).trim_end();
                    if text.is_empty() || text == "[" || text == "]" {
                        continue;
                    }
                    match parse_line(text) {
                        Ok(Some(record)) => return Some(record),
                        Ok(None) => self.skipped_non_items += 1,
                        Err(message) => self.error(message),
                    }
                }
                Err(e) => {
                    self.line += 1;
                    self.error(format!("read failed: {e}"));
                    self.done = true;
                }
            }
        }
        None
    }
}

fn parse_line(text: &str) -> Result<Option<EntityRecord>, String> {
    let value: Value = serde_json::from_str(text).map_err(|e| format!("malformed JSON: {e}"))?;
    let obj = value.as_object().ok_or("line is not a JSON object")?;
    let id = match obj.get("id") {
        Some(Value::String(s)) => s,
        Some(_) => return Err("`id` is not a string".into()),
        None => return Err("missing `id` field".into()),
    };
    if id.starts_with('P') || id.starts_with('L') {
        return Ok(None);
    }
    let qid: Qid = id.parse().map_err(|_| format!("malformed id {id:?}"))?;
    let mut record = EntityRecord::new(qid);

    for (lang, v) in section(obj, "labels")? {
        if let Some(s) = text_value(v) {
            record.labels.insert(lang.clone(), s.to_owned());
        } else {
            return Err(format!("label for {lang:?} is not text"));
        }
    }
    for (lang, v) in section(obj, "aliases")? {
        let list = v
            .as_array()
            .ok_or_else(|| format!("aliases for {lang:?} is not a list"))?;
        let names = list
            .iter()
            .map(|a| text_value(a).map(str::to_owned))
            .collect::<Option<Vec<_>>>()
            .ok_or_else(|| format!("alias for {lang:?} is not text"))?;
        record.aliases.insert(lang.clone(), names);
    }
    for (site, v) in section(obj, "sitelinks")? {
        let Some(lang) = site.strip_suffix("wiki") else {
            continue;
        };
        let title = match v {
            Value::String(s) => s.as_str(),
            Value::Object(o) => o.get("title").and_then(Value::as_str).unwrap_or(""),
            _ => return Err(format!("sitelink {site:?} is not text")),
        };
        if !title.is_empty() {
            record
                .sitelink_titles
                .insert(lang.to_owned(), title.to_owned());
        }
    }
    let claims = section(obj, "claims")?;
    for kind in PropertyKind::ALL {
        let Some(values) = claims.get(kind.pid()) else {
            continue;
        };
        let values = values
            .as_array()
            .ok_or_else(|| format!("claims {} is not a list", kind.pid()))?;
        for v in values {
            if let Some(q) = claim_qid(v).map_err(|m| format!("claims {}: {m}", kind.pid()))? {
                record.property_mut(kind).push(q);
            }
        }
    }
    Ok(Some(record))
}

fn section<'a>(obj: &'a Map<String, Value>, key: &str) -> Result<&'a Map<String, Value>, String> {
    static EMPTY: std::sync::OnceLock<Map<String, Value>> = std::sync::OnceLock::new();
    match obj.get(key) {
        None | Some(Value::Null) => Ok(EMPTY.get_or_init(Map::new)),
        Some(Value::Object(m)) => Ok(m),
        // Official dumps serialize empty maps as `[]`.
        Some(Value::Array(a)) if a.is_empty() => Ok(EMPTY.get_or_init(Map::new)),
        Some(_) => Err(format!("`{key}` is not an object")),
    }
}

fn text_value(v: &Value) -> Option<&str> {
    match v {
        Value::String(s) => Some(s),
        Value::Object(o) => o.get("value").and_then(Value::as_str),
        _ => None,
    }
}

/// `Ok(None)` for statements without an item value (`novalue`/`somevalue`).
fn claim_qid(v: &Value) -> Result<Option<Qid>, String> {
    let id = match v {
        Value::String(s) => s.as_str(),
        Value::Object(o) => {
            let snak = o.get("mainsnak").unwrap_or(v);
            match snak.pointer("/datavalue/value/id").and_then(Value::as_str) {
                Some(id) => id,
                None => return Ok(None),
            }
        }
        _ => return Err("value is neither a qid string nor a statement".into()),
    };
    id.parse()
        .map(Some)
        .map_err(|_| format!("malformed qid {id:?}"))
}

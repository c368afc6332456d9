//! Entity-property knowledge base: dump ingestion, compilation, persistence
//! and the coverage metric.

mod dump;
mod record;

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use log::{info, warn};

pub use dump::{parse_dump, DumpError, DumpReader};
pub use record::{
    build_context, EntityContext, EntityNames, EntityRecord, PropertyKind, PropertyMask, Qid,
    CONTEXT_SEPARATOR,
};

use crate::conll::Sentence;
use crate::error::{Error, Result};
use crate::normalize::normalize;

pub const SURFACES_FILE: &str = "surfaces.tsv";
pub const CONTEXTS_FILE: &str = "contexts.tsv";
pub const META_FILE: &str = "kb.meta";

const FORMAT_NAME: &str = "kbner-kb";
const FORMAT_VERSION: u32 = 1;

/// Default number of qids kept per surface form.
pub const DEFAULT_QID_CAP: usize = 4;

/// Compiled surface→qid index plus qid→context store for one language.
///
/// Immutable once built or loaded.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KnowledgeBase {
    language: String,
    property_mask: PropertyMask,
    qid_cap: usize,
    surface_index: BTreeMap<String, Vec<Qid>>,
    contexts: BTreeMap<Qid, String>,
}

impl KnowledgeBase {
    pub fn empty(language: &str, property_mask: PropertyMask) -> Self {
        KnowledgeBase {
            language: language.to_owned(),
            property_mask,
            qid_cap: DEFAULT_QID_CAP,
            surface_index: BTreeMap::new(),
            contexts: BTreeMap::new(),
        }
    }

    pub fn language(&self) -> &str {
        &self.language
    }

    pub fn property_mask(&self) -> PropertyMask {
        self.property_mask
    }

    pub fn qid_cap(&self) -> usize {
        self.qid_cap
    }

    pub fn is_empty(&self) -> bool {
        self.surface_index.is_empty()
    }

    pub fn surface_count(&self) -> usize {
        self.surface_index.len()
    }

    /// Qids for an already-normalized surface, numerically sorted.
    pub fn qids(&self, normalized_surface: &str) -> Option<&[Qid]> {
        self.surface_index
            .get(normalized_surface)
            .map(Vec::as_slice)
    }

    pub fn contains_surface(&self, normalized_surface: &str) -> bool {
        self.surface_index.contains_key(normalized_surface)
    }

    pub fn context(&self, qid: Qid) -> Option<&str> {
        self.contexts.get(&qid).map(String::as_str)
    }

    /// Surfaces in lexicographic order.
    pub fn surfaces(&self) -> impl Iterator<Item = (&str, &[Qid])> {
        self.surface_index
            .iter()
            .map(|(s, q)| (s.as_str(), q.as_slice()))
    }

    pub fn contexts(&self) -> impl Iterator<Item = (Qid, &str)> {
        self.contexts.iter().map(|(q, c)| (*q, c.as_str()))
    }

    /// Writes `surfaces.tsv`, `contexts.tsv` and `kb.meta` into `dir`.
    /// Output is a pure function of the KB contents.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

        let path = dir.join(SURFACES_FILE);
        write_file(&path, |w| {
            for (surface, qids) in &self.surface_index {
                for q in qids {
                    writeln!(w, "{surface}\t{q}")?;
                }
            }
            Ok(())
        })?;

        let path = dir.join(CONTEXTS_FILE);
        write_file(&path, |w| {
            for (q, ctx) in &self.contexts {
                writeln!(w, "{q}\t{ctx}")?;
            }
            Ok(())
        })?;

        let path = dir.join(META_FILE);
        write_file(&path, |w| {
            writeln!(w, "format={FORMAT_NAME}")?;
            writeln!(w, "version={FORMAT_VERSION}")?;
            writeln!(w, "language={}", self.language)?;
            writeln!(w, "properties={}", self.property_mask)?;
            writeln!(w, "qid_cap={}", self.qid_cap)
        })
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let meta_path = dir.join(META_FILE);
        let meta = read_file(&meta_path)?;
        let mut kb = KnowledgeBase::empty("", PropertyMask::all());
        let mut seen_format = false;
        for (i, line) in meta.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::parse(&meta_path, i + 1, "expected key=value"))?;
            let bad = |m: String| Error::parse(&meta_path, i + 1, m);
            match key {
                "format" if value == FORMAT_NAME => seen_format = true,
                "format" => return Err(bad(format!("unknown format {value:?}"))),
                "version" if value == FORMAT_VERSION.to_string() => {}
                "version" => return Err(bad(format!("unsupported version {value:?}"))),
                "language" => kb.language = value.to_owned(),
                "properties" => {
                    kb.property_mask = value.parse().map_err(|e| bad(format!("{e}")))?
                }
                "qid_cap" => kb.qid_cap = value.parse().map_err(|e| bad(format!("{e}")))?,
                _ => return Err(bad(format!("unknown key {key:?}"))),
            }
        }
        if !seen_format {
            return Err(Error::parse(&meta_path, 0, "missing format line"));
        }

        let path = dir.join(SURFACES_FILE);
        for (i, line) in read_file(&path)?.lines().enumerate() {
            let (surface, qid) = line
                .split_once('\t')
                .ok_or_else(|| Error::parse(&path, i + 1, "expected surface<TAB>qid"))?;
            if surface.is_empty() {
                return Err(Error::parse(&path, i + 1, "empty surface"));
            }
            let qid: Qid = qid
                .parse()
                .map_err(|e| Error::parse(&path, i + 1, format!("{e}")))?;
            let qids = kb.surface_index.entry(surface.to_owned()).or_default();
            if qids.last().is_some_and(|last| *last >= qid) {
                return Err(Error::parse(&path, i + 1, "qids not strictly increasing"));
            }
            qids.push(qid);
        }

        let path = dir.join(CONTEXTS_FILE);
        for (i, line) in read_file(&path)?.lines().enumerate() {
            let (qid, ctx) = line
                .split_once('\t')
                .ok_or_else(|| Error::parse(&path, i + 1, "expected qid<TAB>context"))?;
            let qid: Qid = qid
                .parse()
                .map_err(|e| Error::parse(&path, i + 1, format!("{e}")))?;
            if kb.contexts.insert(qid, ctx.to_owned()).is_some() {
                return Err(Error::parse(&path, i + 1, format!("duplicate qid {qid}")));
            }
        }

        if let Some(missing) = kb
            .surface_index
            .values()
            .flatten()
            .find(|q| !kb.contexts.contains_key(q))
        {
            return Err(Error::parse(
                dir.join(CONTEXTS_FILE),
                0,
                format!("{missing} is indexed but has no context"),
            ));
        }
        Ok(kb)
    }
}

fn write_file(
    path: &Path,
    body: impl FnOnce(&mut BufWriter<fs::File>) -> std::io::Result<()>,
) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    body(&mut w)
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

fn read_file(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Anomalies seen while compiling a KB.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct BuildReport {
    pub records: usize,
    /// Qids seen more than once; the later record replaced the earlier one.
    pub duplicate_qids: Vec<Qid>,
    /// Names that normalized to the empty string.
    pub dropped_names: usize,
}

/// Two-pass KB compiler.
#[derive(Debug, Clone)]
pub struct KbBuilder {
    pub language: String,
    pub property_mask: PropertyMask,
    pub qid_cap: usize,
}

impl KbBuilder {
    pub fn new(language: &str, property_mask: PropertyMask) -> Self {
        KbBuilder {
            language: language.to_owned(),
            property_mask,
            qid_cap: DEFAULT_QID_CAP,
        }
    }

    pub fn qid_cap(mut self, cap: usize) -> Self {
        self.qid_cap = cap.max(1);
        self
    }

    /// `source` is called twice: the first pass collects labels so that
    /// property qids can be resolved in the second.
    pub fn build<F, I>(&self, mut source: F) -> (KnowledgeBase, BuildReport)
    where
        F: FnMut() -> I,
        I: IntoIterator<Item = EntityRecord>,
    {
        let mut labels: HashMap<Qid, String> = HashMap::new();
        for record in source() {
            if let Some(label) = record.labels.get(&self.language) {
                labels.insert(record.qid, label.clone());
            } else {
                labels.remove(&record.qid);
            }
        }

        struct Entry {
            surfaces: Vec<String>,
            context: String,
            property_count: usize,
        }
        let mut report = BuildReport::default();
        let mut entries: BTreeMap<Qid, Entry> = BTreeMap::new();
        for record in source() {
            report.records += 1;
            let mut surfaces = Vec::new();
            for name in record.names(&self.language).names {
                let surface = normalize(&name);
                if surface.is_empty() {
                    report.dropped_names += 1;
                    warn!("{}: name {name:?} normalizes to empty, dropped", record.qid);
                } else if !surfaces.contains(&surface) {
                    surfaces.push(surface);
                }
            }
            let entry = Entry {
                surfaces,
                context: build_context(&record, &labels, self.property_mask).context,
                property_count: record.property_count(self.property_mask),
            };
            if entries.insert(record.qid, entry).is_some() {
                warn!("duplicate qid {}, keeping the later record", record.qid);
                report.duplicate_qids.push(record.qid);
            }
        }

        let mut candidates: BTreeMap<String, Vec<(usize, Qid)>> = BTreeMap::new();
        for (qid, entry) in &entries {
            for surface in &entry.surfaces {
                candidates
                    .entry(surface.clone())
                    .or_default()
                    .push((entry.property_count, *qid));
            }
        }

        let mut kb = KnowledgeBase::empty(&self.language, self.property_mask);
        kb.qid_cap = self.qid_cap;
        for (surface, mut cands) in candidates {
            // Most properties first, then smallest qid; keep the cap, store numerically.
            cands.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
            let mut qids: Vec<Qid> = cands.into_iter().take(self.qid_cap).map(|c| c.1).collect();
            qids.sort_unstable();
            for q in &qids {
                kb.contexts
                    .entry(*q)
                    .or_insert_with(|| entries[q].context.clone());
            }
            kb.surface_index.insert(surface, qids);
        }
        info!(
            "built KB: {} records, {} surfaces, {} contexts",
            report.records,
            kb.surface_index.len(),
            kb.contexts.len()
        );
        (kb, report)
    }
}

/// Builds a KB with the default qid cap.
pub fn build_knowledge_base<F, I>(
    source: F,
    language: &str,
    property_mask: PropertyMask,
) -> KnowledgeBase
where
    F: FnMut() -> I,
    I: IntoIterator<Item = EntityRecord>,
{
    KbBuilder::new(language, property_mask).build(source).0
}

/// Fraction of gold entity mentions whose normalized surface is indexed.
///
/// Mentions are counted per occurrence. A dataset without gold mentions has
/// coverage 1.0. Orphan `I-` tags are repaired before spans are extracted.
pub fn coverage_rate(kb: &KnowledgeBase, dataset: &[Sentence]) -> Result<f64> {
    let (found, total) = coverage_counts(kb, dataset)?;
    Ok(if total == 0 {
        1.0
    } else {
        found as f64 / total as f64
    })
}

/// `(found, total)` mention counts behind [`coverage_rate`].
pub fn coverage_counts(kb: &KnowledgeBase, dataset: &[Sentence]) -> Result<(usize, usize)> {
    let mut found = 0;
    let mut total = 0;
    for sentence in dataset {
        let gold = sentence
            .gold_tags
            .as_ref()
            .ok_or_else(|| Error::Config(format!("sentence {:?} has no gold tags", sentence.id)))?;
        let repaired = crate::ensemble::repair_bio(gold)?;
        if &repaired != gold {
            warn!("sentence {:?}: repaired malformed BIO tags", sentence.id);
        }
        for span in crate::eval::extract_spans(&repaired)? {
            total += 1;
            let surface = normalize(&sentence.tokens[span.start..span.end].join(" "));
            if kb.contains_surface(&surface) {
                found += 1;
            }
        }
    }
    Ok((found, total))
}

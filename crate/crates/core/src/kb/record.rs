use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

/// A WikiData item identifier such as `Q5`.
///
/// Stored by numeric value so that ordering is numeric (`Q5 < Q42 < Q434346`).
#[derive(
    Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(try_from = "String", into = "String")]
pub struct Qid(u64);

impl Qid {
    pub const fn new(id: u64) -> Self {
        Qid(id)
    }

    pub fn number(self) -> u64 {
        self.0
    }
}

impl fmt::Display for Qid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Q{}", self.0)
    }
}

impl FromStr for Qid {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let digits = s
            .strip_prefix('Q')
            .filter(|d| !d.is_empty() && d.bytes().all(|b| b.is_ascii_digit()))
            .filter(|d| d.len() == 1 || !d.starts_with('0'))
            .ok_or_else(|| Error::Config(format!("malformed qid {s:?}")))?;
        digits
            .parse()
            .map(Qid)
            .map_err(|_| Error::Config(format!("qid out of range {s:?}")))
    }
}

impl TryFrom<String> for Qid {
    type Error = Error;

    fn try_from(value: String) -> Result<Self, Self::Error> {
        value.parse()
    }
}

impl From<Qid> for String {
    fn from(q: Qid) -> Self {
        q.to_string()
    }
}

/// The three WikiData properties whose value labels make up an entity context.
///
/// Declaration order is the order in which their labels are concatenated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum PropertyKind {
    /// P279
    Subclassof,
    /// P31
    Instanceof,
    /// P106
    Occupation,
}

impl PropertyKind {
    pub const ALL: [PropertyKind; 3] = [
        PropertyKind::Subclassof,
        PropertyKind::Instanceof,
        PropertyKind::Occupation,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PropertyKind::Subclassof => "subclassof",
            PropertyKind::Instanceof => "instanceof",
            PropertyKind::Occupation => "occupation",
        }
    }

    /// WikiData property id carrying this kind in `claims`.
    pub fn pid(self) -> &'static str {
        match self {
            PropertyKind::Subclassof => "P279",
            PropertyKind::Instanceof => "P31",
            PropertyKind::Occupation => "P106",
        }
    }

    fn bit(self) -> u8 {
        1 << self as u8
    }
}

impl FromStr for PropertyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PropertyKind::ALL
            .into_iter()
            .find(|k| k.name() == s.trim())
            .ok_or_else(|| Error::Config(format!("unknown property kind {s:?}")))
    }
}

/// Set of enabled property kinds. Removing a kind reproduces a property ablation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PropertyMask(u8);

impl PropertyMask {
    pub const fn empty() -> Self {
        PropertyMask(0)
    }

    pub const fn all() -> Self {
        PropertyMask(0b111)
    }

    pub fn contains(self, kind: PropertyKind) -> bool {
        self.0 & kind.bit() != 0
    }

    pub fn with(self, kind: PropertyKind) -> Self {
        PropertyMask(self.0 | kind.bit())
    }

    pub fn without(self, kind: PropertyKind) -> Self {
        PropertyMask(self.0 & !kind.bit())
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn kinds(self) -> impl Iterator<Item = PropertyKind> {
        PropertyKind::ALL
            .into_iter()
            .filter(move |k| self.contains(*k))
    }
}

impl Default for PropertyMask {
    fn default() -> Self {
        PropertyMask::all()
    }
}

impl FromIterator<PropertyKind> for PropertyMask {
    fn from_iter<I: IntoIterator<Item = PropertyKind>>(iter: I) -> Self {
        iter.into_iter()
            .fold(PropertyMask::empty(), PropertyMask::with)
    }
}

impl fmt::Display for PropertyMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<_> = self.kinds().map(PropertyKind::name).collect();
        f.write_str(&names.join(","))
    }
}

impl FromStr for PropertyMask {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        s.split(',')
            .filter(|p| !p.trim().is_empty())
            .map(str::parse)
            .collect()
    }
}

/// One entity of the dump: names per language and the three property lists.
/// A field missing from the dump is an empty map or list.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct EntityRecord {
    pub qid: Qid,
    pub labels: BTreeMap<String, String>,
    pub aliases: BTreeMap<String, Vec<String>>,
    pub sitelink_titles: BTreeMap<String, String>,
    pub instanceof: Vec<Qid>,
    pub subclassof: Vec<Qid>,
    pub occupation: Vec<Qid>,
}

impl EntityRecord {
    pub fn new(qid: Qid) -> Self {
        EntityRecord {
            qid,
            ..Default::default()
        }
    }

    pub fn property(&self, kind: PropertyKind) -> &[Qid] {
        match kind {
            PropertyKind::Subclassof => &self.subclassof,
            PropertyKind::Instanceof => &self.instanceof,
            PropertyKind::Occupation => &self.occupation,
        }
    }

    pub fn property_mut(&mut self, kind: PropertyKind) -> &mut Vec<Qid> {
        match kind {
            PropertyKind::Subclassof => &mut self.subclassof,
            PropertyKind::Instanceof => &mut self.instanceof,
            PropertyKind::Occupation => &mut self.occupation,
        }
    }

    /// Number of property values among the enabled kinds.
    pub fn property_count(&self, mask: PropertyMask) -> usize {
        mask.kinds().map(|k| self.property(k).len()).sum()
    }

    /// Label, sitelink title and aliases for `language`, first occurrence
    /// kept, empty strings dropped.
    pub fn names(&self, language: &str) -> EntityNames {
        let mut names: Vec<String> = Vec::new();
        let candidates = self
            .labels
            .get(language)
            .into_iter()
            .chain(self.sitelink_titles.get(language))
            .chain(self.aliases.get(language).into_iter().flatten());
        for name in candidates {
            if !name.is_empty() && !names.contains(name) {
                names.push(name.clone());
            }
        }
        EntityNames {
            qid: self.qid,
            names,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EntityNames {
    pub qid: Qid,
    pub names: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EntityContext {
    pub qid: Qid,
    pub context: String,
}

/// Separator placed between property labels inside a context.
pub const CONTEXT_SEPARATOR: &str = " | ";

/// Joins the labels of the enabled property values with `" | "`.
///
/// Kinds are visited subclassof, instanceof, occupation; values keep their
/// dump order. Qids missing from `label_lookup` are skipped. Tabs and line
/// breaks inside labels are replaced by spaces so contexts stay one TSV field.
pub fn build_context(
    record: &EntityRecord,
    label_lookup: &HashMap<Qid, String>,
    property_mask: PropertyMask,
) -> EntityContext {
    let labels: Vec<String> = property_mask
        .kinds()
        .flat_map(|kind| record.property(kind))
        .filter_map(|q| label_lookup.get(q))
        .map(|label| label.split_whitespace().collect::<Vec<_>>().join(" "))
        .filter(|label| !label.is_empty())
        .collect();
    EntityContext {
        qid: record.qid,
        context: labels.join(CONTEXT_SEPARATOR),
    }
}

//! ICD-10 concept catalogs: code identifiers, per-source concept files,
//! abbreviation tables, and the merge into one provenance-tagged dictionary.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::textnorm::{self, AnalyzerConfig};

#[derive(Debug, thiserror::Error)]
pub enum TerminologyError {
    #[error("malformed code {0:?}: expected letter + two digits, optionally a subcategory digit")]
    MalformedCode(String),
    #[error("{path}:{line}: malformed record: {reason}")]
    MalformedRecord {
        path: PathBuf,
        line: usize,
        reason: String,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Validated ICD-10 identifier: a three-character category (one uppercase
/// letter, two digits) optionally extended by one subcategory digit.
/// Renders as `K02` or `K02.2`; ordering follows the canonical rendering.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CodeId {
    category: String,
    subcategory: Option<char>,
}

impl CodeId {
    /// Parse a code in dotted (`K02.2`) or compact (`K022`) form,
    /// case-insensitively.
    pub fn parse(text: &str) -> Result<CodeId, TerminologyError> {
        let compact = text.trim().to_uppercase();
        let chars: Vec<char> = compact.chars().collect();
        let malformed = || TerminologyError::MalformedCode(text.to_string());

        let (category, rest) = match chars.len() {
            3..=5 => chars.split_at(3),
            _ => return Err(malformed()),
        };
        if !(category[0].is_ascii_uppercase()
            && category[1].is_ascii_digit()
            && category[2].is_ascii_digit())
        {
            return Err(malformed());
        }
        let subcategory = match rest {
            [] => None,
            [d] if d.is_ascii_digit() => Some(*d),
            ['.', d] if d.is_ascii_digit() => Some(*d),
            _ => return Err(malformed()),
        };
        Ok(CodeId {
            category: category.iter().collect(),
            subcategory,
        })
    }

    /// The three-character category component.
    pub fn category(&self) -> &str {
        &self.category
    }

    /// The subcategory digit, absent at category level.
    pub fn subcategory(&self) -> Option<char> {
        self.subcategory
    }

    pub fn is_category_level(&self) -> bool {
        self.subcategory.is_none()
    }

    /// Drop the subcategory digit. Idempotent.
    pub fn truncate_to_category(&self) -> CodeId {
        CodeId {
            category: self.category.clone(),
            subcategory: None,
        }
    }
}

impl fmt::Display for CodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.subcategory {
            Some(d) => write!(f, "{}.{}", self.category, d),
            None => f.write_str(&self.category),
        }
    }
}

impl FromStr for CodeId {
    type Err = TerminologyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        CodeId::parse(s)
    }
}

impl Serialize for CodeId {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for CodeId {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        CodeId::parse(&s).map_err(D::Error::custom)
    }
}

/// Provenance of a description or synonym phrase.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SourceTag {
    Tabular,
    AlphaIndex,
    Iris,
    UmlsEs,
    AbbrevList,
    User,
}

impl SourceTag {
    pub fn as_str(&self) -> &'static str {
        match self {
            SourceTag::Tabular => "TABULAR",
            SourceTag::AlphaIndex => "ALPHA_INDEX",
            SourceTag::Iris => "IRIS",
            SourceTag::UmlsEs => "UMLS_ES",
            SourceTag::AbbrevList => "ABBREV_LIST",
            SourceTag::User => "USER",
        }
    }
}

impl FromStr for SourceTag {
    type Err = TerminologyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "TABULAR" => Ok(SourceTag::Tabular),
            "ALPHA_INDEX" => Ok(SourceTag::AlphaIndex),
            "IRIS" => Ok(SourceTag::Iris),
            "UMLS_ES" => Ok(SourceTag::UmlsEs),
            "ABBREV_LIST" => Ok(SourceTag::AbbrevList),
            "USER" => Ok(SourceTag::User),
            _ => Err(TerminologyError::MalformedCode(format!("unknown source tag {s:?}"))),
        }
    }
}

impl fmt::Display for SourceTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A synonym phrase with the source it came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Synonym {
    pub phrase: String,
    pub source: SourceTag,
}

/// One code with its canonical description and synonym phrases.
/// `source` records which catalog the description came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConceptEntry {
    pub code: CodeId,
    pub canonical_description: String,
    pub source: SourceTag,
    pub synonyms: Vec<Synonym>,
}

/// Short form → ordered expansion phrases, both normalized.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AbbreviationTable {
    entries: BTreeMap<String, Vec<String>>,
}

impl AbbreviationTable {
    /// Insert one short-form/expansion pair; both are normalized under the
    /// default analyzer and duplicates keep their first position.
    pub fn insert(&mut self, short: &str, expansion: &str) {
        let cfg = AnalyzerConfig::default();
        let short = normalized_phrase(short, &cfg);
        let expansion = normalized_phrase(expansion, &cfg);
        if short.is_empty() || expansion.is_empty() {
            return;
        }
        let expansions = self.entries.entry(short).or_default();
        if !expansions.contains(&expansion) {
            expansions.push(expansion);
        }
    }

    /// Expansions for a normalized short form.
    pub fn expansions(&self, short: &str) -> Option<&[String]> {
        self.entries.get(short).map(|v| v.as_slice())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Vec<String>)> {
        self.entries.iter()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

fn normalized_phrase(text: &str, cfg: &AnalyzerConfig) -> String {
    textnorm::phrase_of(&textnorm::tokenize(text, cfg))
}

#[derive(Deserialize)]
struct RawConcept {
    code: String,
    description: String,
    #[serde(default)]
    synonyms: Vec<String>,
}

/// Load a concept file: UTF-8, one JSON object per line with fields
/// `code`, `description`, `synonyms`. Every synonym is tagged with
/// `source`; input order is preserved. Fails on the first bad line.
pub fn load_concepts(path: &Path, source: SourceTag) -> Result<Vec<ConceptEntry>, TerminologyError> {
    let reader = BufReader::new(File::open(path)?);
    let mut entries = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record = (|| -> Result<ConceptEntry, String> {
            let raw: RawConcept = serde_json::from_str(&line).map_err(|e| e.to_string())?;
            let code = CodeId::parse(&raw.code).map_err(|e| e.to_string())?;
            if raw.description.trim().is_empty() {
                return Err("empty description".to_string());
            }
            Ok(ConceptEntry {
                code,
                canonical_description: raw.description,
                source,
                synonyms: raw
                    .synonyms
                    .into_iter()
                    .map(|phrase| Synonym { phrase, source })
                    .collect(),
            })
        })()
        .map_err(|reason| TerminologyError::MalformedRecord {
            path: path.to_path_buf(),
            line: idx + 1,
            reason,
        })?;
        entries.push(record);
    }
    Ok(entries)
}

/// Merge per-source catalogs into one entry per code.
///
/// The TABULAR description wins when present (first TABULAR on ties),
/// otherwise the first description seen; every losing description is kept
/// as a synonym under its own tag. Synonyms are deduplicated by normalized
/// phrase keeping the earliest tag, phrases that normalize to nothing are
/// dropped, and a synonym identical to the entry's own description adds
/// nothing. Output is sorted by canonical code rendering.
pub fn merge_sources(catalogs: &[Vec<ConceptEntry>]) -> Vec<ConceptEntry> {
    struct Merged {
        description: String,
        source: SourceTag,
        synonyms: Vec<Synonym>,
    }

    let cfg = AnalyzerConfig::default();
    let mut merged: BTreeMap<CodeId, Merged> = BTreeMap::new();

    for entry in catalogs.iter().flatten() {
        match merged.get_mut(&entry.code) {
            None => {
                merged.insert(
                    entry.code.clone(),
                    Merged {
                        description: entry.canonical_description.clone(),
                        source: entry.source,
                        synonyms: entry.synonyms.clone(),
                    },
                );
            }
            Some(m) => {
                if entry.source == SourceTag::Tabular && m.source != SourceTag::Tabular {
                    let demoted = Synonym {
                        phrase: std::mem::replace(
                            &mut m.description,
                            entry.canonical_description.clone(),
                        ),
                        source: std::mem::replace(&mut m.source, SourceTag::Tabular),
                    };
                    m.synonyms.push(demoted);
                } else {
                    m.synonyms.push(Synonym {
                        phrase: entry.canonical_description.clone(),
                        source: entry.source,
                    });
                }
                m.synonyms.extend(entry.synonyms.iter().cloned());
            }
        }
    }

    merged
        .into_iter()
        .map(|(code, m)| {
            let canonical_key = normalized_phrase(&m.description, &cfg);
            let mut seen = vec![canonical_key];
            let mut synonyms = Vec::new();
            for syn in m.synonyms {
                let key = normalized_phrase(&syn.phrase, &cfg);
                if key.is_empty() || seen.contains(&key) {
                    continue;
                }
                seen.push(key);
                synonyms.push(syn);
            }
            ConceptEntry {
                code,
                canonical_description: m.description,
                source: m.source,
                synonyms,
            }
        })
        .collect()
}

/// Load an abbreviation table: UTF-8 TSV `short<TAB>expansion`, one pair
/// per line, `#` comment lines and blank lines ignored. Repeated lines
/// collapse; repeated short forms accumulate expansions in file order.
pub fn load_abbreviations(path: &Path) -> Result<AbbreviationTable, TerminologyError> {
    let reader = BufReader::new(File::open(path)?);
    let mut table = AbbreviationTable::default();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let malformed = |reason: &str| TerminologyError::MalformedRecord {
            path: path.to_path_buf(),
            line: idx + 1,
            reason: reason.to_string(),
        };
        if line.matches('\t').count() != 1 {
            return Err(malformed("expected exactly one tab"));
        }
        let (short, expansion) = line.split_once('\t').unwrap();
        if short.trim().is_empty() || expansion.trim().is_empty() {
            return Err(malformed("empty short form or expansion"));
        }
        table.insert(short, expansion);
    }
    Ok(table)
}

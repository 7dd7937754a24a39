//! Embedded fielded inverted index over the concept catalog.
//!
//! Every concept is one document with a `canonical` field (exactly one
//! phrase) and a `synonym` field (zero or more phrases). Each phrase is
//! scored on its own with BM25 — collection statistics (document
//! frequency, average length) are taken over the phrases of a field — a
//! field scores as the max over its phrases, and the document score is
//! `max(w_c · canonical, synonym)`. Phrase-level max keeps a code with
//! many synonyms from outscoring a better single match by accumulation.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::terminology::{AbbreviationTable, CodeId, ConceptEntry};
use crate::textnorm::{self, AnalyzerConfig};

pub const FORMAT_VERSION: &str = "ti-v1";
const MAGIC: &[u8; 4] = b"TIDX";

#[derive(Debug, thiserror::Error)]
pub enum IndexError {
    #[error("cannot build an index from an empty catalog")]
    EmptyCatalog,
    #[error("mention normalizes to zero tokens")]
    EmptyMention,
    #[error("index format version mismatch: found {found:?}, expected {expected:?}")]
    VersionMismatch { found: String, expected: String },
    #[error("corrupt index file: {0}")]
    CorruptIndex(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// BM25 parameters plus the canonical-field boost. All three are exposed
/// in configuration; the defaults are standard BM25 with the tabular
/// description weighted double.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScoringParams {
    pub k1: f64,
    pub b: f64,
    pub canonical_boost: f64,
}

impl Default for ScoringParams {
    fn default() -> Self {
        ScoringParams {
            k1: 1.2,
            b: 0.75,
            canonical_boost: 2.0,
        }
    }
}

/// Index field a phrase belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Field {
    Canonical,
    Synonym,
}

/// One ranked retrieval result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodeCandidate {
    pub code: CodeId,
    pub score: f64,
    pub rank: u32,
    pub matched_field: Field,
    pub matched_phrase: String,
}

/// Build statistics recorded in the manifest.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BuildStats {
    pub doc_count: usize,
    pub term_count: usize,
}

/// Manifest serialized at the head of the index file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: String,
    pub analyzer: AnalyzerConfig,
    pub params: ScoringParams,
    pub stats: BuildStats,
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct DocEntry {
    code: CodeId,
    canonical: String,
    synonyms: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct PhraseRef {
    doc: u32,
    /// Index into the doc's synonym list; 0 for the canonical field.
    pos: u32,
    len: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Posting {
    phrase: u32,
    tf: u32,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
struct FieldIndex {
    phrases: Vec<PhraseRef>,
    postings: BTreeMap<String, Vec<Posting>>,
    total_tokens: u64,
}

impl FieldIndex {
    fn add_phrase(&mut self, doc: u32, pos: u32, tokens: &[String]) {
        let phrase_id = self.phrases.len() as u32;
        self.phrases.push(PhraseRef {
            doc,
            pos,
            len: tokens.len() as u32,
        });
        self.total_tokens += tokens.len() as u64;
        let mut tf: BTreeMap<&str, u32> = BTreeMap::new();
        for t in tokens {
            *tf.entry(t).or_default() += 1;
        }
        for (term, count) in tf {
            self.postings
                .entry(term.to_string())
                .or_default()
                .push(Posting {
                    phrase: phrase_id,
                    tf: count,
                });
        }
    }

    fn avg_len(&self) -> f64 {
        if self.phrases.is_empty() {
            0.0
        } else {
            self.total_tokens as f64 / self.phrases.len() as f64
        }
    }

    /// Accumulate per-phrase BM25 partials for the distinct query terms.
    fn phrase_scores(&self, terms: &BTreeSet<&str>, params: &ScoringParams) -> HashMap<u32, f64> {
        let mut scores: HashMap<u32, f64> = HashMap::new();
        let n = self.phrases.len() as f64;
        if n == 0.0 {
            return scores;
        }
        let avg = self.avg_len();
        for term in terms {
            let Some(postings) = self.postings.get(*term) else {
                continue;
            };
            let df = postings.len() as f64;
            let idf = ((n - df + 0.5) / (df + 0.5) + 1.0).ln();
            for p in postings {
                let dl = self.phrases[p.phrase as usize].len as f64;
                let tf = p.tf as f64;
                let weight =
                    idf * (tf * (params.k1 + 1.0)) / (tf + params.k1 * (1.0 - params.b + params.b * dl / avg));
                *scores.entry(p.phrase).or_insert(0.0) += weight;
            }
        }
        scores
    }
}

#[derive(Debug, Clone, Copy)]
struct FieldBest {
    score: f64,
    phrase: u32,
}

/// Immutable fielded inverted index. Build is deterministic: identical
/// inputs serialize to identical bytes.
#[derive(Debug, Clone, PartialEq)]
pub struct TermIndex {
    docs: Vec<DocEntry>,
    canonical: FieldIndex,
    synonym: FieldIndex,
    analyzer: AnalyzerConfig,
    params: ScoringParams,
    abbreviations: AbbreviationTable,
}

/// Index every concept of a merged catalog: one document per concept,
/// the canonical description under the `canonical` field and every
/// synonym under `synonym`. Documents are sorted by code so results do
/// not depend on catalog order.
pub fn build_index(
    concepts: &[ConceptEntry],
    cfg: &AnalyzerConfig,
    params: ScoringParams,
) -> Result<TermIndex, IndexError> {
    if concepts.is_empty() {
        return Err(IndexError::EmptyCatalog);
    }
    let mut sorted: Vec<&ConceptEntry> = concepts.iter().collect();
    sorted.sort_by(|a, b| a.code.cmp(&b.code));

    let mut docs = Vec::with_capacity(sorted.len());
    let mut canonical = FieldIndex::default();
    let mut synonym = FieldIndex::default();

    for (ordinal, entry) in sorted.iter().enumerate() {
        let doc = ordinal as u32;
        let tokens: Vec<String> = textnorm::tokenize(&entry.canonical_description, cfg)
            .into_iter()
            .map(|t| t.normalized)
            .collect();
        if !tokens.is_empty() {
            canonical.add_phrase(doc, 0, &tokens);
        }
        let mut synonyms = Vec::with_capacity(entry.synonyms.len());
        for syn in &entry.synonyms {
            let tokens: Vec<String> = textnorm::tokenize(&syn.phrase, cfg)
                .into_iter()
                .map(|t| t.normalized)
                .collect();
            if !tokens.is_empty() {
                synonym.add_phrase(doc, synonyms.len() as u32, &tokens);
            }
            synonyms.push(syn.phrase.clone());
        }
        docs.push(DocEntry {
            code: entry.code.clone(),
            canonical: entry.canonical_description.clone(),
            synonyms,
        });
    }

    Ok(TermIndex {
        docs,
        canonical,
        synonym,
        analyzer: cfg.clone(),
        params,
        abbreviations: AbbreviationTable::default(),
    })
}

impl TermIndex {
    /// Attach an abbreviation table so the index file carries everything
    /// the query side needs.
    pub fn with_abbreviations(mut self, table: AbbreviationTable) -> Self {
        self.abbreviations = table;
        self
    }

    pub fn abbreviations(&self) -> &AbbreviationTable {
        &self.abbreviations
    }

    pub fn analyzer(&self) -> &AnalyzerConfig {
        &self.analyzer
    }

    pub fn params(&self) -> &ScoringParams {
        &self.params
    }

    pub fn doc_count(&self) -> usize {
        self.docs.len()
    }

    pub fn code_at(&self, ordinal: u32) -> Option<&CodeId> {
        self.docs.get(ordinal as usize).map(|d| &d.code)
    }

    /// Canonical description and synonym phrases per document, the raw
    /// material for rebuilding a gazetteer from a shipped index.
    pub fn doc_phrases(&self) -> impl Iterator<Item = (&CodeId, &str, &[String])> {
        self.docs
            .iter()
            .map(|d| (&d.code, d.canonical.as_str(), d.synonyms.as_slice()))
    }

    pub fn manifest(&self) -> Manifest {
        Manifest {
            format_version: FORMAT_VERSION.to_string(),
            analyzer: self.analyzer.clone(),
            params: self.params,
            stats: BuildStats {
                doc_count: self.docs.len(),
                term_count: self.canonical.postings.len() + self.synonym.postings.len(),
            },
        }
    }

    /// Best (score, field, phrase) per document for one token sequence.
    fn score_tokens(&self, tokens: &[String]) -> HashMap<u32, (f64, Field, u32)> {
        let terms: BTreeSet<&str> = tokens.iter().map(|t| t.as_str()).collect();
        let mut best: HashMap<u32, (f64, Field, u32)> = HashMap::new();

        for (field, field_index, boost) in [
            (Field::Canonical, &self.canonical, self.params.canonical_boost),
            (Field::Synonym, &self.synonym, 1.0),
        ] {
            let phrase_scores = field_index.phrase_scores(&terms, &self.params);
            let mut per_doc: BTreeMap<u32, FieldBest> = BTreeMap::new();
            let mut ids: Vec<u32> = phrase_scores.keys().copied().collect();
            ids.sort_unstable();
            for phrase_id in ids {
                let score = phrase_scores[&phrase_id];
                let doc = field_index.phrases[phrase_id as usize].doc;
                let slot = per_doc.entry(doc).or_insert(FieldBest {
                    score: f64::NEG_INFINITY,
                    phrase: phrase_id,
                });
                if score > slot.score {
                    *slot = FieldBest {
                        score,
                        phrase: phrase_id,
                    };
                }
            }
            for (doc, field_best) in per_doc {
                let boosted = boost * field_best.score;
                let entry = best.entry(doc).or_insert((f64::NEG_INFINITY, field, 0));
                if boosted > entry.0 {
                    *entry = (boosted, field, field_best.phrase);
                }
            }
        }
        best
    }

    /// BM25 score of one document for a tokenized query: max over the
    /// document's phrases per field, canonical boosted by `w_c`.
    pub fn score(&self, query_tokens: &[String], ordinal: u32) -> f64 {
        self.score_tokens(query_tokens)
            .get(&ordinal)
            .map_or(0.0, |(s, _, _)| *s)
    }

    fn phrase_text(&self, field: Field, phrase_id: u32) -> &str {
        match field {
            Field::Canonical => {
                let doc = self.canonical.phrases[phrase_id as usize].doc as usize;
                &self.docs[doc].canonical
            }
            Field::Synonym => {
                let pref = self.synonym.phrases[phrase_id as usize];
                &self.docs[pref.doc as usize].synonyms[pref.pos as usize]
            }
        }
    }

    /// Rank the top-k codes for a mention. The mention is normalized and
    /// tokenized, abbreviation-expanded variants are generated, and each
    /// document takes its best score over the variants. Zero-score
    /// candidates are dropped; ties break by ascending code.
    pub fn query(
        &self,
        mention: &str,
        table: &AbbreviationTable,
        k: usize,
    ) -> Result<Vec<CodeCandidate>, IndexError> {
        let tokens = textnorm::tokenize(mention, &self.analyzer);
        if tokens.is_empty() {
            return Err(IndexError::EmptyMention);
        }
        let variants = textnorm::expand_abbreviations(&tokens, table);

        let mut best: HashMap<u32, (f64, Field, u32)> = HashMap::new();
        for variant in &variants {
            let variant_tokens: Vec<String> =
                variant.split_whitespace().map(|s| s.to_string()).collect();
            for (doc, scored) in self.score_tokens(&variant_tokens) {
                let entry = best
                    .entry(doc)
                    .or_insert((f64::NEG_INFINITY, scored.1, scored.2));
                if scored.0 > entry.0 {
                    *entry = scored;
                }
            }
        }

        let mut ranked: Vec<(u32, f64, Field, u32)> = best
            .into_iter()
            .filter(|(_, (score, _, _))| *score > 0.0)
            .map(|(doc, (score, field, phrase))| (doc, score, field, phrase))
            .collect();
        ranked.sort_by(|a, b| {
            b.1.partial_cmp(&a.1)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then_with(|| self.docs[a.0 as usize].code.cmp(&self.docs[b.0 as usize].code))
        });
        ranked.truncate(k);

        Ok(ranked
            .into_iter()
            .enumerate()
            .map(|(i, (doc, score, field, phrase))| CodeCandidate {
                code: self.docs[doc as usize].code.clone(),
                score,
                rank: i as u32 + 1,
                matched_field: field,
                matched_phrase: self.phrase_text(field, phrase).to_string(),
            })
            .collect())
    }
}

// ---------------------------------------------------------------------------
// On-disk format: magic, length-prefixed manifest JSON, length-prefixed
// little-endian body, SHA-256 over everything before the checksum.

struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn new() -> Self {
        Writer { buf: Vec::new() }
    }

    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn str(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.buf.extend_from_slice(s.as_bytes());
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Reader { buf, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], IndexError> {
        if self.pos + n > self.buf.len() {
            return Err(IndexError::CorruptIndex("unexpected end of section".to_string()));
        }
        let slice = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn u32(&mut self) -> Result<u32, IndexError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, IndexError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn str(&mut self) -> Result<String, IndexError> {
        let len = self.u32()? as usize;
        let bytes = self.take(len)?;
        String::from_utf8(bytes.to_vec())
            .map_err(|_| IndexError::CorruptIndex("invalid utf-8 in string".to_string()))
    }

    fn done(&self) -> bool {
        self.pos == self.buf.len()
    }
}

fn write_field_index(w: &mut Writer, f: &FieldIndex) {
    w.u32(f.phrases.len() as u32);
    for p in &f.phrases {
        w.u32(p.doc);
        w.u32(p.pos);
        w.u32(p.len);
    }
    w.u64(f.total_tokens);
    w.u32(f.postings.len() as u32);
    for (term, postings) in &f.postings {
        w.str(term);
        w.u32(postings.len() as u32);
        for p in postings {
            w.u32(p.phrase);
            w.u32(p.tf);
        }
    }
}

fn read_field_index(r: &mut Reader) -> Result<FieldIndex, IndexError> {
    let phrase_count = r.u32()? as usize;
    let mut phrases = Vec::with_capacity(phrase_count);
    for _ in 0..phrase_count {
        phrases.push(PhraseRef {
            doc: r.u32()?,
            pos: r.u32()?,
            len: r.u32()?,
        });
    }
    let total_tokens = r.u64()?;
    let term_count = r.u32()? as usize;
    let mut postings = BTreeMap::new();
    for _ in 0..term_count {
        let term = r.str()?;
        let n = r.u32()? as usize;
        let mut list = Vec::with_capacity(n);
        for _ in 0..n {
            list.push(Posting {
                phrase: r.u32()?,
                tf: r.u32()?,
            });
        }
        postings.insert(term, list);
    }
    Ok(FieldIndex {
        phrases,
        postings,
        total_tokens,
    })
}

/// Serialize the index to a single artifact file.
pub fn save_index(index: &TermIndex, path: &Path) -> Result<(), IndexError> {
    let manifest = serde_json::to_vec(&index.manifest())
        .map_err(|e| IndexError::CorruptIndex(e.to_string()))?;

    let mut body = Writer::new();
    body.u32(index.docs.len() as u32);
    for doc in &index.docs {
        body.str(&doc.code.to_string());
        body.str(&doc.canonical);
        body.u32(doc.synonyms.len() as u32);
        for syn in &doc.synonyms {
            body.str(syn);
        }
    }
    write_field_index(&mut body, &index.canonical);
    write_field_index(&mut body, &index.synonym);
    body.u32(index.abbreviations.len() as u32);
    for (short, expansions) in index.abbreviations.iter() {
        body.str(short);
        body.u32(expansions.len() as u32);
        for e in expansions {
            body.str(e);
        }
    }

    let mut bytes = Vec::with_capacity(4 + 8 + manifest.len() + 8 + body.buf.len() + 32);
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&(manifest.len() as u64).to_le_bytes());
    bytes.extend_from_slice(&manifest);
    bytes.extend_from_slice(&(body.buf.len() as u64).to_le_bytes());
    bytes.extend_from_slice(&body.buf);
    let digest = Sha256::digest(&bytes);
    bytes.extend_from_slice(&digest);

    fs::write(path, bytes)?;
    Ok(())
}

/// Load an index written by [`save_index`]. The checksum is verified
/// before anything is decoded; a version token other than the current
/// format is rejected.
pub fn load_index(path: &Path) -> Result<TermIndex, IndexError> {
    let bytes = fs::read(path)?;
    if bytes.len() < 4 + 8 + 8 + 32 {
        return Err(IndexError::CorruptIndex("file too short".to_string()));
    }
    let (payload, checksum) = bytes.split_at(bytes.len() - 32);
    let digest = Sha256::digest(payload);
    if digest.as_slice() != checksum {
        return Err(IndexError::CorruptIndex("checksum mismatch".to_string()));
    }

    let mut r = Reader::new(payload);
    if r.take(4)? != MAGIC {
        return Err(IndexError::CorruptIndex("bad magic".to_string()));
    }
    let manifest_len = r.u64()? as usize;
    let manifest: Manifest = serde_json::from_slice(r.take(manifest_len)?)
        .map_err(|e| IndexError::CorruptIndex(format!("bad manifest: {e}")))?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(IndexError::VersionMismatch {
            found: manifest.format_version,
            expected: FORMAT_VERSION.to_string(),
        });
    }

    let body_len = r.u64()? as usize;
    let body = r.take(body_len)?;
    if !r.done() {
        return Err(IndexError::CorruptIndex("trailing bytes".to_string()));
    }

    let mut r = Reader::new(body);
    let doc_count = r.u32()? as usize;
    let mut docs = Vec::with_capacity(doc_count);
    for _ in 0..doc_count {
        let code = CodeId::parse(&r.str()?)
            .map_err(|e| IndexError::CorruptIndex(format!("bad code: {e}")))?;
        let canonical = r.str()?;
        let syn_count = r.u32()? as usize;
        let mut synonyms = Vec::with_capacity(syn_count);
        for _ in 0..syn_count {
            synonyms.push(r.str()?);
        }
        docs.push(DocEntry {
            code,
            canonical,
            synonyms,
        });
    }
    let canonical = read_field_index(&mut r)?;
    let synonym = read_field_index(&mut r)?;
    let abbrev_count = r.u32()? as usize;
    let mut abbreviations = AbbreviationTable::default();
    for _ in 0..abbrev_count {
        let short = r.str()?;
        let n = r.u32()? as usize;
        for _ in 0..n {
            let expansion = r.str()?;
            abbreviations.insert(&short, &expansion);
        }
    }
    if !r.done() {
        return Err(IndexError::CorruptIndex("trailing bytes in body".to_string()));
    }
    if docs.len() != manifest.stats.doc_count {
        return Err(IndexError::CorruptIndex("doc count disagrees with manifest".to_string()));
    }

    Ok(TermIndex {
        docs,
        canonical,
        synonym,
        analyzer: manifest.analyzer,
        params: manifest.params,
        abbreviations,
    })
}

//! Disease-mention extraction.
//!
//! The [`MentionExtractor`] trait is the contract any implementation must
//! honor; a gazetteer longest-match extractor ships as the reference, and
//! [`ExternalExtractor`] drives a subprocess over a line-delimited JSON
//! protocol so a learned model can be plugged in behind the same contract.

use std::collections::{BTreeSet, HashMap};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::terminology::{CodeId, ConceptEntry};
use crate::textnorm::{self, AnalyzerConfig, Token};

#[derive(Debug, thiserror::Error)]
pub enum ExtractError {
    #[error("length mismatch: {tokens} tokens but {labels} labels")]
    LengthMismatch { tokens: usize, labels: usize },
    #[error("external extractor protocol error: {0}")]
    Protocol(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A disease mention located in source text. Offsets are character
/// positions; `surface` is the exact source slice.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MentionSpan {
    pub start: usize,
    pub end: usize,
    pub surface: String,
    pub normalized: String,
}

/// BIO tag for one token.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BioLabel {
    B,
    I,
    O,
}

/// Phrase dictionary for exact-match extraction: normalized token
/// sequences mapped to the codes that list them.
#[derive(Debug, Clone, Default)]
pub struct Gazetteer {
    phrases: HashMap<Vec<String>, BTreeSet<CodeId>>,
    max_phrase_len: usize,
}

impl Gazetteer {
    /// Insert one phrase for a code; phrases that normalize to nothing
    /// are ignored.
    pub fn add_phrase(&mut self, code: &CodeId, phrase: &str, cfg: &AnalyzerConfig) {
        let tokens: Vec<String> = textnorm::tokenize(phrase, cfg)
            .into_iter()
            .map(|t| t.normalized)
            .collect();
        if tokens.is_empty() {
            return;
        }
        self.max_phrase_len = self.max_phrase_len.max(tokens.len());
        self.phrases.entry(tokens).or_default().insert(code.clone());
    }

    /// Codes listing exactly this normalized token sequence.
    pub fn codes_for(&self, tokens: &[String]) -> Option<&BTreeSet<CodeId>> {
        self.phrases.get(tokens)
    }

    pub fn max_phrase_len(&self) -> usize {
        self.max_phrase_len
    }

    pub fn len(&self) -> usize {
        self.phrases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phrases.is_empty()
    }
}

/// Build a gazetteer over every canonical description and synonym of a
/// merged catalog.
pub fn build_gazetteer(concepts: &[ConceptEntry], cfg: &AnalyzerConfig) -> Gazetteer {
    let mut gz = Gazetteer::default();
    for entry in concepts {
        gz.add_phrase(&entry.code, &entry.canonical_description, cfg);
        for syn in &entry.synonyms {
            gz.add_phrase(&entry.code, &syn.phrase, cfg);
        }
    }
    gz
}

/// Greedy leftmost-longest matching over the token sequence: at each
/// token, the longest window whose normalized sequence is in the
/// gazetteer wins; scanning resumes after it, so matches never overlap
/// and output order is textual order. That order is the ranking order
/// consumed downstream.
pub fn extract_mentions(text: &str, gz: &Gazetteer, cfg: &AnalyzerConfig) -> Vec<MentionSpan> {
    let tokens = textnorm::tokenize(text, cfg);
    let normalized: Vec<String> = tokens.iter().map(|t| t.normalized.clone()).collect();
    let chars: Vec<char> = text.chars().collect();
    let mut spans = Vec::new();

    let mut i = 0;
    while i < tokens.len() {
        let longest = gz.max_phrase_len().min(tokens.len() - i);
        let mut matched = 0;
        for len in (1..=longest).rev() {
            if gz.codes_for(&normalized[i..i + len]).is_some() {
                matched = len;
                break;
            }
        }
        if matched == 0 {
            i += 1;
            continue;
        }
        let window = &tokens[i..i + matched];
        let start = window[0].start;
        let end = window[matched - 1].end;
        spans.push(MentionSpan {
            start,
            end,
            surface: chars[start..end].iter().collect(),
            normalized: textnorm::phrase_of(window),
        });
        i += matched;
    }
    spans
}

/// Decode a BIO label sequence into spans: each maximal B(I)* run covers
/// the tokens from the first token's start to the last token's end. An I
/// with no open run is repaired by treating it as B.
pub fn spans_from_bio(
    text: &str,
    tokens: &[Token],
    labels: &[BioLabel],
) -> Result<Vec<MentionSpan>, ExtractError> {
    if tokens.len() != labels.len() {
        return Err(ExtractError::LengthMismatch {
            tokens: tokens.len(),
            labels: labels.len(),
        });
    }
    let chars: Vec<char> = text.chars().collect();
    let mut spans = Vec::new();
    let mut run: Option<(usize, usize)> = None;

    let close = |run: &mut Option<(usize, usize)>, spans: &mut Vec<MentionSpan>| {
        if let Some((first, last)) = run.take() {
            let start = tokens[first].start;
            let end = tokens[last].end;
            spans.push(MentionSpan {
                start,
                end,
                surface: chars[start..end].iter().collect(),
                normalized: textnorm::phrase_of(&tokens[first..=last]),
            });
        }
    };

    for (idx, label) in labels.iter().enumerate() {
        match label {
            BioLabel::B => {
                close(&mut run, &mut spans);
                run = Some((idx, idx));
            }
            BioLabel::I => match run {
                Some((first, _)) => run = Some((first, idx)),
                None => run = Some((idx, idx)),
            },
            BioLabel::O => close(&mut run, &mut spans),
        }
    }
    close(&mut run, &mut spans);
    Ok(spans)
}

/// Extraction contract shared by the gazetteer reference implementation
/// and external models. Spans must be non-overlapping, ordered by start,
/// with `surface` equal to the source slice.
pub trait MentionExtractor: Send + Sync {
    fn extract(&self, id: &str, text: &str) -> Result<Vec<MentionSpan>, ExtractError>;
}

/// Reference extractor: longest-match over a gazetteer built from the
/// concept catalog.
pub struct GazetteerExtractor {
    gazetteer: Gazetteer,
    cfg: AnalyzerConfig,
}

impl GazetteerExtractor {
    pub fn new(gazetteer: Gazetteer, cfg: AnalyzerConfig) -> Self {
        GazetteerExtractor { gazetteer, cfg }
    }

    pub fn gazetteer(&self) -> &Gazetteer {
        &self.gazetteer
    }
}

impl MentionExtractor for GazetteerExtractor {
    fn extract(&self, _id: &str, text: &str) -> Result<Vec<MentionSpan>, ExtractError> {
        Ok(extract_mentions(text, &self.gazetteer, &self.cfg))
    }
}

#[derive(Serialize)]
struct WireRequest<'a> {
    id: &'a str,
    text: &'a str,
}

#[derive(Deserialize)]
struct WireResponse {
    id: String,
    spans: Vec<WireSpan>,
}

#[derive(Deserialize)]
struct WireSpan {
    start: usize,
    end: usize,
}

struct ChildIo {
    child: Child,
    stdin: BufWriter<ChildStdin>,
    stdout: BufReader<ChildStdout>,
}

/// Drives an external extractor process over the plug-in wire protocol:
/// one JSON request `{id, text}` per line on stdin, one JSON response
/// `{id, spans: [{start, end}]}` per line on stdout, offsets in Unicode
/// scalar values. Out-of-range or overlapping spans from the child are
/// dropped deterministically (sorted by start, earliest kept).
pub struct ExternalExtractor {
    io: Mutex<ChildIo>,
    cfg: AnalyzerConfig,
}

impl ExternalExtractor {
    pub fn spawn(program: &str, args: &[String], cfg: AnalyzerConfig) -> Result<Self, ExtractError> {
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .spawn()?;
        let stdin = BufWriter::new(child.stdin.take().expect("piped stdin"));
        let stdout = BufReader::new(child.stdout.take().expect("piped stdout"));
        Ok(ExternalExtractor {
            io: Mutex::new(ChildIo { child, stdin, stdout }),
            cfg,
        })
    }
}

impl MentionExtractor for ExternalExtractor {
    fn extract(&self, id: &str, text: &str) -> Result<Vec<MentionSpan>, ExtractError> {
        let mut io = self.io.lock().expect("extractor lock");
        let request = serde_json::to_string(&WireRequest { id, text })
            .map_err(|e| ExtractError::Protocol(e.to_string()))?;
        writeln!(io.stdin, "{request}")?;
        io.stdin.flush()?;

        let mut line = String::new();
        if io.stdout.read_line(&mut line)? == 0 {
            return Err(ExtractError::Protocol("extractor closed its stdout".to_string()));
        }
        let response: WireResponse =
            serde_json::from_str(line.trim_end()).map_err(|e| ExtractError::Protocol(e.to_string()))?;
        if response.id != id {
            return Err(ExtractError::Protocol(format!(
                "response id {:?} does not match request id {:?}",
                response.id, id
            )));
        }

        let chars: Vec<char> = text.chars().collect();
        let mut wire = response.spans;
        wire.sort_by_key(|s| (s.start, s.end));
        let mut spans: Vec<MentionSpan> = Vec::new();
        for w in wire {
            if w.start >= w.end || w.end > chars.len() {
                continue;
            }
            if spans.last().is_some_and(|prev| w.start < prev.end) {
                continue;
            }
            let surface: String = chars[w.start..w.end].iter().collect();
            spans.push(MentionSpan {
                start: w.start,
                end: w.end,
                normalized: textnorm::phrase_of(&textnorm::tokenize(&surface, &self.cfg)),
                surface,
            });
        }
        Ok(spans)
    }
}

impl Drop for ExternalExtractor {
    fn drop(&mut self) {
        if let Ok(mut io) = self.io.lock() {
            let _ = io.child.kill();
            let _ = io.child.wait();
        }
    }
}

//! Spanish-aware text normalization and tokenization.
//!
//! Extraction and indexing both go through this module, so the two sides
//! agree on token identity. Offsets are Unicode scalar values into the
//! original text, never bytes.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use unicode_normalization::char::{decompose_canonical, is_combining_mark};
use unicode_normalization::UnicodeNormalization;

use crate::terminology::AbbreviationTable;

/// Analysis settings shared by the tokenizer and the index. An index
/// persists the config it was built with so queries replay it exactly.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnalyzerConfig {
    pub lowercase: bool,
    pub strip_accents: bool,
    pub fold_punctuation: bool,
    pub stopwords: BTreeSet<String>,
}

impl Default for AnalyzerConfig {
    fn default() -> Self {
        AnalyzerConfig {
            lowercase: true,
            strip_accents: true,
            fold_punctuation: true,
            stopwords: BTreeSet::new(),
        }
    }
}

/// One token of the original text. `start`/`end` are character offsets
/// (0-based, end-exclusive) into the source string.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token {
    pub surface: String,
    pub normalized: String,
    pub start: usize,
    pub end: usize,
}

/// Lowercase and fold Latin accents to base letters. The letter "ñ" is a
/// distinct letter in Spanish vocabulary (año vs ano) and is never folded.
/// Idempotent: feeding the output back in returns it unchanged.
pub fn normalize(text: &str, cfg: &AnalyzerConfig) -> String {
    let mut out = String::with_capacity(text.len());
    for ch in text.nfc() {
        if ch == 'ñ' || ch == 'Ñ' {
            out.push(if cfg.lowercase { 'ñ' } else { ch });
            continue;
        }
        if cfg.strip_accents {
            decompose_canonical(ch, |c| {
                if !is_combining_mark(c) {
                    push_cased(c, cfg, &mut out);
                }
            });
        } else {
            push_cased(ch, cfg, &mut out);
        }
    }
    out
}

fn push_cased(c: char, cfg: &AnalyzerConfig, out: &mut String) {
    if cfg.lowercase {
        out.extend(c.to_lowercase());
    } else {
        out.push(c);
    }
}

/// Split on Unicode whitespace and punctuation. Word characters are
/// alphanumerics; digits form tokens of their own when standing alone.
/// With `fold_punctuation` on (the default), punctuation emits no token;
/// off, each punctuation character becomes a single-character token.
/// Stopword tokens are dropped, leaving the offsets of the remaining
/// tokens untouched.
pub fn tokenize(text: &str, cfg: &AnalyzerConfig) -> Vec<Token> {
    let mut tokens = Vec::new();
    let mut word = String::new();
    let mut word_start = 0usize;
    let mut pos = 0usize;

    let flush = |word: &mut String, start: usize, end: usize, tokens: &mut Vec<Token>| {
        if word.is_empty() {
            return;
        }
        let normalized = normalize(word, cfg);
        if !normalized.is_empty() && !cfg.stopwords.contains(&normalized) {
            tokens.push(Token {
                surface: std::mem::take(word),
                normalized,
                start,
                end,
            });
        }
        word.clear();
    };

    for ch in text.chars() {
        if ch.is_alphanumeric() {
            if word.is_empty() {
                word_start = pos;
            }
            word.push(ch);
        } else {
            flush(&mut word, word_start, pos, &mut tokens);
            if !ch.is_whitespace() && !cfg.fold_punctuation {
                let normalized = normalize(&ch.to_string(), cfg);
                if !normalized.is_empty() && !cfg.stopwords.contains(&normalized) {
                    tokens.push(Token {
                        surface: ch.to_string(),
                        normalized,
                        start: pos,
                        end: pos + 1,
                    });
                }
            }
        }
        pos += 1;
    }
    flush(&mut word, word_start, pos, &mut tokens);
    tokens
}

/// The normalized phrase of a token run, tokens joined by single spaces.
pub fn phrase_of(tokens: &[Token]) -> String {
    tokens
        .iter()
        .map(|t| t.normalized.as_str())
        .collect::<Vec<_>>()
        .join(" ")
}

/// Generate query phrase variants by abbreviation expansion. The original
/// normalized phrase always comes first; then, for each abbreviation token
/// type in order of first occurrence, one variant per expansion with every
/// occurrence of that token replaced. Substitutions are one type at a time,
/// never crossed, so the output stays linear in the table hits.
pub fn expand_abbreviations(tokens: &[Token], table: &AbbreviationTable) -> Vec<String> {
    let base: Vec<&str> = tokens.iter().map(|t| t.normalized.as_str()).collect();
    let mut phrases = vec![base.join(" ")];

    let mut seen = Vec::new();
    for tok in &base {
        if !seen.contains(tok) {
            seen.push(tok);
        }
    }
    for short in seen {
        let Some(expansions) = table.expansions(short) else {
            continue;
        };
        for expansion in expansions {
            let variant: Vec<&str> = base
                .iter()
                .map(|t| if *t == short { expansion.as_str() } else { *t })
                .collect();
            phrases.push(variant.join(" "));
        }
    }
    phrases
}

/// Slice a string by character offsets (the offset unit used everywhere
/// in this crate).
pub fn char_slice(text: &str, start: usize, end: usize) -> String {
    text.chars().skip(start).take(end.saturating_sub(start)).collect()
}

/// Character count of a string.
pub fn char_len(text: &str) -> usize {
    text.chars().count()
}

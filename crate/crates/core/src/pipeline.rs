//! End-to-end coding of referrals: extract mentions, link each one to
//! ranked codes, flatten into a run. The flattened order is mention
//! order first (textual position), then candidate rank within the
//! mention, with duplicate codes keeping their first occurrence.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::extractor::{
    ExtractError, ExternalExtractor, Gazetteer, GazetteerExtractor, MentionExtractor, MentionSpan,
};
use crate::eval::RunEntry;
use crate::index::{CodeCandidate, IndexError, ScoringParams, TermIndex};
use crate::terminology::{load_abbreviations, AbbreviationTable, TerminologyError};
use crate::textnorm::AnalyzerConfig;

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Terminology(#[from] TerminologyError),
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error(transparent)]
    Extract(#[from] ExtractError),
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One referral to code. `text` holds the diagnostic free text; when the
/// input record carries separate suspicion and confirmation fields they
/// are concatenated with `" | "`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "RawReferral")]
pub struct Referral {
    pub id: String,
    pub text: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub specialty: Option<String>,
}

#[derive(Deserialize)]
struct RawReferral {
    id: String,
    #[serde(default)]
    text: Option<String>,
    #[serde(default)]
    suspicion: Option<String>,
    #[serde(default)]
    confirmation: Option<String>,
    #[serde(default)]
    specialty: Option<String>,
}

impl From<RawReferral> for Referral {
    fn from(raw: RawReferral) -> Self {
        let text = match raw.text {
            Some(t) => t,
            None => {
                let parts: Vec<String> = [raw.suspicion, raw.confirmation]
                    .into_iter()
                    .flatten()
                    .collect();
                parts.join(" | ")
            }
        };
        Referral {
            id: raw.id,
            text,
            specialty: raw.specialty,
        }
    }
}

/// One extracted mention with its ranked code candidates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MentionCoding {
    pub span: MentionSpan,
    pub candidates: Vec<CodeCandidate>,
}

/// Coding output for one referral: the per-mention candidates plus the
/// flattened run with contiguous re-numbered ranks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodingResult {
    pub id: String,
    pub mentions: Vec<MentionCoding>,
    pub run: Vec<RunEntry>,
}

/// Batch counters reported by [`CodingEngine::code_batch`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchSummary {
    pub processed: usize,
    pub mentions: usize,
    pub zero_mention_referrals: usize,
    pub skipped: usize,
}

/// Which extractor the pipeline runs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ExtractorSelection {
    #[default]
    Gazetteer,
    External {
        command: String,
        #[serde(default)]
        args: Vec<String>,
    },
}

/// Runtime configuration, loadable from the MEDLINKER_CONFIG JSON file;
/// command-line flags override individual fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub k: usize,
    pub analyzer: AnalyzerConfig,
    pub params: ScoringParams,
    pub index: Option<PathBuf>,
    pub abbreviations: Option<PathBuf>,
    pub extractor: ExtractorSelection,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            k: 5,
            analyzer: AnalyzerConfig::default(),
            params: ScoringParams::default(),
            index: None,
            abbreviations: None,
            extractor: ExtractorSelection::Gazetteer,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.k == 0 {
            return Err(PipelineError::Config("k must be at least 1".to_string()));
        }
        for (name, path) in [("index", &self.index), ("abbreviations", &self.abbreviations)] {
            if let Some(p) = path {
                if !p.exists() {
                    return Err(PipelineError::Config(format!(
                        "{name} path {} does not exist",
                        p.display()
                    )));
                }
            }
        }
        Ok(())
    }
}

/// A loaded coding pipeline: index, extractor, and abbreviation table.
/// Immutable once constructed; safe to share across threads.
pub struct CodingEngine {
    index: TermIndex,
    extractor: Box<dyn MentionExtractor>,
    abbreviations: AbbreviationTable,
    k: usize,
}

impl CodingEngine {
    /// Assemble an engine around a loaded index. The gazetteer extractor
    /// is rebuilt from the phrases stored in the index and the
    /// abbreviation table embedded at build time is used for expansion.
    pub fn new(index: TermIndex, k: usize) -> Result<Self, PipelineError> {
        if k == 0 {
            return Err(PipelineError::Config("k must be at least 1".to_string()));
        }
        let gazetteer = gazetteer_from_index(&index);
        let abbreviations = index.abbreviations().clone();
        let extractor = Box::new(GazetteerExtractor::new(gazetteer, index.analyzer().clone()));
        Ok(CodingEngine {
            index,
            extractor,
            abbreviations,
            k,
        })
    }

    /// Load the index named by the config and apply its extractor and
    /// abbreviation overrides.
    pub fn from_config(cfg: &PipelineConfig) -> Result<Self, PipelineError> {
        cfg.validate()?;
        let index_path = cfg
            .index
            .as_ref()
            .ok_or_else(|| PipelineError::Config("no index path configured".to_string()))?;
        let index = crate::index::load_index(index_path)?;
        let mut engine = CodingEngine::new(index, cfg.k)?;
        if let Some(path) = &cfg.abbreviations {
            engine.abbreviations = load_abbreviations(path)?;
        }
        if let ExtractorSelection::External { command, args } = &cfg.extractor {
            engine.extractor = Box::new(ExternalExtractor::spawn(
                command,
                args,
                engine.index.analyzer().clone(),
            )?);
        }
        Ok(engine)
    }

    pub fn with_extractor(mut self, extractor: Box<dyn MentionExtractor>) -> Self {
        self.extractor = extractor;
        self
    }

    pub fn with_abbreviations(mut self, table: AbbreviationTable) -> Self {
        self.abbreviations = table;
        self
    }

    pub fn index(&self) -> &TermIndex {
        &self.index
    }

    pub fn abbreviations(&self) -> &AbbreviationTable {
        &self.abbreviations
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// Extract mentions from free text through the configured extractor.
    pub fn extract(&self, id: &str, text: &str) -> Result<Vec<MentionSpan>, PipelineError> {
        Ok(self.extractor.extract(id, text)?)
    }

    /// Rank codes for one mention string.
    pub fn link(&self, mention: &str, k: usize) -> Result<Vec<CodeCandidate>, PipelineError> {
        Ok(self.index.query(mention, &self.abbreviations, k)?)
    }

    /// Code one referral end to end. Empty text yields an empty result.
    pub fn code_referral(&self, referral: &Referral) -> Result<CodingResult, PipelineError> {
        self.code_referral_with_k(referral, self.k)
    }

    pub fn code_referral_with_k(
        &self,
        referral: &Referral,
        k: usize,
    ) -> Result<CodingResult, PipelineError> {
        let spans = self.extractor.extract(&referral.id, &referral.text)?;
        let mut mentions = Vec::with_capacity(spans.len());
        for span in spans {
            let candidates = match self.index.query(&span.surface, &self.abbreviations, k) {
                Ok(candidates) => candidates,
                // a span that normalizes to nothing links to nothing
                Err(IndexError::EmptyMention) => Vec::new(),
                Err(e) => return Err(e.into()),
            };
            mentions.push(MentionCoding { span, candidates });
        }

        let mut run = Vec::new();
        let mut seen = HashSet::new();
        for mention in &mentions {
            for candidate in &mention.candidates {
                if seen.insert(candidate.code.clone()) {
                    run.push(RunEntry {
                        code: candidate.code.clone(),
                        rank: run.len() as u32 + 1,
                        score: candidate.score,
                    });
                }
            }
        }

        Ok(CodingResult {
            id: referral.id.clone(),
            mentions,
            run,
        })
    }

    /// Code a JSONL batch of referrals, writing one JSON result per line
    /// in input order and, when requested, a trec run file. Malformed
    /// lines and duplicate ids are skipped and counted.
    pub fn code_batch(
        &self,
        input: &Path,
        output: &Path,
        run_path: Option<&Path>,
        run_tag: &str,
    ) -> Result<BatchSummary, PipelineError> {
        let reader = BufReader::new(File::open(input)?);
        let mut out = BufWriter::new(File::create(output)?);
        let mut run_out = match run_path {
            Some(p) => Some(BufWriter::new(File::create(p)?)),
            None => None,
        };

        let mut summary = BatchSummary::default();
        let mut seen_ids = HashSet::new();
        for line in reader.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let referral: Referral = match serde_json::from_str(&line) {
                Ok(r) => r,
                Err(_) => {
                    summary.skipped += 1;
                    continue;
                }
            };
            if !seen_ids.insert(referral.id.clone()) {
                summary.skipped += 1;
                continue;
            }
            let result = self.code_referral(&referral)?;
            summary.processed += 1;
            summary.mentions += result.mentions.len();
            if result.mentions.is_empty() {
                summary.zero_mention_referrals += 1;
            }
            if let Some(run_out) = run_out.as_mut() {
                for entry in &result.run {
                    writeln!(
                        run_out,
                        "{} Q0 {} {} {:.6} {}",
                        result.id, entry.code, entry.rank, entry.score, run_tag
                    )?;
                }
            }
            serde_json::to_writer(&mut out, &result)
                .map_err(|e| PipelineError::Config(format!("serialization failed: {e}")))?;
            out.write_all(b"\n")?;
        }
        out.flush()?;
        if let Some(mut run_out) = run_out {
            run_out.flush()?;
        }
        Ok(summary)
    }
}

/// Rebuild the extraction gazetteer from the phrases stored in an index
/// artifact, under the analyzer the index was built with.
pub fn gazetteer_from_index(index: &TermIndex) -> Gazetteer {
    let cfg = index.analyzer().clone();
    let mut gz = Gazetteer::default();
    for (code, canonical, synonyms) in index.doc_phrases() {
        gz.add_phrase(code, canonical, &cfg);
        for syn in synonyms {
            gz.add_phrase(code, syn, &cfg);
        }
    }
    gz
}

/// Convenience constructor used by tests and small tools: build index and
/// engine straight from a merged catalog.
pub fn engine_from_catalog(
    concepts: &[crate::terminology::ConceptEntry],
    cfg: &AnalyzerConfig,
    params: ScoringParams,
    table: AbbreviationTable,
    k: usize,
) -> Result<CodingEngine, PipelineError> {
    let index = crate::index::build_index(concepts, cfg, params)?.with_abbreviations(table);
    CodingEngine::new(index, k)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::terminology::{CodeId, ConceptEntry, SourceTag, Synonym};

    fn code(s: &str) -> CodeId {
        CodeId::parse(s).unwrap()
    }

    fn entry(c: &str, desc: &str, synonyms: &[&str]) -> ConceptEntry {
        ConceptEntry {
            code: code(c),
            canonical_description: desc.to_string(),
            source: SourceTag::Tabular,
            synonyms: synonyms
                .iter()
                .map(|s| Synonym {
                    phrase: s.to_string(),
                    source: SourceTag::Iris,
                })
                .collect(),
        }
    }

    fn toy_engine() -> CodingEngine {
        let catalog = vec![
            entry("K43.2", "hernia incisional sin obstruccion ni gangrena", &["hernia incisional"]),
            entry("E11.9", "diabetes mellitus tipo 2 sin complicaciones", &["dm 2", "diabetes mellitus tipo 2"]),
            entry("E66.2", "obesidad extrema con hipoventilacion alveolar", &["obesidad mórbida"]),
            entry("K02.2", "caries del cemento", &["caries de la raíz", "caries radicular"]),
        ];
        let mut table = AbbreviationTable::default();
        table.insert("dm", "diabetes mellitus");
        engine_from_catalog(&catalog, &AnalyzerConfig::default(), ScoringParams::default(), table, 5)
            .unwrap()
    }

    fn figure_text() -> &'static str {
        "paciente con hernia incisional con antecedentes de dm 2 y obesidad mórbida"
    }

    #[test]
    fn codes_the_overview_sentence_in_textual_order() {
        let engine = toy_engine();
        let referral = Referral {
            id: "r1".to_string(),
            text: figure_text().to_string(),
            specialty: None,
        };
        let result = engine.code_referral(&referral).unwrap();
        assert_eq!(result.mentions.len(), 3);
        let surfaces: Vec<&str> = result.mentions.iter().map(|m| m.span.surface.as_str()).collect();
        assert_eq!(surfaces, ["hernia incisional", "dm 2", "obesidad mórbida"]);
        for m in &result.mentions {
            assert!(!m.candidates.is_empty());
        }
        assert_eq!(result.run[0].code, code("K43.2"));
        assert_eq!(result.mentions[1].candidates[0].code, code("E11.9"));
        assert_eq!(result.mentions[2].candidates[0].code, code("E66.2"));
        // flattened ranks contiguous
        for (i, e) in result.run.iter().enumerate() {
            assert_eq!(e.rank as usize, i + 1);
        }
    }

    #[test]
    fn empty_text_yields_empty_result() {
        let engine = toy_engine();
        let referral = Referral {
            id: "r0".to_string(),
            text: String::new(),
            specialty: None,
        };
        let result = engine.code_referral(&referral).unwrap();
        assert!(result.mentions.is_empty());
        assert!(result.run.is_empty());
    }

    // Hand-trace of the dedup rule: both mentions rank E11.9 first, so the
    // flattened run keeps the earlier occurrence only.
    #[test]
    fn duplicate_codes_across_mentions_keep_first_occurrence() {
        let engine = toy_engine();
        let referral = Referral {
            id: "r2".to_string(),
            text: "dm 2 y diabetes mellitus tipo 2".to_string(),
            specialty: None,
        };
        let result = engine.code_referral(&referral).unwrap();
        assert_eq!(result.mentions.len(), 2);
        assert_eq!(result.mentions[0].candidates[0].code, code("E11.9"));
        assert_eq!(result.mentions[1].candidates[0].code, code("E11.9"));
        let e11_entries: Vec<&RunEntry> = result
            .run
            .iter()
            .filter(|e| e.code == code("E11.9"))
            .collect();
        assert_eq!(e11_entries.len(), 1);
        assert_eq!(e11_entries[0].rank, 1);
        for (i, e) in result.run.iter().enumerate() {
            assert_eq!(e.rank as usize, i + 1);
        }
    }

    #[test]
    fn referral_json_accepts_suspicion_and_confirmation() {
        let r: Referral =
            serde_json::from_str(r#"{"id":"x","suspicion":"asma","confirmation":"asma grave"}"#)
                .unwrap();
        assert_eq!(r.text, "asma | asma grave");
        let r: Referral = serde_json::from_str(r#"{"id":"x","suspicion":"asma"}"#).unwrap();
        assert_eq!(r.text, "asma");
        let r: Referral = serde_json::from_str(r#"{"id":"x","text":"directo"}"#).unwrap();
        assert_eq!(r.text, "directo");
        let r: Referral = serde_json::from_str(r#"{"id":"x"}"#).unwrap();
        assert_eq!(r.text, "");
    }

    #[test]
    fn batch_skips_malformed_lines_and_counts_them() {
        let engine = toy_engine();
        let dir = tempfile::tempdir().unwrap();
        let input = dir.path().join("in.jsonl");
        let output = dir.path().join("out.jsonl");
        let run = dir.path().join("system.run");
        std::fs::write(
            &input,
            concat!(
                "{\"id\":\"r1\",\"text\":\"caries del cemento\"}\n",
                "not json at all\n",
                "{\"id\":\"r2\",\"text\":\"dm 2\"}\n",
                "{\"id\":\"r2\",\"text\":\"duplicate id\"}\n",
                "{\"id\":\"r3\",\"text\":\"sin hallazgos\"}\n",
            ),
        )
        .unwrap();

        let summary = engine
            .code_batch(&input, &output, Some(&run), "medlinker")
            .unwrap();
        assert_eq!(summary.processed, 3);
        assert_eq!(summary.skipped, 2);
        assert_eq!(summary.zero_mention_referrals, 1);
        assert_eq!(summary.mentions, 2);

        let out_lines: Vec<String> = std::fs::read_to_string(&output)
            .unwrap()
            .lines()
            .map(String::from)
            .collect();
        assert_eq!(out_lines.len(), 3);
        let first: CodingResult = serde_json::from_str(&out_lines[0]).unwrap();
        assert_eq!(first.id, "r1");
        assert_eq!(first.run[0].code, code("K02.2"));

        let run_text = std::fs::read_to_string(&run).unwrap();
        assert!(run_text.lines().all(|l| l.split_whitespace().count() == 6));
        assert!(run_text.contains("r1 Q0 K02.2 1"));
        // r3 had no mentions: no run lines
        assert!(!run_text.contains("r3 "));
    }

    #[test]
    fn batch_reruns_are_byte_identical() {
        let engine = toy_engine();
        let dir = tempfile::tempdir().unwrap();
        let input = dir.path().join("in.jsonl");
        std::fs::write(
            &input,
            concat!(
                "{\"id\":\"a\",\"text\":\"caries radicular\"}\n",
                "{\"id\":\"b\",\"text\":\"paciente con hernia incisional y dm 2\"}\n",
            ),
        )
        .unwrap();
        let out1 = dir.path().join("out1.jsonl");
        let out2 = dir.path().join("out2.jsonl");
        let run1 = dir.path().join("run1.txt");
        let run2 = dir.path().join("run2.txt");
        engine.code_batch(&input, &out1, Some(&run1), "t").unwrap();
        engine.code_batch(&input, &out2, Some(&run2), "t").unwrap();
        assert_eq!(std::fs::read(&out1).unwrap(), std::fs::read(&out2).unwrap());
        assert_eq!(std::fs::read(&run1).unwrap(), std::fs::read(&run2).unwrap());
    }

    #[test]
    fn batch_empty_input_produces_empty_outputs() {
        let engine = toy_engine();
        let dir = tempfile::tempdir().unwrap();
        let input = dir.path().join("in.jsonl");
        std::fs::write(&input, "").unwrap();
        let output = dir.path().join("out.jsonl");
        let run = dir.path().join("run.txt");
        let summary = engine.code_batch(&input, &output, Some(&run), "t").unwrap();
        assert_eq!(summary, BatchSummary::default());
        assert!(std::fs::read_to_string(&output).unwrap().is_empty());
        assert!(std::fs::read_to_string(&run).unwrap().is_empty());
    }

    #[test]
    fn config_validation_rejects_bad_k_and_missing_paths() {
        let cfg = PipelineConfig {
            k: 0,
            ..PipelineConfig::default()
        };
        assert!(matches!(cfg.validate(), Err(PipelineError::Config(_))));
        let cfg = PipelineConfig {
            index: Some(PathBuf::from("/definitely/not/here.tidx")),
            ..PipelineConfig::default()
        };
        assert!(matches!(cfg.validate(), Err(PipelineError::Config(_))));
    }

    #[test]
    fn config_json_round_trip() {
        let json = r#"{"k":3,"extractor":{"external":{"command":"python3","args":["x.py"]}}}"#;
        let cfg: PipelineConfig = serde_json::from_str(json).unwrap();
        assert_eq!(cfg.k, 3);
        assert!(matches!(cfg.extractor, ExtractorSelection::External { .. }));
        let default: PipelineConfig = serde_json::from_str("{}").unwrap();
        assert_eq!(default.k, 5);
        assert_eq!(default.extractor, ExtractorSelection::Gazetteer);
    }
}

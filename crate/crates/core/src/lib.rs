//! Two-step disease coding for Spanish clinical free text: extract
//! disease mentions, then assign ranked ICD-10 codes to each mention
//! through a synonym-enriched terminology index. Ships the terminology
//! loaders, the analyzer, the gazetteer extractor with its plug-in seam,
//! the embedded BM25 index, the MAP evaluation harness, and the batch
//! pipeline the CLI and service are built on.

pub mod eval;
pub mod extractor;
pub mod index;
pub mod pipeline;
pub mod terminology;
pub mod textnorm;

pub use eval::{
    agreement_report, average_precision, coder_agreement, mean_average_precision, per_group_map,
    AgreementReport, EvalError, EvalLevel, EvalReport, Qrels, RunEntry, RunFile,
};
pub use extractor::{
    build_gazetteer, extract_mentions, spans_from_bio, BioLabel, ExtractError, ExternalExtractor,
    Gazetteer, GazetteerExtractor, MentionExtractor, MentionSpan,
};
pub use index::{
    build_index, load_index, save_index, CodeCandidate, Field, IndexError, Manifest, ScoringParams,
    TermIndex,
};
pub use pipeline::{
    gazetteer_from_index, BatchSummary, CodingEngine, CodingResult, ExtractorSelection,
    MentionCoding, PipelineConfig, PipelineError, Referral,
};
pub use terminology::{
    load_abbreviations, load_concepts, merge_sources, AbbreviationTable, CodeId, ConceptEntry,
    SourceTag, Synonym, TerminologyError,
};
pub use textnorm::{expand_abbreviations, normalize, tokenize, AnalyzerConfig, Token};

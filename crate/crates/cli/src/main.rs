//! medlinker command line: build the terminology index, code referral
//! batches, evaluate runs against gold codes, score coder agreement, and
//! serve the HTTP endpoints.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error.

use std::path::PathBuf;
use std::process::ExitCode;
use std::str::FromStr;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand, ValueEnum};

use medlinker_cli::config::{apply_overrides, load_env_config};
use medlinker_cli::service;
use medlinker_core::eval::{read_groups, read_qrels, read_run};
use medlinker_core::{
    agreement_report, build_index, load_abbreviations, load_concepts, mean_average_precision,
    merge_sources, save_index, AbbreviationTable, CodingEngine, ConceptEntry, EvalLevel, SourceTag,
};

#[derive(Parser)]
#[command(
    name = "medlinker",
    version,
    about = "Disease coding for Spanish clinical free text: extract mentions, rank ICD-10 codes"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build the index artifact from concept catalogs and an abbreviation table
    BuildIndex {
        /// Concept files, optionally tagged as TAG=path (TABULAR, ALPHA_INDEX,
        /// IRIS, UMLS_ES, ABBREV_LIST, USER); untagged files count as TABULAR
        #[arg(long, num_args = 1.., required = true)]
        concepts: Vec<String>,
        /// Abbreviation TSV embedded into the artifact
        #[arg(long)]
        abbrev: Option<PathBuf>,
        /// Output index path
        #[arg(long)]
        out: PathBuf,
    },
    /// Code a JSONL batch of referrals
    Code {
        #[arg(long)]
        index: Option<PathBuf>,
        #[arg(long)]
        input: PathBuf,
        /// JSONL coding results, one object per input referral
        #[arg(long)]
        output: PathBuf,
        /// trec run file mirroring the flattened rankings
        #[arg(long)]
        run: PathBuf,
        /// Candidates per mention
        #[arg(long)]
        k: Option<usize>,
    },
    /// Score a run file against gold judgments
    Evaluate {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        qrels: PathBuf,
        #[arg(long, value_enum, default_value_t = LevelArg::Subcategory)]
        level: LevelArg,
        /// Specialty labels: TSV qid<TAB>specialty
        #[arg(long)]
        groups: Option<PathBuf>,
        /// Write the full report as JSON
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Agreement between two coders' qrels
    Agreement {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        #[arg(long, value_enum, default_value_t = LevelArg::Subcategory)]
        level: LevelArg,
    },
    /// Serve the extraction and linking endpoints over HTTP
    Serve {
        #[arg(long)]
        index: Option<PathBuf>,
        #[arg(long, default_value_t = 8080)]
        port: u16,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum LevelArg {
    Category,
    Subcategory,
}

impl From<LevelArg> for EvalLevel {
    fn from(level: LevelArg) -> Self {
        match level {
            LevelArg::Category => EvalLevel::Category,
            LevelArg::Subcategory => EvalLevel::Subcategory,
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            eprint!("{e}");
            return ExitCode::from(1);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::BuildIndex { concepts, abbrev, out } => cmd_build_index(concepts, abbrev, out),
        Command::Code { index, input, output, run, k } => cmd_code(index, input, output, run, k),
        Command::Evaluate { run, qrels, level, groups, report } => {
            cmd_evaluate(run, qrels, level.into(), groups, report)
        }
        Command::Agreement { a, b, level } => cmd_agreement(a, b, level.into()),
        Command::Serve { index, port } => {
            let cfg = apply_overrides(load_env_config()?, index, None);
            tokio::runtime::Runtime::new()?.block_on(service::serve(cfg, port))
        }
    }
}

fn parse_concept_arg(arg: &str) -> (SourceTag, PathBuf) {
    if let Some((tag, path)) = arg.split_once('=') {
        if let Ok(tag) = SourceTag::from_str(tag) {
            return (tag, PathBuf::from(path));
        }
    }
    (SourceTag::Tabular, PathBuf::from(arg))
}

fn cmd_build_index(
    concepts: Vec<String>,
    abbrev: Option<PathBuf>,
    out: PathBuf,
) -> anyhow::Result<()> {
    let cfg = load_env_config()?;
    let mut catalogs: Vec<Vec<ConceptEntry>> = Vec::new();
    for arg in &concepts {
        let (tag, path) = parse_concept_arg(arg);
        let catalog = load_concepts(&path, tag)?;
        println!("loaded {} concepts from {} [{}]", catalog.len(), path.display(), tag);
        catalogs.push(catalog);
    }
    let merged = merge_sources(&catalogs);
    let table = match &abbrev {
        Some(path) => load_abbreviations(path)?,
        None => AbbreviationTable::default(),
    };
    let synonym_count: usize = merged.iter().map(|e| e.synonyms.len()).sum();
    let index = build_index(&merged, &cfg.analyzer, cfg.params)?.with_abbreviations(table);
    save_index(&index, &out)?;
    let manifest = index.manifest();
    println!(
        "wrote {}: {} codes, {} synonyms, {} terms, {} abbreviations",
        out.display(),
        manifest.stats.doc_count,
        synonym_count,
        manifest.stats.term_count,
        index.abbreviations().len()
    );
    Ok(())
}

fn cmd_code(
    index: Option<PathBuf>,
    input: PathBuf,
    output: PathBuf,
    run: PathBuf,
    k: Option<usize>,
) -> anyhow::Result<()> {
    let cfg = apply_overrides(load_env_config()?, index, k);
    let engine = CodingEngine::from_config(&cfg)?;
    let summary = engine.code_batch(&input, &output, Some(&run), "medlinker")?;
    println!(
        "coded {} referrals ({} mentions, {} without mentions, {} lines skipped)",
        summary.processed, summary.mentions, summary.zero_mention_referrals, summary.skipped
    );
    Ok(())
}

fn cmd_evaluate(
    run_path: PathBuf,
    qrels_path: PathBuf,
    level: EvalLevel,
    groups: Option<PathBuf>,
    report_path: Option<PathBuf>,
) -> anyhow::Result<()> {
    let run = read_run(&run_path)?;
    let mut qrels = read_qrels(&qrels_path)?;
    if let Some(groups_path) = &groups {
        read_groups(groups_path, &mut qrels)?;
    }
    let report = mean_average_precision(&run, &qrels, level);
    println!("MAP ({:?}): {:.4} over {} referrals", report.level, report.map, report.query_count);
    if groups.is_some() {
        for (group, map) in &report.per_group {
            println!("  {group}: {map:.4}");
        }
    }
    if let Some(path) = report_path {
        std::fs::write(&path, serde_json::to_string_pretty(&report)?)?;
        println!("report written to {}", path.display());
    }
    Ok(())
}

fn cmd_agreement(a: PathBuf, b: PathBuf, level: EvalLevel) -> anyhow::Result<()> {
    let qrels_a = read_qrels(&a)?;
    let qrels_b = read_qrels(&b)?;
    let report = agreement_report(&qrels_a, &qrels_b, level);
    println!("agreement a-vs-b: {:.4}", report.a_vs_b);
    println!("agreement b-vs-a: {:.4}", report.b_vs_a);
    println!("symmetric mean:   {:.4}", report.symmetric_mean);
    Ok(())
}

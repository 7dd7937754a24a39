//! MAP evaluation harness over trec-style qrels and run files.
//!
//! Average precision per referral, mean over all judged referrals
//! (missing predictions score zero), category/subcategory truncation
//! levels, per-specialty breakdowns, and coder-agreement scoring.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::terminology::CodeId;

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("empty relevant set")]
    EmptyRelevantSet,
    #[error("{path}:{line}: malformed line: {reason}")]
    MalformedLine {
        path: PathBuf,
        line: usize,
        reason: String,
    },
    #[error("invalid run for {id:?}: {reason}")]
    InvalidRun { id: String, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Evaluation granularity: codes compared verbatim or truncated to their
/// three-character category.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum EvalLevel {
    Category,
    Subcategory,
}

/// Gold codes per referral id, with an optional specialty label each.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Qrels {
    judgments: BTreeMap<String, BTreeSet<CodeId>>,
    groups: BTreeMap<String, String>,
}

impl Qrels {
    pub fn insert(&mut self, id: &str, code: CodeId) {
        self.judgments.entry(id.to_string()).or_default().insert(code);
    }

    pub fn set_group(&mut self, id: &str, group: &str) {
        self.groups.insert(id.to_string(), group.to_string());
    }

    pub fn gold(&self, id: &str) -> Option<&BTreeSet<CodeId>> {
        self.judgments.get(id)
    }

    pub fn ids(&self) -> impl Iterator<Item = &String> {
        self.judgments.keys()
    }

    pub fn group_of(&self, id: &str) -> Option<&str> {
        self.groups.get(id).map(|s| s.as_str())
    }

    pub fn len(&self) -> usize {
        self.judgments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.judgments.is_empty()
    }
}

/// One ranked output entry for a referral.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunEntry {
    pub code: CodeId,
    pub rank: u32,
    pub score: f64,
}

/// Ranked system output per referral id. Ranks are contiguous from 1 and
/// codes never repeat within an id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunFile {
    entries: BTreeMap<String, Vec<RunEntry>>,
}

impl RunFile {
    /// Insert one referral's ranked entries, validating the invariants.
    pub fn insert(&mut self, id: &str, mut entries: Vec<RunEntry>) -> Result<(), EvalError> {
        entries.sort_by_key(|e| e.rank);
        let mut seen = BTreeSet::new();
        for (i, e) in entries.iter().enumerate() {
            if e.rank as usize != i + 1 {
                return Err(EvalError::InvalidRun {
                    id: id.to_string(),
                    reason: format!("ranks not contiguous from 1 (found {} at position {})", e.rank, i + 1),
                });
            }
            if !seen.insert(e.code.clone()) {
                return Err(EvalError::InvalidRun {
                    id: id.to_string(),
                    reason: format!("duplicate code {}", e.code),
                });
            }
        }
        self.entries.insert(id.to_string(), entries);
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<&[RunEntry]> {
        self.entries.get(id).map(|v| v.as_slice())
    }

    pub fn ids(&self) -> impl Iterator<Item = &String> {
        self.entries.keys()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Evaluation report: the mean, the per-referral APs it averages, and the
/// per-specialty breakdown.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub map: f64,
    pub level: EvalLevel,
    pub per_query: BTreeMap<String, f64>,
    pub per_group: BTreeMap<String, f64>,
    pub query_count: usize,
}

/// Average precision of a ranked list against a relevant set:
/// `Σ_k P(k)·rel(k) / |relevant|` with `P(k)` the precision among the
/// first k items. The ranked list must not contain duplicates.
pub fn average_precision(ranked: &[CodeId], relevant: &BTreeSet<CodeId>) -> Result<f64, EvalError> {
    if relevant.is_empty() {
        return Err(EvalError::EmptyRelevantSet);
    }
    let mut hits = 0usize;
    let mut sum = 0.0f64;
    for (i, code) in ranked.iter().enumerate() {
        if relevant.contains(code) {
            hits += 1;
            sum += hits as f64 / (i + 1) as f64;
        }
    }
    Ok(sum / relevant.len() as f64)
}

fn project_run(entries: &[RunEntry], level: EvalLevel) -> Vec<CodeId> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for e in entries {
        let code = match level {
            EvalLevel::Subcategory => e.code.clone(),
            EvalLevel::Category => e.code.truncate_to_category(),
        };
        if seen.insert(code.clone()) {
            out.push(code);
        }
    }
    out
}

fn project_gold(gold: &BTreeSet<CodeId>, level: EvalLevel) -> BTreeSet<CodeId> {
    match level {
        EvalLevel::Subcategory => gold.clone(),
        EvalLevel::Category => gold.iter().map(|c| c.truncate_to_category()).collect(),
    }
}

/// Mean average precision over every judged referral. At the category
/// level both sides are truncated first; truncated run duplicates keep
/// their best rank. Referrals absent from the run contribute zero.
pub fn mean_average_precision(run: &RunFile, qrels: &Qrels, level: EvalLevel) -> EvalReport {
    let mut per_query = BTreeMap::new();
    for (id, gold) in &qrels.judgments {
        let gold = project_gold(gold, level);
        let ranked = run
            .entries
            .get(id)
            .map(|entries| project_run(entries, level))
            .unwrap_or_default();
        // judged ids always have a non-empty gold set
        let ap = average_precision(&ranked, &gold).unwrap_or(0.0);
        per_query.insert(id.clone(), ap);
    }
    let query_count = per_query.len();
    let map = if query_count == 0 {
        0.0
    } else {
        per_query.values().sum::<f64>() / query_count as f64
    };

    let mut groups: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for (id, ap) in &per_query {
        let group = qrels.group_of(id).unwrap_or("UNSPECIFIED");
        groups.entry(group.to_string()).or_default().push(*ap);
    }
    let per_group = groups
        .into_iter()
        .map(|(g, aps)| {
            let mean = aps.iter().sum::<f64>() / aps.len() as f64;
            (g, mean)
        })
        .collect();

    EvalReport {
        map,
        level,
        per_query,
        per_group,
        query_count,
    }
}

/// MAP per specialty group, computed independently over each group's
/// referrals; referrals without a label fall under `UNSPECIFIED` and
/// groups with no judged referrals are omitted.
pub fn per_group_map(run: &RunFile, qrels: &Qrels, level: EvalLevel) -> BTreeMap<String, f64> {
    mean_average_precision(run, qrels, level).per_group
}

/// Agreement of coder A scored against coder B: A's code sets become a
/// run ranked by ascending canonical code string, evaluated over the
/// union of both coders' referral ids (a referral missing on either side
/// scores zero).
pub fn coder_agreement(a: &Qrels, b: &Qrels, level: EvalLevel) -> f64 {
    let ids: BTreeSet<&String> = a.judgments.keys().chain(b.judgments.keys()).collect();
    if ids.is_empty() {
        return 0.0;
    }
    let mut sum = 0.0;
    for id in &ids {
        let (Some(a_gold), Some(b_gold)) = (a.judgments.get(*id), b.judgments.get(*id)) else {
            continue; // contributes zero
        };
        let entries: Vec<RunEntry> = a_gold
            .iter()
            .enumerate()
            .map(|(i, code)| RunEntry {
                code: code.clone(),
                rank: i as u32 + 1,
                score: 0.0,
            })
            .collect();
        let ranked = project_run(&entries, level);
        let gold = project_gold(b_gold, level);
        sum += average_precision(&ranked, &gold).unwrap_or(0.0);
    }
    sum / ids.len() as f64
}

/// Both agreement directions plus their mean.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgreementReport {
    pub a_vs_b: f64,
    pub b_vs_a: f64,
    pub symmetric_mean: f64,
}

pub fn agreement_report(a: &Qrels, b: &Qrels, level: EvalLevel) -> AgreementReport {
    let a_vs_b = coder_agreement(a, b, level);
    let b_vs_a = coder_agreement(b, a, level);
    AgreementReport {
        a_vs_b,
        b_vs_a,
        symmetric_mean: (a_vs_b + b_vs_a) / 2.0,
    }
}

// ---------------------------------------------------------------------------
// trec exchange formats

/// Read a trec qrels file: `qid 0 code rel`, whitespace separated, one
/// judgment per line. Lines with rel 0 are ignored.
pub fn read_qrels(path: &Path) -> Result<Qrels, EvalError> {
    let reader = BufReader::new(File::open(path)?);
    let mut qrels = Qrels::default();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let malformed = |reason: String| EvalError::MalformedLine {
            path: path.to_path_buf(),
            line: idx + 1,
            reason,
        };
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 4 {
            return Err(malformed(format!("expected 4 fields, found {}", fields.len())));
        }
        let rel: i32 = fields[3]
            .parse()
            .map_err(|_| malformed(format!("bad relevance {:?}", fields[3])))?;
        if rel <= 0 {
            continue;
        }
        let code = CodeId::parse(fields[2]).map_err(|e| malformed(e.to_string()))?;
        qrels.insert(fields[0], code);
    }
    Ok(qrels)
}

/// Read a trec run file: `qid Q0 code rank score tag`. Per-id entries are
/// sorted by rank and validated for contiguity and duplicate codes.
pub fn read_run(path: &Path) -> Result<RunFile, EvalError> {
    let reader = BufReader::new(File::open(path)?);
    let mut raw: BTreeMap<String, Vec<RunEntry>> = BTreeMap::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let malformed = |reason: String| EvalError::MalformedLine {
            path: path.to_path_buf(),
            line: idx + 1,
            reason,
        };
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 6 {
            return Err(malformed(format!("expected 6 fields, found {}", fields.len())));
        }
        let code = CodeId::parse(fields[2]).map_err(|e| malformed(e.to_string()))?;
        let rank: u32 = fields[3]
            .parse()
            .map_err(|_| malformed(format!("bad rank {:?}", fields[3])))?;
        let score: f64 = fields[4]
            .parse()
            .map_err(|_| malformed(format!("bad score {:?}", fields[4])))?;
        raw.entry(fields[0].to_string())
            .or_default()
            .push(RunEntry { code, rank, score });
    }
    let mut run = RunFile::default();
    for (id, entries) in raw {
        run.insert(&id, entries)?;
    }
    Ok(run)
}

/// Read specialty labels: TSV `qid<TAB>specialty`, merged into the qrels.
pub fn read_groups(path: &Path, qrels: &mut Qrels) -> Result<(), EvalError> {
    let reader = BufReader::new(File::open(path)?);
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((id, group)) = line.split_once('\t') else {
            return Err(EvalError::MalformedLine {
                path: path.to_path_buf(),
                line: idx + 1,
                reason: "expected qid<TAB>specialty".to_string(),
            });
        };
        qrels.set_group(id.trim(), group.trim());
    }
    Ok(())
}

/// Write a run file in trec format with the given tag.
pub fn write_run<W: Write>(run: &RunFile, tag: &str, out: &mut W) -> Result<(), EvalError> {
    for (id, entries) in &run.entries {
        for e in entries {
            writeln!(out, "{} Q0 {} {} {:.6} {}", id, e.code, e.rank, e.score, tag)?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn code(s: &str) -> CodeId {
        CodeId::parse(s).unwrap()
    }

    fn codes(list: &[&str]) -> Vec<CodeId> {
        list.iter().map(|s| code(s)).collect()
    }

    fn code_set(list: &[&str]) -> BTreeSet<CodeId> {
        list.iter().map(|s| code(s)).collect()
    }

    #[test]
    fn ap_perfect_single_prediction() {
        let ap = average_precision(&codes(&["A10"]), &code_set(&["A10"])).unwrap();
        assert_eq!(ap, 1.0);
    }

    // Worked by hand: the single relevant code sits at rank 2, so
    // P(2) = 1/2 and AP = 0.5.
    #[test]
    fn ap_relevant_at_rank_two() {
        let ap = average_precision(&codes(&["B20", "A10"]), &code_set(&["A10"])).unwrap();
        assert!((ap - 0.5).abs() < 1e-12);
    }

    // Worked by hand: hits at ranks 1 and 3, AP = (1/1 + 2/3) / 2.
    #[test]
    fn ap_two_relevant_of_three() {
        let ap = average_precision(&codes(&["A10", "B20", "C30"]), &code_set(&["A10", "C30"])).unwrap();
        assert!((ap - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn ap_empty_relevant_set_is_an_error() {
        assert!(matches!(
            average_precision(&codes(&["A10"]), &BTreeSet::new()),
            Err(EvalError::EmptyRelevantSet)
        ));
    }

    fn singleton_run(pairs: &[(&str, &[&str])]) -> RunFile {
        let mut run = RunFile::default();
        for (id, ranked) in pairs {
            let entries: Vec<RunEntry> = ranked
                .iter()
                .enumerate()
                .map(|(i, c)| RunEntry {
                    code: code(c),
                    rank: i as u32 + 1,
                    score: 1.0 / (i as f64 + 1.0),
                })
                .collect();
            run.insert(id, entries).unwrap();
        }
        run
    }

    fn qrels_of(pairs: &[(&str, &[&str])]) -> Qrels {
        let mut q = Qrels::default();
        for (id, gold) in pairs {
            for c in *gold {
                q.insert(id, code(c));
            }
        }
        q
    }

    #[test]
    fn map_perfect_run_is_one() {
        let run = singleton_run(&[("r1", &["A10"]), ("r2", &["B20"]), ("r3", &["C30"])]);
        let qrels = qrels_of(&[("r1", &["A10"]), ("r2", &["B20"]), ("r3", &["C30"])]);
        let report = mean_average_precision(&run, &qrels, EvalLevel::Subcategory);
        assert_eq!(report.map, 1.0);
        assert_eq!(report.query_count, 3);
    }

    #[test]
    fn missing_referral_contributes_zero() {
        let run = singleton_run(&[("r1", &["A10"])]);
        let qrels = qrels_of(&[("r1", &["A10"]), ("r2", &["B20"])]);
        let report = mean_average_precision(&run, &qrels, EvalLevel::Subcategory);
        assert!((report.map - 0.5).abs() < 1e-12);
        assert_eq!(report.per_query["r2"], 0.0);
    }

    #[test]
    fn category_level_truncates_and_dedups_keeping_best_rank() {
        // run: [A11.1, A11.2, B22.2]; gold: {A11.2}
        let run = singleton_run(&[("r1", &["A11.1", "A11.2", "B22.2"])]);
        let qrels = qrels_of(&[("r1", &["A11.2"])]);
        let sub = mean_average_precision(&run, &qrels, EvalLevel::Subcategory);
        assert!((sub.map - 0.5).abs() < 1e-12);
        let cat = mean_average_precision(&run, &qrels, EvalLevel::Category);
        assert_eq!(cat.map, 1.0);
    }

    // Brute force over all run permutations of a 3-code fixture with a
    // single gold code: category MAP never drops below subcategory MAP.
    #[test]
    fn category_map_dominates_subcategory_on_single_gold() {
        let pool = ["K02.2", "K02.9", "J45.1"];
        let perms: [[usize; 3]; 6] = [
            [0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0],
        ];
        for gold in &pool {
            for perm in &perms {
                let ranked: Vec<&str> = perm.iter().map(|&i| pool[i]).collect();
                let run = singleton_run(&[("r1", &ranked)]);
                let qrels = qrels_of(&[("r1", &[gold])]);
                let sub = mean_average_precision(&run, &qrels, EvalLevel::Subcategory).map;
                let cat = mean_average_precision(&run, &qrels, EvalLevel::Category).map;
                assert!(
                    cat >= sub - 1e-12,
                    "gold {gold}, ranked {ranked:?}: category {cat} < subcategory {sub}"
                );
            }
        }
    }

    #[test]
    fn per_group_single_group_equals_overall() {
        let run = singleton_run(&[("r1", &["A10"]), ("r2", &["B20", "B21"])]);
        let mut qrels = qrels_of(&[("r1", &["A10"]), ("r2", &["B21"])]);
        qrels.set_group("r1", "Dermatology");
        qrels.set_group("r2", "Dermatology");
        let report = mean_average_precision(&run, &qrels, EvalLevel::Subcategory);
        assert_eq!(report.per_group.len(), 1);
        assert!((report.per_group["Dermatology"] - report.map).abs() < 1e-12);
    }

    #[test]
    fn per_group_perfect_group_scores_one() {
        let run = singleton_run(&[("r1", &["A10"]), ("r2", &["Z99", "B20"])]);
        let mut qrels = qrels_of(&[("r1", &["A10"]), ("r2", &["B20"])]);
        qrels.set_group("r1", "Orthodontics");
        qrels.set_group("r2", "Neurology");
        let groups = per_group_map(&run, &qrels, EvalLevel::Subcategory);
        assert_eq!(groups["Orthodontics"], 1.0);
        assert!((groups["Neurology"] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn per_group_unlabeled_fall_under_unspecified_and_empty_groups_are_absent() {
        let run = singleton_run(&[("r1", &["A10"])]);
        let mut qrels = qrels_of(&[("r1", &["A10"])]);
        // label an id that has no judgments: its group must not appear
        qrels.set_group("ghost", "Hematology");
        let groups = per_group_map(&run, &qrels, EvalLevel::Subcategory);
        assert_eq!(groups.len(), 1);
        assert_eq!(groups["UNSPECIFIED"], 1.0);
    }

    #[test]
    fn agreement_identical_coders_is_one() {
        let q = qrels_of(&[("r1", &["A10", "B20"]), ("r2", &["C30"])]);
        assert_eq!(coder_agreement(&q, &q, EvalLevel::Subcategory), 1.0);
        assert_eq!(coder_agreement(&q, &q, EvalLevel::Category), 1.0);
    }

    #[test]
    fn agreement_disjoint_coders_is_zero() {
        let a = qrels_of(&[("r1", &["A10"]), ("r2", &["B20"])]);
        let b = qrels_of(&[("r1", &["C30"]), ("r2", &["D40"])]);
        assert_eq!(coder_agreement(&a, &b, EvalLevel::Subcategory), 0.0);
    }

    // Hand evaluation of the truncation semantics: K02.2 vs K02.9 differ
    // at subcategory level but collapse to K02 at category level.
    #[test]
    fn agreement_truncation_fixture() {
        let a = qrels_of(&[("r1", &["K02.2"])]);
        let b = qrels_of(&[("r1", &["K02.9"])]);
        assert_eq!(coder_agreement(&a, &b, EvalLevel::Subcategory), 0.0);
        assert_eq!(coder_agreement(&a, &b, EvalLevel::Category), 1.0);
        let report = agreement_report(&a, &b, EvalLevel::Category);
        assert_eq!(report.symmetric_mean, 1.0);
    }

    #[test]
    fn agreement_counts_one_sided_ids_as_zero() {
        let a = qrels_of(&[("r1", &["A10"]), ("only-a", &["B20"])]);
        let b = qrels_of(&[("r1", &["A10"])]);
        // union is {r1, only-a}: r1 scores 1, only-a scores 0
        assert!((coder_agreement(&a, &b, EvalLevel::Subcategory) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn run_file_rejects_gaps_and_duplicates() {
        let mut run = RunFile::default();
        let gap = vec![
            RunEntry { code: code("A10"), rank: 1, score: 2.0 },
            RunEntry { code: code("B20"), rank: 3, score: 1.0 },
        ];
        assert!(matches!(run.insert("r1", gap), Err(EvalError::InvalidRun { .. })));
        let dup = vec![
            RunEntry { code: code("A10"), rank: 1, score: 2.0 },
            RunEntry { code: code("A10"), rank: 2, score: 1.0 },
        ];
        assert!(matches!(run.insert("r1", dup), Err(EvalError::InvalidRun { .. })));
    }

    #[test]
    fn trec_files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let qrels_path = dir.path().join("gold.qrels");
        let run_path = dir.path().join("system.run");
        let groups_path = dir.path().join("groups.tsv");

        let mut f = File::create(&qrels_path).unwrap();
        writeln!(f, "r1 0 K02.2 1").unwrap();
        writeln!(f, "r1 0 J45.9 1").unwrap();
        writeln!(f, "r2 0 E11.9 1").unwrap();
        writeln!(f, "r3 0 A10.1 0").unwrap(); // rel 0: ignored

        let mut f = File::create(&run_path).unwrap();
        writeln!(f, "r1 Q0 K02.2 1 2.500000 medlinker").unwrap();
        writeln!(f, "r1 Q0 K02.9 2 1.250000 medlinker").unwrap();
        writeln!(f, "r2 Q0 E11.9 1 3.000000 medlinker").unwrap();

        let mut f = File::create(&groups_path).unwrap();
        writeln!(f, "r1\tOdontology").unwrap();
        writeln!(f, "r2\tDiabetology").unwrap();

        let mut qrels = read_qrels(&qrels_path).unwrap();
        assert_eq!(qrels.len(), 2);
        read_groups(&groups_path, &mut qrels).unwrap();
        let run = read_run(&run_path).unwrap();
        assert_eq!(run.len(), 2);

        let report = mean_average_precision(&run, &qrels, EvalLevel::Subcategory);
        // r1: gold {K02.2, J45.9}, hits at rank 1 only → (1/1)/2 = 0.5
        assert!((report.per_query["r1"] - 0.5).abs() < 1e-12);
        assert_eq!(report.per_query["r2"], 1.0);
        assert!((report.map - 0.75).abs() < 1e-12);
        assert_eq!(report.per_group["Odontology"], 0.5);

        let mut buf = Vec::new();
        write_run(&run, "medlinker", &mut buf).unwrap();
        let reparsed_path = dir.path().join("rewritten.run");
        std::fs::write(&reparsed_path, &buf).unwrap();
        assert_eq!(read_run(&reparsed_path).unwrap(), run);
    }

    #[test]
    fn trec_parse_errors_carry_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.qrels");
        std::fs::write(&p, "r1 0 K02.2 1\nr2 0 NOPE 1\n").unwrap();
        assert!(matches!(
            read_qrels(&p),
            Err(EvalError::MalformedLine { line: 2, .. })
        ));
        let p = dir.path().join("bad.run");
        std::fs::write(&p, "r1 Q0 K02.2 1 1.0\n").unwrap();
        assert!(matches!(
            read_run(&p),
            Err(EvalError::MalformedLine { line: 1, .. })
        ));
    }

    prop_compose! {
        fn arb_code()(letter in proptest::char::range('A', 'E'), d1 in 0u8..3, d2 in 0u8..3, sub in proptest::option::of(0u8..4)) -> CodeId {
            let mut s = format!("{letter}{d1}{d2}");
            if let Some(d) = sub {
                s.push('.');
                s.push_str(&d.to_string());
            }
            code(&s)
        }
    }

    proptest! {
        #[test]
        fn ap_is_bounded(ranked in proptest::collection::vec(arb_code(), 0..6), relevant in proptest::collection::btree_set(arb_code(), 1..4)) {
            let mut deduped = Vec::new();
            for c in ranked {
                if !deduped.contains(&c) {
                    deduped.push(c);
                }
            }
            let ap = average_precision(&deduped, &relevant).unwrap();
            prop_assert!((0.0..=1.0).contains(&ap));
        }

        #[test]
        fn appending_non_relevant_after_last_hit_keeps_ap(
            ranked in proptest::collection::vec(arb_code(), 0..6),
            relevant in proptest::collection::btree_set(arb_code(), 1..4),
            tail_n in 1usize..4,
        ) {
            let mut deduped = Vec::new();
            for c in ranked {
                if !deduped.contains(&c) {
                    deduped.push(c);
                }
            }
            let base = average_precision(&deduped, &relevant).unwrap();
            // the pool is A–E, so Z-codes are guaranteed non-relevant
            let mut extended = deduped;
            for i in 0..tail_n {
                extended.push(code(&format!("Z9{i}")));
            }
            let after = average_precision(&extended, &relevant).unwrap();
            prop_assert_eq!(base, after);
        }

        #[test]
        fn ap_is_one_iff_relevant_first_and_complete(
            relevant in proptest::collection::btree_set(arb_code(), 1..4),
            distractor in arb_code(),
        ) {
            prop_assume!(!relevant.contains(&distractor));
            // all relevant first: AP = 1
            let mut perfect: Vec<CodeId> = relevant.iter().cloned().collect();
            perfect.push(distractor.clone());
            prop_assert_eq!(average_precision(&perfect, &relevant).unwrap(), 1.0);
            // distractor ahead of the relevant block: AP < 1
            let mut imperfect = vec![distractor];
            imperfect.extend(relevant.iter().cloned());
            prop_assert!(average_precision(&imperfect, &relevant).unwrap() < 1.0);
        }

        // MAP is invariant under renaming of referral ids.
        #[test]
        fn map_invariant_under_id_renaming(seed in 0u64..100) {
            let ids = ["r1", "r2", "r3"];
            let renamed = ["x9", "q5", "m7"];
            let pool = ["A10.1", "B20.2", "C30.3"];
            let mut run_a = RunFile::default();
            let mut run_b = RunFile::default();
            let mut qrels_a = Qrels::default();
            let mut qrels_b = Qrels::default();
            for (i, (id, new_id)) in ids.iter().zip(renamed.iter()).enumerate() {
                let c = pool[(seed as usize + i) % pool.len()];
                qrels_a.insert(id, code(c));
                qrels_b.insert(new_id, code(c));
                let ranked = vec![RunEntry { code: code(pool[(seed as usize + i + 1) % pool.len()]), rank: 1, score: 2.0 },
                                  RunEntry { code: code(c), rank: 2, score: 1.0 }];
                run_a.insert(id, ranked.clone()).unwrap();
                run_b.insert(new_id, ranked).unwrap();
            }
            let a = mean_average_precision(&run_a, &qrels_a, EvalLevel::Subcategory);
            let b = mean_average_precision(&run_b, &qrels_b, EvalLevel::Subcategory);
            prop_assert_eq!(a.map, b.map);
        }
    }
}

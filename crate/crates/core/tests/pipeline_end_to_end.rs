//! End-to-end pipeline tests over the bundled toy catalog files.

use std::io::Write;
use std::path::{Path, PathBuf};

use medlinker_core::{
    build_index, load_abbreviations, load_concepts, merge_sources, save_index,
    AnalyzerConfig, CodingEngine, ExternalExtractor, MentionExtractor, PipelineConfig, Referral,
    ScoringParams, SourceTag,
};

fn testdata(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("testdata").join(name)
}

fn toy_engine() -> CodingEngine {
    let tabular = load_concepts(&testdata("toy_tabular.jsonl"), SourceTag::Tabular).unwrap();
    let iris = load_concepts(&testdata("toy_iris.jsonl"), SourceTag::Iris).unwrap();
    let merged = merge_sources(&[tabular, iris]);
    let table = load_abbreviations(&testdata("toy_abbrev.tsv")).unwrap();
    let index = build_index(&merged, &AnalyzerConfig::default(), ScoringParams::default())
        .unwrap()
        .with_abbreviations(table);
    CodingEngine::new(index, 5).unwrap()
}

#[test]
fn merged_toy_catalog_has_expected_shape() {
    let tabular = load_concepts(&testdata("toy_tabular.jsonl"), SourceTag::Tabular).unwrap();
    let iris = load_concepts(&testdata("toy_iris.jsonl"), SourceTag::Iris).unwrap();
    let merged = merge_sources(&[tabular, iris]);
    assert_eq!(merged.len(), 6);

    let k022 = merged.iter().find(|e| e.code.to_string() == "K02.2").unwrap();
    assert_eq!(k022.canonical_description, "Caries del cemento");
    assert_eq!(k022.source, SourceTag::Tabular);
    let phrases: Vec<&str> = k022.synonyms.iter().map(|s| s.phrase.as_str()).collect();
    // the identical IRIS description dedups against the canonical one
    assert_eq!(phrases, ["Caries de la raíz", "Caries radicular"]);

    // demoted IRIS descriptions become synonyms
    let k432 = merged.iter().find(|e| e.code.to_string() == "K43.2").unwrap();
    assert!(k432.synonyms.iter().any(|s| s.phrase == "Hernia incisional"));
}

#[test]
fn codes_overview_sentence_against_toy_catalog() {
    let engine = toy_engine();
    let referral = Referral {
        id: "wl-1".to_string(),
        text: "paciente con hernia incisional con antecedentes de dm 2 y obesidad mórbida"
            .to_string(),
        specialty: Some("Cirugía General".to_string()),
    };
    let result = engine.code_referral(&referral).unwrap();
    let surfaces: Vec<&str> = result.mentions.iter().map(|m| m.span.surface.as_str()).collect();
    assert_eq!(surfaces, ["hernia incisional", "dm 2", "obesidad mórbida"]);
    let top: Vec<String> = result
        .mentions
        .iter()
        .map(|m| m.candidates[0].code.to_string())
        .collect();
    assert_eq!(top, ["K43.2", "E11.9", "E66.2"]);
    assert_eq!(result.run[0].code.to_string(), "K43.2");
}

#[test]
fn index_artifact_round_trips_through_engine() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("toy.tidx");
    let engine = toy_engine();
    save_index(engine.index(), &path).unwrap();

    let cfg = PipelineConfig {
        index: Some(path),
        ..PipelineConfig::default()
    };
    let reloaded = CodingEngine::from_config(&cfg).unwrap();
    assert_eq!(reloaded.index().doc_count(), 6);
    // the abbreviation table travels inside the artifact
    assert!(reloaded.abbreviations().expansions("dm").is_some());

    let referral = Referral {
        id: "wl-2".to_string(),
        text: "dm 2".to_string(),
        specialty: None,
    };
    let a = engine.code_referral(&referral).unwrap();
    let b = reloaded.code_referral(&referral).unwrap();
    assert_eq!(a, b);
}

#[test]
fn external_extractor_speaks_the_line_protocol() {
    let dir = tempfile::tempdir().unwrap();
    let script = dir.path().join("finder.py");
    // a stand-in model: report every occurrence of "caries" and "asma",
    // offsets in code points, plus one bogus span the pipeline must drop
    let mut f = std::fs::File::create(&script).unwrap();
    writeln!(
        f,
        r#"import sys, json
for line in sys.stdin:
    rec = json.loads(line)
    text, spans = rec["text"], []
    for word in ("caries", "asma"):
        at = 0
        while True:
            hit = text.find(word, at)
            if hit < 0:
                break
            spans.append({{"start": hit, "end": hit + len(word)}})
            at = hit + len(word)
    spans.append({{"start": 10_000, "end": 10_004}})
    print(json.dumps({{"id": rec["id"], "spans": spans}}), flush=True)
"#
    )
    .unwrap();

    let extractor =
        ExternalExtractor::spawn("python3", &[script.display().to_string()], AnalyzerConfig::default())
            .unwrap();
    let text = "asma grave; luego caries del cemento";
    let spans = extractor.extract("r1", text).unwrap();
    let surfaces: Vec<&str> = spans.iter().map(|s| s.surface.as_str()).collect();
    assert_eq!(surfaces, ["asma", "caries"]);
    assert_eq!(spans[0].start, 0);
    assert_eq!(spans[1].start, 18);
    // surfaces are exact source slices even with multi-byte characters around
    let accented = "añszéké asma x";
    let spans = extractor.extract("r2", accented).unwrap();
    assert_eq!(spans.len(), 1);
    assert_eq!(spans[0].surface, "asma");
    assert_eq!(spans[0].start, 8);

    // the engine accepts the external extractor behind the same seam
    let engine = toy_engine().with_extractor(Box::new(extractor));
    let result = engine
        .code_referral(&Referral {
            id: "r3".to_string(),
            text: "asma persistente".to_string(),
            specialty: None,
        })
        .unwrap();
    assert_eq!(result.mentions.len(), 1);
    assert_eq!(result.mentions[0].candidates[0].code.to_string(), "J45.9");
}

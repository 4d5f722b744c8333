use std::fs;
use std::path::{Path, PathBuf};

use ontoinfuse::pairgen::read_pairs;
use ontoinfuse::pipeline::{DatasetConfig, Pipeline, PipelineConfig, PipelineError, Stage};

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

fn toy_config(work: &Path) -> PipelineConfig {
    let mut config = PipelineConfig::new(fixture("toy_ontology.jsonl"), work);
    config.embedding.dimension = 64;
    config.train.batch_size = 8;
    config.train.learning_rate = 0.5;
    config.evaluation.datasets = vec![DatasetConfig {
        name: "TOY".into(),
        path: fixture("toy_sts.tsv"),
        subset: Some(fixture("toy_sts.dis")),
    }];
    config.evaluation.selection = Some("TOY".into());
    config
}

#[test]
fn train_before_mining_names_the_missing_stage() {
    let dir = tempfile::tempdir().unwrap();
    let pipeline = Pipeline::new(toy_config(dir.path())).unwrap();
    let err = pipeline.run_stage(Stage::Train, false).unwrap_err();
    assert!(matches!(
        err,
        PipelineError::MissingInput {
            producer: Stage::MineNegatives,
            ..
        }
    ));
    assert!(
        err.to_string()
            .starts_with("missing sample file; run mine-negatives"),
        "{err}"
    );
}

#[test]
fn missing_source_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let config = PipelineConfig::new(dir.path().join("nope.jsonl"), dir.path().join("work"));
    let err = Pipeline::new(config)
        .unwrap()
        .run_stage(Stage::Ingest, false)
        .unwrap_err();
    assert!(matches!(err, PipelineError::MissingExternal { .. }));
}

#[test]
fn stages_run_in_order_and_skip_when_unchanged() {
    let dir = tempfile::tempdir().unwrap();
    let pipeline = Pipeline::new(toy_config(dir.path())).unwrap();

    let ingest = pipeline.run_stage(Stage::Ingest, false).unwrap();
    assert!(!ingest.skipped);
    assert_eq!(ingest.manifest.counts["concepts"], 13);

    let filter = pipeline.run_stage(Stage::FilterSynonyms, false).unwrap();
    assert!(filter.manifest.counts["synonyms_after"] < filter.manifest.counts["synonyms_before"]);

    let defs = pipeline.run_stage(Stage::GenDefinitions, false).unwrap();
    assert_eq!(defs.manifest.counts["remote_provider_calls"], 0);
    assert_eq!(defs.manifest.counts["failures"], 0);

    let pairs = pipeline.run_stage(Stage::GenPairs, false).unwrap();
    let written = read_pairs(std::io::BufReader::new(
        fs::File::open(pipeline.paths().pairs()).unwrap(),
    ))
    .unwrap();
    assert_eq!(pairs.manifest.counts["pairs"], written.len() as u64);
    assert!(!written.is_empty());

    let again = pipeline.run_stage(Stage::GenPairs, false).unwrap();
    assert!(again.skipped);
    assert_eq!(again.manifest, pairs.manifest);
    let forced = pipeline.run_stage(Stage::GenPairs, true).unwrap();
    assert!(!forced.skipped);
    assert_eq!(forced.manifest.outputs, pairs.manifest.outputs);

    // A tampered output forces a rerun.
    fs::write(pipeline.paths().pairs(), "").unwrap();
    let repaired = pipeline.run_stage(Stage::GenPairs, false).unwrap();
    assert!(!repaired.skipped);
    assert_eq!(repaired.manifest.outputs, pairs.manifest.outputs);
}

#[test]
fn full_run_reports_orig_and_kinf_rows() {
    let dir = tempfile::tempdir().unwrap();
    let config = toy_config(dir.path()).with_offline(true);
    let pipeline = Pipeline::new(config).unwrap();
    let report = pipeline.run_all(false).unwrap();
    assert_eq!(report.remote_provider_calls, 0);
    assert_eq!(report.stages.len(), 7);
    let variants: Vec<&str> = report
        .evaluation
        .rows
        .iter()
        .map(|r| r.variant.as_str())
        .collect();
    assert_eq!(variants, ["orig", "kinf"]);
    for row in &report.evaluation.rows {
        assert_eq!(row.reports.len(), 1);
        assert_eq!(row.reports[0].n_all, 10);
        assert_eq!(row.reports[0].n_subset, 6);
    }
    assert!(report.evaluation.notes.iter().any(|n| n.contains("TOY")));
    let text = fs::read_to_string(pipeline.paths().report_txt()).unwrap();
    assert!(text.contains("hash-64-0_orig") && text.contains("hash-64-0_kinf"));

    let train = pipeline.manifest(Stage::Train).unwrap().unwrap();
    assert_eq!(train.extra["parity_learning_rate"], 1e-8);
    assert_eq!(train.extra["learning_rate"], 0.5);

    let rerun = pipeline.run_all(false).unwrap();
    assert!(rerun.stages.iter().all(|s| s.skipped));
    assert_eq!(rerun.evaluation, report.evaluation);
}

#[test]
fn seed_changes_touch_only_seeded_outputs() {
    let digests = |seed: u64| {
        let dir = tempfile::tempdir().unwrap();
        let pipeline = Pipeline::new(toy_config(dir.path()).with_seed(seed)).unwrap();
        pipeline.run_all(false).unwrap();
        Stage::ALL
            .iter()
            .map(|&s| {
                let m = pipeline.manifest(s).unwrap().unwrap();
                (
                    s,
                    m.outputs
                        .values()
                        .map(|d| d.sha256.clone())
                        .collect::<Vec<_>>(),
                )
            })
            .collect::<Vec<_>>()
    };
    let a = digests(1);
    let b = digests(1);
    assert_eq!(a, b);
    let c = digests(2);
    assert_eq!(a[0], c[0], "ingest does not use the seed");
    assert_ne!(a[5].1[0], c[5].1[0], "training shuffles with the seed");
}

#[test]
fn ingests_obo_graphs() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = toy_config(dir.path());
    config.ingest.ontology = fixture("toy_obo.json");
    config.ingest.format = "obo-graphs-json".into();
    let pipeline = Pipeline::new(config).unwrap();
    let outcome = pipeline.run_stage(Stage::Ingest, false).unwrap();
    assert_eq!(outcome.manifest.counts["concepts"], 3);
    assert_eq!(outcome.manifest.counts["is_a_edges"], 2);
    assert_eq!(pipeline.stats().unwrap().concepts, 3);
}

#[test]
fn config_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ontoinfuse.toml");
    fs::write(
        &path,
        format!(
            "work_dir = \"out\"\nseed = 5\n[ingest]\nontology = {:?}\n[embedding]\ndimension = 32\n",
            fixture("toy_ontology.jsonl")
        ),
    )
    .unwrap();
    let config = PipelineConfig::load(&path).unwrap();
    assert_eq!(config.work_dir, dir.path().join("out"));
    assert_eq!(config.train.seed, 5);
    let pipeline = Pipeline::new(config).unwrap();
    pipeline.run_stage(Stage::Ingest, false).unwrap();
    assert!(dir.path().join("out/manifests/ingest.json").exists());
    assert!(dir.path().join("out/ontology.stats.txt").exists());
}

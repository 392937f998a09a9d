use std::path::Path;

use latent_concepts::pipeline::{
    run_pipeline, write_fixture, ExternalConcept, PipelineConfig, RunOptions, ScorerConfig,
};
use latent_concepts::report::{emit_report, ReportFormat};
use latent_concepts::synth_oracle::{match_directions, pipeline_fixture, FixtureSpec};
use latent_concepts::tensor_io::{self, PairManifest};
use latent_concepts::Error;

fn fixture(dir: &Path) -> PipelineConfig {
    let f = pipeline_fixture(&FixtureSpec::default()).unwrap();
    PipelineConfig::load(&write_fixture(&f, dir).unwrap()).unwrap()
}

#[test]
fn planted_fixture_recovers_structure() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = fixture(dir.path());
    let report = run_pipeline(&cfg, &RunOptions::default()).unwrap();
    let out = dir.path().join("out");

    assert_eq!(report.provenance.classes.len(), 2);
    for class in &report.provenance.classes {
        assert_eq!(class.k, 3, "{}", class.class_label);
        assert_eq!(class.k_source, "silhouette");
        let selected = report
            .ablation
            .iter()
            .find(|r| r.class_label == class.class_label && r.selected)
            .unwrap();
        assert!(
            selected.redundancy.value.abs() < 0.05,
            "{}",
            selected.redundancy.value
        );

        let found =
            tensor_io::read_direction_set(out.join(&class.class_label).join("k3/directions.cdlc"))
                .unwrap();
        let truth = tensor_io::read_direction_set(
            dir.path().join(format!("truth_{}.cdlc", class.class_label)),
        )
        .unwrap();
        let (_, min_cos) = match_directions(&found, &truth).unwrap();
        assert!(min_cos > 0.95, "{min_cos}");
    }
    // four ablation rows per class from the fixture's 2..=5 range
    assert_eq!(report.ablation.len(), 8);
    assert_eq!(report.concepts.len(), 6);
    assert!(report
        .concepts
        .iter()
        .all(|c| c.success_rate.unwrap().value == 1.0));
    assert!(report
        .concepts
        .iter()
        .all(|c| c.fid.is_some() && c.tcav.is_some()));

    let json = std::fs::read_to_string(out.join("report.json")).unwrap();
    assert_eq!(json, emit_report(&report, ReportFormat::Json).unwrap());
    assert!(!out.join(".lock").exists());
}

#[test]
fn score_tables_reproduce_the_linear_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = fixture(dir.path());
    let first = run_pipeline(&cfg, &RunOptions::default()).unwrap();

    let mut from_tables = cfg.clone();
    from_tables.scorer = ScorerConfig::Tables {
        dir: dir.path().join("out"),
    };
    from_tables.out_dir = Some(dir.path().join("again"));
    // TCAV needs the linear scorer's gradients
    from_tables.evaluation.tcav = None;
    let second = run_pipeline(&from_tables, &RunOptions::default()).unwrap();

    assert_eq!(first.ablation, second.ablation);
    assert_eq!(first.alpha_sweep, second.alpha_sweep);
    for (a, b) in first.concepts.iter().zip(&second.concepts) {
        assert_eq!(a.success_rate, b.success_rate);
        assert_eq!(a.fid, b.fid);
    }
}

#[test]
fn fixed_k_per_class() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = fixture(dir.path());
    cfg.clusters.per_class.insert("A".into(), 4);
    cfg.clusters.ablation_range = None;
    cfg.evaluation = Default::default();
    let report = run_pipeline(&cfg, &RunOptions::default()).unwrap();
    let a = report
        .provenance
        .classes
        .iter()
        .find(|c| c.class_label == "A")
        .unwrap();
    assert_eq!((a.k, a.k_source.as_str()), (4, "fixed"));
    assert_eq!(report.ablation.len(), 2);
    assert_eq!(
        report
            .concepts
            .iter()
            .filter(|c| c.class_label == "A")
            .count(),
        4
    );
}

#[test]
fn external_values_fill_the_concept_table() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = fixture(dir.path());
    cfg.evaluation = Default::default();
    cfg.external.push(ExternalConcept {
        class: "A".into(),
        index: 0,
        name: Some("Purplish Core Pigmentation".into()),
        success_rate: None,
        lpips: Some(0.12),
        fid: Some(30.5),
        tcav_mean: Some(0.97),
        tcav_std: None,
    });
    let report = run_pipeline(&cfg, &RunOptions::default()).unwrap();
    let md = emit_report(&report, ReportFormat::Markdown).unwrap();
    assert!(
        md.contains("| Purplish Core Pigmentation | 100.0 | 0.12 | 30.5 | 0.97 |"),
        "{md}"
    );
}

#[test]
fn empty_manifest_fails_at_diff_stage() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = fixture(dir.path());
    tensor_io::write_pair_manifest(&PairManifest::default(), dir.path().join("pairs.tsv")).unwrap();
    let err = run_pipeline(&cfg, &RunOptions::default()).unwrap_err();
    let msg = err.to_string();
    assert!(matches!(err, Error::Stage { stage: "diff", .. }), "{msg}");
    assert!(msg.contains("pairs.tsv"), "{msg}");
    assert_eq!(err.class().exit_code(), 3);
}

#[test]
fn locked_output_directory_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = fixture(dir.path());
    let _held = tensor_io::DirLock::acquire(&dir.path().join("out")).unwrap();
    let err = run_pipeline(&cfg, &RunOptions::default()).unwrap_err();
    assert!(matches!(err, Error::Locked(_)), "{err}");
}

#[test]
fn missing_input_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = fixture(dir.path());
    std::fs::remove_file(dir.path().join("test.cdlc")).unwrap();
    let err = run_pipeline(&cfg, &RunOptions::default()).unwrap_err();
    assert_eq!(err.class().exit_code(), 2, "{err}");
}

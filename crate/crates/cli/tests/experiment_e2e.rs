//! Library-level end-to-end behavior of `run_experiment`: null and shifted
//! perturbations, determinism, shared-original caching, failure isolation,
//! and the plot-data invariants.

use std::collections::BTreeMap;

use dbpa_cli::config::{ExperimentConfig, MultipleTesting, Perturbation, PerturbationKind};
use dbpa_cli::experiment::{run_experiment, RunOptions};
use dbpa_cli::report;
use dbpa_core::embedder::EmbedderSpec;
use dbpa_core::inference::MetricId;
use dbpa_core::sampler::{GeneratorKind, GeneratorSpec};

fn null_config(output_dir: std::path::PathBuf, seed: u64) -> ExperimentConfig {
    // Every perturbation maps to the same response table as the original,
    // so the no-effect hypothesis holds by construction.
    let table = vec![
        "rest fluids and light meals help recovery".to_string(),
        "rest fluids and gentle walks help recovery".to_string(),
        "rest warm fluids and light meals speed recovery".to_string(),
        "sleep fluids and light meals help most patients".to_string(),
    ];
    ExperimentConfig {
        experiment_id: "null-family".into(),
        prompt: "How do I recover from a cold?".into(),
        perturbations: vec![
            Perturbation {
                id: "prefix".into(),
                kind: PerturbationKind::Prefix,
                payload: "Please,".into(),
            },
            Perturbation {
                id: "reword".into(),
                kind: PerturbationKind::Rewrite,
                payload: "What helps one recover from a cold?".into(),
            },
            Perturbation {
                id: "same".into(),
                kind: PerturbationKind::Rewrite,
                payload: "How do I recover from a cold?".into(),
            },
        ],
        generator: GeneratorSpec::scripted(table),
        reference_generator: None,
        embedder: EmbedderSpec::deterministic(64),
        k: 20,
        b: 199,
        nbins: 50,
        metric: MetricId::Jsd,
        alpha: 0.05,
        multiple_testing: MultipleTesting::Bh,
        seed,
        output_dir,
        dump_similarity_matrix: false,
    }
}

#[test]
fn null_perturbations_rarely_reach_significance() {
    let dir = tempfile::tempdir().unwrap();
    let options = RunOptions::default();
    let seeds = 40u64;
    let mut clean_seeds = 0usize;
    for seed in 0..seeds {
        let config = null_config(dir.path().join(format!("run-{seed}")), 1000 + seed);
        let audit = run_experiment(&config, &options).unwrap();
        assert!(!audit.any_failed());
        let all_above_alpha = audit
            .results
            .iter()
            .all(|r| r.p_value.unwrap() > config.alpha);
        let rejections = audit
            .results
            .iter()
            .filter(|r| r.rejected == Some(true))
            .count();
        if all_above_alpha {
            assert_eq!(rejections, 0, "p > alpha everywhere but BH rejected (seed {seed})");
            clean_seeds += 1;
        }
    }
    assert!(
        clean_seeds as f64 >= 0.9 * seeds as f64,
        "only {clean_seeds}/{seeds} seeds kept every raw p above alpha"
    );
}

fn disjoint_config(output_dir: std::path::PathBuf) -> ExperimentConfig {
    let mut config = null_config(output_dir, 42);
    config.experiment_id = "disjoint-family".into();
    let mut prompt_responses = BTreeMap::new();
    prompt_responses.insert(
        "Summarise galactic rotation curves.".to_string(),
        vec![
            "galaxy rotation stays flat beyond the luminous disk".to_string(),
            "dark halos keep outer orbital speeds unexpectedly high".to_string(),
        ],
    );
    if let GeneratorKind::Scripted {
        prompt_responses: table,
        ..
    } = &mut config.generator.kind
    {
        *table = prompt_responses;
    }
    config.perturbations.push(Perturbation {
        id: "off-topic".into(),
        kind: PerturbationKind::Rewrite,
        payload: "Summarise galactic rotation curves.".into(),
    });
    config
}

#[test]
fn disjoint_table_perturbation_is_the_unique_rejection() {
    let dir = tempfile::tempdir().unwrap();
    let config = disjoint_config(dir.path().to_path_buf());
    let audit = run_experiment(&config, &RunOptions::default()).unwrap();

    let off_topic = audit
        .results
        .iter()
        .find(|r| r.perturbation_id == "off-topic")
        .unwrap();
    assert_eq!(off_topic.p_value.unwrap(), 1.0 / (config.b as f64 + 1.0));
    let omega = off_topic.omega_observed.unwrap();
    assert!(
        (omega - std::f64::consts::LN_2).abs() < 0.05 * std::f64::consts::LN_2,
        "omega {omega} not within 5% of ln 2"
    );
    assert_eq!(off_topic.rejected, Some(true));
    let rejections: Vec<&str> = audit
        .results
        .iter()
        .filter(|r| r.rejected == Some(true))
        .map(|r| r.perturbation_id.as_str())
        .collect();
    assert_eq!(rejections, vec!["off-topic"]);
}

#[test]
fn reruns_are_deterministic_and_reuse_the_cache() {
    let dir = tempfile::tempdir().unwrap();
    let config = null_config(dir.path().to_path_buf(), 7);
    let options = RunOptions::default();

    let first = run_experiment(&config, &options).unwrap();
    // Cold run: one miss for the original plus one per perturbation.
    assert_eq!(first.cache_misses, 1 + config.perturbations.len() as u64);
    assert_eq!(first.cache_hits, 0);

    let second = run_experiment(&config, &options).unwrap();
    // Warm run: the original is loaded once and shared; nothing re-queries.
    assert_eq!(second.cache_hits, 1 + config.perturbations.len() as u64);
    assert_eq!(second.cache_misses, 0);

    let strip = |report: &dbpa_cli::AuditReport| {
        report::results_json(report)
            .unwrap()
            .lines()
            .filter(|l| !l.contains("wall_clock_seconds"))
            .collect::<Vec<_>>()
            .join("\n")
    };
    assert_eq!(strip(&first), strip(&second));
}

#[test]
fn jobs_count_does_not_change_results() {
    let dir = tempfile::tempdir().unwrap();
    let config = null_config(dir.path().to_path_buf(), 9);
    let serial = run_experiment(&config, &RunOptions { offline: true, jobs: 1 }).unwrap();
    let parallel = run_experiment(&config, &RunOptions { offline: true, jobs: 8 }).unwrap();
    for (a, b) in serial.results.iter().zip(&parallel.results) {
        assert_eq!(a.perturbation_id, b.perturbation_id, "order preserved");
        assert_eq!(a.p_value, b.p_value);
        assert_eq!(a.omega_observed, b.omega_observed);
    }
}

#[test]
fn one_failing_perturbation_never_aborts_the_rest() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = null_config(dir.path().to_path_buf(), 3);
    // A model swap onto an unreachable remote reference fails offline.
    config.reference_generator = Some(GeneratorSpec {
        kind: GeneratorKind::RemoteChatEndpoint {
            endpoint_url: "http://127.0.0.1:9/v1/chat/completions".into(),
        },
        model_id: "missing".into(),
        temperature: 1.0,
        max_tokens: 16,
        extra_params: BTreeMap::new(),
    });
    config.perturbations.push(Perturbation {
        id: "bad-swap".into(),
        kind: PerturbationKind::ModelSwap,
        payload: String::new(),
    });

    let audit = run_experiment(&config, &RunOptions { offline: true, jobs: 2 }).unwrap();
    assert!(audit.any_failed());
    let bad = audit
        .results
        .iter()
        .find(|r| r.perturbation_id == "bad-swap")
        .unwrap();
    assert!(bad.failed);
    let error = bad.error.as_deref().unwrap();
    assert!(error.contains("bad-swap"), "error names the perturbation: {error}");
    for row in audit.results.iter().filter(|r| r.perturbation_id != "bad-swap") {
        assert!(!row.failed, "{} should have succeeded", row.perturbation_id);
        assert!(row.p_value.is_some());
    }

    // Partial results were still written, with the failed row flagged.
    let loaded = report::load_results_json(config.output_dir.join("results.json")).unwrap();
    assert_eq!(loaded.results.len(), 4);
    assert!(loaded.results.iter().any(|r| r.failed));
}

#[test]
fn plot_outputs_hold_their_invariants() {
    let dir = tempfile::tempdir().unwrap();
    let config = disjoint_config(dir.path().to_path_buf());
    let audit = run_experiment(&config, &RunOptions::default()).unwrap();
    report::emit_plotdata(&audit, dir.path()).unwrap();

    let summary = std::fs::read_to_string(dir.path().join("plot_summary.csv")).unwrap();
    let rows: Vec<&str> = summary.lines().skip(1).collect();
    assert_eq!(rows.len(), config.perturbations.len());

    for perturbation in &config.perturbations {
        let path = dir
            .path()
            .join(format!("plot_null_alt_{}.csv", perturbation.id));
        let content = std::fs::read_to_string(&path).unwrap();
        let mut p0_total = 0.0f64;
        let mut p1_total = 0.0f64;
        let mut bins = 0usize;
        for line in content.lines().skip(1) {
            let cells: Vec<&str> = line.split(',').collect();
            p0_total += cells[2].parse::<f64>().unwrap();
            p1_total += cells[3].parse::<f64>().unwrap();
            bins += 1;
        }
        assert_eq!(bins, config.nbins);
        assert!((p0_total - 1.0).abs() < 1e-9, "{}: p0 sums to {p0_total}", perturbation.id);
        assert!((p1_total - 1.0).abs() < 1e-9, "{}: p1 sums to {p1_total}", perturbation.id);
    }
}

#[test]
fn similarity_matrix_dump_is_optional() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = null_config(dir.path().to_path_buf(), 5);
    config.dump_similarity_matrix = true;
    run_experiment(&config, &RunOptions::default()).unwrap();
    for perturbation in &config.perturbations {
        let path = dir
            .path()
            .join(format!("simmatrix_{}.csv", perturbation.id));
        let content = std::fs::read_to_string(&path).unwrap();
        assert_eq!(content.lines().count(), 2 * config.k + 1, "header plus 2k rows");
    }
}

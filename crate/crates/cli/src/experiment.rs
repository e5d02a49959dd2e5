//! End-to-end experiment orchestration: sample the original once, then per
//! perturbation sample, embed, build the similarity matrix, and run the
//! permutation test; finally adjust p-values across the family.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use dbpa_core::embedder::Embedder;
use dbpa_core::inference::{
    bh_adjust, bin_histogram, bonferroni_adjust, permutation_test, EmpiricalDistribution,
    MetricId, OmegaSummary,
};
use dbpa_core::sampler::{GeneratorSpec, SampleGroup, Sampler};
use dbpa_core::simspace::SimilarityMatrix;
use dbpa_core::util::derive_seed;
use dbpa_core::{Error, Result};

use crate::config::{ExperimentConfig, MultipleTesting, Perturbation, PerturbationKind};

/// Runtime options supplied on the command line rather than in the config.
#[derive(Debug, Clone)]
pub struct RunOptions {
    /// Fail on any operation that would need the network.
    pub offline: bool,
    /// Bound on concurrently processed perturbations (and remote draws).
    pub jobs: usize,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            offline: false,
            jobs: 4,
        }
    }
}

/// The effective (prompt, generator) for one perturbation.
pub fn apply_perturbation(
    prompt: &str,
    perturbation: &Perturbation,
    base: &GeneratorSpec,
    reference: Option<&GeneratorSpec>,
) -> Result<(String, GeneratorSpec)> {
    match perturbation.kind {
        PerturbationKind::Prefix => Ok((
            format!("{} {prompt}", perturbation.payload),
            base.clone(),
        )),
        PerturbationKind::Rewrite => Ok((perturbation.payload.clone(), base.clone())),
        PerturbationKind::ModelSwap => {
            let reference = reference.ok_or_else(|| {
                Error::Config(format!(
                    "perturbation {:?} is a model swap but no reference generator is configured",
                    perturbation.id
                ))
            })?;
            let mut generator = reference.clone();
            if !perturbation.payload.is_empty() {
                generator.model_id = perturbation.payload.clone();
            }
            Ok((prompt.to_string(), generator))
        }
    }
}

/// Per-perturbation outcome row of an audit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditRow {
    pub perturbation_id: String,
    pub failed: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub omega_observed: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p_value: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p_adjusted: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rejected: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub null_omega_summary: Option<OmegaSummary>,
    pub metric: MetricId,
    pub k: usize,
    pub permutations: usize,
    pub nbins: usize,
    pub seed: u64,
    /// Null/alternative histograms for plot emission; not part of the
    /// serialized report.
    #[serde(skip)]
    pub p0: Option<EmpiricalDistribution>,
    #[serde(skip)]
    pub p1: Option<EmpiricalDistribution>,
}

/// Complete audit output: one row per perturbation plus provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub experiment_id: String,
    pub config_fingerprint: String,
    pub tool_version: String,
    pub metric: MetricId,
    pub multiple_testing: MultipleTesting,
    pub alpha: f64,
    pub k: usize,
    pub b: usize,
    pub nbins: usize,
    pub seed: u64,
    pub results: Vec<AuditRow>,
    /// Runtime observations, not part of the serialized results: reruns
    /// with a warm cache must produce byte-identical files.
    #[serde(skip)]
    pub cache_hits: u64,
    #[serde(skip)]
    pub cache_misses: u64,
    /// Wall-clock duration of the run; the only serialized field excluded
    /// from byte-for-byte reproducibility.
    pub wall_clock_seconds: f64,
}

impl AuditReport {
    pub fn any_failed(&self) -> bool {
        self.results.iter().any(|r| r.failed)
    }
}

struct PerturbationInput<'a> {
    index: usize,
    perturbation: &'a Perturbation,
}

/// Run the full audit described by the config.
///
/// The original batch is sampled exactly once and shared as the null side
/// of every perturbation's test. One failing perturbation never aborts the
/// others; its row is flagged instead.
pub fn run_experiment(config: &ExperimentConfig, options: &RunOptions) -> Result<AuditReport> {
    config.validate()?;
    let started = Instant::now();

    std::fs::create_dir_all(&config.output_dir)?;
    let cache_dir = config.output_dir.join("cache");
    let sampler = Sampler::new(&cache_dir)
        .offline(options.offline)
        .concurrency(options.jobs);
    let embedder = Embedder::new(config.embedder.clone())?
        .with_cache(cache_dir.join("embeddings.jsonl"))?
        .offline(options.offline);

    // Original batch: sampled once, embedded once, shared across tests.
    let original_seed = derive_seed(config.seed, 0);
    let original = sampler.sample_responses(
        &config.generator,
        &config.prompt,
        SampleGroup::Original,
        config.k,
        original_seed,
    );

    let rows: Vec<AuditRow> = match original {
        Err(e) => {
            // Without a null batch no test can run; every row carries the
            // cause so the failure is visible per perturbation.
            let message = format!("original batch failed: {e}");
            config
                .perturbations
                .iter()
                .enumerate()
                .map(|(i, p)| failed_row(config, p, i, &message))
                .collect()
        }
        Ok(original_batch) => {
            let original_vectors = embedder.embed_batch(&original_batch.texts());
            match original_vectors {
                Err(e) => {
                    let message = format!("embedding the original batch failed: {e}");
                    config
                        .perturbations
                        .iter()
                        .enumerate()
                        .map(|(i, p)| failed_row(config, p, i, &message))
                        .collect()
                }
                Ok(original_vectors) => {
                    let inputs: Vec<PerturbationInput> = config
                        .perturbations
                        .iter()
                        .enumerate()
                        .map(|(index, perturbation)| PerturbationInput {
                            index,
                            perturbation,
                        })
                        .collect();
                    let slots: Mutex<Vec<Option<AuditRow>>> =
                        Mutex::new(vec![None; inputs.len()]);
                    let next = AtomicUsize::new(0);
                    std::thread::scope(|scope| {
                        for _ in 0..options.jobs.max(1).min(inputs.len()) {
                            scope.spawn(|| loop {
                                let i = next.fetch_add(1, Ordering::Relaxed);
                                if i >= inputs.len() {
                                    return;
                                }
                                let row = run_one_perturbation(
                                    config,
                                    &sampler,
                                    &embedder,
                                    &original_vectors,
                                    inputs[i].index,
                                    inputs[i].perturbation,
                                );
                                slots.lock().expect("slots lock")[i] = Some(row);
                            });
                        }
                    });
                    slots
                        .into_inner()
                        .expect("slots lock")
                        .into_iter()
                        .map(|r| r.expect("all perturbations processed"))
                        .collect()
                }
            }
        }
    };

    let mut rows = rows;
    adjust_family(&mut rows, config.multiple_testing, config.alpha)?;

    let report = AuditReport {
        experiment_id: config.experiment_id.clone(),
        config_fingerprint: config.fingerprint()?,
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        metric: config.metric,
        multiple_testing: config.multiple_testing,
        alpha: config.alpha,
        k: config.k,
        b: config.b,
        nbins: config.nbins,
        seed: config.seed,
        results: rows,
        cache_hits: sampler.cache_hits(),
        cache_misses: sampler.cache_misses(),
        wall_clock_seconds: started.elapsed().as_secs_f64(),
    };

    // Partial results are written even when rows failed.
    crate::report::write_results_json(&report, config.output_dir.join("results.json"))?;
    crate::report::write_results_csv(&report, config.output_dir.join("results.csv"))?;
    crate::report::emit_plotdata(&report, &config.output_dir)?;
    Ok(report)
}

fn failed_row(
    config: &ExperimentConfig,
    perturbation: &Perturbation,
    index: usize,
    message: &str,
) -> AuditRow {
    AuditRow {
        perturbation_id: perturbation.id.clone(),
        failed: true,
        error: Some(message.to_string()),
        omega_observed: None,
        p_value: None,
        p_adjusted: None,
        rejected: None,
        null_omega_summary: None,
        metric: config.metric,
        k: config.k,
        permutations: config.b,
        nbins: config.nbins,
        seed: derive_seed(config.seed, index as u64 + 1),
        p0: None,
        p1: None,
    }
}

fn run_one_perturbation(
    config: &ExperimentConfig,
    sampler: &Sampler,
    embedder: &Embedder,
    original_vectors: &[dbpa_core::embedder::EmbeddingVector],
    index: usize,
    perturbation: &Perturbation,
) -> AuditRow {
    let seed = derive_seed(config.seed, index as u64 + 1);
    let outcome = (|| -> Result<AuditRow> {
        let (prompt, generator) = apply_perturbation(
            &config.prompt,
            perturbation,
            &config.generator,
            config.reference_generator.as_ref(),
        )?;
        let batch = sampler.sample_responses(
            &generator,
            &prompt,
            SampleGroup::Perturbed(index as u32),
            config.k,
            seed,
        )?;
        let vectors = embedder.embed_batch(&batch.texts())?;
        let matrix = SimilarityMatrix::build(original_vectors, &vectors)?;
        if config.dump_similarity_matrix {
            matrix.write_csv(
                config
                    .output_dir
                    .join(format!("simmatrix_{}.csv", perturbation.id)),
            )?;
        }
        let result = permutation_test(&matrix, config.metric, config.nbins, config.b, seed)?
            .with_perturbation_id(&perturbation.id);
        let p0 = bin_histogram(&matrix.null_pairs(), config.nbins)?;
        let p1 = bin_histogram(&matrix.alt_pairs(), config.nbins)?;
        Ok(AuditRow {
            perturbation_id: perturbation.id.clone(),
            failed: false,
            error: None,
            omega_observed: Some(result.omega_observed),
            p_value: Some(result.p_value),
            p_adjusted: None,
            rejected: None,
            null_omega_summary: Some(result.null_omega_summary),
            metric: config.metric,
            k: config.k,
            permutations: config.b,
            nbins: config.nbins,
            seed,
            p0: Some(p0),
            p1: Some(p1),
        })
    })();

    outcome.unwrap_or_else(|e| {
        failed_row(
            config,
            perturbation,
            index,
            &format!("perturbation {:?} failed: {e}", perturbation.id),
        )
    })
}

/// Fill in adjusted p-values and rejection flags across the successful
/// rows. With adjustment off, significance is raw p < alpha.
fn adjust_family(
    rows: &mut [AuditRow],
    procedure: MultipleTesting,
    alpha: f64,
) -> Result<()> {
    let tested: Vec<usize> = rows
        .iter()
        .enumerate()
        .filter(|(_, r)| !r.failed)
        .map(|(i, _)| i)
        .collect();
    if tested.is_empty() {
        return Ok(());
    }
    let pvals: Vec<f64> = tested
        .iter()
        .map(|&i| rows[i].p_value.expect("successful row has p"))
        .collect();

    match procedure {
        MultipleTesting::None => {
            for &i in &tested {
                let p = rows[i].p_value.expect("successful row has p");
                rows[i].rejected = Some(p < alpha);
            }
        }
        MultipleTesting::Bh => {
            let adjusted = bh_adjust(&pvals, alpha)?;
            for (slot, &i) in tested.iter().enumerate() {
                rows[i].p_adjusted = Some(adjusted.adjusted[slot]);
                rows[i].rejected = Some(adjusted.rejected[slot]);
            }
        }
        MultipleTesting::Bonferroni => {
            let adjusted = bonferroni_adjust(&pvals, alpha)?;
            for (slot, &i) in tested.iter().enumerate() {
                rows[i].p_adjusted = Some(adjusted.adjusted[slot]);
                rows[i].rejected = Some(adjusted.rejected[slot]);
            }
        }
    }
    Ok(())
}

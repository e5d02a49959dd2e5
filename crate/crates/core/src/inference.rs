//! Effect sizes and significance: binned empirical distributions, the
//! divergence metrics, the permutation test, the direct resampling test, and
//! multiple-testing adjustment.
//!
//! The default effect size is the Jensen-Shannon divergence between the
//! binned within-original and cross-group similarity distributions; KS and
//! 1-D Wasserstein alternates operate on the raw pair samples without
//! binning. Significance uses the add-one permutation p-value
//! `(1 + #{w* >= w_obs}) / (B + 1)`, which never returns zero and counts
//! ties conservatively.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::simspace::{PairSampleSet, SimilarityMatrix};
use crate::util::derive_rng;

/// Effect-size metric identifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MetricId {
    /// Jensen-Shannon divergence between binned distributions (natural log,
    /// range [0, ln 2]).
    #[serde(rename = "JSD")]
    Jsd,
    /// Two-sample Kolmogorov-Smirnov statistic on raw pair samples.
    #[serde(rename = "KS")]
    Ks,
    /// One-dimensional Wasserstein-1 distance on raw pair samples.
    #[serde(rename = "W1")]
    W1,
}

impl std::fmt::Display for MetricId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            MetricId::Jsd => write!(f, "JSD"),
            MetricId::Ks => write!(f, "KS"),
            MetricId::W1 => write!(f, "W1"),
        }
    }
}

impl std::str::FromStr for MetricId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "JSD" => Ok(MetricId::Jsd),
            "KS" => Ok(MetricId::Ks),
            "W1" => Ok(MetricId::W1),
            other => Err(Error::InvalidArgument(format!("unknown metric {other:?}"))),
        }
    }
}

/// A binned probability histogram over the similarity support [-1, 1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalDistribution {
    bin_edges: Vec<f64>,
    masses: Vec<f64>,
    sample_count: usize,
}

impl EmpiricalDistribution {
    pub fn bin_edges(&self) -> &[f64] {
        &self.bin_edges
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    pub fn nbins(&self) -> usize {
        self.masses.len()
    }

    pub fn sample_count(&self) -> usize {
        self.sample_count
    }
}

/// Bin pair samples into `nbins` equal-width bins over [-1, 1].
///
/// Bins are right-open except the last, which is closed at 1 so that a
/// similarity of exactly 1 still lands in the histogram. Masses are counts
/// divided by the sample count.
pub fn bin_histogram(values: &PairSampleSet, nbins: usize) -> Result<EmpiricalDistribution> {
    bin_samples(values.values(), nbins)
}

/// [`bin_histogram`] over a raw slice of similarity values.
pub fn bin_samples(values: &[f64], nbins: usize) -> Result<EmpiricalDistribution> {
    if nbins < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 bins, got {nbins}"
        )));
    }
    if values.is_empty() {
        return Err(Error::InvalidArgument(
            "cannot bin an empty sample set".into(),
        ));
    }
    let mut counts = vec![0usize; nbins];
    for &v in values {
        if !(-1.0..=1.0).contains(&v) {
            return Err(Error::InvalidArgument(format!(
                "similarity value {v} outside [-1, 1]"
            )));
        }
        let idx = (((v + 1.0) / 2.0) * nbins as f64) as usize;
        counts[idx.min(nbins - 1)] += 1;
    }
    let n = values.len() as f64;
    let masses = counts.iter().map(|&c| c as f64 / n).collect();
    let bin_edges = (0..=nbins)
        .map(|i| -1.0 + 2.0 * i as f64 / nbins as f64)
        .collect();
    Ok(EmpiricalDistribution {
        bin_edges,
        masses,
        sample_count: values.len(),
    })
}

/// Jensen-Shannon divergence in natural log, range [0, ln 2].
///
/// `JSD(P, Q) = (KL(P||M) + KL(Q||M)) / 2` with `M = (P + Q) / 2`. Terms with
/// zero mass contribute zero, and the mixture is positive wherever either
/// distribution has mass, so no smoothing is needed and the value is always
/// finite.
pub fn jsd(p: &EmpiricalDistribution, q: &EmpiricalDistribution) -> Result<f64> {
    if p.bin_edges != q.bin_edges {
        return Err(Error::InvalidArgument(
            "jsd requires identical bin edges".into(),
        ));
    }
    // The two KL sums accumulate separately so that swapping the arguments
    // produces the exact same float operations: jsd(P, Q) == jsd(Q, P)
    // bitwise, not just approximately.
    let mut kl_p = 0.0f64;
    let mut kl_q = 0.0f64;
    for (&pm, &qm) in p.masses.iter().zip(&q.masses) {
        let mix = 0.5 * (pm + qm);
        if pm > 0.0 {
            kl_p += pm * (pm / mix).ln();
        }
        if qm > 0.0 {
            kl_q += qm * (qm / mix).ln();
        }
    }
    // Mathematically >= 0; clamp away the odd -1e-17 from cancellation.
    Ok((0.5 * (kl_p + kl_q)).max(0.0))
}

/// Two-sample Kolmogorov-Smirnov statistic: the sup distance between the two
/// empirical CDFs, evaluated on the merged sample without binning.
pub fn ks_stat(a: &PairSampleSet, b: &PairSampleSet) -> Result<f64> {
    ks_two_sample(a.values(), b.values())
}

/// KS statistic on raw slices; also used to compare effect-size samples.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::InvalidArgument(
            "ks statistic requires non-empty samples".into(),
        ));
    }
    let mut xs = a.to_vec();
    let mut ys = b.to_vec();
    xs.sort_by(|u, v| u.partial_cmp(v).expect("no NaN in samples"));
    ys.sort_by(|u, v| u.partial_cmp(v).expect("no NaN in samples"));

    let (n, m) = (xs.len() as f64, ys.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut sup = 0.0f64;
    while i < xs.len() || j < ys.len() {
        let x = match (xs.get(i), ys.get(j)) {
            (Some(&u), Some(&v)) => u.min(v),
            (Some(&u), None) => u,
            (None, Some(&v)) => v,
            (None, None) => break,
        };
        while i < xs.len() && xs[i] <= x {
            i += 1;
        }
        while j < ys.len() && ys[j] <= x {
            j += 1;
        }
        let diff = (i as f64 / n - j as f64 / m).abs();
        if diff > sup {
            sup = diff;
        }
    }
    Ok(sup)
}

/// One-dimensional Wasserstein-1 distance: the integral of |F_a - F_b| over
/// the merged support.
pub fn wasserstein1(a: &PairSampleSet, b: &PairSampleSet) -> Result<f64> {
    wasserstein1_samples(a.values(), b.values())
}

/// [`wasserstein1`] over raw slices.
pub fn wasserstein1_samples(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::InvalidArgument(
            "wasserstein distance requires non-empty samples".into(),
        ));
    }
    let mut xs = a.to_vec();
    let mut ys = b.to_vec();
    xs.sort_by(|u, v| u.partial_cmp(v).expect("no NaN in samples"));
    ys.sort_by(|u, v| u.partial_cmp(v).expect("no NaN in samples"));

    let mut support: Vec<f64> = xs.iter().chain(ys.iter()).copied().collect();
    support.sort_by(|u, v| u.partial_cmp(v).expect("no NaN in samples"));
    support.dedup();

    let (n, m) = (xs.len() as f64, ys.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut total = 0.0f64;
    for w in support.windows(2) {
        let x = w[0];
        while i < xs.len() && xs[i] <= x {
            i += 1;
        }
        while j < ys.len() && ys[j] <= x {
            j += 1;
        }
        total += (i as f64 / n - j as f64 / m).abs() * (w[1] - w[0]);
    }
    Ok(total)
}

/// Effect size between a null and an alternative pair-sample set.
///
/// Binned metrics always re-bin with the same fixed equal-width edges over
/// [-1, 1]; per-permutation adaptive edges would break exchangeability of
/// the statistic.
pub fn pair_omega(
    null: &PairSampleSet,
    alt: &PairSampleSet,
    metric: MetricId,
    nbins: usize,
) -> Result<f64> {
    match metric {
        MetricId::Jsd => {
            let p0 = bin_histogram(null, nbins)?;
            let p1 = bin_histogram(alt, nbins)?;
            jsd(&p0, &p1)
        }
        MetricId::Ks => ks_stat(null, alt),
        MetricId::W1 => wasserstein1(null, alt),
    }
}

/// Add-one p-value: `(1 + #{w* >= w_obs}) / (B + 1)`.
///
/// Ties count toward the numerator, so the estimate is valid for finite B
/// and lies in [1/(B+1), 1].
pub fn add_one_pvalue(omega_observed: f64, null_omegas: &[f64]) -> Result<f64> {
    if null_omegas.is_empty() {
        return Err(Error::InvalidArgument(
            "p-value needs at least one null draw".into(),
        ));
    }
    let exceed = null_omegas.iter().filter(|&&w| w >= omega_observed).count();
    Ok((1 + exceed) as f64 / (null_omegas.len() + 1) as f64)
}

/// Min, median, and max of the null effect-size draws.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OmegaSummary {
    pub min: f64,
    pub median: f64,
    pub max: f64,
}

impl OmegaSummary {
    fn from_draws(draws: &[f64]) -> Self {
        let mut sorted = draws.to_vec();
        sorted.sort_by(|a, b| a.partial_cmp(b).expect("no NaN in omegas"));
        let n = sorted.len();
        let median = if n % 2 == 1 {
            sorted[n / 2]
        } else {
            0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
        };
        Self {
            min: sorted[0],
            median,
            max: sorted[n - 1],
        }
    }
}

/// Outcome of one significance test, the unit of reporting and adjustment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub perturbation_id: String,
    pub metric: MetricId,
    pub omega_observed: f64,
    pub p_value: f64,
    /// Number of null statistic draws: permutations, or resampling
    /// replicates for the Monte Carlo variant.
    pub permutations: usize,
    pub k: usize,
    pub nbins: usize,
    pub seed: u64,
    pub null_omega_summary: OmegaSummary,
}

impl TestResult {
    pub fn with_perturbation_id(mut self, id: impl Into<String>) -> Self {
        self.perturbation_id = id.into();
        self
    }
}

/// Permutation test over a precomputed similarity matrix.
///
/// Draws B uniform random relabelings of the pooled 2k samples, recomputes
/// the effect size for each by pure reindexing, and returns the add-one
/// p-value. Each permutation's RNG is derived from `(seed, permutation
/// index)`, so the result is independent of worker count.
pub fn permutation_test(
    matrix: &SimilarityMatrix,
    metric: MetricId,
    nbins: usize,
    permutations: usize,
    seed: u64,
) -> Result<TestResult> {
    if permutations < 1 {
        return Err(Error::InvalidArgument(
            "permutation count must be >= 1".into(),
        ));
    }
    let omega_observed = pair_omega(&matrix.null_pairs(), &matrix.alt_pairs(), metric, nbins)?;

    let n = matrix.size();
    let null_omegas: Vec<f64> = (0..permutations)
        .into_par_iter()
        .map(|b| {
            let mut rng = derive_rng(seed, b as u64);
            let mut perm: Vec<usize> = (0..n).collect();
            perm.shuffle(&mut rng);
            let (null, alt) = matrix
                .permuted_pairs(&perm)
                .expect("shuffled identity is a bijection");
            pair_omega(&null, &alt, metric, nbins).expect("matrix values are in range")
        })
        .collect();

    Ok(TestResult {
        perturbation_id: String::new(),
        metric,
        omega_observed,
        p_value: add_one_pvalue(omega_observed, &null_omegas)?,
        permutations,
        k: matrix.k(),
        nbins,
        seed,
        null_omega_summary: OmegaSummary::from_draws(&null_omegas),
    })
}

/// Monte Carlo resampling test: the null effect-size distribution comes from
/// fresh replicate batch pairs instead of permutations.
///
/// `replicates` must hold similarity matrices built from independent batch
/// pairs drawn under the no-effect hypothesis (scripted or synthetic
/// generators); the same add-one p-value rule applies.
pub fn mc_resample_test(
    observed: &SimilarityMatrix,
    replicates: &[SimilarityMatrix],
    metric: MetricId,
    nbins: usize,
    seed: u64,
) -> Result<TestResult> {
    if replicates.is_empty() {
        return Err(Error::InvalidArgument(
            "resampling test requires at least one replicate".into(),
        ));
    }
    let omega_observed =
        pair_omega(&observed.null_pairs(), &observed.alt_pairs(), metric, nbins)?;
    let null_omegas: Vec<f64> = replicates
        .par_iter()
        .map(|m| {
            pair_omega(&m.null_pairs(), &m.alt_pairs(), metric, nbins)
                .expect("matrix values are in range")
        })
        .collect();

    Ok(TestResult {
        perturbation_id: String::new(),
        metric,
        omega_observed,
        p_value: add_one_pvalue(omega_observed, &null_omegas)?,
        permutations: replicates.len(),
        k: observed.k(),
        nbins,
        seed,
        null_omega_summary: OmegaSummary::from_draws(&null_omegas),
    })
}

/// Multiple-testing procedure identifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum AdjustProcedure {
    Bh,
    Bonferroni,
}

/// Raw and adjusted p-values with per-hypothesis rejection flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdjustedResults {
    pub procedure: AdjustProcedure,
    /// FDR level q for BH, family-wise alpha for Bonferroni.
    pub level: f64,
    pub raw: Vec<f64>,
    pub adjusted: Vec<f64>,
    pub rejected: Vec<bool>,
}

impl AdjustedResults {
    pub fn rejection_count(&self) -> usize {
        self.rejected.iter().filter(|&&r| r).count()
    }
}

fn validate_pvalues(pvals: &[f64], level: f64) -> Result<()> {
    if pvals.is_empty() {
        return Err(Error::InvalidArgument("no p-values to adjust".into()));
    }
    for &p in pvals {
        if !(p > 0.0 && p <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "p-value {p} outside (0, 1]"
            )));
        }
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "adjustment level {level} outside (0, 1)"
        )));
    }
    Ok(())
}

/// Benjamini-Hochberg step-up FDR control at level q.
///
/// Sorts the p-values ascending, finds the largest i with
/// `p_(i) <= i * q / m`, and rejects the i smallest. Adjusted p-values are
/// the monotone `min_{j >= i} (m * p_(j) / j)`, capped at 1.
pub fn bh_adjust(pvals: &[f64], q: f64) -> Result<AdjustedResults> {
    validate_pvalues(pvals, q)?;
    let m = pvals.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| pvals[a].partial_cmp(&pvals[b]).expect("validated"));

    let mut adjusted_sorted = vec![0.0f64; m];
    let mut running_min = f64::INFINITY;
    for rank in (0..m).rev() {
        let candidate = pvals[order[rank]] * m as f64 / (rank + 1) as f64;
        running_min = running_min.min(candidate).min(1.0);
        adjusted_sorted[rank] = running_min;
    }

    let mut cutoff_rank = None;
    for rank in (0..m).rev() {
        if pvals[order[rank]] <= (rank + 1) as f64 * q / m as f64 {
            cutoff_rank = Some(rank);
            break;
        }
    }

    let mut adjusted = vec![0.0f64; m];
    let mut rejected = vec![false; m];
    for (rank, &idx) in order.iter().enumerate() {
        adjusted[idx] = adjusted_sorted[rank];
        rejected[idx] = matches!(cutoff_rank, Some(c) if rank <= c);
    }
    Ok(AdjustedResults {
        procedure: AdjustProcedure::Bh,
        level: q,
        raw: pvals.to_vec(),
        adjusted,
        rejected,
    })
}

/// Bonferroni family-wise control: adjusted `p_i = min(1, m * p_i)`,
/// rejected iff adjusted < alpha.
pub fn bonferroni_adjust(pvals: &[f64], alpha: f64) -> Result<AdjustedResults> {
    validate_pvalues(pvals, alpha)?;
    let m = pvals.len() as f64;
    let adjusted: Vec<f64> = pvals.iter().map(|&p| (m * p).min(1.0)).collect();
    let rejected = adjusted.iter().map(|&p| p < alpha).collect();
    Ok(AdjustedResults {
        procedure: AdjustProcedure::Bonferroni,
        level: alpha,
        raw: pvals.to_vec(),
        adjusted,
        rejected,
    })
}

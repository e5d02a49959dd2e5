//! The pairwise similarity space: the full cosine matrix over the pooled
//! original and perturbed embeddings, and the pair-sample extractions that
//! feed the test statistics.
//!
//! The matrix is computed once; every permutation of group labels is then a
//! pure reindexing of precomputed entries, which is what makes large
//! permutation counts cheap.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embedder::EmbeddingVector;
use crate::error::{Error, Result};

/// Cosine similarity, clamped into [-1, 1] against floating-point overshoot.
pub fn cosine(u: &EmbeddingVector, v: &EmbeddingVector) -> Result<f64> {
    if u.dim() != v.dim() {
        return Err(Error::InvalidArgument(format!(
            "cosine of mismatched dims {} and {}",
            u.dim(),
            v.dim()
        )));
    }
    let dot: f64 = u
        .values()
        .iter()
        .zip(v.values())
        .map(|(a, b)| a * b)
        .sum();
    let norm_u = u.norm();
    let norm_v = v.norm();
    if norm_u <= 0.0 || norm_v <= 0.0 {
        return Err(Error::InvalidArgument("cosine of a zero-norm vector".into()));
    }
    Ok((dot / (norm_u * norm_v)).clamp(-1.0, 1.0))
}

/// Whether a pair-sample set came from within-group or cross-group pairs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PairKind {
    /// Unordered pairs within the original group: k(k-1)/2 values.
    Null,
    /// Ordered cross pairs original x perturbed: k^2 values.
    Alternative,
}

/// A flat list of similarity values extracted from the matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct PairSampleSet {
    values: Vec<f64>,
    kind: PairKind,
}

impl PairSampleSet {
    fn new(values: Vec<f64>, kind: PairKind, expected_size: usize) -> Self {
        debug_assert_eq!(values.len(), expected_size);
        Self { values, kind }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn kind(&self) -> PairKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Symmetric (2k)x(2k) cosine matrix over the pooled samples.
///
/// Rows 0..k are the original group, rows k..2k the perturbed group.
/// Immutable after construction and safe to share across permutation workers.
#[derive(Debug, Clone)]
pub struct SimilarityMatrix {
    entries: Vec<f64>,
    k: usize,
}

impl SimilarityMatrix {
    /// Cosine every pair of the pooled vectors.
    ///
    /// Both lists must have the same length k >= 2 and a uniform dimension.
    pub fn build(orig: &[EmbeddingVector], pert: &[EmbeddingVector]) -> Result<Self> {
        if orig.len() != pert.len() {
            return Err(Error::InvalidArgument(format!(
                "group sizes differ: {} original vs {} perturbed",
                orig.len(),
                pert.len()
            )));
        }
        let k = orig.len();
        if k < 2 {
            return Err(Error::InvalidArgument(format!(
                "need k >= 2 samples per group, got {k}"
            )));
        }
        let pooled: Vec<&EmbeddingVector> = orig.iter().chain(pert.iter()).collect();
        let dim = pooled[0].dim();
        if pooled.iter().any(|v| v.dim() != dim) {
            return Err(Error::InvalidArgument(
                "all embeddings must share one dimension".into(),
            ));
        }
        let n = 2 * k;
        let rows: Vec<Vec<f64>> = (0..n)
            .into_par_iter()
            .map(|i| {
                let mut row = vec![0.0f64; n];
                for (j, other) in pooled.iter().enumerate() {
                    row[j] = if i == j {
                        1.0
                    } else {
                        cosine(pooled[i], other).expect("dims checked above")
                    };
                }
                row
            })
            .collect();
        let entries: Vec<f64> = rows.into_iter().flatten().collect();
        Ok(Self { entries, k })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// Number of pooled samples, 2k.
    pub fn size(&self) -> usize {
        2 * self.k
    }

    #[inline]
    pub fn entry(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.size() + j]
    }

    /// Unordered within-original pairs: {M[i][j] : 0 <= i < j < k}.
    pub fn null_pairs(&self) -> PairSampleSet {
        let k = self.k;
        let mut values = Vec::with_capacity(k * (k - 1) / 2);
        for i in 0..k {
            for j in (i + 1)..k {
                values.push(self.entry(i, j));
            }
        }
        PairSampleSet::new(values, PairKind::Null, k * (k - 1) / 2)
    }

    /// Cross pairs original x perturbed: {M[i][k+j] : 0 <= i,j < k}.
    pub fn alt_pairs(&self) -> PairSampleSet {
        let k = self.k;
        let mut values = Vec::with_capacity(k * k);
        for i in 0..k {
            for j in 0..k {
                values.push(self.entry(i, k + j));
            }
        }
        PairSampleSet::new(values, PairKind::Alternative, k * k)
    }

    /// Pair sets under a relabeling of the pooled samples.
    ///
    /// Sample i is assigned to the original group iff `perm[i] < k`; the
    /// null and alternative sets are then re-extracted by pure reindexing,
    /// with no new similarity computations.
    pub fn permuted_pairs(&self, perm: &[usize]) -> Result<(PairSampleSet, PairSampleSet)> {
        let n = self.size();
        if perm.len() != n {
            return Err(Error::InvalidArgument(format!(
                "permutation length {} does not match 2k = {n}",
                perm.len()
            )));
        }
        let mut seen = vec![false; n];
        for &p in perm {
            if p >= n || seen[p] {
                return Err(Error::InvalidArgument(
                    "permutation is not a bijection on 0..2k".into(),
                ));
            }
            seen[p] = true;
        }

        let k = self.k;
        let mut new_original = Vec::with_capacity(k);
        let mut new_perturbed = Vec::with_capacity(k);
        for (i, &p) in perm.iter().enumerate() {
            if p < k {
                new_original.push(i);
            } else {
                new_perturbed.push(i);
            }
        }

        let mut null_values = Vec::with_capacity(k * (k - 1) / 2);
        for a in 0..k {
            for b in (a + 1)..k {
                null_values.push(self.entry(new_original[a], new_original[b]));
            }
        }
        let mut alt_values = Vec::with_capacity(k * k);
        for &a in &new_original {
            for &b in &new_perturbed {
                alt_values.push(self.entry(a, b));
            }
        }
        Ok((
            PairSampleSet::new(null_values, PairKind::Null, k * (k - 1) / 2),
            PairSampleSet::new(alt_values, PairKind::Alternative, k * k),
        ))
    }

    /// Row-major CSV dump with a header of sample ids, for external plotting.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let ids: Vec<String> = (0..self.k)
            .map(|i| format!("orig_{i}"))
            .chain((0..self.k).map(|i| format!("pert_{i}")))
            .collect();
        let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(file, "id,{}", ids.join(","))?;
        for (i, id) in ids.iter().enumerate() {
            let row: Vec<String> = (0..self.size())
                .map(|j| format!("{}", self.entry(i, j)))
                .collect();
            writeln!(file, "{id},{}", row.join(","))?;
        }
        Ok(())
    }
}

//! Distribution-based perturbation analysis for stochastic text generators.
//!
//! Given a generator, an input, and a perturbation of that input (or of the
//! generator itself), this crate estimates how strongly the perturbation
//! shifts the output distribution and whether the shift is statistically
//! significant — without any access to model internals.
//!
//! The pipeline:
//!
//! 1. [`sampler`] draws k independent responses for the original and the
//!    perturbed input, with durable caching.
//! 2. [`embedder`] maps response texts to fixed-dimension vectors.
//! 3. [`simspace`] builds the full pairwise cosine matrix over the pooled
//!    samples and extracts the within-original (null) and cross-group
//!    (alternative) similarity samples.
//! 4. [`inference`] bins those samples, computes an effect size (JSD by
//!    default; KS and Wasserstein-1 as alternates), runs a permutation test
//!    for significance, and adjusts p-values across many perturbations.
//! 5. [`calibration`] validates the machinery end-to-end on synthetic
//!    directional data with known ground truth, fully offline.
//!
//! Relabeling the pooled samples only reindexes the precomputed similarity
//! matrix, so permutation counts in the thousands cost milliseconds.

pub mod calibration;
pub mod embedder;
pub mod error;
pub mod inference;
pub mod sampler;
pub mod simspace;
pub mod util;

pub use error::{Error, Result};

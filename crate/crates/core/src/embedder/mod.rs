//! Text-to-vector embedding: a remote embedding endpoint for production use
//! and a deterministic token-hash embedder for fully offline runs.

mod cache;

use std::collections::BTreeMap;
use std::path::Path;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::util;

pub use cache::EmbeddingCache;

/// Maximum number of texts sent to a remote endpoint in one request.
const REMOTE_BATCH_LIMIT: usize = 64;

/// A fixed-dimension real vector with nonzero norm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    values: Vec<f64>,
    source_fingerprint: String,
}

impl EmbeddingVector {
    /// Construct a vector, rejecting dimension < 2 and zero norm.
    pub fn new(values: Vec<f64>, source_fingerprint: impl Into<String>) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::InvalidArgument(format!(
                "embedding dimension must be >= 2, got {}",
                values.len()
            )));
        }
        if !values.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidArgument(
                "embedding contains non-finite values".into(),
            ));
        }
        let norm_sq: f64 = values.iter().map(|v| v * v).sum();
        if norm_sq <= 0.0 {
            return Err(Error::InvalidArgument(
                "zero-norm embeddings are rejected".into(),
            ));
        }
        Ok(Self {
            values,
            source_fingerprint: source_fingerprint.into(),
        })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Hash of the source text plus the embedder that produced the vector.
    pub fn source_fingerprint(&self) -> &str {
        &self.source_fingerprint
    }
}

/// Which embedding backend to use.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum EmbedderKind {
    /// POST `{model, input: [texts]}`, vectors parsed from `data[i].embedding`.
    RemoteEmbeddingEndpoint {
        endpoint_url: String,
        model_id: String,
    },
    /// Seeded token-multiset hashing; no network, stable across runs.
    DeterministicTest,
}

/// Declarative embedder description, part of the experiment config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedderSpec {
    #[serde(flatten)]
    pub kind: EmbedderKind,
    /// Expected output dimension; remote responses are checked against it.
    pub dim: usize,
}

impl EmbedderSpec {
    pub fn deterministic(dim: usize) -> Self {
        Self {
            kind: EmbedderKind::DeterministicTest,
            dim,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim < 2 {
            return Err(Error::Config(format!(
                "embedder dim must be >= 2, got {}",
                self.dim
            )));
        }
        if let EmbedderKind::RemoteEmbeddingEndpoint {
            endpoint_url,
            model_id,
        } = &self.kind
        {
            if endpoint_url.is_empty() {
                return Err(Error::Config(
                    "remote embedder requires a non-empty endpoint_url".into(),
                ));
            }
            if model_id.is_empty() {
                return Err(Error::Config(
                    "remote embedder requires a non-empty model_id".into(),
                ));
            }
        }
        Ok(())
    }

    /// Stable hash of the spec; part of every vector's source fingerprint.
    pub fn fingerprint(&self) -> Result<String> {
        util::fingerprint(self)
    }
}

/// Sentinel token used when a text has no tokens at all, so that empty
/// responses still land on one fixed direction.
const EMPTY_SENTINEL: &str = "\u{0}empty-response";

/// Embed a text as a seeded pseudo-random unit vector.
///
/// Each whitespace token contributes a Gaussian direction seeded from a
/// stable content hash of the token; contributions are summed over the token
/// multiset and the result normalized. Texts sharing many tokens therefore
/// have a higher expected cosine, identical texts map to identical vectors,
/// and no network is involved.
pub fn deterministic_embed(text: &str, dim: usize) -> Result<EmbeddingVector> {
    if dim < 2 {
        return Err(Error::InvalidArgument(format!(
            "embedding dimension must be >= 2, got {dim}"
        )));
    }
    let mut sum = vec![0.0f64; dim];
    let mut token_count = 0usize;
    for token in text.split_whitespace() {
        add_token_direction(&mut sum, token);
        token_count += 1;
    }
    if token_count == 0 {
        add_token_direction(&mut sum, EMPTY_SENTINEL);
    }
    let norm = sum.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm < 1e-12 {
        // Gaussian contributions cancelled (practically unreachable);
        // fall back to the sentinel direction alone.
        sum.iter_mut().for_each(|v| *v = 0.0);
        add_token_direction(&mut sum, EMPTY_SENTINEL);
    }
    let norm = sum.iter().map(|v| v * v).sum::<f64>().sqrt();
    sum.iter_mut().for_each(|v| *v /= norm);

    let fp = util::sha256_hex(format!("det:{dim}:{text}").as_bytes());
    EmbeddingVector::new(sum, fp)
}

fn add_token_direction(sum: &mut [f64], token: &str) {
    let seed_hex = util::sha256_hex(token.as_bytes());
    let mut seed_bytes = [0u8; 8];
    hex::decode_to_slice(&seed_hex[..16], &mut seed_bytes).expect("sha256 hex decodes");
    let mut rng = util::derive_rng(u64::from_le_bytes(seed_bytes), 0);
    for slot in sum.iter_mut() {
        let g: f64 = StandardNormal.sample(&mut rng);
        *slot += g;
    }
}

/// Embedding frontend with a write-through cache.
///
/// Thread-safe; remote calls are issued in input order with at most
/// [`REMOTE_BATCH_LIMIT`] texts per request.
pub struct Embedder {
    spec: EmbedderSpec,
    spec_fingerprint: String,
    cache: Option<EmbeddingCache>,
    offline: bool,
    agent: ureq::Agent,
}

impl Embedder {
    pub fn new(spec: EmbedderSpec) -> Result<Self> {
        spec.validate()?;
        let spec_fingerprint = spec.fingerprint()?;
        Ok(Self {
            spec,
            spec_fingerprint,
            cache: None,
            offline: false,
            agent: ureq::Agent::config_builder()
                .http_status_as_error(false)
                .timeout_global(Some(std::time::Duration::from_secs(60)))
                .build()
                .new_agent(),
        })
    }

    /// Attach a durable cache file (`embeddings.jsonl`).
    pub fn with_cache(mut self, path: impl AsRef<Path>) -> Result<Self> {
        let cache = EmbeddingCache::open(path)?;
        cache.preload()?;
        self.cache = Some(cache);
        Ok(self)
    }

    /// Refuse any operation that would need the network.
    pub fn offline(mut self, offline: bool) -> Self {
        self.offline = offline;
        self
    }

    pub fn spec(&self) -> &EmbedderSpec {
        &self.spec
    }

    /// Fingerprint for one text under this embedder.
    pub fn text_fingerprint(&self, text: &str) -> String {
        util::sha256_hex(format!("{}\u{1f}{}", self.spec_fingerprint, text).as_bytes())
    }

    /// Embed texts, preserving input order. Cached texts are never re-sent.
    pub fn embed_batch(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>> {
        if texts.is_empty() {
            return Err(Error::InvalidArgument(
                "embed_batch requires a non-empty list of texts".into(),
            ));
        }
        let fingerprints: Vec<String> =
            texts.iter().map(|t| self.text_fingerprint(t)).collect();

        let mut out: Vec<Option<EmbeddingVector>> = vec![None; texts.len()];
        let mut missing: Vec<usize> = Vec::new();
        for (i, fp) in fingerprints.iter().enumerate() {
            if let Some(cache) = &self.cache {
                if let Some(values) = cache.get(fp)? {
                    out[i] = Some(EmbeddingVector::new(values, fp.clone())?);
                    continue;
                }
            }
            missing.push(i);
        }

        if !missing.is_empty() {
            let fresh = match &self.spec.kind {
                EmbedderKind::DeterministicTest => missing
                    .iter()
                    .map(|&i| {
                        let v = deterministic_embed(&texts[i], self.spec.dim)?;
                        EmbeddingVector::new(v.values().to_vec(), fingerprints[i].clone())
                    })
                    .collect::<Result<Vec<_>>>()?,
                EmbedderKind::RemoteEmbeddingEndpoint {
                    endpoint_url,
                    model_id,
                } => {
                    if self.offline {
                        return Err(Error::Offline(format!(
                            "{} uncached texts require the remote embedder",
                            missing.len()
                        )));
                    }
                    self.embed_remote(endpoint_url, model_id, texts, &missing, &fingerprints)?
                }
            };
            for (slot, vector) in missing.iter().zip(fresh) {
                if let Some(cache) = &self.cache {
                    cache.put(vector.source_fingerprint(), vector.values())?;
                }
                out[*slot] = Some(vector);
            }
        }

        let vectors: Vec<EmbeddingVector> =
            out.into_iter().map(|v| v.expect("all slots filled")).collect();
        let dim = vectors[0].dim();
        if vectors.iter().any(|v| v.dim() != dim) {
            return Err(Error::EmbedderContract(
                "embeddings in one batch have differing dimensions".into(),
            ));
        }
        Ok(vectors)
    }

    fn embed_remote(
        &self,
        endpoint_url: &str,
        model_id: &str,
        texts: &[String],
        missing: &[usize],
        fingerprints: &[String],
    ) -> Result<Vec<EmbeddingVector>> {
        let api_key = std::env::var("DBPA_API_KEY").ok();
        let mut vectors = Vec::with_capacity(missing.len());
        for chunk in missing.chunks(REMOTE_BATCH_LIMIT) {
            let input: Vec<&str> = chunk.iter().map(|&i| texts[i].as_str()).collect();
            let body = serde_json::json!({ "model": model_id, "input": input }).to_string();

            let mut request = self
                .agent
                .post(endpoint_url)
                .content_type("application/json");
            if let Some(key) = &api_key {
                request = request.header("authorization", format!("Bearer {key}"));
            }
            let mut response = request
                .send(body.as_str())
                .map_err(|e| Error::transport(e.to_string()))?;
            let status = response.status().as_u16();
            let text = response
                .body_mut()
                .read_to_string()
                .map_err(|e| Error::transport(e.to_string()))?;
            if !(200..300).contains(&status) {
                return Err(Error::upstream(status, text));
            }
            let parsed: RemoteEmbeddingResponse = serde_json::from_str(&text).map_err(|e| {
                Error::upstream(status, format!("unparseable embedding response: {e}"))
            })?;
            if parsed.data.len() != chunk.len() {
                return Err(Error::EmbedderContract(format!(
                    "requested {} embeddings, endpoint returned {}",
                    chunk.len(),
                    parsed.data.len()
                )));
            }
            for (&slot, item) in chunk.iter().zip(parsed.data) {
                if item.embedding.len() != self.spec.dim {
                    return Err(Error::EmbedderContract(format!(
                        "expected dim {}, endpoint returned dim {}",
                        self.spec.dim,
                        item.embedding.len()
                    )));
                }
                vectors.push(EmbeddingVector::new(
                    item.embedding,
                    fingerprints[slot].clone(),
                )?);
            }
        }
        Ok(vectors)
    }
}

#[derive(Deserialize)]
struct RemoteEmbeddingResponse {
    data: Vec<RemoteEmbeddingItem>,
}

#[derive(Deserialize)]
struct RemoteEmbeddingItem {
    embedding: Vec<f64>,
}

/// Extra request parameters forwarded verbatim to a remote endpoint.
pub type ExtraParams = BTreeMap<String, serde_json::Value>;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simspace::cosine;

    #[test]
    fn deterministic_embed_is_deterministic() {
        let a = deterministic_embed("a b c", 64).unwrap();
        let b = deterministic_embed("a b c", 64).unwrap();
        assert_eq!(a.values(), b.values());
        assert!((cosine(&a, &b).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn deterministic_embed_unit_norm() {
        for text in ["x", "", "hello world", "a a a a"] {
            let v = deterministic_embed(text, 32).unwrap();
            assert!((v.norm() - 1.0).abs() < 1e-9, "norm for {text:?}");
        }
    }

    #[test]
    fn deterministic_embed_rejects_small_dim() {
        assert!(matches!(
            deterministic_embed("x", 1),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn distinct_texts_are_not_parallel() {
        let a = deterministic_embed("x", 64).unwrap();
        let b = deterministic_embed("y", 64).unwrap();
        assert!(cosine(&a, &b).unwrap() < 1.0);
    }

    #[test]
    fn empty_text_hits_sentinel_direction() {
        let a = deterministic_embed("", 32).unwrap();
        let b = deterministic_embed("   ", 32).unwrap();
        assert_eq!(a.values(), b.values());
    }

    /// Texts sharing most tokens should usually be closer than disjoint
    /// texts. Checked as a frequency over 100 random token triples.
    #[test]
    fn shared_tokens_raise_cosine_most_of_the_time() {
        use rand::Rng;
        let mut hits = 0usize;
        let trials = 100usize;
        for trial in 0..trials {
            let mut rng = crate::util::derive_rng(0xE0BED, trial as u64);
            let word = |rng: &mut rand_chacha::ChaCha8Rng| -> String {
                let n: u32 = rng.random_range(0..1_000_000);
                format!("w{n}")
            };
            let base: Vec<String> = (0..8).map(|_| word(&mut rng)).collect();
            let mut near = base.clone();
            near[7] = word(&mut rng);
            let far: Vec<String> = (0..8).map(|_| word(&mut rng)).collect();

            let e_base = deterministic_embed(&base.join(" "), 64).unwrap();
            let e_near = deterministic_embed(&near.join(" "), 64).unwrap();
            let e_far = deterministic_embed(&far.join(" "), 64).unwrap();
            if cosine(&e_base, &e_near).unwrap() > cosine(&e_base, &e_far).unwrap() {
                hits += 1;
            }
        }
        assert!(hits >= 95, "only {hits}/{trials} triples ordered correctly");
    }

    #[test]
    fn zero_vector_rejected() {
        assert!(EmbeddingVector::new(vec![0.0, 0.0], "fp").is_err());
        assert!(EmbeddingVector::new(vec![1.0], "fp").is_err());
        assert!(EmbeddingVector::new(vec![1.0, 0.0], "fp").is_ok());
    }

    #[test]
    fn embed_batch_deterministic_kind() {
        let embedder = Embedder::new(EmbedderSpec::deterministic(16)).unwrap();
        let out = embedder
            .embed_batch(&["x".to_string(), "x".to_string()])
            .unwrap();
        assert_eq!(out[0].values(), out[1].values());

        let out = embedder
            .embed_batch(&["x".to_string(), "y".to_string()])
            .unwrap();
        assert!(cosine(&out[0], &out[1]).unwrap() < 1.0);
    }

    #[test]
    fn embed_batch_rejects_empty_input() {
        let embedder = Embedder::new(EmbedderSpec::deterministic(16)).unwrap();
        assert!(matches!(
            embedder.embed_batch(&[]),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn embed_batch_cache_round_trip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("embeddings.jsonl");
        let texts = vec!["alpha beta".to_string(), "gamma".to_string()];

        let first = Embedder::new(EmbedderSpec::deterministic(24))
            .unwrap()
            .with_cache(&path)
            .unwrap()
            .embed_batch(&texts)
            .unwrap();
        let second = Embedder::new(EmbedderSpec::deterministic(24))
            .unwrap()
            .with_cache(&path)
            .unwrap()
            .embed_batch(&texts)
            .unwrap();
        for (a, b) in first.iter().zip(&second) {
            assert_eq!(a.values(), b.values(), "cache hit must equal cache miss");
        }
    }
}

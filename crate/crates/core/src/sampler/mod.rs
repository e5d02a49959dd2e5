//! Response sampling: k independent draws from a configured generator per
//! input, with a durable write-through cache so repeated runs never
//! re-query external services.

mod cache;
mod remote;

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::str::FromStr;
use std::sync::atomic::{AtomicBool, AtomicU64, AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::util;

pub use cache::{CacheRecord, SampleCache};

/// Default bound on concurrent remote draws.
const DEFAULT_CONCURRENCY: usize = 4;

/// Which group of an experiment a sample belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SampleGroup {
    Original,
    /// Index of the perturbation within the experiment.
    Perturbed(u32),
}

impl std::fmt::Display for SampleGroup {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SampleGroup::Original => write!(f, "original"),
            SampleGroup::Perturbed(i) => write!(f, "perturbed-{i}"),
        }
    }
}

impl FromStr for SampleGroup {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "original" {
            return Ok(SampleGroup::Original);
        }
        if let Some(index) = s.strip_prefix("perturbed-") {
            let index: u32 = index
                .parse()
                .map_err(|_| Error::InvalidArgument(format!("bad group label {s:?}")))?;
            return Ok(SampleGroup::Perturbed(index));
        }
        Err(Error::InvalidArgument(format!("bad group label {s:?}")))
    }
}

impl Serialize for SampleGroup {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for SampleGroup {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

fn default_temperature() -> f64 {
    1.0
}

fn default_max_tokens() -> u32 {
    256
}

fn default_true() -> bool {
    true
}

/// Which generator backend to sample from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum GeneratorKind {
    /// POST `{model, messages, temperature, max_tokens}` per draw;
    /// the reply text is `choices[0].message.content`.
    RemoteChatEndpoint { endpoint_url: String },
    /// Seeded draws from a fixed response table; no network.
    Scripted {
        /// Default response table, required non-empty.
        responses: Vec<String>,
        /// Per-prompt override tables, so different effective prompts can
        /// map to different output distributions in offline experiments.
        #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
        prompt_responses: BTreeMap<String, Vec<String>>,
        /// Sample with replacement (default). When disabled, a prompt can
        /// supply at most `responses.len()` draws.
        #[serde(default = "default_true")]
        with_replacement: bool,
    },
}

/// Declarative description of the stochastic generator under audit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    #[serde(flatten)]
    pub kind: GeneratorKind,
    /// Model identifier sent to remote endpoints; informational for
    /// scripted generators.
    #[serde(default)]
    pub model_id: String,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: u32,
    /// Extra request fields forwarded verbatim to remote endpoints.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub extra_params: BTreeMap<String, serde_json::Value>,
}

impl GeneratorSpec {
    /// A scripted generator over a fixed table, for offline use.
    pub fn scripted(responses: Vec<String>) -> Self {
        Self {
            kind: GeneratorKind::Scripted {
                responses,
                prompt_responses: BTreeMap::new(),
                with_replacement: true,
            },
            model_id: String::new(),
            temperature: default_temperature(),
            max_tokens: default_max_tokens(),
            extra_params: BTreeMap::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.temperature.is_nan() || self.temperature < 0.0 {
            return Err(Error::Config(format!(
                "temperature must be >= 0, got {}",
                self.temperature
            )));
        }
        match &self.kind {
            GeneratorKind::RemoteChatEndpoint { endpoint_url } => {
                if endpoint_url.is_empty() {
                    return Err(Error::Config(
                        "remote generator requires a non-empty endpoint_url".into(),
                    ));
                }
                if self.model_id.is_empty() {
                    return Err(Error::Config(
                        "remote generator requires a non-empty model_id".into(),
                    ));
                }
            }
            GeneratorKind::Scripted { responses, .. } => {
                if responses.is_empty() {
                    return Err(Error::Config(
                        "scripted generator requires a non-empty response table".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    /// Stable hash of the full spec. Changing the model, temperature, or
    /// any other field yields a different fingerprint and therefore a
    /// different cache key.
    pub fn fingerprint(&self) -> Result<String> {
        util::fingerprint(self)
    }
}

/// One sampled generator output plus its provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseSample {
    pub text: String,
    pub group: SampleGroup,
    pub draw_index: usize,
    pub prompt_fingerprint: String,
    pub gen_fingerprint: String,
    pub seed: u64,
    pub created_at: u64,
}

impl ResponseSample {
    /// Empty outputs are legitimate points of the output distribution;
    /// they are kept and flagged rather than retried.
    pub fn is_empty_response(&self) -> bool {
        self.text.is_empty()
    }
}

/// k samples for one (prompt, group), immutable once returned.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleBatch {
    pub prompt: String,
    pub group: SampleGroup,
    pub samples: Vec<ResponseSample>,
    pub k: usize,
}

impl SampleBatch {
    fn new(prompt: String, group: SampleGroup, samples: Vec<ResponseSample>) -> Self {
        debug_assert!(samples.iter().all(|s| s.group == group));
        debug_assert!(samples
            .iter()
            .enumerate()
            .all(|(i, s)| s.draw_index == i));
        let k = samples.len();
        Self {
            prompt,
            group,
            samples,
            k,
        }
    }

    pub fn texts(&self) -> Vec<String> {
        self.samples.iter().map(|s| s.text.clone()).collect()
    }
}

/// Sampling frontend over a cache directory.
///
/// Thread-safe: remote draws run concurrently up to the configured bound,
/// cache writes are serialized, and returned batches are immutable.
pub struct Sampler {
    cache: SampleCache,
    concurrency: usize,
    offline: bool,
    retry_base_delay: Duration,
    agent: ureq::Agent,
    cache_hits: AtomicU64,
    cache_misses: AtomicU64,
}

impl Sampler {
    pub fn new(cache_dir: impl Into<PathBuf>) -> Self {
        Self {
            cache: SampleCache::new(cache_dir),
            concurrency: DEFAULT_CONCURRENCY,
            offline: false,
            retry_base_delay: Duration::from_secs(1),
            agent: ureq::Agent::config_builder()
                .http_status_as_error(false)
                .timeout_global(Some(Duration::from_secs(120)))
                .build()
                .new_agent(),
            cache_hits: AtomicU64::new(0),
            cache_misses: AtomicU64::new(0),
        }
    }

    /// Bound on concurrent remote draws (minimum 1).
    pub fn concurrency(mut self, n: usize) -> Self {
        self.concurrency = n.max(1);
        self
    }

    /// Refuse any operation that would need the network.
    pub fn offline(mut self, offline: bool) -> Self {
        self.offline = offline;
        self
    }

    /// First retry backoff; doubles per attempt. Production default is 1s.
    pub fn retry_base_delay(mut self, delay: Duration) -> Self {
        self.retry_base_delay = delay;
        self
    }

    pub fn cache(&self) -> &SampleCache {
        &self.cache
    }

    pub fn cache_hits(&self) -> u64 {
        self.cache_hits.load(Ordering::Relaxed)
    }

    pub fn cache_misses(&self) -> u64 {
        self.cache_misses.load(Ordering::Relaxed)
    }

    /// Cache key for a (generator, prompt, seed) triple. Any change to the
    /// generator spec or seed invalidates previously cached samples.
    pub fn prompt_fingerprint(
        &self,
        gen: &GeneratorSpec,
        prompt: &str,
        seed: u64,
    ) -> Result<String> {
        let canonical = util::canonical_json(gen)?;
        Ok(util::sha256_hex(
            format!("{prompt}\u{1f}{canonical}\u{1f}{seed}").as_bytes(),
        ))
    }

    /// Obtain k i.i.d. response texts for one (prompt, group).
    ///
    /// Serves from the cache when at least k records exist; otherwise draws
    /// fresh samples (seeded table draws for scripted generators,
    /// independent stateless requests for remote ones) and writes them
    /// through to the cache before returning.
    pub fn sample_responses(
        &self,
        gen: &GeneratorSpec,
        prompt: &str,
        group: SampleGroup,
        k: usize,
        seed: u64,
    ) -> Result<SampleBatch> {
        if k < 2 {
            return Err(Error::InvalidArgument(format!(
                "need k >= 2 draws for a pairwise null distribution, got {k}"
            )));
        }
        gen.validate()?;
        let prompt_fp = self.prompt_fingerprint(gen, prompt, seed)?;

        if let Some(records) = self.cache.load(&prompt_fp, group, k)? {
            self.cache_hits.fetch_add(1, Ordering::Relaxed);
            return Ok(self.batch_from_records(prompt, group, &prompt_fp, records));
        }
        self.cache_misses.fetch_add(1, Ordering::Relaxed);

        let gen_fp = gen.fingerprint()?;
        let texts = match &gen.kind {
            GeneratorKind::Scripted {
                responses,
                prompt_responses,
                with_replacement,
            } => {
                let table = prompt_responses.get(prompt).unwrap_or(responses);
                if table.is_empty() {
                    return Err(Error::Config(format!(
                        "scripted table for prompt {prompt:?} is empty"
                    )));
                }
                scripted_draws(table, k, seed, *with_replacement)?
            }
            GeneratorKind::RemoteChatEndpoint { endpoint_url } => {
                if self.offline {
                    return Err(Error::Offline(format!(
                        "sampling {k} draws from {endpoint_url} requires the network \
                         and the cache has no batch for this key"
                    )));
                }
                self.remote_draws(gen, endpoint_url, prompt, k)?
            }
        };

        let created_at = util::epoch_seconds();
        let records: Vec<CacheRecord> = texts
            .into_iter()
            .enumerate()
            .map(|(draw_index, text)| CacheRecord {
                text,
                group,
                draw_index,
                seed,
                created_at,
                gen_fingerprint: gen_fp.clone(),
            })
            .collect();
        self.cache.store(&prompt_fp, group, &records)?;
        Ok(self.batch_from_records(prompt, group, &prompt_fp, records))
    }

    /// Return the cached batch for a key, or None on a miss. Never issues
    /// network traffic; partial caches are a miss, never a shorter batch.
    pub fn load_cached(
        &self,
        gen: &GeneratorSpec,
        prompt: &str,
        group: SampleGroup,
        k: usize,
        seed: u64,
    ) -> Result<Option<SampleBatch>> {
        let prompt_fp = self.prompt_fingerprint(gen, prompt, seed)?;
        Ok(self
            .cache
            .load(&prompt_fp, group, k)?
            .map(|records| self.batch_from_records(prompt, group, &prompt_fp, records)))
    }

    fn batch_from_records(
        &self,
        prompt: &str,
        group: SampleGroup,
        prompt_fp: &str,
        records: Vec<CacheRecord>,
    ) -> SampleBatch {
        let samples = records
            .into_iter()
            .map(|r| ResponseSample {
                text: r.text,
                group: r.group,
                draw_index: r.draw_index,
                prompt_fingerprint: prompt_fp.to_string(),
                gen_fingerprint: r.gen_fingerprint,
                seed: r.seed,
                created_at: r.created_at,
            })
            .collect();
        SampleBatch::new(prompt.to_string(), group, samples)
    }

    /// k concurrent stateless completions. No request carries any state
    /// from another draw of the batch.
    fn remote_draws(
        &self,
        gen: &GeneratorSpec,
        endpoint_url: &str,
        prompt: &str,
        k: usize,
    ) -> Result<Vec<String>> {
        let request = remote::ChatRequest {
            endpoint_url,
            model_id: &gen.model_id,
            temperature: gen.temperature,
            max_tokens: gen.max_tokens,
            extra_params: &gen.extra_params,
            prompt,
        };
        let results: Mutex<Vec<Option<String>>> = Mutex::new(vec![None; k]);
        let first_error: Mutex<Option<Error>> = Mutex::new(None);
        let next_draw = AtomicUsize::new(0);
        let failed = AtomicBool::new(false);

        std::thread::scope(|scope| {
            for _ in 0..self.concurrency.min(k) {
                scope.spawn(|| loop {
                    if failed.load(Ordering::Relaxed) {
                        return;
                    }
                    let draw = next_draw.fetch_add(1, Ordering::Relaxed);
                    if draw >= k {
                        return;
                    }
                    match remote::chat_completion(&self.agent, &request, self.retry_base_delay)
                    {
                        Ok(text) => {
                            results.lock().expect("results lock")[draw] = Some(text);
                        }
                        Err(e) => {
                            failed.store(true, Ordering::Relaxed);
                            first_error
                                .lock()
                                .expect("error lock")
                                .get_or_insert(e);
                            return;
                        }
                    }
                });
            }
        });

        if let Some(err) = first_error.into_inner().expect("error lock") {
            return Err(err);
        }
        Ok(results
            .into_inner()
            .expect("results lock")
            .into_iter()
            .map(|t| t.expect("all draws completed"))
            .collect())
    }
}

/// Seeded draws from a response table. Deterministic: draw i is a pure
/// function of (seed, i), so batches are byte-identical across runs.
fn scripted_draws(
    table: &[String],
    k: usize,
    seed: u64,
    with_replacement: bool,
) -> Result<Vec<String>> {
    if with_replacement {
        Ok((0..k)
            .map(|draw| {
                let mut rng = util::derive_rng(seed, draw as u64);
                table[rng.random_range(0..table.len())].clone()
            })
            .collect())
    } else {
        if k > table.len() {
            return Err(Error::Config(format!(
                "scripted table has {} entries but {k} draws were requested \
                 with replacement disabled",
                table.len()
            )));
        }
        let mut order: Vec<usize> = (0..table.len()).collect();
        order.shuffle(&mut util::derive_rng(seed, 0));
        Ok(order[..k].iter().map(|&i| table[i].clone()).collect())
    }
}

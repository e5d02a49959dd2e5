//! Fingerprinting and seed-derivation helpers.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::Result;

/// Hex-encoded SHA-256 of raw bytes, truncated to 32 hex chars (128 bits).
pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    hex::encode(&digest[..16])
}

/// Canonical JSON for fingerprinting: object keys sorted, no whitespace.
///
/// Round-trips through `serde_json::Value`, whose object representation
/// is a sorted map, so field order in the source struct does not leak
/// into the fingerprint.
pub fn canonical_json<T: Serialize>(value: &T) -> Result<String> {
    let v = serde_json::to_value(value)?;
    Ok(serde_json::to_string(&v)?)
}

/// Fingerprint of any serializable value via its canonical JSON.
pub fn fingerprint<T: Serialize>(value: &T) -> Result<String> {
    Ok(sha256_hex(canonical_json(value)?.as_bytes()))
}

/// SplitMix64 finalizer. Bijective on u64, used to decorrelate seed streams.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive a child seed for stream `stream` of a master seed.
///
/// Workers seeded per stream index produce identical results regardless of
/// how the streams are scheduled across threads.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    mix(seed ^ mix(stream))
}

/// An independently seeded RNG for stream `stream` of a master seed.
pub fn derive_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, stream))
}

/// Seconds since the Unix epoch. Excluded from all fingerprints.
pub fn epoch_seconds() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

//! Deterministic RNG streams for reproducible campaigns.
//!
//! Draws use xorshift64* so output is stable across platforms and builds.
//! Stream seeds are derived by hashing the (campaign, spec, task, agent)
//! coordinates, which makes every task independently reproducible and safe
//! to run in parallel.

use sha2::{Digest, Sha256};

/// Deterministic RNG with 64 bits of state. Not cryptographically secure.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DetRng {
    state: u64,
}

impl DetRng {
    /// A zero seed is remapped to a fixed non-zero constant to avoid the
    /// xorshift lockup state.
    pub fn new(seed: u64) -> Self {
        let state = if seed == 0 { 0x9E37_79B9_7F4A_7C15 } else { seed };
        Self { state }
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        let mut x = self.state;
        x ^= x >> 12;
        x ^= x << 25;
        x ^= x >> 27;
        self.state = x;
        x.wrapping_mul(0x2545_F491_4F6C_DD1D)
    }

    /// Uniform draw in `[0, 1)` with 53 bits of precision.
    #[inline]
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Bernoulli draw. `p <= 0.0` never fires, `p >= 1.0` always fires.
    #[inline]
    pub fn bernoulli(&mut self, p: f64) -> bool {
        if p >= 1.0 {
            return true;
        }
        if p <= 0.0 {
            return false;
        }
        self.next_f64() < p
    }

    /// Uniform draw in `[lo, hi)`.
    #[inline]
    pub fn gen_range(&mut self, lo: u64, hi: u64) -> u64 {
        debug_assert!(lo < hi);
        lo + self.next_u64() % (hi - lo)
    }
}

/// Derive a 64-bit seed from string parts. Parts are joined with a unit
/// separator so ("ab","c") and ("a","bc") hash differently.
pub fn derive_seed(parts: &[&str]) -> u64 {
    let mut hasher = Sha256::new();
    for (i, part) in parts.iter().enumerate() {
        if i > 0 {
            hasher.update([0x1f]);
        }
        hasher.update(part.as_bytes());
    }
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("sha256 yields 32 bytes"))
}

/// Default per-(spec, task) seed: hash of campaign seed, spec id, task id.
pub fn spec_task_seed(campaign_seed: u64, spec_id: &str, task_id: &str) -> u64 {
    derive_seed(&[&campaign_seed.to_string(), spec_id, task_id])
}

/// Seed for the RNG stream of one agent within one task run. `spec_id` is
/// `None` for the baseline pass.
pub fn agent_stream_seed(
    campaign_seed: u64,
    spec_id: Option<&str>,
    task_id: &str,
    agent_id: &str,
) -> u64 {
    derive_seed(&[
        &campaign_seed.to_string(),
        spec_id.unwrap_or("baseline"),
        task_id,
        agent_id,
    ])
}

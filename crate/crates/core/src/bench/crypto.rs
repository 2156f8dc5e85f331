//! Per-operation signing and verification timings.

use std::time::Instant;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

use super::{percentile_sorted, BenchError};
use crate::crypto::{sha256_digest, Algorithm, KeyPair};

#[derive(Debug, Clone, PartialEq)]
pub struct OperationTimings {
    pub algorithm: Algorithm,
    /// Sorted ns per sign.
    pub sign_ns: Vec<u64>,
    /// Sorted ns per verify.
    pub verify_ns: Vec<u64>,
}

impl OperationTimings {
    pub fn median_sign(&self) -> u64 {
        percentile_sorted(&self.sign_ns, 50.0).expect("non-empty")
    }

    pub fn median_verify(&self) -> u64 {
        percentile_sorted(&self.verify_ns, 50.0).expect("non-empty")
    }
}

/// Signs and verifies `ops` distinct 32-byte digests, timing each call.
pub fn time_operations(algorithm: Algorithm, ops: usize, seed: u64) -> Result<OperationTimings, BenchError> {
    if ops == 0 {
        return Err(BenchError::Config("ops must be at least 1".into()));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let key = KeyPair::generate_with(algorithm, &mut rng).map_err(|e| BenchError::Config(e.to_string()))?;
    let public = key.public_key().clone();
    let mut sign_ns = Vec::with_capacity(ops);
    let mut verify_ns = Vec::with_capacity(ops);
    let mut msg = [0u8; 64];
    for _ in 0..ops {
        rng.fill_bytes(&mut msg);
        let digest = sha256_digest(&msg);
        let t = Instant::now();
        let sig = key.sign(&digest).map_err(|e| BenchError::Config(e.to_string()))?;
        sign_ns.push(t.elapsed().as_nanos() as u64);
        let t = Instant::now();
        let ok = public.verify(&digest, &sig);
        verify_ns.push(t.elapsed().as_nanos() as u64);
        if !ok {
            return Err(BenchError::Config("signature failed to verify".into()));
        }
    }
    sign_ns.sort_unstable();
    verify_ns.sort_unstable();
    Ok(OperationTimings {
        algorithm,
        sign_ns,
        verify_ns,
    })
}

//! Median sign and verify times of the two signature algorithms.

use adschain::bench::crypto::time_operations;
use adschain::crypto::Algorithm;

fn main() {
    let ops = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(500);
    for alg in Algorithm::ALL {
        let t = time_operations(alg, ops, 1).unwrap();
        println!(
            "{:<24} sign {:>8.3} ms  verify {:>8.3} ms  ({ops} ops, {} byte signatures)",
            alg.name(),
            t.median_sign() as f64 / 1e6,
            t.median_verify() as f64 / 1e6,
            alg.signature_len()
        );
    }
}

//! Per-operation SSP timings: key retrieval from a warm cache, chain
//! verification and signing.

use adschain::bench::{bench_ssp, BenchConfig, BenchTarget, SigningMode, SspReport};

fn main() {
    let results: Vec<_> = [SigningMode::Ecdsa, SigningMode::Rsa]
        .into_iter()
        .map(|mode| bench_ssp(&BenchConfig::new(BenchTarget::Ssp, 100.0, 1, mode).with_duration(2.0)).unwrap())
        .collect();
    print!("{}", SspReport::from_results(&results).unwrap().render_text());
}

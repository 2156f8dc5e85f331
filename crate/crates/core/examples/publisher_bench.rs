//! A small marginal-delay table for the publisher: unsigned, ECDSA and RSA
//! pages at two request rates.

use adschain::bench::{run_load, BenchConfig, BenchTarget, MarginalDelayReport, PublisherTarget, SigningMode};

fn main() {
    let mut runs = Vec::new();
    for rps in [5.0, 10.0] {
        for n_ads in [1, 10] {
            for mode in [SigningMode::None, SigningMode::Ecdsa, SigningMode::Rsa] {
                let cfg = BenchConfig::new(BenchTarget::Publisher, rps, n_ads, mode).with_duration(1.0);
                let target = PublisherTarget::new(&cfg).unwrap();
                let d = run_load(&cfg, &target).unwrap();
                eprintln!("{rps} rps {n_ads} ads {}: {} requests, {} errors", mode.label(), d.completed(), d.error_count);
                runs.push(d);
            }
        }
    }
    print!("{}", MarginalDelayReport::from_runs(&runs).unwrap().render_text());
}

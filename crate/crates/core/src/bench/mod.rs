//! Load generation and latency measurement.
//!
//! A run issues requests on an open-loop schedule against a publisher or an
//! SSP, records send-to-response latency per request, and keeps measurement
//! separate from reporting: every run can be written to a sample file and
//! the report rebuilt from it.

pub mod crypto;
pub mod load;
pub mod report;
pub mod samples;
pub mod ssp;

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crypto::Algorithm;
use crate::sim::topology::Transport;
use crate::sim::SimError;

pub use load::{run_load, LoadTarget, PublisherTarget};
pub use report::{marginal_delay, MarginalDelay, MarginalDelayReport, SspReport};
pub use ssp::{bench_ssp, SspBenchResult, SspTarget, StageSample};

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("percentile of an empty sample set")]
    EmptySamples,
    #[error("percentile {0} is outside 0..=100")]
    InvalidPercentile(f64),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("target unreachable: {0}")]
    Unreachable(String),
    #[error("runs are not comparable: {0}")]
    MismatchedConfigs(String),
    #[error("no instrumented records: {0}")]
    NoRecords(String),
    #[error("sample file line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum BenchTarget {
    Publisher,
    Ssp,
}

/// Signature algorithm of a run, or none for the unsigned baseline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum SigningMode {
    None,
    Ecdsa,
    Rsa,
}

impl SigningMode {
    pub fn algorithm(self) -> Option<Algorithm> {
        match self {
            SigningMode::None => None,
            SigningMode::Ecdsa => Some(Algorithm::EcdsaP256Sha256),
            SigningMode::Rsa => Some(Algorithm::Rsa2048Pkcs1v15Sha256),
        }
    }

    pub fn is_signed(self) -> bool {
        self != SigningMode::None
    }

    pub fn label(self) -> &'static str {
        match self {
            SigningMode::None => "none",
            SigningMode::Ecdsa => "ECDSA P-256",
            SigningMode::Rsa => "RSA 2048",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchConfig {
    pub target: BenchTarget,
    pub throughput_rps: f64,
    pub n_ads: usize,
    pub algorithm: SigningMode,
    pub duration_secs: f64,
    #[serde(default)]
    pub warmup_secs: f64,
    /// Concurrent in-flight requests.
    #[serde(default = "default_workers")]
    pub workers: usize,
    /// Share of responses whose chains are verified, not just counted.
    #[serde(default = "default_verify_fraction")]
    pub verify_fraction: f64,
    /// How long past the schedule queued requests may still start. Defaults
    /// to the run duration.
    #[serde(default)]
    pub grace_secs: Option<f64>,
    /// Relative rate deficit tolerated before a run is flagged.
    #[serde(default = "default_shortfall_tolerance")]
    pub shortfall_tolerance: f64,
    #[serde(default)]
    pub transport: Transport,
    #[serde(default)]
    pub seed: u64,
}

fn default_workers() -> usize {
    4
}

fn default_verify_fraction() -> f64 {
    0.02
}

fn default_shortfall_tolerance() -> f64 {
    0.05
}

impl BenchConfig {
    pub const DEFAULT_DURATION_SECS: f64 = 60.0;

    pub fn new(target: BenchTarget, throughput_rps: f64, n_ads: usize, algorithm: SigningMode) -> Self {
        Self {
            target,
            throughput_rps,
            n_ads,
            algorithm,
            duration_secs: Self::DEFAULT_DURATION_SECS,
            warmup_secs: 0.0,
            workers: default_workers(),
            verify_fraction: default_verify_fraction(),
            grace_secs: None,
            shortfall_tolerance: default_shortfall_tolerance(),
            transport: Transport::InProcess,
            seed: 0,
        }
    }

    pub fn with_duration(mut self, secs: f64) -> Self {
        self.duration_secs = secs;
        self
    }

    pub fn with_warmup(mut self, secs: f64) -> Self {
        self.warmup_secs = secs;
        self
    }

    pub fn validate(&self) -> Result<(), BenchError> {
        let bad = |m: &str| Err(BenchError::Config(m.to_string()));
        if !(self.throughput_rps.is_finite() && self.throughput_rps > 0.0) {
            return bad("throughput_rps must be positive");
        }
        if !(self.duration_secs.is_finite() && self.duration_secs >= 1.0) {
            return bad("duration must be at least 1 s");
        }
        if !(self.warmup_secs.is_finite() && self.warmup_secs >= 0.0) {
            return bad("warmup must be nonnegative");
        }
        if self.n_ads == 0 {
            return bad("n_ads must be at least 1");
        }
        if self.target == BenchTarget::Ssp && self.n_ads != 1 {
            return bad("the ssp target handles one ad-tag per request");
        }
        if self.workers == 0 {
            return bad("workers must be at least 1");
        }
        if !(0.0..=1.0).contains(&self.verify_fraction) {
            return bad("verify_fraction must be within 0..=1");
        }
        if let Some(g) = self.grace_secs {
            if !(g.is_finite() && g >= 0.0) {
                return bad("grace must be nonnegative");
            }
        }
        Ok(())
    }

    pub fn grace(&self) -> Duration {
        Duration::from_secs_f64(self.grace_secs.unwrap_or(self.duration_secs))
    }

    /// True when `other` differs from `self` at most in the signing mode.
    pub fn is_pair_of(&self, other: &BenchConfig) -> bool {
        let mut o = other.clone();
        o.algorithm = self.algorithm;
        &o == self
    }
}

/// Nearest-rank percentile: the value at 1-based rank `ceil(p/100 * N)` of
/// the sorted samples.
pub fn percentile(samples: &[u64], p: f64) -> Result<u64, BenchError> {
    let mut sorted = samples.to_vec();
    sorted.sort_unstable();
    percentile_sorted(&sorted, p)
}

/// [`percentile`] on samples already sorted ascending.
pub fn percentile_sorted(sorted: &[u64], p: f64) -> Result<u64, BenchError> {
    if sorted.is_empty() {
        return Err(BenchError::EmptySamples);
    }
    if !(0.0..=100.0).contains(&p) {
        return Err(BenchError::InvalidPercentile(p));
    }
    Ok(sorted[nearest_rank(sorted.len(), p) - 1])
}

fn nearest_rank(n: usize, p: f64) -> usize {
    let exact = p * n as f64 / 100.0;
    let nearest = exact.round();
    // Absorb representation error such as 0.29 * 100 = 28.999999999999996.
    let rank = if (exact - nearest).abs() < 1e-9 { nearest } else { exact.ceil() };
    (rank as usize).clamp(1, n)
}

/// Monotonic timer characteristics, measured on the running machine.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimerInfo {
    /// Smallest nonzero step observed between consecutive reads.
    pub resolution_ns: u64,
    /// Mean cost of one read.
    pub overhead_ns: u64,
}

impl TimerInfo {
    pub fn measure() -> Self {
        const READS: u32 = 20_000;
        let start = Instant::now();
        let mut prev = start;
        let mut resolution = u64::MAX;
        for _ in 0..READS {
            let now = Instant::now();
            let step = now.duration_since(prev).as_nanos() as u64;
            if step > 0 {
                resolution = resolution.min(step);
            }
            prev = now;
        }
        let overhead = start.elapsed().as_nanos() as u64 / READS as u64;
        Self {
            resolution_ns: if resolution == u64::MAX { 0 } else { resolution },
            overhead_ns: overhead,
        }
    }
}

/// How late requests left relative to the ideal schedule.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct DriftSummary {
    pub p50_ns: u64,
    pub p99_ns: u64,
    pub max_ns: u64,
}

impl DriftSummary {
    fn from_samples(mut drift: Vec<u64>) -> Self {
        if drift.is_empty() {
            return Self::default();
        }
        drift.sort_unstable();
        Self {
            p50_ns: percentile_sorted(&drift, 50.0).expect("non-empty"),
            p99_ns: percentile_sorted(&drift, 99.0).expect("non-empty"),
            max_ns: *drift.last().expect("non-empty"),
        }
    }
}

/// Outcome of one measured run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyDistribution {
    pub config: BenchConfig,
    /// Send-to-response latency of every completed request, sorted ascending.
    #[serde(skip)]
    pub samples: Vec<u64>,
    pub achieved_rps: f64,
    pub error_count: u64,
    pub scheduled: u64,
    /// Requests still queued when the grace period ran out.
    pub abandoned: u64,
    pub drift: DriftSummary,
    /// Achieved rate fell short of the configured one beyond tolerance.
    pub shortfall: bool,
    #[serde(default)]
    pub first_error: Option<String>,
    pub timer: TimerInfo,
}

impl LatencyDistribution {
    pub fn percentile(&self, p: f64) -> Result<u64, BenchError> {
        percentile_sorted(&self.samples, p)
    }

    pub fn completed(&self) -> usize {
        self.samples.len()
    }

    pub fn mean_ns(&self) -> Option<f64> {
        (!self.samples.is_empty()).then(|| self.samples.iter().map(|&s| s as f64).sum::<f64>() / self.samples.len() as f64)
    }
}

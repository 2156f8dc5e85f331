//! Open-loop load generator.

use std::collections::HashMap;
use std::sync::Arc;
use std::time::{Duration, Instant};

use crossbeam_channel::unbounded;

use super::{BenchConfig, BenchError, BenchTarget, DriftSummary, LatencyDistribution, TimerInfo};
use crate::chain::verify_chain;
use crate::clock::SystemClock;
use crate::codec::extract_query;
use crate::net::{Request, Response};
use crate::sim::entities::{parse_page, PAGE_PATH};
use crate::sim::topology::Topology;
use crate::sim::Simulation;

/// Something a load run can hit.
pub trait LoadTarget: Send + Sync {
    /// Issues request number `seq` and waits for the full response.
    fn request(&self, seq: u64) -> Result<Response, String>;

    /// Checks a response. `deep` asks for cryptographic verification.
    fn validate(&self, seq: u64, response: &Response, deep: bool) -> Result<(), String>;

    /// Called once between warm-up and measurement.
    fn begin_measurement(&self) {}
}

#[derive(Default)]
struct WorkerTally {
    samples: Vec<u64>,
    drift: Vec<u64>,
    errors: u64,
    abandoned: u64,
    first_error: Option<String>,
    last_done: Option<Instant>,
}

struct Phase {
    tally: WorkerTally,
    scheduled: u64,
    started: Instant,
}

fn run_phase(config: &BenchConfig, target: &dyn LoadTarget, secs: f64, seq_base: u64) -> Phase {
    let scheduled = (config.throughput_rps * secs).round().max(1.0) as u64;
    let interval = Duration::from_secs_f64(1.0 / config.throughput_rps);
    let deep_every = if config.verify_fraction > 0.0 {
        (1.0 / config.verify_fraction).round().max(1.0) as u64
    } else {
        0
    };
    let started = Instant::now() + Duration::from_millis(2);
    let cutoff = started + Duration::from_secs_f64(secs) + config.grace();
    let (tx, rx) = unbounded::<(u64, Instant)>();

    let tallies: Vec<WorkerTally> = std::thread::scope(|s| {
        s.spawn(move || {
            for i in 0..scheduled {
                let at = started + interval.mul_f64(i as f64);
                let now = Instant::now();
                if at > now {
                    std::thread::sleep(at - now);
                }
                if tx.send((seq_base + i, at)).is_err() {
                    break;
                }
            }
        });
        let workers: Vec<_> = (0..config.workers)
            .map(|_| {
                let rx = rx.clone();
                s.spawn(move || {
                    let mut t = WorkerTally::default();
                    for (seq, at) in rx.iter() {
                        let sent = Instant::now();
                        if sent > cutoff {
                            t.abandoned += 1;
                            continue;
                        }
                        t.drift.push(sent.saturating_duration_since(at).as_nanos() as u64);
                        let result = target.request(seq);
                        let done = Instant::now();
                        t.samples.push(done.duration_since(sent).as_nanos() as u64);
                        t.last_done = Some(done);
                        let deep = deep_every > 0 && seq % deep_every == 0;
                        let outcome = result.and_then(|r| target.validate(seq, &r, deep));
                        if let Err(e) = outcome {
                            t.errors += 1;
                            t.first_error.get_or_insert(e);
                        }
                    }
                    t
                })
            })
            .collect();
        workers.into_iter().map(|w| w.join().expect("worker panicked")).collect()
    });

    let mut tally = WorkerTally::default();
    for t in tallies {
        tally.samples.extend(t.samples);
        tally.drift.extend(t.drift);
        tally.errors += t.errors;
        tally.abandoned += t.abandoned;
        if tally.first_error.is_none() {
            tally.first_error = t.first_error;
        }
        tally.last_done = tally.last_done.max(t.last_done);
    }
    Phase {
        tally,
        scheduled,
        started,
    }
}

/// Runs warm-up (discarded) and then the measured phase at the configured
/// open-loop rate.
///
/// Latency runs from the moment a worker sends a request to the full
/// response. When every worker is busy a request leaves late; the lateness
/// is reported as drift rather than folded into latency.
pub fn run_load(config: &BenchConfig, target: &dyn LoadTarget) -> Result<LatencyDistribution, BenchError> {
    config.validate()?;
    let timer = TimerInfo::measure();
    target.request(u64::MAX).map_err(BenchError::Unreachable)?;
    if config.warmup_secs > 0.0 {
        run_phase(config, target, config.warmup_secs, 1 << 62);
    }
    target.begin_measurement();
    let phase = run_phase(config, target, config.duration_secs, 0);

    let duration = Duration::from_secs_f64(config.duration_secs);
    let elapsed = phase
        .tally
        .last_done
        .map(|d| d.saturating_duration_since(phase.started))
        .unwrap_or(duration)
        .max(duration);
    let mut samples = phase.tally.samples;
    samples.sort_unstable();
    let achieved_rps = samples.len() as f64 / elapsed.as_secs_f64();
    let shortfall =
        phase.tally.abandoned > 0 || achieved_rps < config.throughput_rps * (1.0 - config.shortfall_tolerance);
    Ok(LatencyDistribution {
        config: config.clone(),
        samples,
        achieved_rps,
        error_count: phase.tally.errors,
        scheduled: phase.scheduled,
        abandoned: phase.tally.abandoned,
        drift: DriftSummary::from_samples(phase.tally.drift),
        shortfall,
        first_error: phase.tally.first_error,
        timer,
    })
}

/// The publisher's page endpoint, reached in-process or over loopback.
pub struct PublisherTarget {
    sim: Simulation,
    n_ads: usize,
    sign: bool,
    keys: HashMap<String, crate::crypto::PublicKey>,
}

impl PublisherTarget {
    pub fn new(config: &BenchConfig) -> Result<Self, BenchError> {
        if config.target != BenchTarget::Publisher {
            return Err(BenchError::Config("not a publisher run".into()));
        }
        let mut topology = Topology::default_four();
        topology.seed = config.seed;
        topology.transport = config.transport;
        if let Some(alg) = config.algorithm.algorithm() {
            topology.algorithm = alg;
        }
        topology.max_ads = topology.max_ads.max(config.n_ads);
        let sim = Simulation::with_clock(topology, Arc::new(SystemClock), false)?;
        let keys = sim.public_keys();
        Ok(Self {
            sim,
            n_ads: config.n_ads,
            sign: config.algorithm.is_signed(),
            keys,
        })
    }

    pub fn simulation(&self) -> &Simulation {
        &self.sim
    }

    fn target_path(&self) -> String {
        format!("{PAGE_PATH}?ads={}&sign={}", self.n_ads, u8::from(self.sign))
    }
}

impl LoadTarget for PublisherTarget {
    fn request(&self, _seq: u64) -> Result<Response, String> {
        let req = Request::get(self.target_path()).with_remote_addr(self.sim.client_ip());
        self.sim
            .registry()
            .call(self.sim.publisher().domain(), &req)
            .map_err(|e| e.to_string())
    }

    fn validate(&self, _seq: u64, response: &Response, deep: bool) -> Result<(), String> {
        if response.status != 200 {
            return Err(format!("HTTP {}", response.status));
        }
        validate_page(&response.body, self.n_ads, self.sign, deep.then_some(&self.keys), self.sim.client_ip())
    }
}

/// Checks that a page carries `n_ads` ad-tags, signed or not as expected,
/// and with `keys` verifies every chain.
pub fn validate_page(
    html: &str,
    n_ads: usize,
    signed: bool,
    keys: Option<&HashMap<String, crate::crypto::PublicKey>>,
    client_ip: std::net::IpAddr,
) -> Result<(), String> {
    let urls = parse_page(html);
    if urls.len() != n_ads {
        return Err(format!("expected {n_ads} ad-tags, found {}", urls.len()));
    }
    for url in &urls {
        if url.contains("ac_tid=") != signed {
            return Err(format!("ad-tag signing state is wrong: {url}"));
        }
        if let (true, Some(keys)) = (signed, keys) {
            let (chain, _) = extract_query(url).map_err(|e| e.to_string())?;
            if !verify_chain(&chain, keys).is_valid() {
                return Err("ad-tag chain does not verify".into());
            }
            if chain.origin().map(|o| o.client_ip) != Some(client_ip) {
                return Err("ad-tag chain names another client".into());
            }
        }
    }
    Ok(())
}

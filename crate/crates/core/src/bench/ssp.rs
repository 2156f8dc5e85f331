//! SSP benchmark: signed ad-tags against an instrumented SSP whose exchange
//! is a stub, so only the SSP's own work is measured.

use std::sync::Arc;

use parking_lot::Mutex;
use serde_json::json;

use super::load::{run_load, LoadTarget};
use super::{percentile, BenchConfig, BenchError, BenchTarget, LatencyDistribution};
use crate::clock::SystemClock;
use crate::net::{Request, Response};
use crate::sim::entities::{split_url, with_query_param, TRACE_PARAM};
use crate::sim::record::Stage;
use crate::sim::topology::Topology;
use crate::sim::Simulation;

const URL_POOL: usize = 64;

/// Stage durations the SSP recorded for one transaction, in nanoseconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StageSample {
    pub key_retrieval: u64,
    pub verify: u64,
    pub sign: u64,
}

impl StageSample {
    pub fn get(&self, stage: Stage) -> u64 {
        match stage {
            Stage::KeyRetrieval => self.key_retrieval,
            Stage::Verify => self.verify,
            Stage::Sign => self.sign,
        }
    }

    pub fn overall(&self) -> u64 {
        self.key_retrieval + self.verify + self.sign
    }
}

pub struct SspTarget {
    sim: Simulation,
    ssp: String,
    urls: Vec<String>,
    traces: Mutex<Vec<String>>,
}

impl SspTarget {
    pub fn new(config: &BenchConfig) -> Result<Self, BenchError> {
        if config.target != BenchTarget::Ssp {
            return Err(BenchError::Config("not an ssp run".into()));
        }
        let mut topology = Topology::default_four();
        topology.seed = config.seed;
        topology.transport = config.transport;
        if let Some(alg) = config.algorithm.algorithm() {
            topology.algorithm = alg;
        }
        if !config.algorithm.is_signed() {
            topology.entities[1].signing = false;
        }
        let ssp = topology.entities[1].domain.clone();
        let exchange = topology.entities[2].domain.clone();
        let sim = Simulation::with_clock(topology, Arc::new(SystemClock), true)?;
        sim.registry().register(
            exchange,
            Arc::new(|_: &Request| Response::ok(json!({"adm": "https://dsp.example/creative"}).to_string())),
        );
        let page = sim.publisher().serve_page(1, false, sim.client_ip())?;
        let urls = if config.algorithm.is_signed() {
            (0..URL_POOL)
                .map(|_| Ok(sim.publisher().serve_page(1, true, sim.client_ip())?.tags.remove(0).url))
                .collect::<Result<Vec<_>, BenchError>>()?
        } else {
            page.tags.into_iter().map(|t| t.url).collect()
        };
        let target = Self {
            sim,
            ssp,
            urls,
            traces: Mutex::new(Vec::new()),
        };
        // Prime the key cache so the run measures the warm path.
        target.request(0).map_err(BenchError::Unreachable)?;
        target.begin_measurement();
        Ok(target)
    }

    pub fn simulation(&self) -> &Simulation {
        &self.sim
    }

    /// Stage samples of every measured transaction the SSP instrumented.
    pub fn collect(&self) -> Vec<StageSample> {
        let Some(rec) = self.sim.recorder() else {
            return Vec::new();
        };
        let traces = std::mem::take(&mut *self.traces.lock());
        let mut out = Vec::with_capacity(traces.len());
        for t in traces {
            let Some(r) = rec.get(&t) else { continue };
            let ns = |stage| {
                r.stages
                    .iter()
                    .filter(|s| s.entity == self.ssp && s.stage == stage)
                    .map(|s| s.ns)
                    .reduce(|a, b| a + b)
            };
            if let (Some(k), Some(v), Some(s)) = (ns(Stage::KeyRetrieval), ns(Stage::Verify), ns(Stage::Sign)) {
                out.push(StageSample {
                    key_retrieval: k,
                    verify: v,
                    sign: s,
                });
            }
        }
        rec.drain();
        out
    }
}

impl LoadTarget for SspTarget {
    fn request(&self, seq: u64) -> Result<Response, String> {
        let base = &self.urls[(seq % self.urls.len() as u64) as usize];
        let url = match self.sim.recorder() {
            Some(rec) => {
                let trace = rec.open();
                let url = with_query_param(base, TRACE_PARAM, &trace);
                self.traces.lock().push(trace);
                url
            }
            None => base.clone(),
        };
        let (host, target) = split_url(&url).ok_or("bad ad-tag url")?;
        self.sim
            .registry()
            .call(host, &Request::get(target).with_remote_addr(self.sim.client_ip()))
            .map_err(|e| e.to_string())
    }

    fn validate(&self, _seq: u64, response: &Response, _deep: bool) -> Result<(), String> {
        if response.status != 200 {
            return Err(format!("HTTP {}: {}", response.status, response.body));
        }
        if !response.body.contains("\"adm\"") {
            return Err("response carries no ad url".into());
        }
        Ok(())
    }

    fn begin_measurement(&self) {
        self.traces.lock().clear();
        if let Some(r) = self.sim.recorder() {
            r.drain();
        }
    }
}

/// One SSP run: request latencies plus the SSP's per-stage timings.
#[derive(Debug, Clone, PartialEq)]
pub struct SspBenchResult {
    pub latency: LatencyDistribution,
    pub stages: Vec<StageSample>,
}

impl SspBenchResult {
    pub fn stage_percentile(&self, stage: Stage, p: f64) -> Result<u64, BenchError> {
        let v: Vec<u64> = self.stages.iter().map(|s| s.get(stage)).collect();
        percentile(&v, p)
    }

    pub fn overall_percentile(&self, p: f64) -> Result<u64, BenchError> {
        let v: Vec<u64> = self.stages.iter().map(StageSample::overall).collect();
        percentile(&v, p)
    }
}

/// Runs the SSP benchmark and gathers per-stage timings. Errors when the
/// SSP recorded no stages, as with signing disabled.
pub fn bench_ssp(config: &BenchConfig) -> Result<SspBenchResult, BenchError> {
    let target = SspTarget::new(config)?;
    let latency = run_load(config, &target)?;
    let stages = target.collect();
    if stages.is_empty() {
        return Err(BenchError::NoRecords(format!(
            "the ssp recorded no stage timings ({} requests, signing {})",
            latency.completed(),
            if config.algorithm.is_signed() { "on" } else { "off" }
        )));
    }
    Ok(SspBenchResult { latency, stages })
}

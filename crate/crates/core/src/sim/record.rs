//! Transaction logs: one JSON object per line.

use std::collections::HashMap;
use std::io::{BufRead, Write};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::chain::Chain;
use crate::clock::Clock;
use crate::codec::{chain_from_json, chain_to_json, CodecError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    KeyRetrieval,
    Verify,
    Sign,
}

impl Stage {
    pub const ALL: [Stage; 3] = [Stage::KeyRetrieval, Stage::Verify, Stage::Sign];

    pub fn label(self) -> &'static str {
        match self {
            Stage::KeyRetrieval => "key-retrieval",
            Stage::Verify => "verify",
            Stage::Sign => "sign",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Event {
    pub entity: String,
    pub event: String,
    pub at_ns: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageTiming {
    pub entity: String,
    pub stage: Stage,
    pub ns: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "kebab-case")]
pub enum Outcome {
    InProgress,
    Completed,
    Rejected { by: String, reason: String },
    Unsold,
    Failed { stage: String, error: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransactionRecord {
    /// Identifies one delivery attempt; distinct even when a tid is replayed.
    pub trace: String,
    pub tid: Option<String>,
    /// Address of the client that requested the page.
    pub client_ip: Option<String>,
    pub outcome: Outcome,
    pub winner: Option<String>,
    pub timeline: Vec<Event>,
    /// `adschain` object of the final chain; present iff completed.
    pub final_chain: Option<Value>,
    pub stages: Vec<StageTiming>,
}

impl TransactionRecord {
    pub fn new(trace: impl Into<String>) -> Self {
        Self {
            trace: trace.into(),
            tid: None,
            client_ip: None,
            outcome: Outcome::InProgress,
            winner: None,
            timeline: Vec::new(),
            final_chain: None,
            stages: Vec::new(),
        }
    }

    pub fn chain(&self) -> Option<Result<Chain, CodecError>> {
        self.final_chain.as_ref().map(chain_from_json)
    }

    pub fn is_completed(&self) -> bool {
        self.outcome == Outcome::Completed
    }

    pub fn stage_total(&self, stage: Stage) -> Option<Duration> {
        let mut found = false;
        let ns: u64 = self
            .stages
            .iter()
            .filter(|s| s.stage == stage)
            .inspect(|_| found = true)
            .map(|s| s.ns)
            .sum();
        found.then(|| Duration::from_nanos(ns))
    }
}

/// Thread-safe collector of in-flight transaction records.
pub struct Recorder {
    clock: Arc<dyn Clock>,
    next: AtomicU64,
    records: Mutex<HashMap<String, (u64, TransactionRecord)>>,
}

impl Recorder {
    pub fn new(clock: Arc<dyn Clock>) -> Self {
        Self {
            clock,
            next: AtomicU64::new(1),
            records: Mutex::new(HashMap::new()),
        }
    }

    /// Opens a record and returns its trace id.
    pub fn open(&self) -> String {
        let seq = self.next.fetch_add(1, Ordering::Relaxed);
        let trace = format!("txn-{seq}");
        self.records
            .lock()
            .insert(trace.clone(), (seq, TransactionRecord::new(trace.clone())));
        trace
    }

    fn with(&self, trace: &str, f: impl FnOnce(&mut TransactionRecord)) {
        if let Some((_, rec)) = self.records.lock().get_mut(trace) {
            f(rec);
        }
    }

    pub fn event(&self, trace: &str, entity: &str, event: &str, detail: Option<String>) {
        let at_ns = self.clock.now_ns();
        self.with(trace, |r| {
            r.timeline.push(Event {
                entity: entity.to_string(),
                event: event.to_string(),
                at_ns,
                detail,
            })
        });
    }

    pub fn stage(&self, trace: &str, entity: &str, stage: Stage, elapsed: Duration) {
        self.with(trace, |r| {
            r.stages.push(StageTiming {
                entity: entity.to_string(),
                stage,
                ns: elapsed.as_nanos() as u64,
            })
        });
    }

    pub fn set_origin(&self, trace: &str, tid: Option<String>, client_ip: Option<String>) {
        self.with(trace, |r| {
            if tid.is_some() {
                r.tid = tid;
            }
            if client_ip.is_some() {
                r.client_ip = client_ip;
            }
        });
    }

    pub fn set_winner(&self, trace: &str, winner: &str) {
        self.with(trace, |r| r.winner = Some(winner.to_string()));
    }

    pub fn complete(&self, trace: &str, chain: &Chain) {
        let doc = chain_to_json(chain);
        self.with(trace, |r| {
            r.final_chain = Some(doc);
            r.outcome = Outcome::Completed;
        });
    }

    /// Records a terminal failure unless the record already has an outcome.
    pub fn finish(&self, trace: &str, outcome: Outcome) {
        self.with(trace, |r| {
            if r.outcome == Outcome::InProgress {
                r.outcome = outcome;
            }
        });
    }

    pub fn get(&self, trace: &str) -> Option<TransactionRecord> {
        self.records.lock().get(trace).map(|(_, r)| r.clone())
    }

    /// Removes and returns every record in opening order.
    pub fn drain(&self) -> Vec<TransactionRecord> {
        let mut all: Vec<(u64, TransactionRecord)> = self.records.lock().drain().map(|(_, v)| v).collect();
        all.sort_by_key(|(seq, _)| *seq);
        all.into_iter().map(|(_, r)| r).collect()
    }
}

pub fn write_log<W: Write>(mut out: W, records: &[TransactionRecord]) -> std::io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

/// One entry per non-empty line: the parsed record or the parse error.
pub fn read_log<R: BufRead>(input: R) -> impl Iterator<Item = (usize, Result<TransactionRecord, String>)> {
    input.lines().enumerate().filter_map(|(i, line)| match line {
        Ok(l) if l.trim().is_empty() => None,
        Ok(l) => Some((i + 1, serde_json::from_str(&l).map_err(|e| e.to_string()))),
        Err(e) => Some((i + 1, Err(e.to_string()))),
    })
}

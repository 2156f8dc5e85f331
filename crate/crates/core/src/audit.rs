//! Online and offline auditing of chains and transaction logs.

use std::collections::BTreeMap;
use std::fmt;
use std::net::IpAddr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::chain::{canonical_ip, verify_chain, BlockVerdict, Chain, KeyLookup};
use crate::sim::record::TransactionRecord;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FindingKind {
    TamperedBlock,
    CustodyGap,
    DuplicateTid,
    UnverifiableSigner,
    TemporaryInFinal,
    IpMismatch,
}

impl FindingKind {
    pub const ALL: [FindingKind; 6] = [
        FindingKind::TamperedBlock,
        FindingKind::CustodyGap,
        FindingKind::DuplicateTid,
        FindingKind::UnverifiableSigner,
        FindingKind::TemporaryInFinal,
        FindingKind::IpMismatch,
    ];

    pub fn label(self) -> &'static str {
        match self {
            FindingKind::TamperedBlock => "tampered-block",
            FindingKind::CustodyGap => "custody-gap",
            FindingKind::DuplicateTid => "duplicate-tid",
            FindingKind::UnverifiableSigner => "unverifiable-signer",
            FindingKind::TemporaryInFinal => "temporary-in-final",
            FindingKind::IpMismatch => "ip-mismatch",
        }
    }

    /// Kinds that make the `audit` command exit nonzero.
    pub fn is_fatal(self) -> bool {
        matches!(
            self,
            FindingKind::TamperedBlock | FindingKind::DuplicateTid | FindingKind::TemporaryInFinal
        )
    }
}

impl fmt::Display for FindingKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditFinding {
    pub tid: String,
    pub kind: FindingKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub block_index: Option<usize>,
    pub detail: String,
    /// Trace ids of the log records involved, when auditing a log.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub records: Vec<String>,
}

impl fmt::Display for AuditFinding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} tid={}", self.kind, self.tid)?;
        if let Some(i) = self.block_index {
            write!(f, " block={i}")?;
        }
        if !self.records.is_empty() {
            write!(f, " records={}", self.records.join(","))?;
        }
        write!(f, ": {}", self.detail)
    }
}

/// Verifies `chain` and turns every problem into a finding.
pub fn audit_chain(chain: &Chain, keys: &dyn KeyLookup, expected_ip: Option<IpAddr>) -> Vec<AuditFinding> {
    let tid = chain.transaction_id().map(|t| t.to_string()).unwrap_or_default();
    let finding = |kind, block_index, detail: String| AuditFinding {
        tid: tid.clone(),
        kind,
        block_index,
        detail,
        records: Vec::new(),
    };
    let report = verify_chain(chain, keys);
    let mut out = Vec::new();
    for (i, verdict) in report.verdicts.iter().enumerate() {
        match verdict {
            BlockVerdict::Valid => {}
            BlockVerdict::Unverifiable(reason) => {
                out.push(finding(FindingKind::UnverifiableSigner, Some(i), reason.clone()))
            }
            other => out.push(finding(
                FindingKind::TamperedBlock,
                Some(i),
                format!("signed by {}: {other}", chain.blocks()[i].body.signer_domain),
            )),
        }
    }
    for gap in &report.custody_gaps {
        out.push(finding(
            FindingKind::CustodyGap,
            Some(gap.index),
            format!("custody delegated to {} but next block signed by {}", gap.expected, gap.actual),
        ));
    }
    for (i, block) in chain.blocks().iter().enumerate() {
        if block.body.is_temporary() || block.body.fields.iter().any(|f| f.is_temporary_flag()) {
            out.push(finding(
                FindingKind::TemporaryInFinal,
                Some(i),
                format!("block {i} by {} is a temporary auction block", block.body.signer_domain),
            ));
        }
    }
    if let (Some(expected), Some(origin)) = (expected_ip, chain.origin()) {
        if origin.client_ip != expected {
            out.push(finding(
                FindingKind::IpMismatch,
                Some(0),
                format!("chain carries {} but the request came from {}", canonical_ip(&origin.client_ip), canonical_ip(&expected)),
            ));
        }
    }
    out
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditReport {
    pub transactions_checked: usize,
    pub findings: Vec<AuditFinding>,
    pub counts: BTreeMap<FindingKind, usize>,
    /// Lines that could not be parsed, with the reason.
    pub malformed_records: Vec<String>,
}

impl AuditReport {
    pub fn count(&self, kind: FindingKind) -> usize {
        self.counts.get(&kind).copied().unwrap_or(0)
    }

    pub fn has_fatal(&self) -> bool {
        self.findings.iter().any(|f| f.kind.is_fatal())
    }
}

/// Audits every record with a final chain, then reports each tid that occurs
/// in more than one record. Results do not depend on record order.
pub fn audit_log<I>(records: I, keys: &(dyn KeyLookup + Sync)) -> AuditReport
where
    I: IntoIterator<Item = Result<TransactionRecord, String>>,
{
    let mut report = AuditReport::default();
    let mut parsed = Vec::new();
    for (n, r) in records.into_iter().enumerate() {
        match r {
            Ok(rec) => parsed.push(rec),
            Err(e) => report.malformed_records.push(format!("record {}: {e}", n + 1)),
        }
    }

    let per_record: Vec<(Vec<AuditFinding>, Option<String>)> = parsed
        .par_iter()
        .map(|rec| audit_record(rec, keys))
        .collect();

    let mut by_tid: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for (rec, (findings, err)) in parsed.iter().zip(per_record) {
        report.transactions_checked += 1;
        report.findings.extend(findings);
        if let Some(e) = err {
            report.malformed_records.push(format!("{}: {e}", rec.trace));
        }
        if let Some(tid) = &rec.tid {
            by_tid.entry(tid.clone()).or_default().push(rec.trace.clone());
        }
    }
    for (tid, mut traces) in by_tid {
        if traces.len() > 1 {
            traces.sort();
            report.findings.push(AuditFinding {
                detail: format!("transaction id used by {} records", traces.len()),
                tid,
                kind: FindingKind::DuplicateTid,
                block_index: None,
                records: traces,
            });
        }
    }
    report
        .findings
        .sort_by(|a, b| (a.kind, &a.tid, a.block_index, &a.records).cmp(&(b.kind, &b.tid, b.block_index, &b.records)));
    for f in &report.findings {
        *report.counts.entry(f.kind).or_default() += 1;
    }
    report
}

fn audit_record(rec: &TransactionRecord, keys: &dyn KeyLookup) -> (Vec<AuditFinding>, Option<String>) {
    let Some(parsed) = rec.chain() else {
        return (Vec::new(), None);
    };
    match parsed {
        Ok(chain) => {
            let expected_ip = rec.client_ip.as_deref().and_then(|s| s.parse().ok());
            let mut findings = audit_chain(&chain, keys, expected_ip);
            for f in &mut findings {
                f.records.push(rec.trace.clone());
            }
            (findings, None)
        }
        Err(e) => (Vec::new(), Some(format!("final chain unreadable: {e}"))),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GapPolicy {
    #[default]
    Lenient,
    Strict,
}

/// Who is checking an incoming chain.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OnlineContext {
    pub me: String,
    /// Partner that delivered the chain, if known.
    pub received_from: Option<String>,
    pub policy: GapPolicy,
    /// Bidders accept a temporary chain whose last block is the auction block.
    pub accept_temporary: bool,
}

impl OnlineContext {
    pub fn new(me: impl Into<String>) -> Self {
        Self {
            me: me.into(),
            received_from: None,
            policy: GapPolicy::Lenient,
            accept_temporary: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RejectReason {
    BadSignature,
    CustodyMismatch,
    UnverifiableSigner,
    CustodyGap,
    Temporary,
}

impl RejectReason {
    pub fn label(self) -> &'static str {
        match self {
            RejectReason::BadSignature => "bad-signature",
            RejectReason::CustodyMismatch => "custody-mismatch",
            RejectReason::UnverifiableSigner => "unverifiable-signer",
            RejectReason::CustodyGap => "custody-gap",
            RejectReason::Temporary => "temporary",
        }
    }
}

impl fmt::Display for RejectReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Decision {
    /// `flags` holds tolerated findings such as custody gaps.
    Accept { flags: Vec<AuditFinding>, across_gap: bool },
    Reject { reason: RejectReason, detail: String },
}

impl Decision {
    pub fn is_accept(&self) -> bool {
        matches!(self, Decision::Accept { .. })
    }
}

/// Decides whether the receiving entity may act on `chain`.
///
/// Custody must name `me`, or, when the chain was relayed unchanged by a
/// non-signing partner, name that partner; the latter opens a custody gap,
/// which the policy accepts or rejects.
pub fn online_check(ctx: &OnlineContext, chain: &Chain, keys: &dyn KeyLookup) -> Decision {
    let findings = audit_chain(chain, keys, None);
    if let Some(f) = findings.iter().find(|f| f.kind == FindingKind::TamperedBlock) {
        return Decision::Reject {
            reason: RejectReason::BadSignature,
            detail: f.to_string(),
        };
    }
    if let Some(f) = findings.iter().find(|f| f.kind == FindingKind::UnverifiableSigner) {
        return Decision::Reject {
            reason: RejectReason::UnverifiableSigner,
            detail: f.to_string(),
        };
    }
    let last = chain.len() - 1;
    let temporary_ok = |f: &AuditFinding| ctx.accept_temporary && f.block_index == Some(last);
    if let Some(f) = findings
        .iter()
        .find(|f| f.kind == FindingKind::TemporaryInFinal && !temporary_ok(f))
    {
        return Decision::Reject {
            reason: RejectReason::Temporary,
            detail: f.to_string(),
        };
    }

    let custody = chain.custody();
    let addressed = custody == ctx.me || (ctx.accept_temporary && chain.is_temporary());
    let across_gap = !addressed && ctx.received_from.as_deref() == Some(custody) && custody != ctx.me;
    if !addressed && !across_gap {
        return Decision::Reject {
            reason: RejectReason::CustodyMismatch,
            detail: format!("custody is held by {custody}, not {}", ctx.me),
        };
    }

    let mut flags: Vec<AuditFinding> = findings
        .into_iter()
        .filter(|f| f.kind == FindingKind::CustodyGap)
        .collect();
    if across_gap {
        flags.push(AuditFinding {
            tid: chain.transaction_id().map(|t| t.to_string()).unwrap_or_default(),
            kind: FindingKind::CustodyGap,
            block_index: Some(last),
            detail: format!("{custody} forwarded without signing"),
            records: Vec::new(),
        });
    }
    if ctx.policy == GapPolicy::Strict && !flags.is_empty() {
        return Decision::Reject {
            reason: RejectReason::CustodyGap,
            detail: flags[0].to_string(),
        };
    }
    Decision::Accept { flags, across_gap }
}

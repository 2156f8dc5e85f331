//! Publisher marginal-delay and SSP per-operation reports, as text tables
//! and as line-delimited JSON.

use std::fmt::Write as _;

use serde_json::json;

use super::{BenchError, LatencyDistribution, SigningMode, SspBenchResult};
use crate::sim::record::Stage;

pub const PERCENTILES: [f64; 3] = [90.0, 95.0, 99.0];

const NS_PER_MS: f64 = 1e6;

/// Reference per-ad-space marginal delays at the publisher, in ms:
/// `[p90, p95, p99]` of `(min, mean, max)` across a set of baseline runs.
pub const REFERENCE_PUBLISHER_MS: [(SigningMode, [(f64, f64, f64); 3]); 2] = [
    (SigningMode::Rsa, [(0.8, 1.7, 3.3), (0.8, 1.9, 3.9), (0.9, 2.4, 4.4)]),
    (SigningMode::Ecdsa, [(0.1, 0.2, 0.4), (0.1, 0.2, 0.4), (0.1, 0.2, 0.6)]),
];

/// Reference overall SSP delay per transaction, in ms, same layout.
pub const REFERENCE_SSP_MS: [(SigningMode, [(f64, f64, f64); 3]); 2] = [
    (SigningMode::Rsa, [(1.9, 2.9, 3.7), (2.2, 3.9, 5.1), (3.7, 8.7, 14.4)]),
    (SigningMode::Ecdsa, [(0.5, 0.7, 0.8), (0.5, 1.0, 1.4), (0.8, 2.6, 4.4)]),
];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MinMeanMax {
    pub min: f64,
    pub mean: f64,
    pub max: f64,
}

impl MinMeanMax {
    fn of(values: impl IntoIterator<Item = f64>) -> Option<Self> {
        let v: Vec<f64> = values.into_iter().collect();
        if v.is_empty() {
            return None;
        }
        Some(Self {
            min: v.iter().copied().fold(f64::INFINITY, f64::min),
            mean: v.iter().sum::<f64>() / v.len() as f64,
            max: v.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        })
    }
}

/// Signed-minus-unsigned latency per ad space at p90, p95 and p99.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarginalDelay {
    pub per_ad_ns: [f64; 3],
    /// Percentiles where the signed run was faster and the value was set to 0.
    pub clamped: [bool; 3],
}

impl MarginalDelay {
    pub fn p99_ns(&self) -> f64 {
        self.per_ad_ns[2]
    }
}

pub fn marginal_delay(
    signed: &LatencyDistribution,
    unsigned: &LatencyDistribution,
    n_ads: usize,
) -> Result<MarginalDelay, BenchError> {
    let mismatch = |m: &str| Err(BenchError::MismatchedConfigs(m.to_string()));
    if !signed.config.algorithm.is_signed() || unsigned.config.algorithm.is_signed() {
        return mismatch("need one signed and one unsigned run");
    }
    if !signed.config.is_pair_of(&unsigned.config) {
        return mismatch("runs differ in more than the signing mode");
    }
    if n_ads == 0 || signed.config.n_ads != n_ads {
        return mismatch("n_ads does not match the runs");
    }
    let mut out = MarginalDelay {
        per_ad_ns: [0.0; 3],
        clamped: [false; 3],
    };
    for (i, p) in PERCENTILES.into_iter().enumerate() {
        let d = signed.percentile(p)? as f64 - unsigned.percentile(p)? as f64;
        if d < 0.0 {
            out.clamped[i] = true;
        } else {
            out.per_ad_ns[i] = d / n_ads as f64;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MarginalRow {
    pub throughput_rps: f64,
    pub n_ads: usize,
    pub algorithm: SigningMode,
    pub delay: MarginalDelay,
    pub signed_achieved_rps: f64,
    pub unsigned_achieved_rps: f64,
    pub shortfall: bool,
    pub errors: u64,
}

/// One row per (signed run, matching unsigned run) pair.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MarginalDelayReport {
    pub rows: Vec<MarginalRow>,
}

impl MarginalDelayReport {
    pub fn from_runs(runs: &[LatencyDistribution]) -> Result<Self, BenchError> {
        let mut rows = Vec::new();
        for signed in runs.iter().filter(|r| r.config.algorithm.is_signed()) {
            let unsigned = runs
                .iter()
                .find(|u| !u.config.algorithm.is_signed() && signed.config.is_pair_of(&u.config))
                .ok_or_else(|| {
                    BenchError::MismatchedConfigs(format!(
                        "no unsigned baseline for {} rps, {} ads",
                        signed.config.throughput_rps, signed.config.n_ads
                    ))
                })?;
            rows.push(MarginalRow {
                throughput_rps: signed.config.throughput_rps,
                n_ads: signed.config.n_ads,
                algorithm: signed.config.algorithm,
                delay: marginal_delay(signed, unsigned, signed.config.n_ads)?,
                signed_achieved_rps: signed.achieved_rps,
                unsigned_achieved_rps: unsigned.achieved_rps,
                shortfall: signed.shortfall || unsigned.shortfall,
                errors: signed.error_count + unsigned.error_count,
            });
        }
        rows.sort_by(|a, b| {
            (a.algorithm, a.n_ads)
                .cmp(&(b.algorithm, b.n_ads))
                .then(a.throughput_rps.total_cmp(&b.throughput_rps))
        });
        Ok(Self { rows })
    }

    /// Min/mean/max across rows of one algorithm, per percentile, in ns per ad.
    pub fn summary(&self, algorithm: SigningMode) -> Option<[MinMeanMax; 3]> {
        let rows: Vec<_> = self.rows.iter().filter(|r| r.algorithm == algorithm).collect();
        let col = |i: usize| MinMeanMax::of(rows.iter().map(|r| r.delay.per_ad_ns[i]));
        Some([col(0)?, col(1)?, col(2)?])
    }

    pub fn render_text(&self) -> String {
        let mut s = String::new();
        writeln!(s, "Marginal delay per ad space at the publisher (ms)").unwrap();
        writeln!(
            s,
            "{:>8} {:>4}  {:<12} {:>8} {:>8} {:>8} {:>10}  flags",
            "rps", "ads", "algorithm", "p90", "p95", "p99", "achieved"
        )
        .unwrap();
        for r in &self.rows {
            let mut flags = Vec::new();
            for (i, p) in PERCENTILES.iter().enumerate() {
                if r.delay.clamped[i] {
                    flags.push(format!("p{p:.0}-clamped-noise"));
                }
            }
            if r.shortfall {
                flags.push("rate-shortfall".into());
            }
            if r.errors > 0 {
                flags.push(format!("errors={}", r.errors));
            }
            writeln!(
                s,
                "{:>8.0} {:>4}  {:<12} {:>8.3} {:>8.3} {:>8.3} {:>10.1}  {}",
                r.throughput_rps,
                r.n_ads,
                r.algorithm.label(),
                r.delay.per_ad_ns[0] / NS_PER_MS,
                r.delay.per_ad_ns[1] / NS_PER_MS,
                r.delay.per_ad_ns[2] / NS_PER_MS,
                r.signed_achieved_rps,
                flags.join(",")
            )
            .unwrap();
        }
        let columns = [SigningMode::Rsa, SigningMode::Ecdsa];
        let measured = columns.map(|a| self.summary(a));
        s.push('\n');
        summary_table(&mut s, "Summary across configurations (ms per ad space)", &measured, NS_PER_MS);
        s.push('\n');
        summary_table(
            &mut s,
            "Reference ranges on other hardware (ms per ad space)",
            &reference(&REFERENCE_PUBLISHER_MS),
            1.0,
        );
        s
    }

    pub fn render_machine(&self) -> String {
        let mut s = String::new();
        for r in &self.rows {
            let v = json!({
                "table": "publisher-marginal",
                "throughput_rps": r.throughput_rps,
                "n_ads": r.n_ads,
                "algorithm": r.algorithm,
                "p90_ns_per_ad": r.delay.per_ad_ns[0],
                "p95_ns_per_ad": r.delay.per_ad_ns[1],
                "p99_ns_per_ad": r.delay.per_ad_ns[2],
                "clamped": r.delay.clamped,
                "signed_achieved_rps": r.signed_achieved_rps,
                "unsigned_achieved_rps": r.unsigned_achieved_rps,
                "shortfall": r.shortfall,
                "errors": r.errors,
            });
            writeln!(s, "{v}").unwrap();
        }
        for a in [SigningMode::Rsa, SigningMode::Ecdsa] {
            if let Some(sum) = self.summary(a) {
                summary_lines(&mut s, "publisher-summary", a, &sum);
            }
        }
        s
    }
}

fn reference(table: &[(SigningMode, [(f64, f64, f64); 3]); 2]) -> [Option<[MinMeanMax; 3]>; 2] {
    table.map(|(_, rows)| {
        Some(rows.map(|(min, mean, max)| MinMeanMax { min, mean, max }))
    })
}

fn summary_table(s: &mut String, title: &str, columns: &[Option<[MinMeanMax; 3]>; 2], scale: f64) {
    writeln!(s, "{title}").unwrap();
    writeln!(s, "{:<16} {:^26} {:^26}", "", "RSA 2048", "ECDSA P-256").unwrap();
    writeln!(
        s,
        "{:<16} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8}",
        "", "min", "mean", "max", "min", "mean", "max"
    )
    .unwrap();
    for (i, p) in PERCENTILES.iter().enumerate() {
        write!(s, "{:<16}", format!("{p:.0}th percentile")).unwrap();
        for col in columns {
            match col {
                Some(c) => write!(
                    s,
                    " {:>8.3} {:>8.3} {:>8.3}",
                    c[i].min / scale,
                    c[i].mean / scale,
                    c[i].max / scale
                )
                .unwrap(),
                None => write!(s, " {:>8} {:>8} {:>8}", "-", "-", "-").unwrap(),
            }
        }
        s.push('\n');
    }
}

fn summary_lines(s: &mut String, table: &str, algorithm: SigningMode, sum: &[MinMeanMax; 3]) {
    for (i, p) in PERCENTILES.iter().enumerate() {
        let v = json!({
            "table": table,
            "algorithm": algorithm,
            "percentile": p,
            "min_ns": sum[i].min,
            "mean_ns": sum[i].mean,
            "max_ns": sum[i].max,
        });
        writeln!(s, "{v}").unwrap();
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SspRow {
    pub throughput_rps: f64,
    pub algorithm: SigningMode,
    pub transactions: usize,
    /// `[stage][percentile]` in ns, stages in [`Stage::ALL`] order.
    pub stages: [[u64; 3]; 3],
    pub overall: [u64; 3],
    pub achieved_rps: f64,
    pub shortfall: bool,
    pub errors: u64,
}

/// Per-operation and overall SSP delays, one row per run.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SspReport {
    pub rows: Vec<SspRow>,
}

impl SspReport {
    pub fn from_results(results: &[SspBenchResult]) -> Result<Self, BenchError> {
        let mut rows = Vec::new();
        for r in results {
            let mut stages = [[0; 3]; 3];
            let mut overall = [0; 3];
            for (j, p) in PERCENTILES.into_iter().enumerate() {
                for (i, st) in Stage::ALL.into_iter().enumerate() {
                    stages[i][j] = r.stage_percentile(st, p)?;
                }
                overall[j] = r.overall_percentile(p)?;
            }
            rows.push(SspRow {
                throughput_rps: r.latency.config.throughput_rps,
                algorithm: r.latency.config.algorithm,
                transactions: r.stages.len(),
                stages,
                overall,
                achieved_rps: r.latency.achieved_rps,
                shortfall: r.latency.shortfall,
                errors: r.latency.error_count,
            });
        }
        rows.sort_by(|a, b| a.algorithm.cmp(&b.algorithm).then(a.throughput_rps.total_cmp(&b.throughput_rps)));
        Ok(Self { rows })
    }

    /// Min/mean/max of the overall per-transaction delay across rows, in ns.
    pub fn summary(&self, algorithm: SigningMode) -> Option<[MinMeanMax; 3]> {
        let rows: Vec<_> = self.rows.iter().filter(|r| r.algorithm == algorithm).collect();
        let col = |i: usize| MinMeanMax::of(rows.iter().map(|r| r.overall[i] as f64));
        Some([col(0)?, col(1)?, col(2)?])
    }

    pub fn render_text(&self) -> String {
        let mut s = String::new();
        writeln!(s, "Processing time at the SSP per operation (ms)").unwrap();
        writeln!(
            s,
            "{:>8}  {:<12} {:<14} {:>8} {:>8} {:>8}",
            "rps", "algorithm", "operation", "p90", "p95", "p99"
        )
        .unwrap();
        for r in &self.rows {
            let named = Stage::ALL
                .iter()
                .map(|st| st.label())
                .zip(r.stages.iter())
                .chain(std::iter::once(("overall", &r.overall)));
            for (name, v) in named {
                writeln!(
                    s,
                    "{:>8.0}  {:<12} {:<14} {:>8.3} {:>8.3} {:>8.3}",
                    r.throughput_rps,
                    r.algorithm.label(),
                    name,
                    v[0] as f64 / NS_PER_MS,
                    v[1] as f64 / NS_PER_MS,
                    v[2] as f64 / NS_PER_MS
                )
                .unwrap();
            }
            let mut flags = vec![format!("transactions={}", r.transactions), format!("achieved={:.1}rps", r.achieved_rps)];
            if r.shortfall {
                flags.push("rate-shortfall".into());
            }
            if r.errors > 0 {
                flags.push(format!("errors={}", r.errors));
            }
            writeln!(s, "{:>8}  {}", "", flags.join(" ")).unwrap();
        }
        let measured = [SigningMode::Rsa, SigningMode::Ecdsa].map(|a| self.summary(a));
        s.push('\n');
        summary_table(&mut s, "Overall delay at the SSP per ad transaction (ms)", &measured, NS_PER_MS);
        s.push('\n');
        summary_table(
            &mut s,
            "Reference ranges on other hardware (ms per ad transaction)",
            &reference(&REFERENCE_SSP_MS),
            1.0,
        );
        s
    }

    pub fn render_machine(&self) -> String {
        let mut s = String::new();
        for r in &self.rows {
            let mut v = json!({
                "table": "ssp-operations",
                "throughput_rps": r.throughput_rps,
                "algorithm": r.algorithm,
                "transactions": r.transactions,
                "achieved_rps": r.achieved_rps,
                "shortfall": r.shortfall,
                "errors": r.errors,
            });
            for (i, st) in Stage::ALL.iter().enumerate() {
                v[st.label()] = json!({"p90_ns": r.stages[i][0], "p95_ns": r.stages[i][1], "p99_ns": r.stages[i][2]});
            }
            v["overall"] = json!({"p90_ns": r.overall[0], "p95_ns": r.overall[1], "p99_ns": r.overall[2]});
            writeln!(s, "{v}").unwrap();
        }
        for a in [SigningMode::Rsa, SigningMode::Ecdsa] {
            if let Some(sum) = self.summary(a) {
                summary_lines(&mut s, "ssp-summary", a, &sum);
            }
        }
        s
    }
}

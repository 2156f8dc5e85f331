//! Command-line front end: `keygen`, `simulate`, `audit`, `bench`, `report`.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use thiserror::Error;

use crate::audit::{audit_log, FindingKind};
use crate::bench::samples::{read_samples, write_samples, SampleFile};
use crate::bench::{
    bench_ssp, run_load, BenchConfig, BenchError, BenchTarget, MarginalDelayReport, PublisherTarget, SigningMode,
    SspReport,
};
use crate::clock::{Clock, SystemClock};
use crate::crypto::{
    read_key_document, write_key_document, Algorithm, CertificateAuthority, DomainCertificate, KeyPair, Validity,
};
use crate::keydir::{load_key_dir, ROOT_FILE};
use crate::sim::record::{read_log, write_log, Outcome};
use crate::sim::topology::{Topology, Transport};
use crate::sim::{SimError, Simulation, CA_NAME};

const CA_KEY_FILE: &str = "ca.key";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Bench(#[from] BenchError),
    #[error(transparent)]
    Keys(#[from] crate::keydir::KeyDirError),
    #[error("{0}")]
    Key(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Parser)]
#[command(name = "adschain", version, about = "Signed custody chains for ad delivery")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, ValueEnum)]
pub enum Format {
    #[default]
    Text,
    Machine,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum KeyAlgo {
    Ecdsa,
    Rsa,
}

impl From<KeyAlgo> for Algorithm {
    fn from(a: KeyAlgo) -> Self {
        match a {
            KeyAlgo::Ecdsa => Algorithm::EcdsaP256Sha256,
            KeyAlgo::Rsa => Algorithm::Rsa2048Pkcs1v15Sha256,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a domain key pair and a certificate issued by the CA in DIR.
    /// The CA is created on first use.
    Keygen {
        #[arg(long)]
        domain: String,
        #[arg(long, value_enum, default_value = "ecdsa")]
        algo: KeyAlgo,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        #[arg(long, default_value_t = 365)]
        days: u64,
        /// Derive keys from this seed instead of the OS RNG.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run transactions through a topology and write the transaction log.
    Simulate {
        #[arg(long, value_name = "FILE")]
        topology: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        ads: usize,
        #[arg(long, default_value_t = 1)]
        transactions: usize,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_name = "LOG")]
        out: PathBuf,
        /// Also write the CA and entity certificates here.
        #[arg(long, value_name = "DIR")]
        export_keys: Option<PathBuf>,
    },
    /// Audit a transaction log against a directory of certificates.
    Audit {
        #[arg(long, value_name = "FILE")]
        log: PathBuf,
        #[arg(long, value_name = "DIR")]
        keys: PathBuf,
        /// Also fail on custody gaps and unverifiable signers.
        #[arg(long)]
        strict: bool,
        #[arg(long, value_enum, default_value = "text")]
        format: Format,
    },
    /// Drive a publisher or SSP at a fixed request rate and record latencies.
    Bench {
        #[arg(long, value_enum)]
        target: BenchTarget,
        #[arg(long)]
        rps: f64,
        #[arg(long, default_value_t = 1)]
        ads: usize,
        #[arg(long, value_enum)]
        algo: SigningMode,
        #[arg(long, default_value_t = BenchConfig::DEFAULT_DURATION_SECS)]
        secs: f64,
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
        #[arg(long, default_value_t = 0.0)]
        warmup: f64,
        #[arg(long)]
        workers: Option<usize>,
        #[arg(long, value_enum, default_value = "in-process")]
        transport: Transport,
        #[arg(long)]
        verify_fraction: Option<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Render sample files as marginal-delay or SSP stage tables.
    Report {
        #[arg(long = "in", value_name = "FILE", required = true, num_args = 1..)]
        inputs: Vec<PathBuf>,
        #[arg(long, value_enum, default_value = "text")]
        format: Format,
    },
}

/// Runs one command, writing its report to `out`. Returns the process exit
/// code.
pub fn run(cli: Cli, out: &mut dyn Write) -> Result<u8, CliError> {
    match cli.command {
        Command::Keygen {
            domain,
            algo,
            out: dir,
            days,
            seed,
        } => keygen(&domain, algo.into(), &dir, days, seed, out),
        Command::Simulate {
            topology,
            ads,
            transactions,
            seed,
            out: log,
            export_keys,
        } => simulate(topology.as_deref(), ads, transactions, seed, &log, export_keys.as_deref(), out),
        Command::Audit {
            log,
            keys,
            strict,
            format,
        } => audit(&log, &keys, strict, format, out),
        Command::Bench {
            target,
            rps,
            ads,
            algo,
            secs,
            out: file,
            warmup,
            workers,
            transport,
            verify_fraction,
            seed,
        } => {
            let mut cfg = BenchConfig::new(target, rps, ads, algo)
                .with_duration(secs)
                .with_warmup(warmup);
            if let Some(w) = workers {
                cfg.workers = w;
            }
            if let Some(f) = verify_fraction {
                cfg.verify_fraction = f;
            }
            cfg.transport = transport;
            cfg.seed = seed;
            bench(&cfg, &file, out)
        }
        Command::Report { inputs, format } => report(&inputs, format, out),
    }
}

fn rng_for(seed: Option<u64>, label: &str) -> ChaCha20Rng {
    match seed {
        Some(s) => {
            let mut bytes = [0u8; 32];
            bytes[..8].copy_from_slice(&s.to_le_bytes());
            for (i, b) in label.bytes().enumerate() {
                bytes[8 + i % 24] ^= b;
            }
            ChaCha20Rng::from_seed(bytes)
        }
        None => ChaCha20Rng::from_entropy(),
    }
}

fn keygen(
    domain: &str,
    algorithm: Algorithm,
    dir: &Path,
    days: u64,
    seed: Option<u64>,
    out: &mut dyn Write,
) -> Result<u8, CliError> {
    if domain.is_empty() || domain.contains(['/', '\\']) || domain == CA_NAME {
        return Err(CliError::Usage(format!("unusable domain {domain:?}")));
    }
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let validity = Validity::days_from(SystemClock.now_secs(), days);
    let key_err = |e: &dyn std::fmt::Display| CliError::Key(e.to_string());

    let ca_key_path = dir.join(CA_KEY_FILE);
    let ca_crt_path = dir.join(ROOT_FILE);
    let ca = if ca_key_path.exists() {
        let text = std::fs::read_to_string(&ca_key_path).map_err(io_err(&ca_key_path))?;
        let (name, key) = read_key_document(&text).map_err(|e| key_err(&e))?;
        let root_text = std::fs::read_to_string(&ca_crt_path).map_err(io_err(&ca_crt_path))?;
        let root = DomainCertificate::from_document(&root_text).map_err(|e| key_err(&e))?;
        if root.public_key != key.public_key().to_bytes() {
            return Err(CliError::Key(format!("{} does not match {}", ROOT_FILE, CA_KEY_FILE)));
        }
        CertificateAuthority::new(name, key, root.validity).map_err(|e| key_err(&e))?
    } else {
        let key = KeyPair::generate_with(Algorithm::EcdsaP256Sha256, &mut rng_for(seed, CA_NAME))
            .map_err(|e| key_err(&e))?;
        let ca = CertificateAuthority::new(CA_NAME, key, validity).map_err(|e| key_err(&e))?;
        write_file(&ca_key_path, &write_key_document(CA_NAME, ca.key()))?;
        write_file(&ca_crt_path, &ca.root_certificate().to_document())?;
        writeln!(out, "created {} and {}", ca_key_path.display(), ca_crt_path.display()).map_err(io_err(dir))?;
        ca
    };

    let key = KeyPair::generate_with(algorithm, &mut rng_for(seed, domain)).map_err(|e| key_err(&e))?;
    let cert = ca.issue(domain, key.public_key(), validity).map_err(|e| key_err(&e))?;
    let key_path = dir.join(format!("{domain}.key"));
    let crt_path = dir.join(format!("{domain}.crt"));
    write_file(&key_path, &write_key_document(domain, &key))?;
    write_file(&crt_path, &cert.to_document())?;
    writeln!(out, "wrote {} and {}", key_path.display(), crt_path.display()).map_err(io_err(dir))?;
    Ok(0)
}

fn write_file(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(io_err(path))
}

fn simulate(
    topology: Option<&Path>,
    ads: usize,
    transactions: usize,
    seed: Option<u64>,
    log: &Path,
    export: Option<&Path>,
    out: &mut dyn Write,
) -> Result<u8, CliError> {
    let mut topo = match topology {
        Some(p) => Topology::load(p)?,
        None => Topology::default_four(),
    };
    if let Some(s) = seed {
        topo.seed = s;
    }
    let sim = Simulation::new(topo)?;
    if let Some(dir) = export {
        sim.export_keys(dir)?;
    }
    let mut records = Vec::new();
    for _ in 0..transactions {
        records.extend(sim.run_transaction(ads)?);
    }
    let file = File::create(log).map_err(io_err(log))?;
    write_log(BufWriter::new(file), &records).map_err(io_err(log))?;

    let mut tally: BTreeMap<&str, usize> = BTreeMap::new();
    for r in &records {
        let k = match r.outcome {
            Outcome::InProgress => "in-progress",
            Outcome::Completed => "completed",
            Outcome::Rejected { .. } => "rejected",
            Outcome::Unsold => "unsold",
            Outcome::Failed { .. } => "failed",
        };
        *tally.entry(k).or_default() += 1;
    }
    let summary: Vec<String> = tally.iter().map(|(k, v)| format!("{k}={v}")).collect();
    writeln!(out, "{} records written to {}: {}", records.len(), log.display(), summary.join(" "))
        .map_err(io_err(log))?;
    Ok(0)
}

fn audit(log: &Path, keys: &Path, strict: bool, format: Format, out: &mut dyn Write) -> Result<u8, CliError> {
    let keys = load_key_dir(keys)?;
    let file = File::open(log).map_err(io_err(log))?;
    let records = read_log(BufReader::new(file)).map(|(line, r)| r.map_err(|e| format!("line {line}: {e}")));
    let report = audit_log(records, &keys);
    let w = io_err(log);
    let write = |out: &mut dyn Write| -> std::io::Result<()> {
        match format {
            Format::Text => {
                for f in &report.findings {
                    writeln!(out, "{f}")?;
                }
                for m in &report.malformed_records {
                    writeln!(out, "malformed {m}")?;
                }
                let counts: Vec<String> = report.counts.iter().map(|(k, v)| format!("{k}={v}")).collect();
                writeln!(
                    out,
                    "{} transactions checked, {} findings{}{}",
                    report.transactions_checked,
                    report.findings.len(),
                    if counts.is_empty() { "" } else { ": " },
                    counts.join(" ")
                )
            }
            Format::Machine => {
                for f in &report.findings {
                    serde_json::to_writer(&mut *out, f)?;
                    writeln!(out)?;
                }
                Ok(())
            }
        }
    };
    write(out).map_err(w)?;
    let strict_fail = strict
        && (report.count(FindingKind::CustodyGap) > 0
            || report.count(FindingKind::UnverifiableSigner) > 0
            || !report.malformed_records.is_empty());
    Ok(u8::from(report.has_fatal() || strict_fail))
}

fn bench(cfg: &BenchConfig, file: &Path, out: &mut dyn Write) -> Result<u8, CliError> {
    let (latency, stages) = match cfg.target {
        BenchTarget::Publisher => {
            let target = PublisherTarget::new(cfg)?;
            (run_load(cfg, &target)?, None)
        }
        BenchTarget::Ssp => {
            let r = bench_ssp(cfg)?;
            (r.latency, Some(r.stages))
        }
    };
    let f = File::create(file).map_err(io_err(file))?;
    write_samples(BufWriter::new(f), &latency, stages.as_deref())?;
    let ms = |p| latency.percentile(p).map(|ns| ns as f64 / 1e6).unwrap_or(f64::NAN);
    writeln!(
        out,
        "{} {} ads={} rps={}: {} ok, {} errors, achieved {:.1} rps, p50 {:.3} ms, p99 {:.3} ms{}",
        target_name(cfg.target),
        cfg.algorithm.label(),
        cfg.n_ads,
        cfg.throughput_rps,
        latency.completed(),
        latency.error_count,
        latency.achieved_rps,
        ms(50.0),
        ms(99.0),
        if latency.shortfall { " (SHORTFALL)" } else { "" }
    )
    .map_err(io_err(file))?;
    if let Some(e) = &latency.first_error {
        writeln!(out, "first error: {e}").map_err(io_err(file))?;
    }
    Ok(u8::from(latency.error_count > 0 || latency.shortfall))
}

fn target_name(t: BenchTarget) -> &'static str {
    match t {
        BenchTarget::Publisher => "publisher",
        BenchTarget::Ssp => "ssp",
    }
}

fn report(inputs: &[PathBuf], format: Format, out: &mut dyn Write) -> Result<u8, CliError> {
    let mut publisher = Vec::new();
    let mut ssp = Vec::new();
    for p in inputs {
        let f = File::open(p).map_err(io_err(p))?;
        match read_samples(BufReader::new(f)).map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))? {
            SampleFile::Publisher(d) => publisher.push(d),
            SampleFile::Ssp(r) => ssp.push(r),
        }
    }
    let mut text = String::new();
    if !publisher.is_empty() {
        let r = MarginalDelayReport::from_runs(&publisher)?;
        text.push_str(&match format {
            Format::Text => r.render_text(),
            Format::Machine => r.render_machine(),
        });
    }
    if !ssp.is_empty() {
        if !text.is_empty() && format == Format::Text {
            text.push('\n');
        }
        let r = SspReport::from_results(&ssp)?;
        text.push_str(&match format {
            Format::Text => r.render_text(),
            Format::Machine => r.render_machine(),
        });
    }
    out.write_all(text.as_bytes())
        .map_err(io_err(inputs.first().map(PathBuf::as_path).unwrap_or(Path::new("-"))))?;
    Ok(0)
}

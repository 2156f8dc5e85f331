//! Sample files: a `# ` header line holding the run as JSON, then one
//! latency in nanoseconds per line. SSP files add `stages K V S` lines, one
//! per instrumented transaction (key retrieval, verify and sign, in ns).

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::{BenchError, BenchTarget, LatencyDistribution, SspBenchResult, StageSample};

const HEADER_PREFIX: &str = "# ";
const STAGES_PREFIX: &str = "stages ";

#[derive(Serialize, Deserialize)]
struct Header {
    kind: BenchTarget,
    run: LatencyDistribution,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SampleFile {
    Publisher(LatencyDistribution),
    Ssp(SspBenchResult),
}

impl SampleFile {
    pub fn latency(&self) -> &LatencyDistribution {
        match self {
            SampleFile::Publisher(d) => d,
            SampleFile::Ssp(r) => &r.latency,
        }
    }
}

pub fn write_samples<W: Write>(
    mut out: W,
    run: &LatencyDistribution,
    stages: Option<&[StageSample]>,
) -> Result<(), BenchError> {
    let header = Header {
        kind: run.config.target,
        run: run.clone(),
    };
    writeln!(
        out,
        "{HEADER_PREFIX}{}",
        serde_json::to_string(&header).expect("header serializes")
    )?;
    for s in &run.samples {
        writeln!(out, "{s}")?;
    }
    for s in stages.unwrap_or_default() {
        writeln!(out, "{STAGES_PREFIX}{} {} {}", s.key_retrieval, s.verify, s.sign)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_samples<R: BufRead>(input: R) -> Result<SampleFile, BenchError> {
    let parse_err = |line: usize, reason: String| BenchError::Parse { line, reason };
    let mut lines = input.lines().enumerate();
    let header_line = match lines.next() {
        Some((_, l)) => l?,
        None => return Err(parse_err(1, "empty file".into())),
    };
    let json = header_line
        .strip_prefix(HEADER_PREFIX)
        .ok_or_else(|| parse_err(1, "missing '# ' header".into()))?;
    let header: Header = serde_json::from_str(json).map_err(|e| parse_err(1, e.to_string()))?;
    if header.kind != header.run.config.target {
        return Err(parse_err(1, "header kind disagrees with its config".into()));
    }
    let mut run = header.run;
    let mut stages = Vec::new();
    for (i, line) in lines {
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix(STAGES_PREFIX) {
            let v: Vec<u64> = rest
                .split_ascii_whitespace()
                .map(str::parse)
                .collect::<Result<_, _>>()
                .map_err(|e| parse_err(i + 1, format!("{e}")))?;
            let [k, ver, s] = v[..] else {
                return Err(parse_err(i + 1, "stages line needs three durations".into()));
            };
            stages.push(StageSample {
                key_retrieval: k,
                verify: ver,
                sign: s,
            });
        } else {
            run.samples
                .push(line.parse().map_err(|e| parse_err(i + 1, format!("{e}")))?);
        }
    }
    run.samples.sort_unstable();
    Ok(match header.kind {
        BenchTarget::Publisher if stages.is_empty() => SampleFile::Publisher(run),
        BenchTarget::Publisher => return Err(parse_err(0, "publisher file carries stage lines".into())),
        BenchTarget::Ssp => SampleFile::Ssp(SspBenchResult { latency: run, stages }),
    })
}

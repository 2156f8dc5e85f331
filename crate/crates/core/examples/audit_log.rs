//! Writes a transaction log with a replayed ad-tag, then audits it offline
//! from exported certificates, as the `audit` command does.

use std::io::BufReader;

use adschain::audit::audit_log;
use adschain::keydir::load_key_dir;
use adschain::sim::record::{read_log, write_log};
use adschain::sim::topology::Topology;
use adschain::sim::Simulation;

fn main() {
    let dir = tempfile::tempdir().unwrap();
    let sim = Simulation::new(Topology::default_four()).unwrap();
    sim.export_keys(&dir.path().join("keys")).unwrap();

    let tag = sim.fetch_page(1, true).unwrap().remove(0);
    sim.deliver(&tag).unwrap();
    // `run` drains everything recorded so far, the first delivery included.
    let mut records = sim.run(4).unwrap();
    // Someone captured the signed ad-tag and sends it again.
    sim.replay(&tag.url).unwrap();
    records.extend(sim.drain_records());

    // A record whose final chain was edited after the fact.
    let mut forged = records[1].clone();
    forged.trace = "forged".into();
    forged.tid = None;
    let text = serde_json::to_string(&forged.final_chain).unwrap().replace("dsp.example\"", "other.example\"");
    forged.final_chain = serde_json::from_str(&text).unwrap();
    records.push(forged);

    let log = dir.path().join("log.jsonl");
    write_log(std::fs::File::create(&log).unwrap(), &records).unwrap();

    let keys = load_key_dir(&dir.path().join("keys")).unwrap();
    let lines = read_log(BufReader::new(std::fs::File::open(&log).unwrap())).map(|(_, r)| r);
    let report = audit_log(lines, &keys);
    println!("{} transactions checked", report.transactions_checked);
    for f in &report.findings {
        println!("{f}");
    }
    println!("fatal: {}", report.has_fatal());
}

//! A non-signing SSP leaves a custody gap. Lenient partners append across
//! it and the audit flags it; a strict exchange refuses the request.

use adschain::audit::{audit_log, FindingKind, GapPolicy};
use adschain::sim::topology::Topology;
use adschain::sim::Simulation;

fn main() {
    let mut t = Topology::default_four();
    t.entities[1].signing = false;
    let sim = Simulation::new(t.clone()).unwrap();
    let records = sim.run(3).unwrap();
    for r in &records {
        let c = r.chain().unwrap().unwrap();
        let signers: Vec<_> = c.blocks().iter().map(|b| b.body.signer_domain.as_str()).collect();
        println!("{}: {:?} signed by {signers:?}", r.trace, r.outcome);
    }
    let report = audit_log(records.into_iter().map(Ok), &sim.public_keys());
    for f in &report.findings {
        println!("  {f}");
    }
    assert_eq!(report.count(FindingKind::CustodyGap), 3);

    t.entities[2].gap_policy = GapPolicy::Strict;
    let strict = Simulation::new(t).unwrap();
    let d = strict.run_page(1, true).unwrap().remove(0);
    println!("strict exchange: HTTP {} {:?}", d.response.status, d.rejection());
}

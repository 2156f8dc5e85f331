//! Runs the default four-entity network on a virtual clock and prints one
//! transaction's timeline and final chain.

use adschain::sim::topology::Topology;
use adschain::sim::Simulation;

fn main() {
    let sim = Simulation::new(Topology::default_four()).unwrap();
    let records = sim.run_transaction(2).unwrap();
    let r = &records[0];
    println!("trace {} tid {:?} outcome {:?} winner {:?}", r.trace, r.tid, r.outcome, r.winner);
    let t0 = r.timeline[0].at_ns;
    for e in &r.timeline {
        let detail = e.detail.as_deref().map(|d| format!("  {d}")).unwrap_or_default();
        println!("  +{:>4} ms  {:<13} {}{detail}", (e.at_ns - t0) / 1_000_000, e.entity, e.event);
    }
    let chain = r.chain().unwrap().unwrap();
    for b in chain.blocks() {
        println!("  block {} {} -> {}", b.body.index, b.body.signer_domain, b.body.custody);
    }
    println!("final chain object:\n{}", serde_json::to_string_pretty(&r.final_chain).unwrap());
}

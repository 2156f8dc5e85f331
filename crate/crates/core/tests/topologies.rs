use std::path::Path;

use adschain::audit::{audit_log, FindingKind};
use adschain::sim::topology::Topology;
use adschain::sim::Simulation;

fn load(name: &str) -> Topology {
    Topology::load(&Path::new(env!("CARGO_MANIFEST_DIR")).join("topologies").join(name)).unwrap()
}

#[test]
fn default_file_matches_the_built_in_topology() {
    let mut t = load("default-four.toml");
    t.seed = 0;
    assert_eq!(t, Topology::default_four());
}

#[test]
fn shipped_topologies_deliver() {
    for (name, gaps) in [("default-four.toml", 0), ("gap.toml", 1), ("marketplace.toml", 0)] {
        let sim = Simulation::new(load(name)).unwrap();
        let recs = sim.run(2).unwrap();
        assert!(recs.iter().all(|r| r.is_completed()), "{name}: {recs:?}");
        let report = audit_log(recs.into_iter().map(Ok), &sim.public_keys());
        assert!(!report.has_fatal(), "{name}: {:?}", report.findings);
        assert_eq!(report.count(FindingKind::CustodyGap), 2 * gaps, "{name}");
    }
}

#[test]
fn topology_round_trips_through_toml() {
    let t = load("marketplace.toml");
    assert_eq!(Topology::from_toml(&t.to_toml()).unwrap(), t);
    assert!(Topology::from_toml("entities = []\nunknown = 1").is_err());
}

//! Loads the two-bidder marketplace topology: the higher bid wins, the
//! loser only ever holds the temporary chain, the creative comes from an
//! ad server, and an app signer signs on behalf of the publisher.

use std::path::Path;

use adschain::chain::{fields, BlockBody, Origin};
use adschain::sim::topology::Topology;
use adschain::sim::Simulation;

fn main() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("topologies/marketplace.toml");
    let sim = Simulation::new(Topology::load(&path).unwrap()).unwrap();

    for d in sim.run_page(2, true).unwrap() {
        println!("HTTP {} {}", d.response.status, d.response.body);
        if let Some(c) = &d.creative {
            println!("  creative: HTTP {} {}", c.status, c.body);
        }
    }
    for r in sim.drain_records() {
        println!("{} winner {:?}", r.trace, r.winner);
    }
    for (trace, chain) in sim.dsp("dsp-a.example").unwrap().holdings() {
        println!("dsp-a held {trace}: custody {:?}, temporary {}", chain.custody(), chain.is_temporary());
    }

    let signer = sim.app_signer("sign.news.example").unwrap();
    let body = |app: &str| BlockBody {
        index: 0,
        signer_domain: "news.example".into(),
        custody: "ssp.example".into(),
        prev_signature: None,
        fields: fields([("app", app), ("size", "320x50")]).unwrap(),
        origin: Some(Origin {
            transaction_id: "0f5c0000-9cfe-f797-8080-0a0b0c0d0e0f".parse().unwrap(),
            client_ip: "2001:db8::10".parse().unwrap(),
        }),
    };
    let block = signer.remote_sign(body("com.news.reader")).unwrap();
    println!("app signer: {} ({} chars)", block.keys_string, block.signature.len());
    println!("unregistered: {}", signer.remote_sign(body("com.other")).unwrap_err());
}

//! Time-based transaction ids: generation, layout and text form.

use std::sync::Arc;

use adschain::clock::SystemClock;
use adschain::tuuid::{TransactionId, TuuidGenerator, CLOCK_SEQ_BITS, NODE_BITS, TIMESTAMP_BITS};

fn main() {
    let mut gen = TuuidGenerator::new(0x0000_5e00_5301, 17, Arc::new(SystemClock)).expect("node id fits in 48 bits");
    let ids: Vec<TransactionId> = (0..5).map(|_| gen.generate().expect("clock in range")).collect();
    for id in &ids {
        println!(
            "{id}  ts={}ns seq={} node={:012x}",
            id.timestamp_ns(),
            id.clock_seq(),
            id.node_id()
        );
    }
    // Ids from one generator are strictly increasing in time.
    assert!(ids.windows(2).all(|w| w[0].timestamp_ns() < w[1].timestamp_ns()));

    let text = ids[0].to_string();
    assert_eq!(TransactionId::parse(&text).unwrap(), ids[0]);
    println!("layout: {TIMESTAMP_BITS} timestamp + {CLOCK_SEQ_BITS} sequence + {NODE_BITS} node + 4 version + 2 variant bits");
    println!("bad input: {}", TransactionId::parse("not-a-uuid").unwrap_err());
}

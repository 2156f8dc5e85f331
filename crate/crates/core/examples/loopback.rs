//! The same network with every entity behind its own 127.0.0.1 socket.

use adschain::sim::topology::{Topology, Transport};
use adschain::sim::Simulation;

fn main() {
    let mut t = Topology::default_four();
    t.transport = Transport::Loopback;
    let sim = Simulation::new(t).unwrap();
    for e in &sim.topology().entities {
        println!("{:<13} {:?}", e.domain, sim.socket_addr(&e.domain));
    }
    for r in sim.run(3).unwrap() {
        println!("{} {:?} winner {:?} from {:?}", r.trace, r.outcome, r.winner, r.client_ip);
    }
}

pub mod audit;
pub mod bench;
pub mod chain;
pub mod cli;
pub mod clock;
pub mod codec;
pub mod crypto;
pub mod keydir;
pub mod net;
pub mod sim;
pub mod tuuid;

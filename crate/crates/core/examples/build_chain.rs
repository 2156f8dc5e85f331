//! Builds and verifies the four-block chain of one sold impression.

use std::collections::HashMap;
use std::sync::Arc;

use adschain::chain::{
    build_first_block, build_next_block, fields, finalize_auction_block, verify_chain, Chain, Signer, PENDING,
};
use adschain::crypto::{Algorithm, KeyPair};
use adschain::tuuid::TransactionId;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

fn signer(domain: &str, alg: Algorithm, seed: u64) -> Signer {
    let key = KeyPair::generate_with(alg, &mut ChaCha20Rng::seed_from_u64(seed)).unwrap();
    Signer::new(domain, Arc::new(key)).unwrap()
}

fn main() {
    let publisher = signer("news.example", Algorithm::EcdsaP256Sha256, 1);
    let ssp = signer("ssp.example", Algorithm::EcdsaP256Sha256, 2);
    let adx = signer("adx.example", Algorithm::Rsa2048Pkcs1v15Sha256, 3);
    let dsp = signer("dsp.example", Algorithm::EcdsaP256Sha256, 4);

    let tid = TransactionId::new(1_700_000_000_000_000_000, 1, 0x0000_0a0b_0c0d).unwrap();
    let b0 = build_first_block(
        tid,
        "198.51.100.7".parse().unwrap(),
        "ssp.example",
        fields([("size", "300x250"), ("page", "https://news.example/story")]).unwrap(),
        &publisher,
    )
    .unwrap();
    let mut chain = Chain::from_first(b0);
    chain.push(build_next_block(&chain, "adx.example", fields([("floor", "0.10")]).unwrap(), &ssp).unwrap()).unwrap();

    // The exchange signs a temporary block for bidders, then replaces it.
    let bidding = chain.clone().with(build_next_block(&chain, PENDING, fields([("auction", "adx-1")]).unwrap(), &adx).unwrap()).unwrap();
    println!("bidders see custody {:?}", bidding.custody());
    let mut chain = finalize_auction_block(&bidding, "dsp.example", &adx).unwrap();
    chain
        .push(build_next_block(&chain, "dsp.example", fields([("advertiser", "acme"), ("price", "1.25")]).unwrap(), &dsp).unwrap())
        .unwrap();

    let keys: HashMap<_, _> = [&publisher, &ssp, &adx, &dsp]
        .iter()
        .map(|s| (s.domain().to_string(), s.key().public_key().clone()))
        .collect();
    let report = verify_chain(&chain, &keys);
    for (b, v) in chain.blocks().iter().zip(&report.verdicts) {
        println!(
            "block {} {:<13} -> {:<12} keys={:<60} {}",
            b.body.index,
            b.body.signer_domain,
            b.body.custody,
            b.keys_string,
            v.label()
        );
    }
    assert!(report.is_valid());
}

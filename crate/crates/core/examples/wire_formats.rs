//! A chain carried in an ad-tag URL, moved into an OpenRTB bid request and
//! back, with the signed bytes unchanged.

use std::sync::Arc;

use adschain::chain::{build_first_block, build_next_block, fields, verify_chain, Chain, Signer};
use adschain::codec::{embed_openrtb, embed_query, extract_openrtb, extract_query};
use adschain::crypto::{Algorithm, KeyPair};
use adschain::tuuid::TransactionId;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde_json::json;

fn main() {
    let key = |seed| Arc::new(KeyPair::generate_with(Algorithm::EcdsaP256Sha256, &mut ChaCha20Rng::seed_from_u64(seed)).unwrap());
    let publisher = Signer::new("news.example", key(1)).unwrap();
    let ssp = Signer::new("ssp.example", key(2)).unwrap();

    let tid = TransactionId::new(1_700_000_000_000_000_000, 0, 42).unwrap();
    let mut chain = Chain::from_first(
        build_first_block(
            tid,
            "2001:db8::7".parse().unwrap(),
            "ssp.example",
            fields([("size", "300x250"), ("page", "https://news.example/a?b=1&c=2")]).unwrap(),
            &publisher,
        )
        .unwrap(),
    );
    chain.push(build_next_block(&chain, "adx.example", fields([("floor", "0.10")]).unwrap(), &ssp).unwrap()).unwrap();

    let url = embed_query(&chain, "https://ssp.example/ad?slot=top", &[("rid", "r-1")]).unwrap();
    println!("ad-tag url:\n{url}\n");
    let (from_url, view) = extract_query(&url).unwrap();
    println!("pass-through params: slot={:?} rid={:?}\n", view.get("slot"), view.get("rid"));

    let bid_request = embed_openrtb(&from_url, json!({"id": "r-1", "imp": [{"id": "1", "banner": {"w": 300, "h": 250}}]})).unwrap();
    println!("openrtb:\n{}\n", serde_json::to_string_pretty(&bid_request).unwrap());
    let (from_rtb, _) = extract_openrtb(&bid_request).unwrap();
    assert_eq!(from_rtb, chain);

    let keys = [&publisher, &ssp]
        .iter()
        .map(|s| (s.domain().to_string(), s.key().public_key().clone()))
        .collect::<std::collections::HashMap<_, _>>();
    assert!(verify_chain(&from_rtb, &keys).is_valid());
    println!("both transports verify");
}

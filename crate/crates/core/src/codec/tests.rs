use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::Arc;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde_json::json;

use super::*;
use crate::chain::{
    build_first_block, build_next_block, build_value_string, fields, finalize_auction_block, verify_chain, Chain,
    DataField, Signer, PENDING,
};
use crate::crypto::{Algorithm, KeyPair, PublicKey};
use crate::tuuid::TransactionId;

const DOMAINS: [&str; 4] = ["pub.example", "ssp.example", "adx.example", "dsp.example"];

fn signer(i: usize) -> Signer {
    let key = KeyPair::generate_with(Algorithm::EcdsaP256Sha256, &mut ChaCha20Rng::seed_from_u64(i as u64 + 1)).unwrap();
    Signer::new(DOMAINS[i], Arc::new(key)).unwrap()
}

fn keys() -> HashMap<String, PublicKey> {
    (0..4).map(|i| (DOMAINS[i].to_string(), signer(i).key().public_key().clone())).collect()
}

fn sample_chain() -> Chain {
    let tid = TransactionId::new(1_700_000_000_123_456_789, 3, 0x0a0b_0c0d_0e0f).unwrap();
    let b0 = build_first_block(
        tid,
        "198.51.100.23".parse().unwrap(),
        "ssp.example",
        fields([("size", "300x250 top"), ("page", "https://news.example/a?b=1&c=2")]).unwrap(),
        &signer(0),
    )
    .unwrap();
    let mut c = Chain::from_first(b0);
    c.push(build_next_block(&c, "adx.example", fields([("floor", "0.40")]).unwrap(), &signer(1)).unwrap()).unwrap();
    c.push(build_next_block(&c, PENDING, fields([("auction", "1")]).unwrap(), &signer(2)).unwrap()).unwrap();
    let mut c = finalize_auction_block(&c, "dsp.example", &signer(2)).unwrap();
    let last = build_next_block(
        &c,
        "dsp.example",
        fields([("advertiser", "shoes-r-us"), ("campaign", "c17"), ("creative", "cr-9/ü")]).unwrap(),
        &signer(3),
    )
    .unwrap();
    c.push(last).unwrap();
    c
}

fn golden(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("testdata").join(name)
}

fn check_golden(name: &str, actual: &str) {
    let path = golden(name);
    if std::env::var_os("ADSCHAIN_UPDATE_GOLDEN").is_some() {
        std::fs::write(&path, actual).unwrap();
    }
    let expected = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    assert_eq!(actual, expected, "golden file {name} differs");
}

fn value_strings(chain: &Chain) -> Vec<Vec<u8>> {
    let view = chain.flat_view();
    chain.blocks().iter().map(|b| build_value_string(&b.keys_string, &view).unwrap()).collect()
}

#[test]
fn one_block_query_shape() {
    let c = sample_chain().prefix(1).unwrap();
    let url = embed_query(&c, "https://ssp.example/ad", &[]).unwrap();
    let tid = c.transaction_id().unwrap();
    let prefix = format!(
        "https://ssp.example/ad?ac_tid={tid}&ac_ip=198.51.100.23&ac0_signer=pub.example&ac0_custody=ssp.example&ac0_keys=ac_tid%2Cac_ip%2Cac0_custody%2Cac0_size%2Cac0_page&ac0_sig={}",
        c.blocks()[0].signature
    );
    assert!(url.starts_with(&prefix), "{url}");
    assert!(url.contains("&ac0_size=300x250%20top"));
    let (back, view) = extract_query(&url).unwrap();
    assert_eq!(back, c);
    assert_eq!(view.get("ac0_size"), Some("300x250 top"));
}

#[test]
fn query_round_trip_and_pass_through() {
    let c = sample_chain();
    let url = embed_query(&c, "https://ssp.example/ad?slot=top&w=300", &[("cb", "a b")]).unwrap();
    assert!(url.starts_with("https://ssp.example/ad?slot=top&w=300&cb=a%20b&ac_tid="));
    let (back, view) = extract_query(&url).unwrap();
    assert_eq!(back, c);
    let passthrough: Vec<(&str, &str)> = view.iter().take(3).collect();
    assert_eq!(passthrough, [("slot", "top"), ("w", "300"), ("cb", "a b")]);
    assert!(verify_chain(&back, &keys()).is_valid());
}

#[test]
fn query_errors() {
    let c = sample_chain();
    let url = embed_query(&c, "https://ssp.example/ad", &[]).unwrap();

    let no_sig = url.replace(&format!("&ac0_sig={}", c.blocks()[0].signature), "");
    assert!(matches!(extract_query(&no_sig), Err(CodecError::MissingTriple { index: 0, name: "sig" })));

    let gap = url.replace("ac1_", "ac9_");
    assert!(matches!(extract_query(&gap), Err(CodecError::NonContiguous { found }) if found == [0, 2, 3, 9]));

    let dup = format!("{url}&ac0_size=1x1");
    assert!(matches!(extract_query(&dup), Err(CodecError::DuplicateParameter(_))));

    assert!(matches!(extract_query("https://x.example/?a=1"), Err(CodecError::AbsentChain)));
    assert!(matches!(
        embed_query(&c, "https://ssp.example/ad?ac0_x=1", &[]),
        Err(CodecError::ConflictingParameter(_))
    ));
    assert!(matches!(
        embed_query(&c, "https://ssp.example/ad", &[("ac_tid", "x")]),
        Err(CodecError::ConflictingParameter(_))
    ));
    assert!(matches!(
        embed_query_limited(&c, "https://ssp.example/ad", &[], 200),
        Err(CodecError::UrlTooLong { limit: 200, .. })
    ));
}

#[test]
fn lowercase_escapes_decode() {
    let c = sample_chain().prefix(1).unwrap();
    let url = embed_query(&c, "https://ssp.example/ad", &[]).unwrap().replace("%2C", "%2c");
    assert_eq!(extract_query(&url).unwrap().0, c);
}

#[test]
fn tampered_url_fails_verification() {
    let c = sample_chain();
    let url = embed_query(&c, "https://ssp.example/ad", &[]).unwrap();
    let (back, _) = extract_query(&url.replace("ac1_floor=0.40", "ac1_floor=0.01")).unwrap();
    let report = verify_chain(&back, &keys());
    assert_eq!(report.first_invalid_index, Some(1));
}

#[test]
fn openrtb_round_trip_and_pass_through() {
    let c = sample_chain().prefix(2).unwrap();
    let msg = json!({"id": "req-1", "imp": [{"id": "1"}], "source": {"fd": 1}});
    let out = embed_openrtb(&c, msg).unwrap();
    assert_eq!(out["source"]["ext"][EXTENSION_KEY]["blocks"].as_array().unwrap().len(), 2);
    assert_eq!(out["source"]["fd"], 1);
    assert_eq!(out["imp"][0]["id"], "1");
    let (back, _) = extract_openrtb(&out).unwrap();
    assert_eq!(back, c);

    assert!(matches!(embed_openrtb(&c, out.clone()), Err(CodecError::ConflictingParameter(_))));
    let created = embed_openrtb(&c, json!({})).unwrap();
    assert!(created.pointer("/source/ext/adschain").is_some());

    let mut taken = out.clone();
    let (t, _) = take_openrtb(&mut taken).unwrap();
    assert_eq!(t, c);
    assert!(taken.pointer("/source/ext/adschain").is_none());
    assert_eq!(taken["id"], "req-1");
}

#[test]
fn openrtb_errors() {
    assert!(matches!(extract_openrtb(&json!({"id": "x"})), Err(CodecError::AbsentChain)));
    let c = sample_chain().prefix(2).unwrap();
    let mut out = embed_openrtb(&c, json!({})).unwrap();
    out["source"]["ext"][EXTENSION_KEY]["blocks"][1]
        .as_object_mut()
        .unwrap()
        .remove("sig");
    assert!(matches!(extract_openrtb(&out), Err(CodecError::MissingTriple { index: 1, name: "sig" })));
    out["source"]["ext"][EXTENSION_KEY]["blocks"][1] = json!("nope");
    assert!(matches!(extract_openrtb(&out), Err(CodecError::Malformed(_))));
}

#[test]
fn cross_transport_value_strings_match() {
    let c = sample_chain();
    let url = embed_query(&c, "https://ssp.example/ad", &[]).unwrap();
    let (q, _) = extract_query(&url).unwrap();
    let (o, _) = extract_openrtb(&embed_openrtb(&c, json!({})).unwrap()).unwrap();
    assert_eq!(value_strings(&q), value_strings(&o));
    assert_eq!(value_strings(&q), value_strings(&c));
}

#[test]
fn three_hop_transcode_verifies() {
    let c = sample_chain();
    let url = embed_query(&c, "https://ssp.example/ad", &[]).unwrap();
    let (hop1, _) = extract_query(&url).unwrap();
    let rtb = embed_openrtb(&hop1, json!({"id": "r"})).unwrap();
    let (hop2, _) = extract_openrtb(&rtb).unwrap();
    let url2 = embed_query(&hop2, "https://adserver.example/serve", &[]).unwrap();
    let (hop3, _) = extract_query(&url2).unwrap();
    assert_eq!(hop3, c);
    assert!(verify_chain(&hop3, &keys()).is_valid());
}

#[test]
fn golden_renderings() {
    let c = sample_chain();
    let url = embed_query(&c, "https://ssp.example/ad?slot=top", &[]).unwrap();
    check_golden("chain.query.txt", &format!("{url}\n"));
    let rtb = embed_openrtb(&c, json!({"id": "req-1", "imp": [{"id": "1"}]})).unwrap();
    check_golden("chain.openrtb.json", &format!("{}\n", serde_json::to_string_pretty(&rtb).unwrap()));

    // The two files describe the same chain.
    let q = std::fs::read_to_string(golden("chain.query.txt")).unwrap();
    let o: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(golden("chain.openrtb.json")).unwrap()).unwrap();
    assert_eq!(extract_query(q.trim_end()).unwrap().0, extract_openrtb(&o).unwrap().0);
}

fn arb_value() -> impl Strategy<Value = String> {
    proptest::string::string_regex("[^\u{1f}]{0,12}").unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn prop_transport_round_trip(
        vals in proptest::collection::vec((("[a-z][a-z0-9_.-]{0,6}"), arb_value()), 0..4),
        extra in proptest::collection::vec(("[b-z][a-z0-9]{0,5}", arb_value()), 0..3),
        blocks in 1usize..=4,
    ) {
        let mut seen = std::collections::HashSet::new();
        let fs: Vec<DataField> = vals.iter()
            .filter(|(k, _)| seen.insert(k.clone()))
            .filter_map(|(k, v)| DataField::new(k, v).ok())
            .collect();
        let tid = TransactionId::new(42, 1, 7).unwrap();
        let mut c = Chain::from_first(build_first_block(tid, "2001:db8::7".parse().unwrap(), "ssp.example", fs.clone(), &signer(0)).unwrap());
        for i in 1..blocks {
            let next = if i == 3 { "dsp.example" } else { DOMAINS[i + 1] };
            c.push(build_next_block(&c, next, fs.clone(), &signer(i)).unwrap()).unwrap();
        }
        let mut seen = std::collections::HashSet::new();
        let extra: Vec<(&str, &str)> = extra.iter()
            .filter(|(k, _)| seen.insert(k.clone()))
            .map(|(k, v)| (k.as_str(), v.as_str()))
            .collect();
        let url = embed_query_limited(&c, "https://ssp.example/ad", &extra, usize::MAX).unwrap();
        let (q, view) = extract_query(&url).unwrap();
        prop_assert_eq!(&q, &c);
        for (k, v) in &extra {
            prop_assert_eq!(view.get(k), Some(*v));
        }
        let (o, _) = extract_openrtb(&embed_openrtb(&c, json!({})).unwrap()).unwrap();
        prop_assert_eq!(&o, &c);
        prop_assert_eq!(value_strings(&q), value_strings(&o));
        prop_assert!(verify_chain(&q, &keys()).is_valid());
    }
}

use std::collections::HashMap;
use std::net::IpAddr;
use std::sync::{Arc, OnceLock};

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use super::*;
use crate::crypto::{Algorithm, KeyPair, PublicKey};

const RFC6979_KEY: &str = "C9AFA9D845BA75166B5C215767B1D6934E50C3DB36E89B127B8A622B120F6721";

fn signer(domain: &str, seed: u64) -> Signer {
    let key = KeyPair::generate_with(Algorithm::EcdsaP256Sha256, &mut ChaCha20Rng::seed_from_u64(seed)).unwrap();
    Signer::new(domain, Arc::new(key)).unwrap()
}

fn rsa_signer(domain: &str) -> Signer {
    static KEY: OnceLock<Arc<KeyPair>> = OnceLock::new();
    let key = KEY.get_or_init(|| {
        Arc::new(KeyPair::generate_with(Algorithm::Rsa2048Pkcs1v15Sha256, &mut ChaCha20Rng::seed_from_u64(99)).unwrap())
    });
    Signer::new(domain, key.clone()).unwrap()
}

fn tid() -> TransactionId {
    TransactionId::new(1, 0, 0).unwrap()
}

fn ip() -> IpAddr {
    "203.0.113.7".parse().unwrap()
}

struct World {
    signers: Vec<Signer>,
    keys: HashMap<String, PublicKey>,
}

impl World {
    fn new() -> Self {
        let signers = vec![
            signer("pub.example", 1),
            signer("ssp.example", 2),
            signer("adx.example", 3),
            signer("dsp.example", 4),
            signer("dsp2.example", 5),
        ];
        let keys = signers
            .iter()
            .map(|s| (s.domain().to_string(), s.key().public_key().clone()))
            .collect();
        Self { signers, keys }
    }

    fn get(&self, domain: &str) -> &Signer {
        self.signers.iter().find(|s| s.domain() == domain).unwrap()
    }

    /// publisher -> ssp -> adx -> dsp, final.
    fn four_blocks(&self) -> Chain {
        let b0 = build_first_block(tid(), ip(), "ssp.example", fields([("size", "300x250")]).unwrap(), self.get("pub.example")).unwrap();
        let mut chain = Chain::from_first(b0);
        let b1 = build_next_block(&chain, "adx.example", fields([("floor", "0.50")]).unwrap(), self.get("ssp.example")).unwrap();
        chain.push(b1).unwrap();
        let tmp = build_next_block(&chain, PENDING, fields([("auction", "a1")]).unwrap(), self.get("adx.example")).unwrap();
        chain.push(tmp).unwrap();
        let mut chain = finalize_auction_block(&chain, "dsp.example", self.get("adx.example")).unwrap();
        let b3 = build_next_block(&chain, "dsp.example", fields([("bid", "1.25"), ("creative", "c-9")]).unwrap(), self.get("dsp.example")).unwrap();
        chain.push(b3).unwrap();
        chain
    }
}

#[test]
fn first_block_cover() {
    let w = World::new();
    let b = build_first_block(tid(), ip(), "ssp.example", vec![], w.get("pub.example")).unwrap();
    assert_eq!(b.keys_string, "ac_tid,ac_ip,ac0_custody");
    let b = build_first_block(tid(), ip(), "ssp.example", fields([("size", "300x250")]).unwrap(), w.get("pub.example")).unwrap();
    assert_eq!(b.keys_string, "ac_tid,ac_ip,ac0_custody,ac0_size");
    let report = verify_chain(&Chain::from_first(b), &w.keys);
    assert!(report.is_valid());
}

#[test]
fn first_block_rejects_bad_custody() {
    let w = World::new();
    let err = build_first_block(tid(), ip(), "Not A Domain", vec![], w.get("pub.example")).unwrap_err();
    assert!(matches!(err, ChainError::InvalidDomain(_)));
    assert!(matches!(DataField::new("custody", "x"), Err(ChainError::ReservedKey(_))));
    assert!(matches!(DataField::new("Size", "x"), Err(ChainError::InvalidKey(_))));
    assert!(matches!(DataField::new("size", "a\u{1f}b"), Err(ChainError::InvalidValue(_))));
}

#[test]
fn known_key_vector() {
    // Signature produced by the independent RFC 6979 script in tests/oracle
    // over the value string of this block.
    let key = KeyPair::from_private_bytes(Algorithm::EcdsaP256Sha256, &hex::decode(RFC6979_KEY).unwrap()).unwrap();
    let s = Signer::new("pub.example", Arc::new(key)).unwrap();
    let b = build_first_block(tid(), ip(), "ssp.example", fields([("size", "300x250")]).unwrap(), &s).unwrap();
    assert_eq!(
        b.body.value_string().unwrap(),
        b"00000001-0000-f000-8000-000000000000\x1f203.0.113.7\x1fssp.example\x1f300x250"
    );
    assert_eq!(
        b.signature,
        "ozfbX4lcl-fZaMwj9rFXbDKaRtzOhmqks2yqpXMaoA0BXxNrYkGrdM-H_OrAStdqvdUmc0S4CE-YmWPU4f93xQ"
    );
    assert_eq!(b.algorithm(), Some(Algorithm::EcdsaP256Sha256));
}

#[test]
fn next_block_links_and_checks_custody() {
    let w = World::new();
    let b0 = build_first_block(tid(), ip(), "ssp.example", vec![], w.get("pub.example")).unwrap();
    let chain = Chain::from_first(b0.clone());
    let b1 = build_next_block(&chain, "adx.example", vec![], w.get("ssp.example")).unwrap();
    assert_eq!(b1.keys_string, "ac1_prev,ac1_custody");
    assert_eq!(b1.body.prev_signature.as_deref(), Some(b0.signature.as_str()));
    let chain = chain.with(b1).unwrap();
    assert!(verify_chain(&chain, &w.keys).is_valid());

    let err = build_next_block(&chain, "dsp.example", vec![], w.get("dsp.example")).unwrap_err();
    assert!(matches!(err, ChainError::CustodyMismatch { .. }));
}

#[test]
fn pending_block_signs_tmp_flag() {
    let w = World::new();
    let b0 = build_first_block(tid(), ip(), "adx.example", vec![], w.get("pub.example")).unwrap();
    let chain = Chain::from_first(b0);
    let tmp = build_next_block(&chain, PENDING, fields([("auction", "a1")]).unwrap(), w.get("adx.example")).unwrap();
    assert_eq!(tmp.keys_string, "ac1_prev,ac1_custody,ac1_auction,ac1_tmp");
    let chain = chain.with(tmp).unwrap();
    assert_eq!(chain.flat_view().get("ac1_tmp"), Some("1"));
    let report = verify_chain(&chain, &w.keys);
    assert!(report.is_valid());
    assert!(report.is_temporary);

    // A temporary chain cannot be extended.
    assert!(matches!(
        build_next_block(&chain, "x.example", vec![], w.get("adx.example")),
        Err(ChainError::InvalidPriorChain(_))
    ));
}

#[test]
fn finalize_rewrites_last_block() {
    let w = World::new();
    let b0 = build_first_block(tid(), ip(), "adx.example", vec![], w.get("pub.example")).unwrap();
    let chain = Chain::from_first(b0);
    let tmp = build_next_block(&chain, PENDING, fields([("auction", "a1")]).unwrap(), w.get("adx.example")).unwrap();
    let temp_chain = chain.with(tmp.clone()).unwrap();

    let fin = finalize_auction_block(&temp_chain, "dsp.example", w.get("adx.example")).unwrap();
    assert_eq!(fin.len(), 2);
    assert_eq!(fin.blocks()[0], temp_chain.blocks()[0]);
    assert_eq!(fin.custody(), "dsp.example");
    assert_eq!(fin.last().keys_string, "ac1_prev,ac1_custody,ac1_auction");
    assert!(!fin.flat_view().contains_key("ac1_tmp"));
    assert_ne!(fin.last().signature, tmp.signature);
    let report = verify_chain(&fin, &w.keys);
    assert!(report.is_valid() && !report.is_temporary);

    assert!(matches!(
        finalize_auction_block(&fin, "dsp.example", w.get("adx.example")),
        Err(ChainError::NotTemporary)
    ));
    assert!(matches!(
        finalize_auction_block(&temp_chain, "dsp.example", w.get("ssp.example")),
        Err(ChainError::NotTemporaryAuthor { .. })
    ));
}

#[test]
fn only_the_winner_gets_custody() {
    let w = World::new();
    let b0 = build_first_block(tid(), ip(), "adx.example", vec![], w.get("pub.example")).unwrap();
    let tmp_chain = Chain::from_first(b0.clone());
    let tmp = build_next_block(&tmp_chain, PENDING, vec![], w.get("adx.example")).unwrap();
    let tmp_chain = tmp_chain.with(tmp).unwrap();
    let fin = finalize_auction_block(&tmp_chain, "dsp.example", w.get("adx.example")).unwrap();

    let mut holders = 0;
    for bidder in ["dsp.example", "dsp2.example"] {
        // Each bidder holds the temporary chain; only the winner also holds
        // the final one.
        let held: Vec<&Chain> = if bidder == "dsp.example" { vec![&tmp_chain, &fin] } else { vec![&tmp_chain] };
        for c in held {
            let r = verify_chain(c, &w.keys);
            if r.is_valid() && !r.is_temporary && c.custody() == bidder {
                holders += 1;
                assert!(build_next_block(c, bidder, vec![], w.get(bidder)).is_ok());
            } else {
                assert!(build_next_block(c, bidder, vec![], w.get(bidder)).is_err());
            }
        }
    }
    assert_eq!(holders, 1);
}

#[test]
fn simulated_four_block_chain_verifies() {
    let w = World::new();
    let chain = w.four_blocks();
    assert_eq!(chain.len(), 4);
    let report = verify_chain(&chain, &w.keys);
    assert!(report.verdicts.iter().all(BlockVerdict::is_valid));
    assert!(report.custody_gaps.is_empty());
    assert!(report.buried_temporary.is_empty());
    assert_eq!(chain.custody(), "dsp.example");
}

#[test]
fn verify_block_verdicts() {
    let w = World::new();
    let chain = w.four_blocks();
    let pk = w.keys["ssp.example"].clone();
    let block = &chain.blocks()[1];
    let mut view = chain.flat_view();
    assert_eq!(verify_block(block, &view, &pk), BlockVerdict::Valid);

    view.set("ac1_floor", "0.51");
    assert_eq!(verify_block(block, &view, &pk), BlockVerdict::BadSignature);

    let mut view = chain.flat_view();
    view.remove("ac1_floor");
    assert_eq!(verify_block(block, &view, &pk), BlockVerdict::MissingKey("ac1_floor".into()));

    let mut odd = block.clone();
    odd.keys_string = "ac1_prev,,ac1_custody".into();
    assert!(matches!(verify_block(&odd, &chain.flat_view(), &pk), BlockVerdict::Malformed(_)));

    // Wrong key.
    assert_eq!(verify_block(block, &chain.flat_view(), &w.keys["adx.example"]), BlockVerdict::BadSignature);
}

#[test]
fn tamper_block_two_localizes() {
    let w = World::new();
    let mut chain = w.four_blocks();
    chain.blocks_mut()[2].body.fields[0].set_value_unchecked("a2");
    let report = verify_chain(&chain, &w.keys);
    assert_eq!(report.first_invalid_index, Some(2));
    assert!(report.verdicts[0].is_valid() && report.verdicts[1].is_valid());
    assert_eq!(report.verdicts[2], BlockVerdict::BadSignature);
}

#[test]
fn unknown_signer_is_unverifiable() {
    let w = World::new();
    let chain = w.four_blocks();
    let mut keys = w.keys.clone();
    keys.remove("adx.example");
    let report = verify_chain(&chain, &keys);
    assert_eq!(report.first_invalid_index, Some(2));
    assert!(matches!(report.verdicts[2], BlockVerdict::Unverifiable(_)));
}

#[test]
fn custody_gap_is_reported_not_fatal() {
    let w = World::new();
    let b0 = build_first_block(tid(), ip(), "ssp.example", vec![], w.get("pub.example")).unwrap();
    let chain = Chain::from_first(b0);
    let b1 = build_next_block_across_gap(&chain, "ssp.example", "dsp.example", vec![], w.get("adx.example")).unwrap();
    let chain = chain.with(b1).unwrap();
    let report = verify_chain(&chain, &w.keys);
    assert!(report.is_valid());
    assert_eq!(
        report.custody_gaps,
        vec![CustodyGap { index: 0, expected: "ssp.example".into(), actual: "adx.example".into() }]
    );
}

#[test]
fn broken_link_is_detected() {
    let w = World::new();
    let mut chain = w.four_blocks();
    // Re-sign block 0 with different content: block 1 no longer links to it.
    let other = build_first_block(tid(), ip(), "ssp.example", fields([("size", "728x90")]).unwrap(), w.get("pub.example")).unwrap();
    chain.blocks_mut()[0] = other;
    let report = verify_chain(&chain, &w.keys);
    assert!(report.verdicts[0].is_valid());
    assert_eq!(report.verdicts[1], BlockVerdict::BrokenLink);
    assert_eq!(report.first_invalid_index, Some(1));
}

#[test]
fn rsa_chain_verifies() {
    let w = World::new();
    let s = rsa_signer("pub.example");
    let b0 = build_first_block(tid(), ip(), "ssp.example", fields([("size", "1x1")]).unwrap(), &s).unwrap();
    assert_eq!(b0.algorithm(), Some(Algorithm::Rsa2048Pkcs1v15Sha256));
    let mut keys = w.keys.clone();
    keys.insert("pub.example".into(), s.key().public_key().clone());
    let chain = Chain::from_first(b0);
    assert!(verify_chain(&chain, &keys).is_valid());
}

#[test]
fn domains() {
    assert!(is_valid_domain("ads.example.com"));
    assert!(is_valid_domain("a-b.c0"));
    assert!(!is_valid_domain("localhost"));
    assert!(!is_valid_domain("Example.com"));
    assert!(!is_valid_domain("-a.com"));
    assert!(!is_valid_domain("a..com"));
    assert!(!is_valid_domain(PENDING));
}

#[test]
fn canonical_ips() {
    assert_eq!(parse_canonical_ip("203.0.113.7"), Some(ip()));
    assert!(parse_canonical_ip("2001:db8::1").is_some());
    assert_eq!(parse_canonical_ip("2001:DB8::1"), None);
    assert_eq!(parse_canonical_ip("2001:db8:0:0:0:0:0:1"), None);
}

// Random chains: n blocks (1..=5), optional temporary last block, random
// field sets, either algorithm for block 0.
fn arb_chain() -> impl Strategy<Value = (usize, bool, Vec<Vec<(String, String)>>, bool)> {
    (1usize..=5, any::<bool>(), any::<bool>()).prop_flat_map(|(n, temp_last, rsa)| {
        let block_fields = proptest::collection::vec(
            proptest::collection::btree_map("[a-z][a-z0-9_]{0,5}", "[ -~]{0,8}", 0..3)
                .prop_map(|m| m.into_iter().filter(|(k, _)| !RESERVED.contains(&k.as_str())).collect::<Vec<_>>()),
            n,
        );
        (Just(n), Just(temp_last), block_fields, Just(rsa))
    })
}

const ROUTE: [&str; 5] = ["pub.example", "ssp.example", "adx.example", "dsp.example", "dsp2.example"];

fn build(w: &World, n: usize, temp_last: bool, fs: &[Vec<(String, String)>], rsa: bool) -> Chain {
    let mk = |i: usize| -> Vec<DataField> { fs[i].iter().map(|(k, v)| DataField::new(k, v).unwrap()).collect() };
    let custody_of = |i: usize| if temp_last && i == n - 1 && i > 0 { PENDING } else { ROUTE[(i + 1) % 5] };
    let rsa_pub;
    let first_signer = if rsa {
        rsa_pub = rsa_signer("pub.example");
        &rsa_pub
    } else {
        w.get("pub.example")
    };
    let b0 = build_first_block(tid(), ip(), custody_of(0), mk(0), first_signer).unwrap();
    let mut chain = Chain::from_first(b0);
    for i in 1..n {
        let b = build_next_block(&chain, custody_of(i), mk(i), w.get(ROUTE[i])).unwrap();
        chain.push(b).unwrap();
    }
    chain
}

fn keys_for(w: &World, rsa: bool) -> HashMap<String, PublicKey> {
    let mut keys = w.keys.clone();
    if rsa {
        keys.insert("pub.example".into(), rsa_signer("pub.example").key().public_key().clone());
    }
    keys
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn prop_round_trip_and_byte_flip((n, temp_last, fs, rsa) in arb_chain(), pick in any::<prop::sample::Index>(), byte in any::<prop::sample::Index>()) {
        let w = World::new();
        let keys = keys_for(&w, rsa);
        let chain = build(&w, n, temp_last, &fs, rsa);
        let report = verify_chain(&chain, &keys);
        prop_assert!(report.is_valid());
        prop_assert_eq!(report.is_temporary, temp_last && n > 1);

        // Flip one byte of one covered data value.
        let covered: Vec<(usize, usize)> = chain.blocks().iter().enumerate()
            .flat_map(|(b, blk)| blk.body.fields.iter().enumerate()
                .filter(|(_, f)| !f.is_temporary_flag() && !f.value().is_empty())
                .map(move |(j, _)| (b, j)))
            .collect();
        if !covered.is_empty() {
            let (b, j) = covered[pick.index(covered.len())];
            let mut tampered = chain.clone();
            let field = &mut tampered.blocks_mut()[b].body.fields[j];
            let mut bytes = field.value().as_bytes().to_vec();
            let k = byte.index(bytes.len());
            bytes[k] = if bytes[k] == b'~' { b' ' } else { bytes[k] + 1 };
            field.set_value_unchecked(String::from_utf8(bytes).unwrap());
            let r = verify_chain(&tampered, &keys);
            prop_assert_eq!(&r.verdicts[b], &BlockVerdict::BadSignature);
        }
    }

    #[test]
    fn prop_prefix_verification((n, temp_last, fs, rsa) in arb_chain()) {
        let w = World::new();
        let keys = keys_for(&w, rsa);
        let chain = build(&w, n, temp_last, &fs, rsa);
        for len in 1..=n {
            let prefix = chain.prefix(len).unwrap();
            prop_assert!(verify_chain(&prefix, &keys).is_valid());
        }
    }

    #[test]
    fn prop_tamper_localization((n, temp_last, fs, rsa) in arb_chain(), target in any::<prop::sample::Index>(), what in 0u8..3) {
        let w = World::new();
        let keys = keys_for(&w, rsa);
        let mut chain = build(&w, n, temp_last, &fs, rsa);
        let i = target.index(n);
        let block = &mut chain.blocks_mut()[i];
        match what {
            0 => {
                if let Some(f) = block.body.fields.iter_mut().find(|f| !f.is_temporary_flag()) {
                    let v = format!("{}x", f.value());
                    f.set_value_unchecked(v);
                } else {
                    block.body.custody = "evil.example".into();
                }
            }
            1 => block.body.custody = if block.body.custody == "evil.example" { "evil2.example".into() } else { "evil.example".into() },
            _ => block.keys_string = block.keys_string.split(',').take(1).collect::<Vec<_>>().join(","),
        }
        let r = verify_chain(&chain, &keys);
        prop_assert_eq!(r.first_invalid_index, Some(i));
        for j in 0..i {
            prop_assert!(r.verdicts[j].is_valid());
        }
    }

    #[test]
    fn prop_unequivocal_custody((n, _t, fs, rsa) in arb_chain(), who in 0usize..5) {
        let w = World::new();
        let chain = build(&w, n, false, &fs, rsa);
        let holder = chain.custody().to_string();
        let res = build_next_block(&chain, "x.example", vec![], w.get(ROUTE[who]));
        prop_assert_eq!(res.is_ok(), ROUTE[who] == holder);
        // Every non-last block of a final chain names exactly the next signer.
        for pair in chain.blocks().windows(2) {
            prop_assert_eq!(&pair[0].body.custody, &pair[1].body.signer_domain);
        }
    }
}

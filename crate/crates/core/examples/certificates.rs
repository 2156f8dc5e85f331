//! A local CA, certificate documents, and a key directory that fetches
//! `/ads-chain.crt` from partners and caches the validated keys.

use std::sync::Arc;

use adschain::clock::{Clock, VirtualClock};
use adschain::crypto::{
    validate_certificate, Algorithm, CertificateAuthority, DomainCertificate, KeyPair, TrustStore, Validity,
};
use adschain::keydir::{KeyCacheConfig, KeyDirectory, RegistryFetcher};
use adschain::net::{EndpointRegistry, Request, Response, CERTIFICATE_PATH};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

fn main() {
    let clock = Arc::new(VirtualClock::default());
    let now = clock.now_secs();
    let rng = |s| ChaCha20Rng::seed_from_u64(s);
    let ca_key = KeyPair::generate_with(Algorithm::EcdsaP256Sha256, &mut rng(1)).unwrap();
    let ca = CertificateAuthority::new("example-root", ca_key, Validity::days_from(now, 365)).unwrap();

    let ssp_key = KeyPair::generate_with(Algorithm::Rsa2048Pkcs1v15Sha256, &mut rng(2)).unwrap();
    let cert = ca.issue("ssp.example", ssp_key.public_key(), Validity::days_from(now, 30)).unwrap();
    let doc = cert.to_document();
    println!("{doc}");
    let parsed = DomainCertificate::from_document(&doc).unwrap();

    let trust = TrustStore::with_root(ca.root_certificate()).unwrap();
    println!("for ssp.example: {:?}", validate_certificate(&parsed, "ssp.example", now, &trust));
    println!("for adx.example: {:?}", validate_certificate(&parsed, "adx.example", now, &trust));
    println!("in 60 days:      {:?}", validate_certificate(&parsed, "ssp.example", now + 60 * 86_400, &trust));

    // Serve the certificate where partners look for it.
    let registry = Arc::new(EndpointRegistry::new());
    registry.register(
        "ssp.example",
        Arc::new(move |req: &Request| {
            if req.path() == CERTIFICATE_PATH {
                Response::ok(doc.clone())
            } else {
                Response::not_found()
            }
        }),
    );
    let dir = KeyDirectory::new(
        KeyCacheConfig { capacity: 100, ttl_secs: 60 },
        Arc::new(RegistryFetcher::new(registry)),
        trust,
        clock.clone(),
    );
    for _ in 0..3 {
        dir.get_public_key("ssp.example").unwrap();
    }
    clock.advance(std::time::Duration::from_secs(61));
    dir.get_public_key("ssp.example").unwrap();
    println!("{:?}", dir.stats());
    println!("unknown partner: {}", dir.get_public_key("nobody.example").unwrap_err());
}

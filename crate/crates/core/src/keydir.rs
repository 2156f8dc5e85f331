//! Validated, cached public keys of partner domains.

use std::collections::HashMap;
use std::num::NonZeroUsize;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use lru::LruCache;
use parking_lot::{Condvar, Mutex};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chain::KeyLookup;
use crate::clock::Clock;
use crate::crypto::{validate_certificate, Algorithm, CertVerdict, DomainCertificate, PublicKey, TrustStore};
use crate::net::{EndpointRegistry, NetError, Request, CERTIFICATE_PATH};

pub const DEFAULT_CAPACITY: usize = 10_000;
pub const DEFAULT_TTL_SECS: u64 = 3_600;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KeyCacheConfig {
    pub capacity: usize,
    pub ttl_secs: u64,
}

impl Default for KeyCacheConfig {
    fn default() -> Self {
        Self {
            capacity: DEFAULT_CAPACITY,
            ttl_secs: DEFAULT_TTL_SECS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum KeyError {
    #[error("certificate fetch for {domain} failed: {reason}")]
    FetchFailed { domain: String, reason: String },
    #[error("certificate of {domain} served at {CERTIFICATE_PATH} is malformed: {reason}")]
    MalformedCertificate { domain: String, reason: String },
    #[error("certificate of {domain} rejected: {verdict:?}")]
    CertificateInvalid { domain: String, verdict: CertVerdict },
}

/// Source of certificate documents.
pub trait CertificateFetcher: Send + Sync {
    fn fetch_certificate(&self, domain: &str) -> Result<DomainCertificate, KeyError>;
}

/// Fetches `/ads-chain.crt` from a domain's endpoint in the registry.
pub struct RegistryFetcher {
    registry: Arc<EndpointRegistry>,
}

impl RegistryFetcher {
    pub fn new(registry: Arc<EndpointRegistry>) -> Self {
        Self { registry }
    }
}

impl CertificateFetcher for RegistryFetcher {
    fn fetch_certificate(&self, domain: &str) -> Result<DomainCertificate, KeyError> {
        fetch_certificate(&self.registry, domain)
    }
}

pub fn fetch_certificate(registry: &EndpointRegistry, domain: &str) -> Result<DomainCertificate, KeyError> {
    let failed = |reason: String| KeyError::FetchFailed {
        domain: domain.to_string(),
        reason,
    };
    let response = registry
        .call(domain, &Request::get(CERTIFICATE_PATH))
        .map_err(|e: NetError| failed(e.to_string()))?;
    if !response.is_success() {
        return Err(failed(format!("status {}", response.status)));
    }
    DomainCertificate::from_document(&response.body).map_err(|e| KeyError::MalformedCertificate {
        domain: domain.to_string(),
        reason: e.to_string(),
    })
}

#[derive(Debug, Clone)]
pub struct CachedKey {
    pub domain: String,
    pub public_key: PublicKey,
    pub algorithm: Algorithm,
    pub inserted_at_ns: u64,
    pub ttl: Duration,
}

impl CachedKey {
    fn is_fresh(&self, now_ns: u64) -> bool {
        now_ns < self.inserted_at_ns.saturating_add(self.ttl.as_nanos() as u64)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct KeyDirectoryStats {
    pub hits: u64,
    pub misses: u64,
    pub fetches: u64,
}

type FlightResult = Option<Result<PublicKey, KeyError>>;

#[derive(Default)]
struct Flight {
    result: Mutex<FlightResult>,
    done: Condvar,
}

/// LRU cache of validated keys with per-entry expiry.
///
/// Concurrent misses for one domain share a single fetch: the first caller
/// fetches while the others wait for its result, so a cold domain is fetched
/// exactly once per expiry period.
pub struct KeyDirectory {
    entries: Mutex<LruCache<String, CachedKey>>,
    inflight: Mutex<HashMap<String, Arc<Flight>>>,
    ttl: Duration,
    fetcher: Arc<dyn CertificateFetcher>,
    trust: TrustStore,
    clock: Arc<dyn Clock>,
    hits: AtomicU64,
    misses: AtomicU64,
    fetches: AtomicU64,
}

impl KeyDirectory {
    pub fn new(
        config: KeyCacheConfig,
        fetcher: Arc<dyn CertificateFetcher>,
        trust: TrustStore,
        clock: Arc<dyn Clock>,
    ) -> Self {
        let capacity = NonZeroUsize::new(config.capacity.max(1)).expect("nonzero");
        Self {
            entries: Mutex::new(LruCache::new(capacity)),
            inflight: Mutex::new(HashMap::new()),
            ttl: Duration::from_secs(config.ttl_secs),
            fetcher,
            trust,
            clock,
            hits: AtomicU64::new(0),
            misses: AtomicU64::new(0),
            fetches: AtomicU64::new(0),
        }
    }

    pub fn stats(&self) -> KeyDirectoryStats {
        KeyDirectoryStats {
            hits: self.hits.load(Ordering::Relaxed),
            misses: self.misses.load(Ordering::Relaxed),
            fetches: self.fetches.load(Ordering::Relaxed),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.lock().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn cached(&self, domain: &str, now_ns: u64) -> Option<PublicKey> {
        let mut entries = self.entries.lock();
        match entries.get(domain) {
            Some(entry) if entry.is_fresh(now_ns) => Some(entry.public_key.clone()),
            Some(_) => {
                entries.pop(domain);
                None
            }
            None => None,
        }
    }

    pub fn get_public_key(&self, domain: &str) -> Result<PublicKey, KeyError> {
        if let Some(key) = self.cached(domain, self.clock.now_ns()) {
            self.hits.fetch_add(1, Ordering::Relaxed);
            return Ok(key);
        }
        self.misses.fetch_add(1, Ordering::Relaxed);

        let (flight, leader) = {
            let mut inflight = self.inflight.lock();
            // A leader may have finished between the miss and this lock.
            if let Some(key) = self.cached(domain, self.clock.now_ns()) {
                return Ok(key);
            }
            match inflight.get(domain) {
                Some(f) => (f.clone(), false),
                None => {
                    let f = Arc::new(Flight::default());
                    inflight.insert(domain.to_string(), f.clone());
                    (f, true)
                }
            }
        };

        if !leader {
            let mut result = flight.result.lock();
            while result.is_none() {
                flight.done.wait(&mut result);
            }
            return result.clone().expect("set before notify");
        }

        let outcome = self.fetch_and_validate(domain);
        if let Ok(key) = &outcome {
            self.entries.lock().put(
                domain.to_string(),
                CachedKey {
                    domain: domain.to_string(),
                    public_key: key.clone(),
                    algorithm: key.algorithm(),
                    inserted_at_ns: self.clock.now_ns(),
                    ttl: self.ttl,
                },
            );
        }
        {
            let mut inflight = self.inflight.lock();
            *flight.result.lock() = Some(outcome.clone());
            inflight.remove(domain);
        }
        flight.done.notify_all();
        outcome
    }

    fn fetch_and_validate(&self, domain: &str) -> Result<PublicKey, KeyError> {
        self.fetches.fetch_add(1, Ordering::Relaxed);
        let cert = self.fetcher.fetch_certificate(domain)?;
        let verdict = validate_certificate(&cert, domain, self.clock.now_secs(), &self.trust);
        if !verdict.is_accepted() {
            return Err(KeyError::CertificateInvalid {
                domain: domain.to_string(),
                verdict,
            });
        }
        cert.public_key().map_err(|e| KeyError::MalformedCertificate {
            domain: domain.to_string(),
            reason: e.to_string(),
        })
    }
}

impl KeyLookup for KeyDirectory {
    fn lookup(&self, domain: &str) -> Result<PublicKey, String> {
        self.get_public_key(domain).map_err(|e| e.to_string())
    }
}

#[derive(Debug, Error)]
pub enum KeyDirError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: {reason}")]
    Document { path: String, reason: String },
    #[error("{path}: certificate rejected: {verdict:?}")]
    Rejected { path: String, verdict: CertVerdict },
    #[error("{0} holds no {ROOT_FILE}")]
    NoRoot(String),
}

/// File name of the trusted root inside a keys directory.
pub const ROOT_FILE: &str = "ca.crt";

/// Loads every `<domain>.crt` in `dir`, validating each against `ca.crt` at
/// the start of its own validity window so archived logs stay auditable.
pub fn load_key_dir(dir: &std::path::Path) -> Result<HashMap<String, PublicKey>, KeyDirError> {
    let read = |p: &std::path::Path| {
        std::fs::read_to_string(p).map_err(|source| KeyDirError::Io {
            path: p.display().to_string(),
            source,
        })
    };
    let doc = |p: &std::path::Path, text: &str| {
        DomainCertificate::from_document(text).map_err(|e| KeyDirError::Document {
            path: p.display().to_string(),
            reason: e.to_string(),
        })
    };
    let root_path = dir.join(ROOT_FILE);
    if !root_path.is_file() {
        return Err(KeyDirError::NoRoot(dir.display().to_string()));
    }
    let root = doc(&root_path, &read(&root_path)?)?;
    let trust = TrustStore::with_root(&root).map_err(|e| KeyDirError::Document {
        path: root_path.display().to_string(),
        reason: e.to_string(),
    })?;
    let entries = std::fs::read_dir(dir).map_err(|source| KeyDirError::Io {
        path: dir.display().to_string(),
        source,
    })?;
    let mut paths: Vec<_> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "crt") && p.file_name() != Some(ROOT_FILE.as_ref()))
        .collect();
    paths.sort();
    let mut out = HashMap::new();
    for p in paths {
        let cert = doc(&p, &read(&p)?)?;
        let verdict = validate_certificate(&cert, &cert.subject, cert.validity.not_before, &trust);
        if !verdict.is_accepted() {
            return Err(KeyDirError::Rejected {
                path: p.display().to_string(),
                verdict,
            });
        }
        let key = cert.public_key().map_err(|e| KeyDirError::Document {
            path: p.display().to_string(),
            reason: e.to_string(),
        })?;
        out.insert(cert.subject.clone(), key);
    }
    Ok(out)
}

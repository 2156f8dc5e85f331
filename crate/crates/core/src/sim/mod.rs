//! In-process ad-delivery network: publisher, SSPs, exchanges, DSPs, ad
//! servers and app signers exchanging chains over an [`EndpointRegistry`].

pub mod entities;
pub mod record;
pub mod topology;

use std::collections::{BTreeMap, HashMap};
use std::net::IpAddr;
use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde_json::Value;
use thiserror::Error;

use crate::chain::{ChainError, Signer};
use crate::clock::{Clock, SystemClock, VirtualClock};
use crate::codec::{extract_query, CodecError};
use crate::crypto::{Algorithm, CertificateAuthority, DomainCertificate, KeyPair, PublicKey, TrustStore, Validity};
use crate::keydir::{KeyDirectory, RegistryFetcher};
use crate::net::{loopback_request, Endpoint, EndpointRegistry, LoopbackServer, NetError, Request, Response};
use crate::tuuid::TuuidGenerator;

use entities::{
    parse_page, parse_rejection, query_param, split_url, with_query_param, AdExchange, AdServer, AdTag, AppSigner, Dsp, Identity, Publisher, Shared,
    Ssp, PAGE_PATH, TRACE_PARAM,
};
use record::{Outcome, Recorder, TransactionRecord};
use topology::{derive_keypair, node_id_for, ClockMode, Role, Topology, Transport};

pub const CA_NAME: &str = "adschain-root";
const CERT_DAYS: u64 = 365;
const LOOPBACK_TIMEOUT: Duration = Duration::from_secs(10);

#[derive(Debug, Error)]
pub enum SimError {
    #[error("configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Chain(#[from] ChainError),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error("malformed request: {0}")]
    Malformed(String),
    #[error("app {0} is not registered with this signer")]
    UnregisteredApp(String),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

/// What the browser saw for one ad-tag.
#[derive(Debug, Clone)]
pub struct Delivery {
    pub tag: AdTag,
    pub response: Response,
    /// Creative fetched from the ad server, when the DSP delegated delivery.
    pub creative: Option<Response>,
}

impl Delivery {
    pub fn rejection(&self) -> Option<(String, String, String)> {
        parse_rejection(&self.response)
    }
}

pub struct Simulation {
    topology: Topology,
    clock: Arc<dyn Clock>,
    registry: Arc<EndpointRegistry>,
    recorder: Option<Arc<Recorder>>,
    ca: CertificateAuthority,
    keys: BTreeMap<String, Arc<KeyPair>>,
    certificates: BTreeMap<String, DomainCertificate>,
    client_ip: IpAddr,
    publisher: Arc<Publisher>,
    ssps: BTreeMap<String, Arc<Ssp>>,
    exchanges: BTreeMap<String, Arc<AdExchange>>,
    dsps: BTreeMap<String, Arc<Dsp>>,
    app_signers: BTreeMap<String, Arc<AppSigner>>,
    servers: BTreeMap<String, LoopbackServer>,
}

impl Simulation {
    /// Builds every entity with recording on, on the clock the topology asks for.
    pub fn new(topology: Topology) -> Result<Self, SimError> {
        let clock: Arc<dyn Clock> = match topology.clock {
            ClockMode::Virtual => Arc::new(VirtualClock::new(VirtualClock::DEFAULT_START_NS)),
            ClockMode::System => Arc::new(SystemClock),
        };
        Self::with_clock(topology, clock, true)
    }

    pub fn with_clock(topology: Topology, clock: Arc<dyn Clock>, record: bool) -> Result<Self, SimError> {
        topology.validate()?;
        let cfg = |e: String| SimError::Config(e);
        let registry = Arc::new(EndpointRegistry::new());
        let recorder = record.then(|| Arc::new(Recorder::new(clock.clone())));
        let shared = Arc::new(Shared {
            registry: registry.clone(),
            recorder: recorder.clone(),
            clock: clock.clone(),
            mode: if clock.is_virtual() { ClockMode::Virtual } else { ClockMode::System },
        });

        let validity = Validity::days_from(clock.now_secs().saturating_sub(60), CERT_DAYS);
        let ca_key = derive_keypair(topology.seed, CA_NAME, Algorithm::EcdsaP256Sha256)?;
        let ca = CertificateAuthority::new(CA_NAME, ca_key, validity).map_err(|e| cfg(e.to_string()))?;
        let trust = TrustStore::with_root(ca.root_certificate()).map_err(|e| cfg(e.to_string()))?;
        let fetcher = Arc::new(RegistryFetcher::new(registry.clone()));
        let directory = || {
            Arc::new(KeyDirectory::new(
                topology.key_cache,
                fetcher.clone(),
                trust.clone(),
                clock.clone(),
            ))
        };

        let mut keys = BTreeMap::new();
        let mut certificates = BTreeMap::new();
        for e in &topology.entities {
            if matches!(e.role, Role::Adserver | Role::AppSigner) {
                continue;
            }
            let key = derive_keypair(topology.seed, &e.domain, topology.algorithm_of(e))?;
            let cert = ca
                .issue(&e.domain, key.public_key(), validity)
                .map_err(|err| cfg(err.to_string()))?;
            keys.insert(e.domain.clone(), Arc::new(key));
            certificates.insert(e.domain.clone(), cert);
        }
        let identity = |domain: &str| -> Result<Identity, SimError> {
            Ok(Identity {
                signer: Signer::new(domain, keys[domain].clone())?,
                certificate: certificates[domain].clone(),
                keys: directory(),
            })
        };

        let client_ip = crate::chain::parse_canonical_ip(&topology.client_ip)
            .ok_or_else(|| cfg(format!("bad client_ip {}", topology.client_ip)))?;
        let mut publisher = None;
        let mut ssps = BTreeMap::new();
        let mut exchanges = BTreeMap::new();
        let mut dsps = BTreeMap::new();
        let mut app_signers = BTreeMap::new();
        let mut servers = BTreeMap::new();
        for e in &topology.entities {
            let endpoint: Arc<dyn Endpoint> = match e.role {
                Role::Publisher => {
                    let generator = TuuidGenerator::new(node_id_for(&e.domain), 0, clock.clone())
                        .map_err(|err| cfg(err.to_string()))?;
                    let p = Arc::new(Publisher::new(
                        identity(&e.domain)?,
                        e.downstream[0].clone(),
                        generator,
                        topology.max_ads,
                        shared.clone(),
                    ));
                    publisher = Some(p.clone());
                    p
                }
                Role::Ssp => {
                    let s = Arc::new(Ssp::new(
                        identity(&e.domain)?,
                        e.downstream[0].clone(),
                        e.signing,
                        e.gap_policy,
                        shared.clone(),
                    ));
                    ssps.insert(e.domain.clone(), s.clone());
                    s
                }
                Role::Adx => {
                    let x = Arc::new(AdExchange::new(
                        identity(&e.domain)?,
                        e.downstream.clone(),
                        Duration::from_millis(e.auction_wait_ms),
                        e.gap_policy,
                        shared.clone(),
                    ));
                    exchanges.insert(e.domain.clone(), x.clone());
                    x
                }
                Role::Dsp => {
                    let rng = ChaCha20Rng::seed_from_u64(topology.seed ^ node_id_for(&e.domain));
                    let d = Arc::new(Dsp::new(
                        identity(&e.domain)?,
                        e.bid,
                        rng,
                        Duration::from_millis(e.response_delay_ms),
                        e.downstream.first().cloned(),
                        shared.clone(),
                    ));
                    dsps.insert(e.domain.clone(), d.clone());
                    d
                }
                Role::Adserver => Arc::new(AdServer::new(e.domain.clone(), directory(), shared.clone())),
                Role::AppSigner => {
                    let owner = e.publisher.as_deref().expect("validated");
                    let a = Arc::new(AppSigner::new(
                        e.domain.clone(),
                        Signer::new(owner, keys[owner].clone())?,
                        e.apps.iter().cloned(),
                    ));
                    app_signers.insert(e.domain.clone(), a.clone());
                    a
                }
            };
            match topology.transport {
                Transport::InProcess => registry.register(e.domain.clone(), endpoint),
                Transport::Loopback => {
                    let server = LoopbackServer::start(endpoint)?;
                    let addr = server.addr();
                    registry.register(
                        e.domain.clone(),
                        Arc::new(move |req: &Request| {
                            loopback_request(addr, req, LOOPBACK_TIMEOUT).unwrap_or_else(|err| Response {
                                status: 502,
                                body: err.to_string(),
                            })
                        }),
                    );
                    servers.insert(e.domain.clone(), server);
                }
            }
        }

        Ok(Self {
            client_ip,
            publisher: publisher.expect("validated"),
            topology,
            clock,
            registry,
            recorder,
            ca,
            keys,
            certificates,
            ssps,
            exchanges,
            dsps,
            app_signers,
            servers,
        })
    }

    pub fn topology(&self) -> &Topology {
        &self.topology
    }

    pub fn clock(&self) -> &Arc<dyn Clock> {
        &self.clock
    }

    pub fn registry(&self) -> &Arc<EndpointRegistry> {
        &self.registry
    }

    pub fn recorder(&self) -> Option<&Arc<Recorder>> {
        self.recorder.as_ref()
    }

    pub fn certificate_authority(&self) -> &CertificateAuthority {
        &self.ca
    }

    pub fn publisher(&self) -> &Arc<Publisher> {
        &self.publisher
    }

    pub fn ssp(&self, domain: &str) -> Option<&Arc<Ssp>> {
        self.ssps.get(domain)
    }

    pub fn exchange(&self, domain: &str) -> Option<&Arc<AdExchange>> {
        self.exchanges.get(domain)
    }

    pub fn dsp(&self, domain: &str) -> Option<&Arc<Dsp>> {
        self.dsps.get(domain)
    }

    pub fn app_signer(&self, domain: &str) -> Option<&Arc<AppSigner>> {
        self.app_signers.get(domain)
    }

    pub fn key_pair(&self, domain: &str) -> Option<&Arc<KeyPair>> {
        self.keys.get(domain)
    }

    /// Socket address of an entity when running over loopback.
    pub fn socket_addr(&self, domain: &str) -> Option<std::net::SocketAddr> {
        self.servers.get(domain).map(LoopbackServer::addr)
    }

    pub fn client_ip(&self) -> IpAddr {
        self.client_ip
    }

    /// Public key of every signing entity.
    pub fn public_keys(&self) -> HashMap<String, PublicKey> {
        self.keys
            .iter()
            .map(|(d, k)| (d.clone(), k.public_key().clone()))
            .collect()
    }

    /// Writes `ca.crt` and one `<domain>.crt` per signing entity.
    pub fn export_keys(&self, dir: &Path) -> Result<(), SimError> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("ca.crt"), self.ca.root_certificate().to_document())?;
        for (domain, cert) in &self.certificates {
            std::fs::write(dir.join(format!("{domain}.crt")), cert.to_document())?;
        }
        Ok(())
    }

    /// Fetches `/page` from the publisher as the configured client.
    pub fn fetch_page(&self, n_ads: usize, sign: bool) -> Result<Vec<AdTag>, SimError> {
        let target = format!("{PAGE_PATH}?ads={n_ads}&sign={}", u8::from(sign));
        let resp = self.registry.call(
            self.publisher.domain(),
            &Request::get(target).with_remote_addr(self.client_ip),
        )?;
        if !resp.is_success() {
            return Err(SimError::Config(resp.body));
        }
        parse_page(&resp.body)
            .into_iter()
            .map(|url| {
                let trace = query_param(&url, TRACE_PARAM);
                let tid = extract_query(&url).ok().and_then(|(c, _)| c.transaction_id());
                Ok(AdTag { url, trace, tid })
            })
            .collect()
    }

    /// Requests one ad-tag as the browser would, following the ad markup to
    /// the ad server when it points there.
    pub fn deliver(&self, tag: &AdTag) -> Result<Delivery, SimError> {
        let (host, target) = split_url(&tag.url).ok_or_else(|| SimError::Malformed(tag.url.clone()))?;
        let response = self
            .registry
            .call(host, &Request::get(target).with_remote_addr(self.client_ip))?;
        let mut creative = None;
        if response.status == 200 {
            let adm = serde_json::from_str::<Value>(&response.body)
                .ok()
                .and_then(|v| v["adm"].as_str().map(str::to_string));
            if let Some((host, target)) = adm.as_deref().and_then(split_url) {
                creative = Some(
                    self.registry
                        .call(host, &Request::get(target).with_remote_addr(self.client_ip))?,
                );
            }
        }
        if let (Some(r), Some(t)) = (&self.recorder, &tag.trace) {
            if !response.is_success() && parse_rejection(&response).is_none() {
                r.finish(
                    t,
                    Outcome::Failed {
                        stage: "delivery".into(),
                        error: format!("HTTP {}: {}", response.status, response.body),
                    },
                );
            }
        }
        Ok(Delivery {
            tag: tag.clone(),
            response,
            creative,
        })
    }

    /// Loads a page with `n_ads` tags and delivers each of them.
    pub fn run_page(&self, n_ads: usize, sign: bool) -> Result<Vec<Delivery>, SimError> {
        self.fetch_page(n_ads, sign)?
            .iter()
            .map(|t| self.deliver(t))
            .collect()
    }

    /// Loads one page with `n_ads` tags, delivers them and returns their records.
    pub fn run_transaction(&self, n_ads: usize) -> Result<Vec<TransactionRecord>, SimError> {
        let deliveries = self.run_page(n_ads, true)?;
        let Some(rec) = &self.recorder else {
            return Ok(Vec::new());
        };
        Ok(deliveries
            .iter()
            .filter_map(|d| d.tag.trace.as_deref().and_then(|t| rec.get(t)))
            .collect())
    }

    /// Runs `n` single-ad page views and returns their records.
    pub fn run(&self, n: usize) -> Result<Vec<TransactionRecord>, SimError> {
        for _ in 0..n {
            self.run_page(1, true)?;
        }
        Ok(self.drain_records())
    }

    /// Resubmits a captured ad-tag URL under a fresh trace id.
    pub fn replay(&self, url: &str) -> Result<Delivery, SimError> {
        let trace = self.recorder.as_ref().map(|r| r.open());
        let mut url = url.to_string();
        if let Some(t) = &trace {
            url = with_query_param(&url, TRACE_PARAM, t);
        }
        let tid = extract_query(&url).ok().and_then(|(c, _)| c.transaction_id());
        if let (Some(r), Some(t)) = (&self.recorder, &trace) {
            r.set_origin(t, tid.map(|x| x.to_string()), Some(crate::chain::canonical_ip(&self.client_ip)));
            r.event(t, "client", "replayed", None);
        }
        self.deliver(&AdTag { url, trace, tid })
    }

    pub fn drain_records(&self) -> Vec<TransactionRecord> {
        self.recorder.as_ref().map(|r| r.drain()).unwrap_or_default()
    }
}

impl Drop for Simulation {
    fn drop(&mut self) {
        // Entities hold the registry; unregistering breaks the cycle.
        for e in &self.topology.entities {
            self.registry.unregister(&e.domain);
        }
    }
}

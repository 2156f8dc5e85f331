//! Topology files: which entities exist, how they connect, and how they sign.

use std::collections::HashSet;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::SimError;
use crate::audit::GapPolicy;
use crate::chain::is_valid_domain;
use crate::crypto::{Algorithm, KeyPair};
use crate::keydir::KeyCacheConfig;

pub const DEFAULT_AUCTION_WAIT_MS: u64 = 120;
pub const DEFAULT_MAX_ADS: usize = 30;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Role {
    Publisher,
    Ssp,
    Adx,
    Dsp,
    Adserver,
    AppSigner,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ClockMode {
    #[default]
    Virtual,
    System,
}

fn yes() -> bool {
    true
}

fn default_wait() -> u64 {
    DEFAULT_AUCTION_WAIT_MS
}

/// How entities reach each other.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Transport {
    #[default]
    InProcess,
    /// Each entity listens on a 127.0.0.1 socket and speaks HTTP/1.1.
    Loopback,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EntityConfig {
    pub role: Role,
    pub domain: String,
    #[serde(default)]
    pub downstream: Vec<String>,
    /// When off, the entity relays chains without verifying or signing.
    #[serde(default = "yes")]
    pub signing: bool,
    #[serde(default = "default_wait")]
    pub auction_wait_ms: u64,
    /// Overrides the topology-wide algorithm for this entity's key.
    #[serde(default)]
    pub algorithm: Option<Algorithm>,
    /// Fixed bid price; DSPs without one draw from the seeded generator.
    #[serde(default)]
    pub bid: Option<f64>,
    /// DSPs: delay before answering a bid request.
    #[serde(default)]
    pub response_delay_ms: u64,
    /// App signers: the publisher whose key they hold.
    #[serde(default)]
    pub publisher: Option<String>,
    /// App signers: registered app bundle ids.
    #[serde(default)]
    pub apps: Vec<String>,
    /// How this entity treats chains relayed across a non-signing partner.
    #[serde(default)]
    pub gap_policy: GapPolicy,
}

impl EntityConfig {
    pub fn new(role: Role, domain: &str, downstream: &[&str]) -> Self {
        Self {
            role,
            domain: domain.to_string(),
            downstream: downstream.iter().map(|s| s.to_string()).collect(),
            signing: true,
            auction_wait_ms: DEFAULT_AUCTION_WAIT_MS,
            algorithm: None,
            bid: None,
            response_delay_ms: 0,
            publisher: None,
            apps: Vec::new(),
            gap_policy: GapPolicy::Lenient,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Topology {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_algorithm")]
    pub algorithm: Algorithm,
    #[serde(default)]
    pub clock: ClockMode,
    #[serde(default)]
    pub transport: Transport,
    #[serde(default = "default_max_ads")]
    pub max_ads: usize,
    #[serde(default = "default_client_ip")]
    pub client_ip: String,
    #[serde(default)]
    pub key_cache: KeyCacheConfig,
    pub entities: Vec<EntityConfig>,
}

fn default_algorithm() -> Algorithm {
    Algorithm::EcdsaP256Sha256
}

fn default_max_ads() -> usize {
    DEFAULT_MAX_ADS
}

fn default_client_ip() -> String {
    "203.0.113.10".to_string()
}

impl Topology {
    /// publisher -> ssp -> adx -> dsp.
    pub fn default_four() -> Self {
        Self::with_entities(vec![
            EntityConfig::new(Role::Publisher, "news.example", &["ssp.example"]),
            EntityConfig::new(Role::Ssp, "ssp.example", &["adx.example"]),
            EntityConfig::new(Role::Adx, "adx.example", &["dsp.example"]),
            EntityConfig::new(Role::Dsp, "dsp.example", &[]),
        ])
    }

    pub fn with_entities(entities: Vec<EntityConfig>) -> Self {
        Self {
            seed: 0,
            algorithm: default_algorithm(),
            clock: ClockMode::Virtual,
            transport: Transport::InProcess,
            max_ads: DEFAULT_MAX_ADS,
            client_ip: default_client_ip(),
            key_cache: KeyCacheConfig::default(),
            entities,
        }
    }

    pub fn from_toml(text: &str) -> Result<Self, SimError> {
        let t: Topology = toml::from_str(text).map_err(|e| SimError::Config(e.to_string()))?;
        t.validate()?;
        Ok(t)
    }

    pub fn load(path: &Path) -> Result<Self, SimError> {
        let text = std::fs::read_to_string(path).map_err(|e| SimError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("topology serializes")
    }

    pub fn entity(&self, domain: &str) -> Option<&EntityConfig> {
        self.entities.iter().find(|e| e.domain == domain)
    }

    pub fn entity_mut(&mut self, domain: &str) -> Option<&mut EntityConfig> {
        self.entities.iter_mut().find(|e| e.domain == domain)
    }

    pub fn by_role(&self, role: Role) -> impl Iterator<Item = &EntityConfig> {
        self.entities.iter().filter(move |e| e.role == role)
    }

    pub fn algorithm_of(&self, e: &EntityConfig) -> Algorithm {
        e.algorithm.unwrap_or(self.algorithm)
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::Config(m));
        let mut seen = HashSet::new();
        for e in &self.entities {
            if !is_valid_domain(&e.domain) {
                return bad(format!("invalid domain {:?}", e.domain));
            }
            if !seen.insert(e.domain.as_str()) {
                return bad(format!("duplicate domain {:?}", e.domain));
            }
        }
        let role_of = |d: &str| self.entity(d).map(|e| e.role);
        for e in &self.entities {
            for d in &e.downstream {
                if role_of(d).is_none() {
                    return bad(format!("{} lists unknown downstream {d:?}", e.domain));
                }
            }
            let first = e.downstream.first().and_then(|d| role_of(d));
            match e.role {
                Role::Publisher if first != Some(Role::Ssp) => {
                    return bad(format!("publisher {} needs an ssp downstream", e.domain))
                }
                Role::Ssp if first != Some(Role::Adx) => {
                    return bad(format!("ssp {} needs an adx downstream", e.domain))
                }
                Role::Adx => {
                    if e.downstream.is_empty() || e.downstream.iter().any(|d| role_of(d) != Some(Role::Dsp)) {
                        return bad(format!("adx {} needs one or more dsp downstreams", e.domain));
                    }
                }
                Role::Dsp if e.downstream.iter().any(|d| role_of(d) != Some(Role::Adserver)) => {
                    return bad(format!("dsp {} may only deliver to ad servers", e.domain))
                }
                Role::AppSigner => match e.publisher.as_deref().and_then(role_of) {
                    Some(Role::Publisher) => {}
                    _ => return bad(format!("app signer {} must name its publisher", e.domain)),
                },
                _ => {}
            }
            if !e.signing && e.role != Role::Ssp {
                return bad(format!("{}: only ssps may disable signing", e.domain));
            }
            if let Some(b) = e.bid {
                if !(b.is_finite() && b >= 0.0) {
                    return bad(format!("{}: bid must be a nonnegative number", e.domain));
                }
            }
        }
        if self.by_role(Role::Publisher).count() != 1 {
            return bad("a topology has exactly one publisher".into());
        }
        if self.max_ads == 0 {
            return bad("max_ads must be at least 1".into());
        }
        if crate::chain::parse_canonical_ip(&self.client_ip).is_none() {
            return bad(format!("client_ip {:?} is not a canonical address", self.client_ip));
        }
        Ok(())
    }
}

/// Deterministic key for `label` under `seed`.
pub fn derive_keypair(seed: u64, label: &str, algorithm: Algorithm) -> Result<KeyPair, SimError> {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(label.as_bytes());
    let mut rng = ChaCha20Rng::from_seed(h.finalize().into());
    KeyPair::generate_with(algorithm, &mut rng).map_err(|e| SimError::Config(e.to_string()))
}

/// 48-bit node id for a domain's transaction id generator.
pub fn node_id_for(domain: &str) -> u64 {
    let d = Sha256::digest(domain.as_bytes());
    u64::from_be_bytes([0, 0, d[0], d[1], d[2], d[3], d[4], d[5]])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_topology_is_valid() {
        Topology::default_four().validate().unwrap();
        let text = Topology::default_four().to_toml();
        assert_eq!(Topology::from_toml(&text).unwrap(), Topology::default_four());
    }

    #[test]
    fn rejects_bad_graphs() {
        let mut t = Topology::default_four();
        t.entities[1].downstream = vec!["nowhere.example".into()];
        assert!(t.validate().is_err());

        let mut t = Topology::default_four();
        t.entities[2].downstream.clear();
        assert!(t.validate().is_err());

        let mut t = Topology::default_four();
        t.entities[2].signing = false;
        assert!(t.validate().is_err());

        let mut t = Topology::default_four();
        t.entities.push(EntityConfig::new(Role::Dsp, "dsp.example", &[]));
        assert!(t.validate().is_err());
    }

    #[test]
    fn minimal_file() {
        let t = Topology::from_toml(
            r#"
            [[entities]]
            role = "publisher"
            domain = "p.example"
            downstream = ["s.example"]

            [[entities]]
            role = "ssp"
            domain = "s.example"
            downstream = ["x.example"]
            gap_policy = "strict"

            [[entities]]
            role = "adx"
            domain = "x.example"
            downstream = ["d.example"]
            auction_wait_ms = 5

            [[entities]]
            role = "dsp"
            domain = "d.example"
            bid = 1.5
            "#,
        )
        .unwrap();
        assert_eq!(t.entity("x.example").unwrap().auction_wait_ms, 5);
        assert_eq!(t.key_cache, KeyCacheConfig::default());
        assert!(Topology::from_toml("[[entities]]\nrole = \"mystery\"\ndomain = \"a.b\"\n").is_err());
    }

    #[test]
    fn derived_keys_are_stable() {
        let a = derive_keypair(7, "ssp.example", Algorithm::EcdsaP256Sha256).unwrap();
        let b = derive_keypair(7, "ssp.example", Algorithm::EcdsaP256Sha256).unwrap();
        let c = derive_keypair(8, "ssp.example", Algorithm::EcdsaP256Sha256).unwrap();
        assert_eq!(a.public_key(), b.public_key());
        assert_ne!(a.public_key(), c.public_key());
        assert!(node_id_for("x.example") < 1 << 48);
    }
}

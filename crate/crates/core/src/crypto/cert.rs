//! Minimal domain-validated certificates issued by a single-level local CA.
//!
//! The record is deliberately not X.509: it binds a subject DNS name to a
//! public key for a validity window and carries the issuer's signature over
//! that binding. Binary layout (all integers big-endian):
//!
//! ```text
//! "ACRT" | version:u8 | subject:str16 | algorithm:str16 | public_key:bytes16
//!        | not_before:u64 | not_after:u64 | issuer:str16 | signature:bytes16
//! ```
//!
//! where `str16`/`bytes16` are a u16 length followed by that many bytes. The
//! issuer signature covers everything before the signature field.

use thiserror::Error;

use super::{Algorithm, CryptoError, KeyPair, PublicKey};

const MAGIC: &[u8; 4] = b"ACRT";
const VERSION: u8 = 1;

#[derive(Debug, Error)]
pub enum CertError {
    #[error("invalid validity window: not_before {not_before} must precede not_after {not_after}")]
    InvalidValidity { not_before: u64, not_after: u64 },
    #[error("root certificate for {0:?} is not correctly self-signed")]
    BadRoot(String),
    #[error("malformed certificate: {0}")]
    Malformed(String),
    #[error(transparent)]
    Crypto(#[from] CryptoError),
}

/// Seconds since the Unix epoch, inclusive start, exclusive end.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Validity {
    pub not_before: u64,
    pub not_after: u64,
}

impl Validity {
    pub fn new(not_before: u64, not_after: u64) -> Self {
        Self {
            not_before,
            not_after,
        }
    }

    /// `days` days starting at `from`.
    pub fn days_from(from: u64, days: u64) -> Self {
        Self::new(from, from + days * 86_400)
    }

    pub fn contains(&self, now: u64) -> bool {
        self.not_before <= now && now < self.not_after
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DomainCertificate {
    pub subject: String,
    pub algorithm: Algorithm,
    pub public_key: Vec<u8>,
    pub validity: Validity,
    pub issuer: String,
    pub issuer_signature: Vec<u8>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CertVerdict {
    Accepted,
    UntrustedIssuer,
    /// Outside the validity window, in either direction.
    Expired,
    WrongSubject,
    BadSignature,
}

impl CertVerdict {
    pub fn is_accepted(&self) -> bool {
        matches!(self, CertVerdict::Accepted)
    }
}

fn put_bytes(out: &mut Vec<u8>, bytes: &[u8]) {
    out.extend_from_slice(&(bytes.len() as u16).to_be_bytes());
    out.extend_from_slice(bytes);
}

struct Reader<'a> {
    buf: &'a [u8],
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CertError> {
        if self.buf.len() < n {
            return Err(CertError::Malformed("truncated record".into()));
        }
        let (head, tail) = self.buf.split_at(n);
        self.buf = tail;
        Ok(head)
    }

    fn u16(&mut self) -> Result<u16, CertError> {
        let b = self.take(2)?;
        Ok(u16::from_be_bytes([b[0], b[1]]))
    }

    fn u64(&mut self) -> Result<u64, CertError> {
        let mut b = [0u8; 8];
        b.copy_from_slice(self.take(8)?);
        Ok(u64::from_be_bytes(b))
    }

    fn bytes16(&mut self) -> Result<&'a [u8], CertError> {
        let n = self.u16()? as usize;
        self.take(n)
    }

    fn str16(&mut self) -> Result<String, CertError> {
        let raw = self.bytes16()?;
        String::from_utf8(raw.to_vec())
            .map_err(|_| CertError::Malformed("field is not UTF-8".into()))
    }
}

impl DomainCertificate {
    /// The bytes covered by the issuer signature.
    pub fn signed_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(64 + self.public_key.len());
        out.extend_from_slice(MAGIC);
        out.push(VERSION);
        put_bytes(&mut out, self.subject.as_bytes());
        put_bytes(&mut out, self.algorithm.name().as_bytes());
        put_bytes(&mut out, &self.public_key);
        out.extend_from_slice(&self.validity.not_before.to_be_bytes());
        out.extend_from_slice(&self.validity.not_after.to_be_bytes());
        put_bytes(&mut out, self.issuer.as_bytes());
        out
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = self.signed_bytes();
        put_bytes(&mut out, &self.issuer_signature);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CertError> {
        let mut r = Reader { buf: bytes };
        if r.take(4)? != MAGIC {
            return Err(CertError::Malformed("bad magic".into()));
        }
        let version = r.take(1)?[0];
        if version != VERSION {
            return Err(CertError::Malformed(format!("unsupported version {version}")));
        }
        let subject = r.str16()?;
        let algorithm: Algorithm = r.str16()?.parse()?;
        let public_key = r.bytes16()?.to_vec();
        let not_before = r.u64()?;
        let not_after = r.u64()?;
        let issuer = r.str16()?;
        let issuer_signature = r.bytes16()?.to_vec();
        if !r.buf.is_empty() {
            return Err(CertError::Malformed("trailing bytes".into()));
        }
        Ok(Self {
            subject,
            algorithm,
            public_key,
            validity: Validity::new(not_before, not_after),
            issuer,
            issuer_signature,
        })
    }

    pub fn public_key(&self) -> Result<PublicKey, CryptoError> {
        PublicKey::from_bytes(self.algorithm, &self.public_key)
    }

    /// The subject names this certificate may vouch for: `ads.<domain>` or
    /// the bare domain itself.
    pub fn covers_domain(&self, domain: &str) -> bool {
        self.subject == domain
            || self
                .subject
                .strip_prefix("ads.")
                .is_some_and(|rest| rest == domain)
    }
}

/// A root that signs leaf certificates directly.
#[derive(Debug, Clone)]
pub struct CertificateAuthority {
    name: String,
    key: KeyPair,
    root: DomainCertificate,
}

impl CertificateAuthority {
    pub fn new(name: impl Into<String>, key: KeyPair, validity: Validity) -> Result<Self, CertError> {
        let name = name.into();
        check_validity(validity)?;
        let mut root = DomainCertificate {
            subject: name.clone(),
            algorithm: key.algorithm(),
            public_key: key.public_key().to_bytes(),
            validity,
            issuer: name.clone(),
            issuer_signature: Vec::new(),
        };
        root.issuer_signature = key.sign(&root.signed_bytes())?;
        Ok(Self { name, key, root })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn key(&self) -> &KeyPair {
        &self.key
    }

    pub fn root_certificate(&self) -> &DomainCertificate {
        &self.root
    }

    pub fn issue(
        &self,
        subject_domain: &str,
        public_key: &PublicKey,
        validity: Validity,
    ) -> Result<DomainCertificate, CertError> {
        check_validity(validity)?;
        let mut cert = DomainCertificate {
            subject: subject_domain.to_string(),
            algorithm: public_key.algorithm(),
            public_key: public_key.to_bytes(),
            validity,
            issuer: self.name.clone(),
            issuer_signature: Vec::new(),
        };
        cert.issuer_signature = self.key.sign(&cert.signed_bytes())?;
        Ok(cert)
    }
}

fn check_validity(validity: Validity) -> Result<(), CertError> {
    if validity.not_before >= validity.not_after {
        return Err(CertError::InvalidValidity {
            not_before: validity.not_before,
            not_after: validity.not_after,
        });
    }
    Ok(())
}

#[derive(Debug, Clone, Default)]
pub struct TrustStore {
    roots: Vec<(DomainCertificate, PublicKey)>,
}

impl TrustStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_root(root: &DomainCertificate) -> Result<Self, CertError> {
        let mut store = Self::new();
        store.add_root(root)?;
        Ok(store)
    }

    /// Adds a self-signed root. Roots whose self-signature fails are refused.
    pub fn add_root(&mut self, root: &DomainCertificate) -> Result<(), CertError> {
        let key = root.public_key()?;
        if root.issuer != root.subject || !key.verify(&root.signed_bytes(), &root.issuer_signature)
        {
            return Err(CertError::BadRoot(root.subject.clone()));
        }
        self.roots.retain(|(r, _)| r.subject != root.subject);
        self.roots.push((root.clone(), key));
        Ok(())
    }

    pub fn is_empty(&self) -> bool {
        self.roots.is_empty()
    }

    fn issuer_key(&self, issuer: &str) -> Option<&PublicKey> {
        self.roots
            .iter()
            .find(|(root, _)| root.subject == issuer)
            .map(|(_, key)| key)
    }
}

/// Checks, in order: trusted issuer, issuer signature, validity window,
/// subject binding to `expected_domain`.
pub fn validate_certificate(
    cert: &DomainCertificate,
    expected_domain: &str,
    now_secs: u64,
    trust: &TrustStore,
) -> CertVerdict {
    let Some(issuer_key) = trust.issuer_key(&cert.issuer) else {
        return CertVerdict::UntrustedIssuer;
    };
    if !issuer_key.verify(&cert.signed_bytes(), &cert.issuer_signature) {
        return CertVerdict::BadSignature;
    }
    if !cert.validity.contains(now_secs) {
        return CertVerdict::Expired;
    }
    if !cert.covers_domain(expected_domain) {
        return CertVerdict::WrongSubject;
    }
    CertVerdict::Accepted
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    const NOW: u64 = 1_700_000_000;

    fn key(seed: u64) -> KeyPair {
        KeyPair::generate_with(Algorithm::EcdsaP256Sha256, &mut ChaCha20Rng::seed_from_u64(seed))
            .unwrap()
    }

    fn ca() -> CertificateAuthority {
        CertificateAuthority::new("Test CA", key(100), Validity::days_from(NOW - 10, 3650)).unwrap()
    }

    #[test]
    fn issued_certificate_is_accepted() {
        let ca = ca();
        let trust = TrustStore::with_root(ca.root_certificate()).unwrap();
        let leaf = key(1);
        let cert = ca
            .issue("ads.ssp.example", leaf.public_key(), Validity::days_from(NOW - 1, 30))
            .unwrap();
        assert_eq!(
            validate_certificate(&cert, "ssp.example", NOW, &trust),
            CertVerdict::Accepted
        );
        assert_eq!(&cert.public_key().unwrap(), leaf.public_key());
    }

    #[test]
    fn bare_domain_subject_is_accepted_too() {
        let ca = ca();
        let trust = TrustStore::with_root(ca.root_certificate()).unwrap();
        let cert = ca
            .issue("ssp.example", key(1).public_key(), Validity::days_from(NOW - 1, 30))
            .unwrap();
        assert!(validate_certificate(&cert, "ssp.example", NOW, &trust).is_accepted());
    }

    #[test]
    fn empty_trust_store_rejects() {
        let cert = ca()
            .issue("ads.ssp.example", key(1).public_key(), Validity::days_from(NOW - 1, 30))
            .unwrap();
        assert_eq!(
            validate_certificate(&cert, "ssp.example", NOW, &TrustStore::new()),
            CertVerdict::UntrustedIssuer
        );
    }

    #[test]
    fn expired_and_not_yet_valid() {
        let ca = ca();
        let trust = TrustStore::with_root(ca.root_certificate()).unwrap();
        let old = ca
            .issue("ads.ssp.example", key(1).public_key(), Validity::new(NOW - 100, NOW - 1))
            .unwrap();
        assert_eq!(validate_certificate(&old, "ssp.example", NOW, &trust), CertVerdict::Expired);
        let future = ca
            .issue("ads.ssp.example", key(1).public_key(), Validity::new(NOW + 10, NOW + 100))
            .unwrap();
        assert_eq!(validate_certificate(&future, "ssp.example", NOW, &trust), CertVerdict::Expired);
    }

    #[test]
    fn wrong_subject() {
        let ca = ca();
        let trust = TrustStore::with_root(ca.root_certificate()).unwrap();
        let cert = ca
            .issue("ads.other.example", key(1).public_key(), Validity::days_from(NOW - 1, 30))
            .unwrap();
        assert_eq!(
            validate_certificate(&cert, "ssp.example", NOW, &trust),
            CertVerdict::WrongSubject
        );
        // "ads." alone is not a wildcard.
        let cert = ca
            .issue("ads.xssp.example", key(1).public_key(), Validity::days_from(NOW - 1, 30))
            .unwrap();
        assert!(!cert.covers_domain("ssp.example"));
    }

    #[test]
    fn tampered_payload_is_bad_signature() {
        let ca = ca();
        let trust = TrustStore::with_root(ca.root_certificate()).unwrap();
        let mut cert = ca
            .issue("ads.ssp.example", key(1).public_key(), Validity::days_from(NOW - 1, 30))
            .unwrap();
        cert.public_key = key(2).public_key().to_bytes();
        assert_eq!(
            validate_certificate(&cert, "ssp.example", NOW, &trust),
            CertVerdict::BadSignature
        );
    }

    #[test]
    fn invalid_window_is_refused_at_issue() {
        let err = ca()
            .issue("ads.ssp.example", key(1).public_key(), Validity::new(NOW, NOW))
            .unwrap_err();
        assert!(matches!(err, CertError::InvalidValidity { .. }));
    }

    #[test]
    fn binary_round_trip_and_truncation() {
        let cert = ca()
            .issue("ads.ssp.example", key(1).public_key(), Validity::days_from(NOW, 1))
            .unwrap();
        let bytes = cert.to_bytes();
        assert_eq!(DomainCertificate::from_bytes(&bytes).unwrap(), cert);
        for cut in [0, 3, 10, bytes.len() - 1] {
            assert!(DomainCertificate::from_bytes(&bytes[..cut]).is_err());
        }
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(DomainCertificate::from_bytes(&extra).is_err());
    }

    #[test]
    fn forged_root_is_refused() {
        let mut root = ca().root_certificate().clone();
        root.issuer_signature[0] ^= 1;
        assert!(TrustStore::with_root(&root).is_err());
    }
}

//! Signing primitives and the domain-validated certificate scheme.
//!
//! Two signature schemes are supported, both over SHA-256 and both fully
//! deterministic so that a fixed key and message always yield the same bytes:
//!
//! * ECDSA on NIST P-256 with RFC 6979 nonces, signatures encoded as the
//!   64-byte `r || s` concatenation;
//! * RSA-2048 with PKCS#1 v1.5 padding, 256-byte signatures.

mod cert;
mod files;

pub use cert::{
    validate_certificate, CertError, CertVerdict, CertificateAuthority, DomainCertificate,
    TrustStore, Validity,
};
pub use files::{read_key_document, write_key_document, DocumentError};

use std::fmt;
use std::str::FromStr;

use base64::engine::general_purpose::URL_SAFE_NO_PAD;
use base64::Engine;
use p256::ecdsa::signature::{Signer as _, Verifier as _};
use rand::rngs::OsRng;
use rand::{CryptoRng, RngCore};
use rsa::pkcs1::{DecodeRsaPrivateKey, DecodeRsaPublicKey, EncodeRsaPrivateKey, EncodeRsaPublicKey};
use rsa::signature::SignatureEncoding;
use rsa::traits::PublicKeyParts;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const RSA_BITS: usize = 2048;
pub const ECDSA_SIGNATURE_LEN: usize = 64;
pub const RSA_SIGNATURE_LEN: usize = RSA_BITS / 8;

#[derive(Debug, Error)]
pub enum CryptoError {
    #[error("unsupported algorithm {0:?}")]
    UnsupportedAlgorithm(String),
    #[error("key generation failed: {0}")]
    KeyGeneration(String),
    #[error("signing failed: {0}")]
    Signing(String),
    #[error("invalid key encoding: {0}")]
    InvalidKey(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Algorithm {
    #[serde(rename = "ECDSA-P256-SHA256", alias = "ecdsa")]
    EcdsaP256Sha256,
    #[serde(rename = "RSA2048-PKCS1v15-SHA256", alias = "rsa")]
    Rsa2048Pkcs1v15Sha256,
}

impl Algorithm {
    pub const ALL: [Algorithm; 2] = [Algorithm::EcdsaP256Sha256, Algorithm::Rsa2048Pkcs1v15Sha256];

    pub fn name(&self) -> &'static str {
        match self {
            Algorithm::EcdsaP256Sha256 => "ECDSA-P256-SHA256",
            Algorithm::Rsa2048Pkcs1v15Sha256 => "RSA2048-PKCS1v15-SHA256",
        }
    }

    pub fn short_name(&self) -> &'static str {
        match self {
            Algorithm::EcdsaP256Sha256 => "ecdsa",
            Algorithm::Rsa2048Pkcs1v15Sha256 => "rsa",
        }
    }

    pub fn signature_len(&self) -> usize {
        match self {
            Algorithm::EcdsaP256Sha256 => ECDSA_SIGNATURE_LEN,
            Algorithm::Rsa2048Pkcs1v15Sha256 => RSA_SIGNATURE_LEN,
        }
    }

    /// Signatures of the two schemes have distinct fixed lengths, which is
    /// how a block received over the wire reveals its scheme.
    pub fn from_signature_len(len: usize) -> Option<Algorithm> {
        Self::ALL.into_iter().find(|a| a.signature_len() == len)
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = CryptoError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ECDSA-P256-SHA256" | "ecdsa" | "ECDSA-P256" => Ok(Algorithm::EcdsaP256Sha256),
            "RSA2048-PKCS1v15-SHA256" | "rsa" | "RSA-2048" => Ok(Algorithm::Rsa2048Pkcs1v15Sha256),
            other => Err(CryptoError::UnsupportedAlgorithm(other.to_string())),
        }
    }
}

pub fn sha256_digest(bytes: &[u8]) -> [u8; 32] {
    Sha256::digest(bytes).into()
}

pub fn base64url_encode(bytes: &[u8]) -> String {
    URL_SAFE_NO_PAD.encode(bytes)
}

pub fn base64url_decode(text: &str) -> Option<Vec<u8>> {
    URL_SAFE_NO_PAD.decode(text).ok()
}

#[derive(Clone)]
enum Secret {
    Ecdsa(p256::ecdsa::SigningKey),
    Rsa(Box<rsa::pkcs1v15::SigningKey<Sha256>>, Box<rsa::RsaPrivateKey>),
}

/// A signing identity. Immutable once created; share it behind an `Arc`.
#[derive(Clone)]
pub struct KeyPair {
    secret: Secret,
    public: PublicKey,
}

impl KeyPair {
    pub fn generate(algorithm: Algorithm) -> Result<Self, CryptoError> {
        Self::generate_with(algorithm, &mut OsRng)
    }

    /// Key generation from a caller-supplied RNG; with a seeded RNG the
    /// result is reproducible.
    pub fn generate_with<R: RngCore + CryptoRng>(
        algorithm: Algorithm,
        rng: &mut R,
    ) -> Result<Self, CryptoError> {
        match algorithm {
            Algorithm::EcdsaP256Sha256 => {
                Ok(Self::from_ecdsa(p256::ecdsa::SigningKey::random(rng)))
            }
            Algorithm::Rsa2048Pkcs1v15Sha256 => {
                let private = rsa::RsaPrivateKey::new(rng, RSA_BITS)
                    .map_err(|e| CryptoError::KeyGeneration(e.to_string()))?;
                Self::from_rsa(private)
            }
        }
    }

    fn from_ecdsa(key: p256::ecdsa::SigningKey) -> Self {
        let public = PublicKey::Ecdsa(*key.verifying_key());
        Self {
            secret: Secret::Ecdsa(key),
            public,
        }
    }

    fn from_rsa(private: rsa::RsaPrivateKey) -> Result<Self, CryptoError> {
        if private.n().bits() != RSA_BITS {
            return Err(CryptoError::InvalidKey(format!(
                "RSA modulus is {} bits, expected {RSA_BITS}",
                private.n().bits()
            )));
        }
        let public_key = private.to_public_key();
        let signing = rsa::pkcs1v15::SigningKey::<Sha256>::new(private.clone());
        Ok(Self {
            secret: Secret::Rsa(Box::new(signing), Box::new(private)),
            public: PublicKey::Rsa(Box::new(rsa::pkcs1v15::VerifyingKey::new(public_key))),
        })
    }

    pub fn algorithm(&self) -> Algorithm {
        self.public.algorithm()
    }

    pub fn public_key(&self) -> &PublicKey {
        &self.public
    }

    /// Detached signature over SHA-256(`message`).
    pub fn sign(&self, message: &[u8]) -> Result<Vec<u8>, CryptoError> {
        match &self.secret {
            Secret::Ecdsa(key) => {
                let sig: p256::ecdsa::Signature = key
                    .try_sign(message)
                    .map_err(|e| CryptoError::Signing(e.to_string()))?;
                Ok(sig.to_bytes().to_vec())
            }
            Secret::Rsa(key, _) => {
                use rsa::signature::Signer;
                let sig = key
                    .try_sign(message)
                    .map_err(|e| CryptoError::Signing(e.to_string()))?;
                Ok(sig.to_vec())
            }
        }
    }

    /// Raw private key encoding: the 32-byte scalar for ECDSA, PKCS#1 DER
    /// for RSA.
    pub fn private_bytes(&self) -> Vec<u8> {
        match &self.secret {
            Secret::Ecdsa(key) => key.to_bytes().to_vec(),
            Secret::Rsa(_, private) => private
                .to_pkcs1_der()
                .map(|doc| doc.as_bytes().to_vec())
                .unwrap_or_default(),
        }
    }

    pub fn from_private_bytes(algorithm: Algorithm, bytes: &[u8]) -> Result<Self, CryptoError> {
        match algorithm {
            Algorithm::EcdsaP256Sha256 => p256::ecdsa::SigningKey::from_slice(bytes)
                .map(Self::from_ecdsa)
                .map_err(|e| CryptoError::InvalidKey(e.to_string())),
            Algorithm::Rsa2048Pkcs1v15Sha256 => {
                let private = rsa::RsaPrivateKey::from_pkcs1_der(bytes)
                    .map_err(|e| CryptoError::InvalidKey(e.to_string()))?;
                Self::from_rsa(private)
            }
        }
    }
}

impl fmt::Debug for KeyPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("KeyPair")
            .field("algorithm", &self.algorithm())
            .finish_non_exhaustive()
    }
}

#[derive(Clone)]
pub enum PublicKey {
    Ecdsa(p256::ecdsa::VerifyingKey),
    Rsa(Box<rsa::pkcs1v15::VerifyingKey<Sha256>>),
}

impl PublicKey {
    pub fn algorithm(&self) -> Algorithm {
        match self {
            PublicKey::Ecdsa(_) => Algorithm::EcdsaP256Sha256,
            PublicKey::Rsa(_) => Algorithm::Rsa2048Pkcs1v15Sha256,
        }
    }

    /// SEC1 uncompressed point for ECDSA, PKCS#1 `RSAPublicKey` DER for RSA.
    pub fn to_bytes(&self) -> Vec<u8> {
        match self {
            PublicKey::Ecdsa(key) => key.to_encoded_point(false).as_bytes().to_vec(),
            PublicKey::Rsa(key) => {
                let inner: &rsa::RsaPublicKey = key.as_ref().as_ref();
                inner
                    .to_pkcs1_der()
                    .map(|doc| doc.as_bytes().to_vec())
                    .unwrap_or_default()
            }
        }
    }

    pub fn from_bytes(algorithm: Algorithm, bytes: &[u8]) -> Result<Self, CryptoError> {
        match algorithm {
            Algorithm::EcdsaP256Sha256 => p256::ecdsa::VerifyingKey::from_sec1_bytes(bytes)
                .map(PublicKey::Ecdsa)
                .map_err(|e| CryptoError::InvalidKey(e.to_string())),
            Algorithm::Rsa2048Pkcs1v15Sha256 => {
                let key = rsa::RsaPublicKey::from_pkcs1_der(bytes)
                    .map_err(|e| CryptoError::InvalidKey(e.to_string()))?;
                if key.n().bits() != RSA_BITS {
                    return Err(CryptoError::InvalidKey(format!(
                        "RSA modulus is {} bits, expected {RSA_BITS}",
                        key.n().bits()
                    )));
                }
                Ok(PublicKey::Rsa(Box::new(rsa::pkcs1v15::VerifyingKey::new(key))))
            }
        }
    }

    /// Malformed signatures and scheme mismatches simply fail.
    pub fn verify(&self, message: &[u8], signature: &[u8]) -> bool {
        match self {
            PublicKey::Ecdsa(key) => {
                if signature.len() != ECDSA_SIGNATURE_LEN {
                    return false;
                }
                match p256::ecdsa::Signature::from_slice(signature) {
                    Ok(sig) => key.verify(message, &sig).is_ok(),
                    Err(_) => false,
                }
            }
            PublicKey::Rsa(key) => {
                use rsa::signature::Verifier;
                if signature.len() != RSA_SIGNATURE_LEN {
                    return false;
                }
                match rsa::pkcs1v15::Signature::try_from(signature) {
                    Ok(sig) => key.verify(message, &sig).is_ok(),
                    Err(_) => false,
                }
            }
        }
    }
}

impl PartialEq for PublicKey {
    fn eq(&self, other: &Self) -> bool {
        self.algorithm() == other.algorithm() && self.to_bytes() == other.to_bytes()
    }
}

impl Eq for PublicKey {}

impl fmt::Debug for PublicKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "PublicKey({}, {})",
            self.algorithm().short_name(),
            base64url_encode(&sha256_digest(&self.to_bytes())[..8])
        )
    }
}

pub fn sign(key: &KeyPair, message: &[u8]) -> Result<Vec<u8>, CryptoError> {
    key.sign(message)
}

pub fn verify(public: &PublicKey, message: &[u8], signature: &[u8]) -> bool {
    public.verify(message, signature)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;
    use std::sync::OnceLock;

    fn rsa_key() -> &'static KeyPair {
        static KEY: OnceLock<KeyPair> = OnceLock::new();
        KEY.get_or_init(|| {
            KeyPair::generate_with(
                Algorithm::Rsa2048Pkcs1v15Sha256,
                &mut ChaCha20Rng::seed_from_u64(11),
            )
            .unwrap()
        })
    }

    fn ecdsa_key(seed: u64) -> KeyPair {
        KeyPair::generate_with(Algorithm::EcdsaP256Sha256, &mut ChaCha20Rng::seed_from_u64(seed))
            .unwrap()
    }

    #[test]
    fn sha256_published_vectors() {
        assert_eq!(
            hex::encode(sha256_digest(b"")),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
        );
        assert_eq!(
            hex::encode(sha256_digest(b"abc")),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
        assert_eq!(sha256_digest(&[7u8; 1000]).len(), 32);
    }

    #[test]
    fn ecdsa_public_point_is_on_curve() {
        let key = ecdsa_key(1);
        let encoded = key.public_key().to_bytes();
        assert_eq!(encoded.len(), 65);
        assert_eq!(encoded[0], 0x04);
        // from_sec1_bytes rejects points off the curve.
        assert!(PublicKey::from_bytes(Algorithm::EcdsaP256Sha256, &encoded).is_ok());
        let mut off_curve = encoded.clone();
        off_curve[64] ^= 1;
        assert!(PublicKey::from_bytes(Algorithm::EcdsaP256Sha256, &off_curve).is_err());
    }

    #[test]
    fn rsa_modulus_is_2048_bits() {
        match rsa_key().public_key() {
            PublicKey::Rsa(key) => {
                let inner: &rsa::RsaPublicKey = key.as_ref().as_ref();
                assert_eq!(inner.n().bits(), 2048);
            }
            other => panic!("unexpected key {other:?}"),
        }
    }

    #[test]
    fn fresh_keys_differ() {
        let a = KeyPair::generate(Algorithm::EcdsaP256Sha256).unwrap();
        let b = KeyPair::generate(Algorithm::EcdsaP256Sha256).unwrap();
        assert_ne!(a.public_key(), b.public_key());
    }

    #[test]
    fn round_trip_and_determinism_both_schemes() {
        for key in [ecdsa_key(2), rsa_key().clone()] {
            let sig = sign(&key, b"ad transaction").unwrap();
            assert_eq!(sig.len(), key.algorithm().signature_len());
            assert!(verify(key.public_key(), b"ad transaction", &sig));
            assert_eq!(sig, sign(&key, b"ad transaction").unwrap());
            assert!(!verify(key.public_key(), b"ad transactioN", &sig));
        }
    }

    #[test]
    fn wrong_key_and_cross_scheme_fail() {
        let a = ecdsa_key(3);
        let b = ecdsa_key(4);
        let sig = a.sign(b"m").unwrap();
        assert!(!b.public_key().verify(b"m", &sig));
        assert!(!rsa_key().public_key().verify(b"m", &sig));
        let rsa_sig = rsa_key().sign(b"m").unwrap();
        assert!(!a.public_key().verify(b"m", &rsa_sig));
    }

    #[test]
    fn private_key_encoding_round_trips() {
        for key in [ecdsa_key(5), rsa_key().clone()] {
            let restored =
                KeyPair::from_private_bytes(key.algorithm(), &key.private_bytes()).unwrap();
            assert_eq!(restored.public_key(), key.public_key());
            let pk = PublicKey::from_bytes(key.algorithm(), &key.public_key().to_bytes()).unwrap();
            assert_eq!(&pk, key.public_key());
        }
    }

    #[test]
    fn algorithm_names_parse() {
        for alg in Algorithm::ALL {
            assert_eq!(alg.name().parse::<Algorithm>().unwrap(), alg);
            assert_eq!(alg.short_name().parse::<Algorithm>().unwrap(), alg);
            assert_eq!(Algorithm::from_signature_len(alg.signature_len()), Some(alg));
        }
        assert!("dsa".parse::<Algorithm>().is_err());
        assert_eq!(Algorithm::from_signature_len(10), None);
    }

    #[test]
    fn malformed_signatures_are_false_not_panics() {
        let key = ecdsa_key(6);
        assert!(!key.public_key().verify(b"m", &[]));
        assert!(!key.public_key().verify(b"m", &[0u8; 64]));
        assert!(!rsa_key().public_key().verify(b"m", &[0xFFu8; 256]));
    }
}

//! Text documents for certificates and private keys.
//!
//! Both documents share one shape: four `name: value` header lines in a fixed
//! order (`algorithm`, `subject`, `validity`, `issuer`) followed by the
//! base64url (unpadded) body wrapped at 64 columns. For certificates the body
//! is the binary certificate record and the header must agree with it; for
//! private keys `validity` and `issuer` are the literal `none`.

use thiserror::Error;

use super::cert::{CertError, DomainCertificate};
use super::{base64url_decode, base64url_encode, Algorithm, CryptoError, KeyPair};

const HEADERS: [&str; 4] = ["algorithm", "subject", "validity", "issuer"];
const WRAP: usize = 64;

#[derive(Debug, Error)]
pub enum DocumentError {
    #[error("missing or misplaced header line {0:?}")]
    MissingHeader(&'static str),
    #[error("header {0:?} disagrees with the encoded body")]
    HeaderMismatch(&'static str),
    #[error("body is not valid base64url")]
    BadBody,
    #[error(transparent)]
    Certificate(#[from] CertError),
    #[error(transparent)]
    Crypto(#[from] CryptoError),
}

fn render(values: [&str; 4], body: &[u8]) -> String {
    let mut out = String::new();
    for (name, value) in HEADERS.iter().zip(values) {
        out.push_str(name);
        out.push_str(": ");
        out.push_str(value);
        out.push('\n');
    }
    let encoded = base64url_encode(body);
    for chunk in encoded.as_bytes().chunks(WRAP) {
        out.push_str(std::str::from_utf8(chunk).expect("base64 is ASCII"));
        out.push('\n');
    }
    out
}

fn split(text: &str) -> Result<([String; 4], Vec<u8>), DocumentError> {
    let mut lines = text.lines();
    let mut values: [String; 4] = Default::default();
    for (slot, name) in values.iter_mut().zip(HEADERS) {
        let line = lines.next().ok_or(DocumentError::MissingHeader(name))?;
        let value = line
            .strip_prefix(name)
            .and_then(|rest| rest.strip_prefix(": "))
            .ok_or(DocumentError::MissingHeader(name))?;
        *slot = value.to_string();
    }
    let body: String = lines.map(str::trim).collect();
    let bytes = base64url_decode(&body).ok_or(DocumentError::BadBody)?;
    if bytes.is_empty() {
        return Err(DocumentError::BadBody);
    }
    Ok((values, bytes))
}

impl DomainCertificate {
    pub fn to_document(&self) -> String {
        let validity = format!("{}..{}", self.validity.not_before, self.validity.not_after);
        render(
            [self.algorithm.name(), &self.subject, &validity, &self.issuer],
            &self.to_bytes(),
        )
    }

    pub fn from_document(text: &str) -> Result<Self, DocumentError> {
        let (headers, body) = split(text)?;
        let cert = DomainCertificate::from_bytes(&body)?;
        let validity = format!("{}..{}", cert.validity.not_before, cert.validity.not_after);
        let expected = [cert.algorithm.name(), &cert.subject, &validity, &cert.issuer];
        for ((name, got), want) in HEADERS.iter().zip(&headers).zip(expected) {
            if got != want {
                return Err(DocumentError::HeaderMismatch(name));
            }
        }
        Ok(cert)
    }
}

pub fn write_key_document(subject: &str, key: &KeyPair) -> String {
    render(
        [key.algorithm().name(), subject, "none", "none"],
        &key.private_bytes(),
    )
}

/// Returns the subject named in the header and the key pair.
pub fn read_key_document(text: &str) -> Result<(String, KeyPair), DocumentError> {
    let (headers, body) = split(text)?;
    let algorithm: Algorithm = headers[0].parse()?;
    if headers[2] != "none" {
        return Err(DocumentError::HeaderMismatch("validity"));
    }
    if headers[3] != "none" {
        return Err(DocumentError::HeaderMismatch("issuer"));
    }
    let key = KeyPair::from_private_bytes(algorithm, &body)?;
    Ok((headers[1].clone(), key))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::{CertificateAuthority, Validity};
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn key(seed: u64) -> KeyPair {
        KeyPair::generate_with(Algorithm::EcdsaP256Sha256, &mut ChaCha20Rng::seed_from_u64(seed))
            .unwrap()
    }

    #[test]
    fn certificate_document_round_trip() {
        let ca = CertificateAuthority::new("Test CA", key(1), Validity::new(0, 10)).unwrap();
        let cert = ca.issue("ads.dsp.example", key(2).public_key(), Validity::new(1, 9)).unwrap();
        let doc = cert.to_document();
        let mut lines = doc.lines();
        assert_eq!(lines.next(), Some("algorithm: ECDSA-P256-SHA256"));
        assert_eq!(lines.next(), Some("subject: ads.dsp.example"));
        assert_eq!(lines.next(), Some("validity: 1..9"));
        assert_eq!(lines.next(), Some("issuer: Test CA"));
        assert!(lines.all(|l| l.len() <= WRAP));
        assert_eq!(DomainCertificate::from_document(&doc).unwrap(), cert);
    }

    #[test]
    fn header_must_match_body() {
        let ca = CertificateAuthority::new("Test CA", key(1), Validity::new(0, 10)).unwrap();
        let cert = ca.issue("ads.dsp.example", key(2).public_key(), Validity::new(1, 9)).unwrap();
        let doc = cert.to_document().replace("subject: ads.dsp.example", "subject: ads.evil.example");
        assert!(matches!(
            DomainCertificate::from_document(&doc),
            Err(DocumentError::HeaderMismatch("subject"))
        ));
    }

    #[test]
    fn garbage_is_rejected() {
        assert!(DomainCertificate::from_document("hello world").is_err());
        let doc = "algorithm: x\nsubject: y\nvalidity: z\nissuer: w\n!!!\n";
        assert!(matches!(
            DomainCertificate::from_document(doc),
            Err(DocumentError::BadBody)
        ));
    }

    #[test]
    fn key_document_round_trip() {
        let k = key(3);
        let doc = write_key_document("ssp.example", &k);
        let (subject, restored) = read_key_document(&doc).unwrap();
        assert_eq!(subject, "ssp.example");
        assert_eq!(restored.public_key(), k.public_key());
    }
}

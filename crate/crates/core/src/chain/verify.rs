use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{build_keys_string, build_value_string, parse_keys_string, Chain, ChainError, FlatView, SignedBlock};
use crate::crypto::{base64url_decode, PublicKey};

/// Resolves a signer domain to its public key.
pub trait KeyLookup {
    /// `Err` carries a human-readable reason the key is unavailable.
    fn lookup(&self, domain: &str) -> Result<PublicKey, String>;
}

impl KeyLookup for HashMap<String, PublicKey> {
    fn lookup(&self, domain: &str) -> Result<PublicKey, String> {
        self.get(domain)
            .cloned()
            .ok_or_else(|| format!("no key known for {domain}"))
    }
}

impl<T: KeyLookup + ?Sized> KeyLookup for &T {
    fn lookup(&self, domain: &str) -> Result<PublicKey, String> {
        (**self).lookup(domain)
    }
}

impl<T: KeyLookup + ?Sized> KeyLookup for Arc<T> {
    fn lookup(&self, domain: &str) -> Result<PublicKey, String> {
        (**self).lookup(domain)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "verdict", content = "detail", rename_all = "kebab-case")]
pub enum BlockVerdict {
    Valid,
    BadSignature,
    MissingKey(String),
    Malformed(String),
    /// `ac<i>_prev` does not match the previous block's signature.
    BrokenLink,
    /// The signer's key could not be obtained.
    Unverifiable(String),
}

impl BlockVerdict {
    pub fn is_valid(&self) -> bool {
        matches!(self, BlockVerdict::Valid)
    }

    pub fn label(&self) -> &'static str {
        match self {
            BlockVerdict::Valid => "valid",
            BlockVerdict::BadSignature => "bad-signature",
            BlockVerdict::MissingKey(_) => "missing-key",
            BlockVerdict::Malformed(_) => "malformed",
            BlockVerdict::BrokenLink => "broken-link",
            BlockVerdict::Unverifiable(_) => "unverifiable",
        }
    }
}

impl fmt::Display for BlockVerdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BlockVerdict::MissingKey(d) | BlockVerdict::Malformed(d) | BlockVerdict::Unverifiable(d) => {
                write!(f, "{}: {d}", self.label())
            }
            _ => f.write_str(self.label()),
        }
    }
}

/// Block `index` delegated custody to `expected`, but block `index + 1` was
/// signed by `actual`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CustodyGap {
    pub index: usize,
    pub expected: String,
    pub actual: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainReport {
    pub verdicts: Vec<BlockVerdict>,
    pub first_invalid_index: Option<usize>,
    pub custody_gaps: Vec<CustodyGap>,
    /// The last block is a temporary auction block.
    pub is_temporary: bool,
    /// Temporary blocks followed by further blocks.
    pub buried_temporary: Vec<usize>,
}

impl ChainReport {
    /// All signatures and links verify. Custody gaps do not affect validity.
    pub fn is_valid(&self) -> bool {
        self.first_invalid_index.is_none()
    }
}

/// Verifies one block against `flat_view` and the signer's key.
pub fn verify_block(block: &SignedBlock, flat_view: &FlatView, public_key: &PublicKey) -> BlockVerdict {
    if let Err(e) = parse_keys_string(&block.keys_string) {
        return BlockVerdict::Malformed(e.to_string());
    }
    let message = match build_value_string(&block.keys_string, flat_view) {
        Ok(m) => m,
        Err(ChainError::MissingKey(k)) => return BlockVerdict::MissingKey(k),
        Err(e) => return BlockVerdict::Malformed(e.to_string()),
    };
    if let Err(e) = block.body.check_structure() {
        return BlockVerdict::Malformed(e.to_string());
    }
    match build_keys_string(&block.body.canonical_cover()) {
        Ok(cover) if cover == block.keys_string => {}
        Ok(_) => {
            return BlockVerdict::Malformed("keys-string does not cover exactly the block's fields".into())
        }
        Err(e) => return BlockVerdict::Malformed(e.to_string()),
    }
    let Some(signature) = base64url_decode(&block.signature) else {
        return BlockVerdict::Malformed("signature is not base64url".into());
    };
    if public_key.verify(&message, &signature) {
        BlockVerdict::Valid
    } else {
        BlockVerdict::BadSignature
    }
}

/// Verifies every block, the `prev` linkage and custody continuity.
pub fn verify_chain(chain: &Chain, keys: &dyn KeyLookup) -> ChainReport {
    let view = chain.flat_view();
    let blocks = chain.blocks();
    let mut verdicts = Vec::with_capacity(blocks.len());
    for (i, block) in blocks.iter().enumerate() {
        let verdict = if block.body.index != i {
            BlockVerdict::Malformed(format!("block at position {i} claims index {}", block.body.index))
        } else if i > 0 && block.body.prev_signature.as_deref() != Some(blocks[i - 1].signature.as_str()) {
            BlockVerdict::BrokenLink
        } else {
            match keys.lookup(&block.body.signer_domain) {
                Ok(pk) => verify_block(block, &view, &pk),
                Err(reason) => BlockVerdict::Unverifiable(reason),
            }
        };
        verdicts.push(verdict);
    }
    let first_invalid_index = verdicts.iter().position(|v| !v.is_valid());

    let mut custody_gaps = Vec::new();
    let mut buried_temporary = Vec::new();
    for (i, pair) in blocks.windows(2).enumerate() {
        let (cur, next) = (&pair[0].body, &pair[1].body);
        if cur.is_temporary() {
            buried_temporary.push(i);
        } else if cur.custody != next.signer_domain {
            custody_gaps.push(CustodyGap {
                index: i,
                expected: cur.custody.clone(),
                actual: next.signer_domain.clone(),
            });
        }
    }

    ChainReport {
        verdicts,
        first_invalid_index,
        custody_gaps,
        is_temporary: chain.is_temporary(),
        buried_temporary,
    }
}

//! Per-transaction chains of signed custody blocks.
//!
//! Block 0 is created by the publisher and carries the transaction id and the
//! client IP. Every later block is created by the entity that currently holds
//! custody: it links to the previous block by signing that block's signature
//! string (`ac<i>_prev`), records its own data fields and names the next
//! custodian. An entity running an auction signs a temporary block with
//! custody [`PENDING`] and re-signs it for the winner once the auction closes.

mod cover;
mod flat;
mod verify;

pub use cover::{
    build_keys_string, build_value_string, is_chain_key, is_valid_key, parse_keys_string,
    qualified, split_qualified, CUSTODY, IP_KEY, KEYS, KEYS_DELIMITER, PREV, RESERVED, SIG, SIGNER,
    TID_KEY, TMP, VALUE_DELIMITER,
};
pub use flat::FlatView;
pub use verify::{verify_block, verify_chain, BlockVerdict, ChainReport, CustodyGap, KeyLookup};

use std::fmt;
use std::net::IpAddr;
use std::sync::Arc;

use thiserror::Error;

use crate::crypto::{base64url_decode, base64url_encode, Algorithm, CryptoError, KeyPair};
use crate::tuuid::TransactionId;

/// Custody sentinel of a temporary auction block.
pub const PENDING: &str = "pending";

#[derive(Debug, Error)]
pub enum ChainError {
    #[error("keys list is empty")]
    EmptyKeys,
    #[error("invalid key {0:?}")]
    InvalidKey(String),
    #[error("duplicate key {0:?}")]
    DuplicateKey(String),
    #[error("reserved field name {0:?}")]
    ReservedKey(String),
    #[error("key {0:?} is missing from the flat view")]
    MissingKey(String),
    #[error("value of {0:?} contains the 0x1F delimiter")]
    InvalidValue(String),
    #[error("invalid domain {0:?}")]
    InvalidDomain(String),
    #[error("custody mismatch: custody is held by {holder:?}, not {signer:?}")]
    CustodyMismatch { holder: String, signer: String },
    #[error("invalid prior chain: {0}")]
    InvalidPriorChain(String),
    #[error("last block is not temporary")]
    NotTemporary,
    #[error("temporary block was signed by {author:?}, not {signer:?}")]
    NotTemporaryAuthor { author: String, signer: String },
    #[error("malformed block: {0}")]
    Malformed(String),
    #[error(transparent)]
    Signing(#[from] CryptoError),
}

/// Lowercase DNS name with at least two labels.
pub fn is_valid_domain(name: &str) -> bool {
    if name.is_empty() || name.len() > 253 {
        return false;
    }
    let labels: Vec<&str> = name.split('.').collect();
    labels.len() >= 2
        && labels.iter().all(|l| {
            !l.is_empty()
                && l.len() <= 63
                && !l.starts_with('-')
                && !l.ends_with('-')
                && l.bytes().all(|b| matches!(b, b'a'..=b'z' | b'0'..=b'9' | b'-'))
        })
}

fn check_domain(name: &str) -> Result<(), ChainError> {
    if is_valid_domain(name) {
        Ok(())
    } else {
        Err(ChainError::InvalidDomain(name.to_string()))
    }
}

/// Canonical textual form of a client address: dotted quad for IPv4,
/// lowercase compressed form for IPv6.
pub fn canonical_ip(ip: &IpAddr) -> String {
    ip.to_string()
}

/// Parses an address and insists it is already in canonical form.
pub fn parse_canonical_ip(text: &str) -> Option<IpAddr> {
    let ip: IpAddr = text.parse().ok()?;
    (canonical_ip(&ip) == text).then_some(ip)
}

/// One key-value pair recorded by an entity. `key` is the short name; the
/// block it lives in supplies the `ac<i>_` prefix.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct DataField {
    key: String,
    value: String,
}

impl DataField {
    pub fn new(key: impl Into<String>, value: impl Into<String>) -> Result<Self, ChainError> {
        let key = key.into();
        let value = value.into();
        if !is_valid_key(&key) {
            return Err(ChainError::InvalidKey(key));
        }
        if RESERVED.contains(&key.as_str()) {
            return Err(ChainError::ReservedKey(key));
        }
        if value.as_bytes().contains(&VALUE_DELIMITER) {
            return Err(ChainError::InvalidValue(key));
        }
        Ok(Self { key, value })
    }

    /// Used by decoders: accepts the reserved `tmp` flag, which only the
    /// structural check of the enclosing block can judge.
    pub(crate) fn decoded(key: &str, value: &str) -> Result<Self, ChainError> {
        if key == cover::TMP {
            if value.as_bytes().contains(&VALUE_DELIMITER) {
                return Err(ChainError::InvalidValue(key.to_string()));
            }
            return Ok(Self::temporary_flag_with(value));
        }
        Self::new(key, value)
    }

    fn temporary_flag() -> Self {
        Self::temporary_flag_with("1")
    }

    fn temporary_flag_with(value: &str) -> Self {
        Self {
            key: cover::TMP.to_string(),
            value: value.to_string(),
        }
    }

    pub fn key(&self) -> &str {
        &self.key
    }

    pub fn value(&self) -> &str {
        &self.value
    }

    pub fn is_temporary_flag(&self) -> bool {
        self.key == cover::TMP
    }

    /// Test and audit tooling: replace the value without re-validating.
    pub fn set_value_unchecked(&mut self, value: impl Into<String>) {
        self.value = value.into();
    }
}

/// Convenience for literal field lists in callers and tests.
pub fn fields<const N: usize>(pairs: [(&str, &str); N]) -> Result<Vec<DataField>, ChainError> {
    pairs.into_iter().map(|(k, v)| DataField::new(k, v)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Origin {
    pub transaction_id: TransactionId,
    pub client_ip: IpAddr,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockBody {
    pub index: usize,
    pub signer_domain: String,
    pub custody: String,
    /// Signature string of block `index - 1`; absent for block 0.
    pub prev_signature: Option<String>,
    pub fields: Vec<DataField>,
    /// Present exactly on block 0.
    pub origin: Option<Origin>,
}

impl BlockBody {
    pub fn is_temporary(&self) -> bool {
        self.custody == PENDING
    }

    /// The keys a signature over this body must cover, in order.
    pub fn canonical_cover(&self) -> Vec<String> {
        let i = self.index;
        let mut keys = Vec::with_capacity(self.fields.len() + 3);
        if i == 0 {
            keys.push(TID_KEY.to_string());
            keys.push(IP_KEY.to_string());
        } else {
            keys.push(qualified(i, cover::PREV));
        }
        keys.push(qualified(i, cover::CUSTODY));
        keys.extend(self.fields.iter().map(|f| qualified(i, &f.key)));
        keys
    }

    /// Key-value pairs this block contributes to the flat view, excluding its
    /// keys-string and signature.
    pub fn entries(&self) -> Vec<(String, String)> {
        let i = self.index;
        let mut out = Vec::with_capacity(self.fields.len() + 3);
        if let Some(origin) = &self.origin {
            out.push((TID_KEY.to_string(), origin.transaction_id.to_string()));
            out.push((IP_KEY.to_string(), canonical_ip(&origin.client_ip)));
        }
        if let Some(prev) = &self.prev_signature {
            out.push((qualified(i, cover::PREV), prev.clone()));
        }
        out.push((qualified(i, cover::CUSTODY), self.custody.clone()));
        out.extend(self.fields.iter().map(|f| (qualified(i, &f.key), f.value.clone())));
        out
    }

    pub fn value_string(&self) -> Result<Vec<u8>, ChainError> {
        let keys = build_keys_string(&self.canonical_cover())?;
        let view: FlatView = self
            .entries()
            .iter()
            .map(|(k, v)| (k.as_str(), v.as_str()))
            .collect();
        build_value_string(&keys, &view)
    }

    /// Structural invariants, independent of any signature.
    pub fn check_structure(&self) -> Result<(), ChainError> {
        let first = self.index == 0;
        if first != self.origin.is_some() {
            return Err(ChainError::Malformed(
                "transaction id and client ip must appear exactly on block 0".into(),
            ));
        }
        if first == self.prev_signature.is_some() {
            return Err(ChainError::Malformed(
                "previous signature must appear exactly on blocks after 0".into(),
            ));
        }
        check_domain(&self.signer_domain)?;
        if !self.is_temporary() {
            check_domain(&self.custody)?;
        }
        let mut seen = std::collections::HashSet::new();
        let mut tmp_flag = false;
        for field in &self.fields {
            if !is_valid_key(&field.key) {
                return Err(ChainError::InvalidKey(field.key.clone()));
            }
            if !seen.insert(field.key.as_str()) {
                return Err(ChainError::DuplicateKey(field.key.clone()));
            }
            if field.value.as_bytes().contains(&VALUE_DELIMITER) {
                return Err(ChainError::InvalidValue(field.key.clone()));
            }
            if field.is_temporary_flag() {
                if field.value != "1" {
                    return Err(ChainError::Malformed("temporary flag must be 1".into()));
                }
                tmp_flag = true;
            } else if RESERVED.contains(&field.key.as_str()) {
                return Err(ChainError::ReservedKey(field.key.clone()));
            }
        }
        if tmp_flag != self.is_temporary() {
            return Err(ChainError::Malformed(
                "custody `pending` and the temporary flag must appear together".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SignedBlock {
    pub body: BlockBody,
    pub keys_string: String,
    /// Detached signature, base64url without padding.
    pub signature: String,
}

impl SignedBlock {
    /// The scheme is implied by the signature length.
    pub fn algorithm(&self) -> Option<Algorithm> {
        base64url_decode(&self.signature).and_then(|raw| Algorithm::from_signature_len(raw.len()))
    }

    pub fn signature_bytes(&self) -> Option<Vec<u8>> {
        base64url_decode(&self.signature)
    }
}

/// A domain together with its private key.
#[derive(Clone)]
pub struct Signer {
    domain: String,
    key: Arc<KeyPair>,
}

impl Signer {
    pub fn new(domain: impl Into<String>, key: Arc<KeyPair>) -> Result<Self, ChainError> {
        let domain = domain.into();
        check_domain(&domain)?;
        Ok(Self { domain, key })
    }

    pub fn domain(&self) -> &str {
        &self.domain
    }

    pub fn key(&self) -> &KeyPair {
        &self.key
    }

    /// Signs a complete body over its canonical cover. The body is not
    /// modified.
    pub fn sign_body(&self, body: BlockBody) -> Result<SignedBlock, ChainError> {
        if body.signer_domain != self.domain {
            return Err(ChainError::Malformed(format!(
                "body names signer {:?} but key belongs to {:?}",
                body.signer_domain, self.domain
            )));
        }
        body.check_structure()?;
        let keys_string = build_keys_string(&body.canonical_cover())?;
        let message = body.value_string()?;
        let signature = base64url_encode(&self.key.sign(&message)?);
        Ok(SignedBlock {
            body,
            keys_string,
            signature,
        })
    }
}

impl fmt::Debug for Signer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Signer")
            .field("domain", &self.domain)
            .field("algorithm", &self.key.algorithm())
            .finish()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Chain {
    blocks: Vec<SignedBlock>,
}

impl Chain {
    pub fn new(blocks: Vec<SignedBlock>) -> Result<Self, ChainError> {
        if blocks.is_empty() {
            return Err(ChainError::Malformed("a chain needs at least one block".into()));
        }
        Ok(Self { blocks })
    }

    pub fn from_first(block: SignedBlock) -> Self {
        Self {
            blocks: vec![block],
        }
    }

    pub fn blocks(&self) -> &[SignedBlock] {
        &self.blocks
    }

    /// Mutable access for fault injection in tests and tooling.
    pub fn blocks_mut(&mut self) -> &mut [SignedBlock] {
        &mut self.blocks
    }

    pub fn into_blocks(self) -> Vec<SignedBlock> {
        self.blocks
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn last(&self) -> &SignedBlock {
        self.blocks.last().expect("chains are never empty")
    }

    pub fn origin(&self) -> Option<&Origin> {
        self.blocks[0].body.origin.as_ref()
    }

    pub fn transaction_id(&self) -> Option<TransactionId> {
        self.origin().map(|o| o.transaction_id)
    }

    /// Custody named by the last block (`pending` for temporary chains).
    pub fn custody(&self) -> &str {
        &self.last().body.custody
    }

    pub fn is_temporary(&self) -> bool {
        self.last().body.is_temporary()
    }

    /// Appends a block produced by one of the builders.
    pub fn push(&mut self, block: SignedBlock) -> Result<(), ChainError> {
        if block.body.index != self.blocks.len() {
            return Err(ChainError::Malformed(format!(
                "block index {} does not follow chain length {}",
                block.body.index,
                self.blocks.len()
            )));
        }
        self.blocks.push(block);
        Ok(())
    }

    pub fn with(mut self, block: SignedBlock) -> Result<Self, ChainError> {
        self.push(block)?;
        Ok(self)
    }

    /// First `len` blocks.
    pub fn prefix(&self, len: usize) -> Option<Chain> {
        (len >= 1 && len <= self.blocks.len()).then(|| Chain {
            blocks: self.blocks[..len].to_vec(),
        })
    }

    /// Every key-value pair of the transaction, including each block's
    /// keys-string, signature and (unsigned) signer domain. Later duplicates are dropped; the
    /// structural checks reject the blocks that would produce them.
    pub fn flat_view(&self) -> FlatView {
        let mut view = FlatView::new();
        for block in &self.blocks {
            let i = block.body.index;
            for (k, v) in block.body.entries() {
                let _ = view.insert(k, v);
            }
            let _ = view.insert(qualified(i, cover::KEYS), block.keys_string.clone());
            let _ = view.insert(qualified(i, cover::SIG), block.signature.clone());
            let _ = view.insert(qualified(i, cover::SIGNER), block.body.signer_domain.clone());
        }
        view
    }
}

pub fn build_first_block(
    transaction_id: TransactionId,
    client_ip: IpAddr,
    custody: &str,
    fields: Vec<DataField>,
    signer: &Signer,
) -> Result<SignedBlock, ChainError> {
    check_domain(custody)?;
    signer.sign_body(BlockBody {
        index: 0,
        signer_domain: signer.domain.clone(),
        custody: custody.to_string(),
        prev_signature: None,
        fields,
        origin: Some(Origin {
            transaction_id,
            client_ip,
        }),
    })
}

fn check_appendable(chain: &Chain) -> Result<(), ChainError> {
    for (i, block) in chain.blocks.iter().enumerate() {
        if block.body.index != i {
            return Err(ChainError::InvalidPriorChain(format!("block {i} has index {}", block.body.index)));
        }
        if i > 0 && block.body.prev_signature.as_deref() != Some(chain.blocks[i - 1].signature.as_str()) {
            return Err(ChainError::InvalidPriorChain(format!("block {i} is not linked to block {}", i - 1)));
        }
        block
            .body
            .check_structure()
            .map_err(|e| ChainError::InvalidPriorChain(format!("block {i}: {e}")))?;
    }
    if chain.is_temporary() {
        return Err(ChainError::InvalidPriorChain(
            "cannot extend a temporary chain; it must be finalized first".into(),
        ));
    }
    Ok(())
}

fn next_body(chain: &Chain, custody: &str, mut fields: Vec<DataField>, signer: &Signer) -> Result<BlockBody, ChainError> {
    if custody == PENDING {
        fields.push(DataField::temporary_flag());
    } else {
        check_domain(custody)?;
    }
    Ok(BlockBody {
        index: chain.len(),
        signer_domain: signer.domain.clone(),
        custody: custody.to_string(),
        prev_signature: Some(chain.last().signature.clone()),
        fields,
        origin: None,
    })
}

/// Appends the signer's block. Only the current custodian may do so. The
/// caller is expected to have verified `chain` (see [`verify_chain`]); this
/// function re-checks structure and linkage, not signatures.
pub fn build_next_block(
    chain: &Chain,
    custody: &str,
    fields: Vec<DataField>,
    signer: &Signer,
) -> Result<SignedBlock, ChainError> {
    check_appendable(chain)?;
    if chain.custody() != signer.domain {
        return Err(ChainError::CustodyMismatch {
            holder: chain.custody().to_string(),
            signer: signer.domain.clone(),
        });
    }
    signer.sign_body(next_body(chain, custody, fields, signer)?)
}

/// Appends the signer's block when custody was delegated to `forwarded_by`,
/// an entity that relayed the request without signing. The resulting chain
/// carries a custody gap that verification reports.
pub fn build_next_block_across_gap(
    chain: &Chain,
    forwarded_by: &str,
    custody: &str,
    fields: Vec<DataField>,
    signer: &Signer,
) -> Result<SignedBlock, ChainError> {
    check_appendable(chain)?;
    if chain.custody() != forwarded_by || forwarded_by == signer.domain {
        return Err(ChainError::CustodyMismatch {
            holder: chain.custody().to_string(),
            signer: signer.domain.clone(),
        });
    }
    signer.sign_body(next_body(chain, custody, fields, signer)?)
}

/// Replaces a temporary last block with a final one delegating custody to
/// `winner`. The temporary signature is discarded.
pub fn finalize_auction_block(
    temp_chain: &Chain,
    winner: &str,
    signer: &Signer,
) -> Result<Chain, ChainError> {
    let last = temp_chain.last();
    if !last.body.is_temporary() {
        return Err(ChainError::NotTemporary);
    }
    if last.body.signer_domain != signer.domain {
        return Err(ChainError::NotTemporaryAuthor {
            author: last.body.signer_domain.clone(),
            signer: signer.domain.clone(),
        });
    }
    check_domain(winner)?;
    let mut body = last.body.clone();
    body.custody = winner.to_string();
    body.fields.retain(|f| !f.is_temporary_flag());
    let block = signer.sign_body(body)?;
    let mut blocks = temp_chain.blocks[..temp_chain.len() - 1].to_vec();
    blocks.push(block);
    Ok(Chain { blocks })
}

#[cfg(test)]
mod tests;

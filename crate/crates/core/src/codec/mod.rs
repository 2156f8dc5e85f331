//! Carrying chains in ad-tag query strings and OpenRTB objects.
//!
//! Both transports are lossless renderings of the same [`FlatView`]: every
//! value travels as the exact string that was signed, so a block verifies the
//! same way whichever transports the chain passed through.

mod openrtb;
mod query;

pub use openrtb::{chain_from_json, chain_to_json, embed_openrtb, extract_openrtb, take_openrtb, EXTENSION_KEY};
pub use query::{embed_query, embed_query_limited, extract_query, percent_decode, percent_encode, DEFAULT_MAX_URL_LEN};

use std::collections::BTreeMap;

use thiserror::Error;

use crate::chain::{
    parse_canonical_ip, parse_keys_string, BlockBody, Chain, ChainError, DataField, Origin, SignedBlock, IP_KEY,
    TID_KEY,
};
use crate::tuuid::TransactionId;

#[derive(Debug, Error)]
pub enum CodecError {
    #[error("message carries no chain")]
    AbsentChain,
    #[error("parameter {0:?} is already present")]
    ConflictingParameter(String),
    #[error("duplicate parameter {0:?}")]
    DuplicateParameter(String),
    #[error("url is {len} bytes, over the {limit}-byte limit")]
    UrlTooLong { len: usize, limit: usize },
    #[error("block {index} is missing `{name}`")]
    MissingTriple { index: usize, name: &'static str },
    #[error("block indices are not contiguous: found {found:?}")]
    NonContiguous { found: Vec<usize> },
    #[error("malformed chain data: {0}")]
    Malformed(String),
    #[error(transparent)]
    Chain(#[from] ChainError),
}

fn malformed(msg: impl Into<String>) -> CodecError {
    CodecError::Malformed(msg.into())
}

/// One block as carried on a transport, before reconstruction.
#[derive(Debug, Default)]
pub(crate) struct WireBlock {
    pub custody: Option<String>,
    pub keys: Option<String>,
    pub sig: Option<String>,
    pub signer: Option<String>,
    /// Short name to value, in arrival order.
    pub fields: Vec<(String, String)>,
}

/// Rebuilds a chain from transport data. `ac<i>_prev` is never carried: it is
/// the signature of block `i - 1`. The signer domain travels unsigned; a wrong
/// one only selects a key under which the signature fails.
pub(crate) fn assemble(tid: &str, ip: &str, blocks: BTreeMap<usize, WireBlock>) -> Result<Chain, CodecError> {
    let indices: Vec<usize> = blocks.keys().copied().collect();
    if indices.is_empty() {
        return Err(CodecError::AbsentChain);
    }
    if indices.iter().enumerate().any(|(pos, &i)| pos != i) {
        return Err(CodecError::NonContiguous { found: indices });
    }
    let transaction_id = TransactionId::parse(tid).map_err(|e| malformed(format!("{TID_KEY}: {e}")))?;
    let client_ip = parse_canonical_ip(ip).ok_or_else(|| malformed(format!("{IP_KEY} is not a canonical address")))?;

    let mut out: Vec<SignedBlock> = Vec::with_capacity(blocks.len());
    for (index, wire) in blocks {
        let custody = wire.custody.ok_or(CodecError::MissingTriple { index, name: "custody" })?;
        let keys_string = wire.keys.ok_or(CodecError::MissingTriple { index, name: "keys" })?;
        let signature = wire.sig.ok_or(CodecError::MissingTriple { index, name: "sig" })?;
        let signer_domain = wire.signer.ok_or(CodecError::MissingTriple { index, name: "signer" })?;

        // Fields follow keys-string order; anything unlisted trails behind and
        // makes the block fail verification rather than vanish silently.
        let listed: Vec<&str> = parse_keys_string(&keys_string)
            .map(|keys| {
                keys.into_iter()
                    .filter_map(|k| crate::chain::split_qualified(k).filter(|(i, _)| *i == index).map(|(_, n)| n))
                    .collect()
            })
            .unwrap_or_default();
        let mut pending = wire.fields;
        let mut fields = Vec::with_capacity(pending.len());
        for name in listed {
            if let Some(pos) = pending.iter().position(|(k, _)| k == name) {
                let (k, v) = pending.remove(pos);
                fields.push(DataField::decoded(&k, &v)?);
            }
        }
        for (k, v) in pending {
            fields.push(DataField::decoded(&k, &v)?);
        }

        out.push(SignedBlock {
            body: BlockBody {
                index,
                signer_domain,
                custody,
                prev_signature: out.last().map(|b| b.signature.clone()),
                fields,
                origin: (index == 0).then_some(Origin {
                    transaction_id,
                    client_ip,
                }),
            },
            keys_string,
            signature,
        });
    }
    Ok(Chain::new(out)?)
}

#[cfg(test)]
mod tests;

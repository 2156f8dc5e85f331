use std::collections::{BTreeMap, HashSet};

use percent_encoding::{percent_decode_str, utf8_percent_encode, AsciiSet, NON_ALPHANUMERIC};

use super::{assemble, malformed, CodecError, WireBlock};
use crate::chain::{
    is_chain_key, qualified, split_qualified, Chain, FlatView, CUSTODY, IP_KEY, KEYS, PREV, SIG, SIGNER, TID_KEY,
};

pub const DEFAULT_MAX_URL_LEN: usize = 8192;

/// Everything except ALPHA, DIGIT and `-._~`.
const ENCODE: &AsciiSet = &NON_ALPHANUMERIC.remove(b'-').remove(b'.').remove(b'_').remove(b'~');

pub fn percent_encode(value: &str) -> String {
    utf8_percent_encode(value, ENCODE).to_string()
}

/// Accepts either hex case. `+` is a literal plus sign.
pub fn percent_decode(value: &str) -> Result<String, CodecError> {
    percent_decode_str(value)
        .decode_utf8()
        .map(|s| s.into_owned())
        .map_err(|_| malformed("percent-decoded value is not UTF-8"))
}

fn split_url(url: &str) -> (&str, Option<&str>) {
    match url.split_once('?') {
        Some((base, q)) => (base, Some(q)),
        None => (url, None),
    }
}

fn parse_pairs(query: &str) -> Result<Vec<(String, String)>, CodecError> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for part in query.split('&').filter(|p| !p.is_empty()) {
        let (k, v) = part.split_once('=').unwrap_or((part, ""));
        let k = percent_decode(k)?;
        let v = percent_decode(v)?;
        if !seen.insert(k.clone()) {
            return Err(CodecError::DuplicateParameter(k));
        }
        out.push((k, v));
    }
    Ok(out)
}

/// Chain parameters in wire order.
fn chain_params(chain: &Chain) -> Vec<(String, String)> {
    let mut out = Vec::new();
    if let Some(origin) = chain.origin() {
        out.push((TID_KEY.to_string(), origin.transaction_id.to_string()));
        out.push((IP_KEY.to_string(), crate::chain::canonical_ip(&origin.client_ip)));
    }
    for block in chain.blocks() {
        let i = block.body.index;
        out.push((qualified(i, SIGNER), block.body.signer_domain.clone()));
        out.push((qualified(i, CUSTODY), block.body.custody.clone()));
        out.push((qualified(i, KEYS), block.keys_string.clone()));
        out.push((qualified(i, SIG), block.signature.clone()));
        for f in &block.body.fields {
            out.push((qualified(i, f.key()), f.value().to_string()));
        }
    }
    out
}

pub fn embed_query(chain: &Chain, base_url: &str, extra_params: &[(&str, &str)]) -> Result<String, CodecError> {
    embed_query_limited(chain, base_url, extra_params, DEFAULT_MAX_URL_LEN)
}

/// Appends `extra_params` and then the chain to `base_url`. Fails rather than
/// truncating when the result exceeds `max_len` bytes.
pub fn embed_query_limited(
    chain: &Chain,
    base_url: &str,
    extra_params: &[(&str, &str)],
    max_len: usize,
) -> Result<String, CodecError> {
    let (_, existing) = split_url(base_url);
    for (k, _) in parse_pairs(existing.unwrap_or(""))? {
        if is_chain_key(&k) {
            return Err(CodecError::ConflictingParameter(k));
        }
    }
    for (k, _) in extra_params {
        if is_chain_key(k) {
            return Err(CodecError::ConflictingParameter(k.to_string()));
        }
    }

    let mut url = base_url.to_string();
    let mut sep = match existing {
        None => '?',
        Some("") => '\0',
        Some(_) => '&',
    };
    let extra = extra_params.iter().map(|(k, v)| (k.to_string(), v.to_string()));
    for (k, v) in extra.chain(chain_params(chain)) {
        if sep != '\0' {
            url.push(sep);
        }
        sep = '&';
        url.push_str(&percent_encode(&k));
        url.push('=');
        url.push_str(&percent_encode(&v));
    }
    if url.len() > max_len {
        return Err(CodecError::UrlTooLong {
            len: url.len(),
            limit: max_len,
        });
    }
    Ok(url)
}

/// Splits a URL into the chain it carries and the full flat view. Parameters
/// outside the chain namespace are kept, in order, at the front of the view.
pub fn extract_query(url: &str) -> Result<(Chain, FlatView), CodecError> {
    let (_, query) = split_url(url);
    let pairs = parse_pairs(query.unwrap_or(""))?;

    let mut view = FlatView::new();
    let mut tid = None;
    let mut ip = None;
    let mut blocks: BTreeMap<usize, WireBlock> = BTreeMap::new();
    let mut prevs = Vec::new();
    for (k, v) in pairs {
        if !is_chain_key(&k) {
            view.insert(k, v)?;
            continue;
        }
        if k == TID_KEY {
            tid = Some(v);
            continue;
        }
        if k == IP_KEY {
            ip = Some(v);
            continue;
        }
        let (i, name) = split_qualified(&k).ok_or_else(|| malformed(format!("unknown chain parameter {k:?}")))?;
        let block = blocks.entry(i).or_default();
        match name {
            CUSTODY => block.custody = Some(v),
            KEYS => block.keys = Some(v),
            SIG => block.sig = Some(v),
            SIGNER => block.signer = Some(v),
            PREV => prevs.push((i, v)),
            _ => block.fields.push((name.to_string(), v)),
        }
    }
    if blocks.is_empty() && tid.is_none() && ip.is_none() {
        return Err(CodecError::AbsentChain);
    }
    let tid = tid.ok_or_else(|| malformed(format!("missing {TID_KEY}")))?;
    let ip = ip.ok_or_else(|| malformed(format!("missing {IP_KEY}")))?;
    let chain = assemble(&tid, &ip, blocks)?;

    // A redundant `prev` is tolerated only if it agrees with the link.
    for (i, v) in prevs {
        let derived = chain.blocks().get(i).and_then(|b| b.body.prev_signature.as_deref());
        if derived != Some(v.as_str()) {
            return Err(malformed(format!("ac{i}_prev disagrees with ac{}_sig", i.wrapping_sub(1))));
        }
    }

    for (k, v) in chain.flat_view().iter() {
        view.insert(k, v)?;
    }
    Ok((chain, view))
}

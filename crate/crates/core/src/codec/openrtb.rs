use std::collections::BTreeMap;

use serde_json::{json, Map, Value};

use super::{assemble, malformed, CodecError, WireBlock};
use crate::chain::{canonical_ip, Chain, FlatView};

/// Member of `source.ext` that holds the chain.
pub const EXTENSION_KEY: &str = "adschain";

/// The `adschain` object: `{tid, ip, blocks: [{signer, custody, keys, sig, fields}]}`.
pub fn chain_to_json(chain: &Chain) -> Value {
    let origin = chain.origin();
    let blocks: Vec<Value> = chain
        .blocks()
        .iter()
        .map(|b| {
            let fields: Map<String, Value> = b
                .body
                .fields
                .iter()
                .map(|f| (f.key().to_string(), Value::String(f.value().to_string())))
                .collect();
            json!({
                "signer": b.body.signer_domain,
                "custody": b.body.custody,
                "keys": b.keys_string,
                "sig": b.signature,
                "fields": fields,
            })
        })
        .collect();
    json!({
        "tid": origin.map(|o| o.transaction_id.to_string()),
        "ip": origin.map(|o| canonical_ip(&o.client_ip)),
        "blocks": blocks,
    })
}

/// Stores the chain at `source.ext.adschain`, creating `source` and `ext` as
/// needed. Every other member of `message` is left untouched.
pub fn embed_openrtb(chain: &Chain, mut message: Value) -> Result<Value, CodecError> {
    let root = message
        .as_object_mut()
        .ok_or_else(|| malformed("OpenRTB message is not an object"))?;
    let source = root
        .entry("source")
        .or_insert_with(|| Value::Object(Map::new()))
        .as_object_mut()
        .ok_or_else(|| malformed("`source` is not an object"))?;
    let ext = source
        .entry("ext")
        .or_insert_with(|| Value::Object(Map::new()))
        .as_object_mut()
        .ok_or_else(|| malformed("`source.ext` is not an object"))?;
    if ext.contains_key(EXTENSION_KEY) {
        return Err(CodecError::ConflictingParameter(format!("source.ext.{EXTENSION_KEY}")));
    }
    ext.insert(EXTENSION_KEY.to_string(), chain_to_json(chain));
    Ok(message)
}

/// Removes and returns the chain, leaving the rest of the message intact.
pub fn take_openrtb(message: &mut Value) -> Result<(Chain, FlatView), CodecError> {
    let extracted = extract_openrtb(message)?;
    if let Some(ext) = message.pointer_mut("/source/ext").and_then(Value::as_object_mut) {
        ext.shift_remove(EXTENSION_KEY);
    }
    Ok(extracted)
}

fn str_member<'a>(obj: &'a Map<String, Value>, name: &str, at: &str) -> Result<&'a str, CodecError> {
    obj.get(name)
        .ok_or_else(|| malformed(format!("{at}: missing `{name}`")))?
        .as_str()
        .ok_or_else(|| malformed(format!("{at}: `{name}` is not a string")))
}

pub fn extract_openrtb(message: &Value) -> Result<(Chain, FlatView), CodecError> {
    let ext = message
        .pointer(&format!("/source/ext/{EXTENSION_KEY}"))
        .ok_or(CodecError::AbsentChain)?;
    let chain = chain_from_json(ext)?;
    let view = chain.flat_view();
    Ok((chain, view))
}

/// Inverse of [`chain_to_json`].
pub fn chain_from_json(ext: &Value) -> Result<Chain, CodecError> {
    let ext = ext.as_object().ok_or_else(|| malformed("extension is not an object"))?;
    let tid = str_member(ext, "tid", EXTENSION_KEY)?;
    let ip = str_member(ext, "ip", EXTENSION_KEY)?;
    let entries = ext
        .get("blocks")
        .and_then(Value::as_array)
        .ok_or_else(|| malformed("`blocks` must be an array"))?;

    let mut blocks = BTreeMap::new();
    for (i, entry) in entries.iter().enumerate() {
        let at = format!("blocks[{i}]");
        let obj = entry.as_object().ok_or_else(|| malformed(format!("{at} is not an object")))?;
        let get = |name: &str| -> Result<Option<String>, CodecError> {
            match obj.get(name) {
                None => Ok(None),
                Some(Value::String(s)) => Ok(Some(s.clone())),
                Some(_) => Err(malformed(format!("{at}: `{name}` is not a string"))),
            }
        };
        let mut fields = Vec::new();
        if let Some(f) = obj.get("fields") {
            let f = f.as_object().ok_or_else(|| malformed(format!("{at}: `fields` is not an object")))?;
            for (k, v) in f {
                let v = v
                    .as_str()
                    .ok_or_else(|| malformed(format!("{at}: field `{k}` is not a string")))?;
                fields.push((k.clone(), v.to_string()));
            }
        }
        blocks.insert(
            i,
            WireBlock {
                custody: get("custody")?,
                keys: get("keys")?,
                sig: get("sig")?,
                signer: get("signer")?,
                fields,
            },
        );
    }
    assemble(tid, ip, blocks)
}

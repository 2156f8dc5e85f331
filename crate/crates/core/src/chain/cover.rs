//! Keys-strings, value strings and the key namespace.
//!
//! Global keys `ac_tid` and `ac_ip` belong to block 0. Every other key a block
//! owns is written `ac<i>_<name>`. A keys-string joins fully qualified keys
//! with `,`; the value string joins the corresponding values with the unit
//! separator byte 0x1F, which values may not contain, so distinct value
//! tuples always produce distinct byte strings.

use super::{ChainError, FlatView};

pub const KEYS_DELIMITER: char = ',';
pub const VALUE_DELIMITER: u8 = 0x1F;

pub const TID_KEY: &str = "ac_tid";
pub const IP_KEY: &str = "ac_ip";

pub const CUSTODY: &str = "custody";
pub const KEYS: &str = "keys";
pub const SIG: &str = "sig";
pub const PREV: &str = "prev";
pub const TMP: &str = "tmp";
pub const SIGNER: &str = "signer";

/// Short names a data field may not use.
pub const RESERVED: [&str; 6] = [CUSTODY, KEYS, SIG, PREV, TMP, SIGNER];

pub fn is_valid_key(key: &str) -> bool {
    !key.is_empty()
        && key
            .bytes()
            .all(|b| matches!(b, b'a'..=b'z' | b'0'..=b'9' | b'_' | b'.' | b'-'))
}

pub fn qualified(index: usize, name: &str) -> String {
    format!("ac{index}_{name}")
}

/// Splits `ac<i>_<name>` into `(i, name)`. Global keys return `None`.
pub fn split_qualified(key: &str) -> Option<(usize, &str)> {
    let rest = key.strip_prefix("ac")?;
    let digits = rest.bytes().take_while(u8::is_ascii_digit).count();
    if digits == 0 {
        return None;
    }
    let (num, tail) = rest.split_at(digits);
    // No leading zeros: "ac01_x" would alias block 1.
    if num.len() > 1 && num.starts_with('0') {
        return None;
    }
    let name = tail.strip_prefix('_')?;
    if name.is_empty() {
        return None;
    }
    Some((num.parse().ok()?, name))
}

/// True for any key in the chain namespace (`ac_*` or `ac<i>_*`).
pub fn is_chain_key(key: &str) -> bool {
    key.starts_with("ac_") || split_qualified(key).is_some() || {
        // also catch non-canonical spellings such as "ac01_x"
        let rest = key.strip_prefix("ac").unwrap_or("");
        let digits = rest.bytes().take_while(u8::is_ascii_digit).count();
        digits > 0 && rest[digits..].starts_with('_')
    }
}

pub fn build_keys_string<S: AsRef<str>>(keys: &[S]) -> Result<String, ChainError> {
    if keys.is_empty() {
        return Err(ChainError::EmptyKeys);
    }
    let mut seen = std::collections::HashSet::with_capacity(keys.len());
    for key in keys {
        let key = key.as_ref();
        if !is_valid_key(key) {
            return Err(ChainError::InvalidKey(key.to_string()));
        }
        if !seen.insert(key) {
            return Err(ChainError::DuplicateKey(key.to_string()));
        }
    }
    let mut out = String::new();
    for (i, key) in keys.iter().enumerate() {
        if i > 0 {
            out.push(KEYS_DELIMITER);
        }
        out.push_str(key.as_ref());
    }
    Ok(out)
}

/// Inverse of [`build_keys_string`], with the same validation.
pub fn parse_keys_string(keys_string: &str) -> Result<Vec<&str>, ChainError> {
    let keys: Vec<&str> = keys_string.split(KEYS_DELIMITER).collect();
    build_keys_string(&keys)?;
    Ok(keys)
}

/// The exact byte string whose SHA-256 digest is signed.
pub fn build_value_string(keys_string: &str, view: &FlatView) -> Result<Vec<u8>, ChainError> {
    let keys = parse_keys_string(keys_string)?;
    let mut out = Vec::new();
    for (i, key) in keys.into_iter().enumerate() {
        let value = view
            .get(key)
            .ok_or_else(|| ChainError::MissingKey(key.to_string()))?;
        if value.as_bytes().contains(&VALUE_DELIMITER) {
            return Err(ChainError::InvalidValue(key.to_string()));
        }
        if i > 0 {
            out.push(VALUE_DELIMITER);
        }
        out.extend_from_slice(value.as_bytes());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn view(pairs: &[(&str, &str)]) -> FlatView {
        pairs.iter().copied().collect()
    }

    #[test]
    fn keys_string_examples() {
        assert_eq!(
            build_keys_string(&["ac_tid", "ac_ip", "ac0_size"]).unwrap(),
            "ac_tid,ac_ip,ac0_size"
        );
        assert_eq!(build_keys_string(&["ac_tid"]).unwrap(), "ac_tid");
        assert!(matches!(build_keys_string(&["a,b"]), Err(ChainError::InvalidKey(_))));
        assert!(matches!(build_keys_string(&["a\u{1f}b"]), Err(ChainError::InvalidKey(_))));
        assert!(matches!(build_keys_string::<&str>(&[]), Err(ChainError::EmptyKeys)));
        assert!(matches!(build_keys_string(&["a", "a"]), Err(ChainError::DuplicateKey(_))));
        assert!(matches!(build_keys_string(&["Upper"]), Err(ChainError::InvalidKey(_))));
    }

    #[test]
    fn value_string_examples() {
        assert_eq!(
            build_value_string("a,b", &view(&[("a", "x"), ("b", "y")])).unwrap(),
            b"x\x1fy"
        );
        assert_eq!(build_value_string("a", &view(&[("a", "")])).unwrap(), b"");
        assert_ne!(
            build_value_string("a,b", &view(&[("a", "xy"), ("b", "z")])).unwrap(),
            build_value_string("a,b", &view(&[("a", "x"), ("b", "yz")])).unwrap()
        );
        assert!(matches!(
            build_value_string("a,b", &view(&[("a", "x")])),
            Err(ChainError::MissingKey(k)) if k == "b"
        ));
        assert!(matches!(
            build_value_string("a", &view(&[("a", "x\u{1f}")])),
            Err(ChainError::InvalidValue(_))
        ));
    }

    #[test]
    fn value_string_follows_keys_order_not_view_order() {
        let v = view(&[("b", "2"), ("a", "1")]);
        assert_eq!(build_value_string("a,b", &v).unwrap(), b"1\x1f2");
    }

    #[test]
    fn qualified_keys() {
        assert_eq!(qualified(3, "size"), "ac3_size");
        assert_eq!(split_qualified("ac3_size"), Some((3, "size")));
        assert_eq!(split_qualified("ac12_a_b"), Some((12, "a_b")));
        assert_eq!(split_qualified("ac_tid"), None);
        assert_eq!(split_qualified("ac01_x"), None);
        assert_eq!(split_qualified("ac1_"), None);
        assert_eq!(split_qualified("slot"), None);
        assert!(is_chain_key("ac01_x"));
        assert!(is_chain_key("ac_anything"));
        assert!(!is_chain_key("account"));
        assert!(!is_chain_key("ac1x"));
    }

    proptest! {
        // Injectivity: two different tuples of 0x1F-free values never collide.
        #[test]
        fn value_string_is_injective(
            (a, b) in (1usize..5).prop_flat_map(|n| (
                proptest::collection::vec("[^\u{1f}]{0,6}", n),
                proptest::collection::vec("[^\u{1f}]{0,6}", n),
            )),
        ) {
            prop_assume!(a != b);
            let keys: Vec<String> = (0..a.len()).map(|i| format!("k{i}")).collect();
            let ks = build_keys_string(&keys).unwrap();
            let va: FlatView = keys.iter().map(String::as_str).zip(a.iter().map(String::as_str)).collect();
            let vb: FlatView = keys.iter().map(String::as_str).zip(b.iter().map(String::as_str)).collect();
            prop_assert_ne!(build_value_string(&ks, &va).unwrap(), build_value_string(&ks, &vb).unwrap());
        }
    }
}

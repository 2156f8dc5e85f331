//! Time-based transaction identifiers (tUUID).
//!
//! A tUUID keeps the RFC 4122 string shape but redistributes the bits: a
//! 67-bit nanosecond timestamp, a 7-bit clock sequence identifying the
//! generating process, and a 48-bit node id. The version nibble is fixed to
//! `0xF` so the identifiers can never be confused with standard UUIDs.
//!
//! Byte layout (big-endian within each group):
//!
//! ```text
//! bytes 0-3   timestamp bits 0..32
//! bytes 4-5   timestamp bits 32..48
//! bytes 6-7   0xF (version nibble) | timestamp bits 48..60
//! byte  8     0b10 (variant) | timestamp bits 61..67
//! byte  9     timestamp bit 60 | clock_seq (7 bits)
//! bytes 10-15 node id
//! ```

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::clock::Clock;

pub const TIMESTAMP_BITS: u32 = 67;
pub const CLOCK_SEQ_BITS: u32 = 7;
pub const NODE_BITS: u32 = 48;
pub const VERSION_BITS: u32 = 4;
pub const VARIANT_BITS: u32 = 2;

pub const VERSION_NIBBLE: u8 = 0xF;
pub const VARIANT: u8 = 0b10;

pub const MAX_TIMESTAMP: u128 = (1 << TIMESTAMP_BITS) - 1;
pub const MAX_CLOCK_SEQ: u8 = (1 << CLOCK_SEQ_BITS) - 1;
pub const MAX_NODE_ID: u64 = (1 << NODE_BITS) - 1;

/// Length of the textual form.
pub const STRING_LEN: usize = 36;
const DASH_POSITIONS: [usize; 4] = [8, 13, 18, 23];

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TuuidError {
    #[error("timestamp {0} does not fit in 67 bits")]
    TimestampOverflow(u128),
    #[error("clock sequence {0} does not fit in 7 bits")]
    ClockSeqOutOfRange(u8),
    #[error("node id {0:#x} does not fit in 48 bits")]
    NodeIdOutOfRange(u64),
    #[error("malformed tUUID string: {0}")]
    Malformed(&'static str),
    #[error("wrong version nibble {0:#x}, expected 0xf")]
    WrongVersion(u8),
    #[error("wrong variant bits {0:#b}, expected 0b10")]
    WrongVariant(u8),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TransactionId {
    timestamp_ns: u128,
    clock_seq: u8,
    node_id: u64,
}

impl TransactionId {
    pub fn new(timestamp_ns: u128, clock_seq: u8, node_id: u64) -> Result<Self, TuuidError> {
        if timestamp_ns > MAX_TIMESTAMP {
            return Err(TuuidError::TimestampOverflow(timestamp_ns));
        }
        if clock_seq > MAX_CLOCK_SEQ {
            return Err(TuuidError::ClockSeqOutOfRange(clock_seq));
        }
        if node_id > MAX_NODE_ID {
            return Err(TuuidError::NodeIdOutOfRange(node_id));
        }
        Ok(Self {
            timestamp_ns,
            clock_seq,
            node_id,
        })
    }

    pub fn timestamp_ns(&self) -> u128 {
        self.timestamp_ns
    }

    pub fn clock_seq(&self) -> u8 {
        self.clock_seq
    }

    pub fn node_id(&self) -> u64 {
        self.node_id
    }

    pub fn to_bytes(&self) -> [u8; 16] {
        let ts = self.timestamp_ns;
        let mut out = [0u8; 16];
        out[0..4].copy_from_slice(&((ts & 0xFFFF_FFFF) as u32).to_be_bytes());
        out[4..6].copy_from_slice(&(((ts >> 32) & 0xFFFF) as u16).to_be_bytes());
        let mid = ((VERSION_NIBBLE as u16) << 12) | (((ts >> 48) & 0x0FFF) as u16);
        out[6..8].copy_from_slice(&mid.to_be_bytes());
        let top = ((ts >> 60) & 0x7F) as u8;
        out[8] = (VARIANT << 6) | (top >> 1);
        out[9] = ((top & 1) << 7) | self.clock_seq;
        out[10..16].copy_from_slice(&self.node_id.to_be_bytes()[2..8]);
        out
    }

    pub fn from_bytes(bytes: [u8; 16]) -> Result<Self, TuuidError> {
        let version = bytes[6] >> 4;
        if version != VERSION_NIBBLE {
            return Err(TuuidError::WrongVersion(version));
        }
        let variant = bytes[8] >> 6;
        if variant != VARIANT {
            return Err(TuuidError::WrongVariant(variant));
        }
        let low = u32::from_be_bytes([bytes[0], bytes[1], bytes[2], bytes[3]]) as u128;
        let mid = u16::from_be_bytes([bytes[4], bytes[5]]) as u128;
        let high = (u16::from_be_bytes([bytes[6], bytes[7]]) & 0x0FFF) as u128;
        let top = (((bytes[8] & 0x3F) << 1) | (bytes[9] >> 7)) as u128;
        let timestamp_ns = low | (mid << 32) | (high << 48) | (top << 60);
        let clock_seq = bytes[9] & 0x7F;
        let mut node = [0u8; 8];
        node[2..8].copy_from_slice(&bytes[10..16]);
        Ok(Self {
            timestamp_ns,
            clock_seq,
            node_id: u64::from_be_bytes(node),
        })
    }

    pub fn parse(text: &str) -> Result<Self, TuuidError> {
        let raw = text.as_bytes();
        if raw.len() != STRING_LEN {
            return Err(TuuidError::Malformed("length must be 36"));
        }
        let mut bytes = [0u8; 16];
        let mut nibbles = 0usize;
        for (pos, &c) in raw.iter().enumerate() {
            if DASH_POSITIONS.contains(&pos) {
                if c != b'-' {
                    return Err(TuuidError::Malformed("dash expected"));
                }
                continue;
            }
            let v = match c {
                b'0'..=b'9' => c - b'0',
                b'a'..=b'f' => c - b'a' + 10,
                _ => return Err(TuuidError::Malformed("lowercase hex digit expected")),
            };
            bytes[nibbles / 2] |= if nibbles % 2 == 0 { v << 4 } else { v };
            nibbles += 1;
        }
        Self::from_bytes(bytes)
    }
}

impl fmt::Display for TransactionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let b = self.to_bytes();
        for (i, byte) in b.iter().enumerate() {
            if matches!(i, 4 | 6 | 8 | 10) {
                f.write_str("-")?;
            }
            write!(f, "{byte:02x}")?;
        }
        Ok(())
    }
}

impl FromStr for TransactionId {
    type Err = TuuidError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::parse(s)
    }
}

impl Serialize for TransactionId {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for TransactionId {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        Self::parse(&s).map_err(serde::de::Error::custom)
    }
}

/// Per-process tUUID source. Not internally synchronized; wrap it in a mutex
/// when shared. Distinct generators on one node must use distinct clock
/// sequences.
pub struct TuuidGenerator {
    node_id: u64,
    clock_seq: u8,
    last_ts: Option<u128>,
    clock: Arc<dyn Clock>,
}

impl TuuidGenerator {
    pub fn new(node_id: u64, clock_seq: u8, clock: Arc<dyn Clock>) -> Result<Self, TuuidError> {
        if clock_seq > MAX_CLOCK_SEQ {
            return Err(TuuidError::ClockSeqOutOfRange(clock_seq));
        }
        if node_id > MAX_NODE_ID {
            return Err(TuuidError::NodeIdOutOfRange(node_id));
        }
        Ok(Self {
            node_id,
            clock_seq,
            last_ts: None,
            clock,
        })
    }

    /// Continue after a previously issued timestamp, e.g. after a restart.
    pub fn resume_after(mut self, last_ts: u128) -> Self {
        self.last_ts = Some(last_ts);
        self
    }

    pub fn node_id(&self) -> u64 {
        self.node_id
    }

    pub fn clock_seq(&self) -> u8 {
        self.clock_seq
    }

    pub fn generate(&mut self) -> Result<TransactionId, TuuidError> {
        let now = self.clock.now_ns() as u128;
        self.generate_at(now)
    }

    /// Same-nanosecond (or clock-regression) calls are bumped to
    /// `last + 1`, so one generator never repeats itself.
    pub fn generate_at(&mut self, now_ns: u128) -> Result<TransactionId, TuuidError> {
        let ts = match self.last_ts {
            Some(last) => now_ns.max(last + 1),
            None => now_ns,
        };
        let id = TransactionId::new(ts, self.clock_seq, self.node_id)?;
        self.last_ts = Some(ts);
        Ok(id)
    }
}

impl fmt::Debug for TuuidGenerator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TuuidGenerator")
            .field("node_id", &self.node_id)
            .field("clock_seq", &self.clock_seq)
            .field("last_ts", &self.last_ts)
            .finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::VirtualClock;
    use proptest::prelude::*;

    /// Independent route to the string form: pack the whole identifier into
    /// one u128 with shifts and print it as 32 hex digits.
    fn oracle_string(ts: u128, clk: u8, node: u64) -> String {
        let low32 = ts & 0xFFFF_FFFF;
        let mid16 = (ts >> 32) & 0xFFFF;
        let hi12 = (ts >> 48) & 0xFFF;
        let top7 = (ts >> 60) & 0x7F;
        let packed: u128 = (low32 << 96)
            | (mid16 << 80)
            | (0xF << 76)
            | (hi12 << 64)
            | (0b10 << 62)
            | (top7 << 55)
            | ((clk as u128) << 48)
            | node as u128;
        let hex = format!("{packed:032x}");
        format!(
            "{}-{}-{}-{}-{}",
            &hex[0..8],
            &hex[8..12],
            &hex[12..16],
            &hex[16..20],
            &hex[20..32]
        )
    }

    #[test]
    fn oracle_agrees_on_spec_vectors() {
        assert_eq!(oracle_string(0, 0, 0), "00000000-0000-f000-8000-000000000000");
        assert_eq!(oracle_string(1, 0, 0), "00000001-0000-f000-8000-000000000000");
    }

    #[test]
    fn formats_zero_and_one() {
        let zero = TransactionId::new(0, 0, 0).unwrap();
        assert_eq!(zero.to_string(), "00000000-0000-f000-8000-000000000000");
        let one = TransactionId::new(1, 0, 0).unwrap();
        assert_eq!(one.to_string(), "00000001-0000-f000-8000-000000000000");
    }

    #[test]
    fn parses_zero() {
        let id = TransactionId::parse("00000000-0000-f000-8000-000000000000").unwrap();
        assert_eq!((id.timestamp_ns(), id.clock_seq(), id.node_id()), (0, 0, 0));
    }

    #[test]
    fn rejects_standard_version_one() {
        assert_eq!(
            TransactionId::parse("00000000-0000-1000-8000-000000000000"),
            Err(TuuidError::WrongVersion(1))
        );
    }

    #[test]
    fn rejects_wrong_variant() {
        assert_eq!(
            TransactionId::parse("00000000-0000-f000-c000-000000000000"),
            Err(TuuidError::WrongVariant(0b11))
        );
    }

    #[test]
    fn rejects_malformed_text() {
        for bad in [
            "",
            "00000000-0000-f000-8000-00000000000",
            "00000000-0000-f000-8000-0000000000000",
            "00000000_0000-f000-8000-000000000000",
            "0000000-00000-f000-8000-000000000000",
            "00000000-0000-F000-8000-000000000000",
            "0000000g-0000-f000-8000-000000000000",
        ] {
            assert!(
                matches!(TransactionId::parse(bad), Err(TuuidError::Malformed(_))),
                "{bad:?}"
            );
        }
    }

    #[test]
    fn field_range_errors() {
        assert!(matches!(
            TransactionId::new(1 << 67, 0, 0),
            Err(TuuidError::TimestampOverflow(_))
        ));
        assert!(matches!(
            TransactionId::new(0, 128, 0),
            Err(TuuidError::ClockSeqOutOfRange(128))
        ));
        assert!(matches!(
            TransactionId::new(0, 0, 1 << 48),
            Err(TuuidError::NodeIdOutOfRange(_))
        ));
        let clock = Arc::new(VirtualClock::default());
        assert!(TuuidGenerator::new(0, 200, clock).is_err());
    }

    #[test]
    fn same_nanosecond_bumps_by_one() {
        let clock = Arc::new(VirtualClock::new(1_000));
        let mut gen = TuuidGenerator::new(7, 3, clock).unwrap();
        let a = gen.generate().unwrap();
        let b = gen.generate().unwrap();
        assert_eq!(a.timestamp_ns(), 1_000);
        assert_eq!(b.timestamp_ns(), 1_001);
    }

    #[test]
    fn clock_regression_still_monotonic() {
        let clock = Arc::new(VirtualClock::new(0));
        let mut gen = TuuidGenerator::new(1, 1, clock).unwrap();
        let a = gen.generate_at(500).unwrap();
        let b = gen.generate_at(100).unwrap();
        assert!(b.timestamp_ns() > a.timestamp_ns());
    }

    #[test]
    fn epoch_exhaustion_is_reported() {
        let clock = Arc::new(VirtualClock::new(0));
        let mut gen = TuuidGenerator::new(1, 1, clock)
            .unwrap()
            .resume_after(MAX_TIMESTAMP);
        assert!(matches!(
            gen.generate(),
            Err(TuuidError::TimestampOverflow(_))
        ));
    }

    #[test]
    fn bit_budget_and_disjoint_masks() {
        assert_eq!(
            TIMESTAMP_BITS + CLOCK_SEQ_BITS + NODE_BITS + VERSION_BITS + VARIANT_BITS,
            128
        );
        // Set every bit of one field at a time and check the bytes each one
        // touches never overlap.
        let masks = [
            TransactionId::new(MAX_TIMESTAMP, 0, 0).unwrap().to_bytes(),
            TransactionId::new(0, MAX_CLOCK_SEQ, 0).unwrap().to_bytes(),
            TransactionId::new(0, 0, MAX_NODE_ID).unwrap().to_bytes(),
        ];
        let fixed = TransactionId::new(0, 0, 0).unwrap().to_bytes();
        let field_bits: Vec<u128> = masks
            .iter()
            .map(|m| u128::from_be_bytes(*m) ^ u128::from_be_bytes(fixed))
            .collect();
        let fixed_bits = u128::from_be_bytes(fixed);
        assert_eq!(fixed_bits.count_ones(), 4 + 1);
        assert_eq!(field_bits[0].count_ones(), TIMESTAMP_BITS);
        assert_eq!(field_bits[1].count_ones(), CLOCK_SEQ_BITS);
        assert_eq!(field_bits[2].count_ones(), NODE_BITS);
        let union = field_bits.iter().fold(0u128, |acc, b| {
            assert_eq!(acc & b, 0);
            acc | b
        });
        assert_eq!(union & fixed_bits, 0);
        // Version and variant positions occupy exactly the remaining 6 bits.
        assert_eq!((union | (0xFu128 << 76) | (0b11u128 << 62)), u128::MAX);
    }

    proptest! {
        #[test]
        fn string_matches_oracle(ts in 0u128..=MAX_TIMESTAMP, clk in 0u8..=MAX_CLOCK_SEQ, node in 0u64..=MAX_NODE_ID) {
            let id = TransactionId::new(ts, clk, node).unwrap();
            prop_assert_eq!(id.to_string(), oracle_string(ts, clk, node));
        }

        #[test]
        fn parse_format_identity(ts in 0u128..=MAX_TIMESTAMP, clk in 0u8..=MAX_CLOCK_SEQ, node in 0u64..=MAX_NODE_ID) {
            let id = TransactionId::new(ts, clk, node).unwrap();
            let text = id.to_string();
            prop_assert_eq!(text.len(), STRING_LEN);
            prop_assert_eq!(TransactionId::parse(&text).unwrap(), id);
        }
    }
}

//! Mutable order-preserving encoding.
//!
//! The proxy keeps, per order-preserving column, an ordered map from plaintext
//! comparison key to a 64-bit order code. A new key takes the midpoint of the
//! codes of its two neighbours, which is the binary-search-tree path encoding
//! flattened into an integer: going right raises the code, going left lowers
//! it. The untrusted store only ever sees codes and compares them as unsigned
//! integers, so it learns the order of the column and nothing else.
//!
//! When two neighbours end up adjacent (`hi - lo <= 1`) no code is left between
//! them. That is a [`OpeError::Collision`]; the remedy is [`OpeState::reencode`],
//! which spreads all codes evenly over the range and bumps the epoch.

mod persist;
mod state;

pub use persist::{load_state, save_state, STATE_FORMAT_VERSION};
pub use state::{OpeState, Probe, ReencodeMap};

use std::fmt;

use serde::{Deserialize, Serialize};

/// Normalized comparison key. Integers and decimals compare by value (decimals
/// are scaled integers), text by raw UTF-8 bytes.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum OrderKey {
    Int(i64),
    Text(Vec<u8>),
}

/// Position of a plaintext in code space. Valid codes lie strictly inside
/// `(0, u64::MAX)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct OrderCode(pub u64);

impl OrderCode {
    /// Exclusive lower bound of code space.
    pub const FLOOR: u64 = 0;
    /// Exclusive upper bound of code space.
    pub const CEILING: u64 = u64::MAX;
    /// The code the first key of an empty state receives.
    pub const FIRST: OrderCode = OrderCode(1 << 63);

    pub fn get(self) -> u64 {
        self.0
    }

    pub fn midpoint(lo: u64, hi: u64) -> u64 {
        ((lo as u128 + hi as u128) / 2) as u64
    }
}

impl fmt::Display for OrderCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum OpeError {
    #[error("order code collision between {lo} and {hi}: re-encode required")]
    Collision { lo: u64, hi: u64 },
    #[error("cannot re-encode an empty state")]
    Empty,
    #[error("key kind does not match the column type")]
    KeyKind,
    #[error("not an order-state file")]
    BadMagic,
    #[error("unsupported order-state version {0}")]
    Version(u16),
    #[error("corrupt order-state payload: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Crypto(#[from] crate::crypto::CryptoError),
}

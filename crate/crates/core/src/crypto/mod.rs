//! Cryptographic primitives used by the proxy and the query client.
//!
//! Every encrypted column gets its own 32-byte key, derived from the keyset's
//! master key with HKDF-SHA256 over `table/column/scheme`. The symmetric
//! schemes are AES-256-CBC with PKCS#7 padding; the deterministic variant
//! uses an all-zero IV so equal plaintexts produce equal ciphertexts, which is
//! what lets the untrusted store evaluate equality predicates. Pseudonyms and
//! searchword tokens are HMAC-SHA256 outputs and cannot be inverted. SUM is
//! served by Paillier's additively homomorphic scheme.

mod keys;
mod paillier;
mod symmetric;
mod token;

use std::fmt;

use serde::{Deserialize, Serialize};

pub use keys::{derive_column_key, ColumnKey, Keyring, Keyset, KDF_ID, MASTER_KEY_LEN};
pub use paillier::{
    is_probable_prime, PaillierCiphertext, PaillierKeypair, PaillierPrivateKey, PaillierPublicKey,
    DEFAULT_PAILLIER_BITS, MIN_PAILLIER_BITS,
};
pub use symmetric::{det_decrypt, det_encrypt, prob_decrypt, prob_encrypt, Ciphertext, BLOCK_LEN};
pub use token::{pseudonym, searchwords, Token};

/// How a column is protected before it leaves the proxy.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    None,
    Deterministic,
    Probabilistic,
    Pseudonym,
    Searchwords,
    Homomorphic,
    OrderPreserving,
}

impl Scheme {
    pub const ALL: [Scheme; 7] = [
        Scheme::None,
        Scheme::Deterministic,
        Scheme::Probabilistic,
        Scheme::Pseudonym,
        Scheme::Searchwords,
        Scheme::Homomorphic,
        Scheme::OrderPreserving,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Scheme::None => "none",
            Scheme::Deterministic => "deterministic",
            Scheme::Probabilistic => "probabilistic",
            Scheme::Pseudonym => "pseudonym",
            Scheme::Searchwords => "searchwords",
            Scheme::Homomorphic => "homomorphic",
            Scheme::OrderPreserving => "order_preserving",
        }
    }

    pub fn parse(name: &str) -> Option<Scheme> {
        Scheme::ALL.into_iter().find(|s| s.as_str() == name)
    }

    /// Whether the client can recover the plaintext from a stored cell.
    pub fn is_invertible(self) -> bool {
        !matches!(self, Scheme::Pseudonym | Scheme::Searchwords)
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CryptoError {
    #[error("key for scheme `{actual}` used where `{expected}` is required")]
    SchemeMismatch { expected: &'static str, actual: Scheme },
    #[error("ciphertext is truncated or not a whole number of blocks")]
    Truncated,
    #[error("invalid padding: corrupted or foreign ciphertext")]
    InvalidPadding,
    #[error("invalid base64 ciphertext: {0}")]
    Base64(#[from] base64::DecodeError),
    #[error("paillier plaintext out of range [0, n)")]
    PlaintextOutOfRange,
    #[error("paillier ciphertext is not a unit mod n^2")]
    InvalidPaillierCiphertext,
    #[error("invalid paillier parameters: {0}")]
    InvalidPaillierKey(String),
    #[error("master key must be {MASTER_KEY_LEN} bytes, got {0}")]
    MasterKeyLength(usize),
    #[error("keyset file: {0}")]
    KeyFile(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine as _;
use hmac::{Hmac, Mac};
use sha2::Sha256;

use super::{ColumnKey, CryptoError, Scheme};

/// Output of a keyed one-way function. Supports equality only.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Token([u8; 32]);

impl Token {
    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }

    pub fn to_base64(&self) -> String {
        B64.encode(self.0)
    }

    pub fn from_base64(text: &str) -> Result<Self, CryptoError> {
        let raw = B64.decode(text.as_bytes())?;
        let bytes: [u8; 32] = raw.as_slice().try_into().map_err(|_| CryptoError::Truncated)?;
        Ok(Token(bytes))
    }
}

fn mac(key: &ColumnKey, data: &[u8]) -> Token {
    let mut m = Hmac::<Sha256>::new_from_slice(key.bytes()).expect("HMAC accepts any key length");
    m.update(data);
    Token(m.finalize().into_bytes().into())
}

/// HMAC-SHA256 of the plaintext under a pseudonym key.
pub fn pseudonym(key: &ColumnKey, plaintext: &[u8]) -> Result<Token, CryptoError> {
    match key.scheme() {
        Scheme::Pseudonym | Scheme::Searchwords => Ok(mac(key, plaintext)),
        actual => Err(CryptoError::SchemeMismatch {
            expected: "pseudonym",
            actual,
        }),
    }
}

/// Lowercases, splits on whitespace and tokenizes each word. No stemming.
pub fn searchwords(key: &ColumnKey, text: &str) -> Result<Vec<Token>, CryptoError> {
    if key.scheme() != Scheme::Searchwords {
        return Err(CryptoError::SchemeMismatch {
            expected: "searchwords",
            actual: key.scheme(),
        });
    }
    Ok(text
        .to_lowercase()
        .split_whitespace()
        .map(|word| mac(key, word.as_bytes()))
        .collect())
}

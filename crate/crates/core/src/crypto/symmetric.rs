use aes::cipher::block_padding::Pkcs7;
use aes::cipher::{BlockDecryptMut, BlockEncryptMut, KeyIvInit};
use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine as _;
use rand::RngCore;

use super::{ColumnKey, CryptoError, Scheme};

type Aes256CbcEnc = cbc::Encryptor<aes::Aes256>;
type Aes256CbcDec = cbc::Decryptor<aes::Aes256>;

pub const BLOCK_LEN: usize = 16;

/// Fixed IV of the deterministic scheme. Reusing it is what makes equal
/// plaintexts encrypt to equal ciphertexts.
const ZERO_IV: [u8; BLOCK_LEN] = [0u8; BLOCK_LEN];

/// Opaque ciphertext bytes; serialized into rows as standard base64.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Ciphertext(Vec<u8>);

impl Ciphertext {
    pub fn from_bytes(bytes: Vec<u8>) -> Self {
        Ciphertext(bytes)
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn to_base64(&self) -> String {
        B64.encode(&self.0)
    }

    pub fn from_base64(text: &str) -> Result<Self, CryptoError> {
        Ok(Ciphertext(B64.decode(text.as_bytes())?))
    }
}

fn expect_scheme(key: &ColumnKey, allowed: &[Scheme], expected: &'static str) -> Result<(), CryptoError> {
    if allowed.contains(&key.scheme()) {
        Ok(())
    } else {
        Err(CryptoError::SchemeMismatch {
            expected,
            actual: key.scheme(),
        })
    }
}

const DET_SCHEMES: &[Scheme] = &[Scheme::Deterministic, Scheme::OrderPreserving];

fn cbc_encrypt(key: &[u8; 32], iv: &[u8; BLOCK_LEN], plaintext: &[u8]) -> Vec<u8> {
    Aes256CbcEnc::new(key.into(), iv.into()).encrypt_padded_vec_mut::<Pkcs7>(plaintext)
}

fn cbc_decrypt(key: &[u8; 32], iv: &[u8; BLOCK_LEN], body: &[u8]) -> Result<Vec<u8>, CryptoError> {
    if body.is_empty() || !body.len().is_multiple_of(BLOCK_LEN) {
        return Err(CryptoError::Truncated);
    }
    Aes256CbcDec::new(key.into(), iv.into())
        .decrypt_padded_vec_mut::<Pkcs7>(body)
        .map_err(|_| CryptoError::InvalidPadding)
}

/// AES-256-CBC, PKCS#7 padding, all-zero IV.
pub fn det_encrypt(key: &ColumnKey, plaintext: &[u8]) -> Result<Ciphertext, CryptoError> {
    expect_scheme(key, DET_SCHEMES, "deterministic")?;
    Ok(Ciphertext(cbc_encrypt(key.bytes(), &ZERO_IV, plaintext)))
}

pub fn det_decrypt(key: &ColumnKey, ciphertext: &Ciphertext) -> Result<Vec<u8>, CryptoError> {
    expect_scheme(key, DET_SCHEMES, "deterministic")?;
    cbc_decrypt(key.bytes(), &ZERO_IV, ciphertext.as_bytes())
}

/// AES-256-CBC with a fresh random IV written in front of the body.
pub fn prob_encrypt(key: &ColumnKey, plaintext: &[u8]) -> Result<Ciphertext, CryptoError> {
    expect_scheme(key, &[Scheme::Probabilistic], "probabilistic")?;
    let mut iv = [0u8; BLOCK_LEN];
    rand::thread_rng().fill_bytes(&mut iv);
    let body = cbc_encrypt(key.bytes(), &iv, plaintext);
    let mut out = Vec::with_capacity(BLOCK_LEN + body.len());
    out.extend_from_slice(&iv);
    out.extend_from_slice(&body);
    Ok(Ciphertext(out))
}

pub fn prob_decrypt(key: &ColumnKey, ciphertext: &Ciphertext) -> Result<Vec<u8>, CryptoError> {
    expect_scheme(key, &[Scheme::Probabilistic], "probabilistic")?;
    let bytes = ciphertext.as_bytes();
    if bytes.len() < BLOCK_LEN {
        return Err(CryptoError::Truncated);
    }
    let (iv, body) = bytes.split_at(BLOCK_LEN);
    cbc_decrypt(key.bytes(), iv.try_into().expect("split at block length"), body)
}

#[cfg(test)]
mod tests {
    use super::*;
    use aes::cipher::{BlockEncrypt, KeyInit};
    use proptest::prelude::*;

    fn key(scheme: Scheme) -> ColumnKey {
        ColumnKey::from_bytes([0x42; 32], scheme)
    }

    #[test]
    fn deterministic_is_stable() {
        let k = key(Scheme::Deterministic);
        let a = det_encrypt(&k, b"4111111111111111").unwrap();
        let b = det_encrypt(&k, b"4111111111111111").unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 32);
    }

    #[test]
    fn empty_plaintext_is_one_padding_block() {
        // With a zero IV the first CBC block is AES_k(P1 xor 0) = AES_k(P1), so a
        // raw single-block AES call over sixteen 0x10 bytes is an independent oracle.
        let k = key(Scheme::Deterministic);
        let cipher = aes::Aes256::new(k.bytes().into());
        let mut block = aes::Block::from([0x10u8; 16]);
        cipher.encrypt_block(&mut block);
        let ct = det_encrypt(&k, b"").unwrap();
        assert_eq!(ct.as_bytes(), block.as_slice());
    }

    #[test]
    fn two_block_chaining_matches_manual_cbc() {
        let k = key(Scheme::Deterministic);
        let cipher = aes::Aes256::new(k.bytes().into());
        let pt = b"0123456789abcdefXY";
        let mut b1 = aes::Block::clone_from_slice(&pt[..16]);
        cipher.encrypt_block(&mut b1);
        let mut second = [14u8; 16];
        second[..2].copy_from_slice(b"XY");
        for (s, c) in second.iter_mut().zip(b1.iter()) {
            *s ^= c;
        }
        let mut b2 = aes::Block::from(second);
        cipher.encrypt_block(&mut b2);
        let ct = det_encrypt(&k, pt).unwrap();
        assert_eq!(&ct.as_bytes()[..16], b1.as_slice());
        assert_eq!(&ct.as_bytes()[16..], b2.as_slice());
    }

    #[test]
    fn probabilistic_differs_and_has_iv_prefix() {
        let k = key(Scheme::Probabilistic);
        let a = prob_encrypt(&k, b"x").unwrap();
        let b = prob_encrypt(&k, b"x").unwrap();
        assert_ne!(a, b);
        for len in [0usize, 1, 15, 16, 17, 40] {
            let pt = vec![9u8; len];
            let padded = (len / BLOCK_LEN + 1) * BLOCK_LEN;
            assert_eq!(prob_encrypt(&k, &pt).unwrap().len(), BLOCK_LEN + padded);
        }
    }

    #[test]
    fn wrong_scheme_rejected() {
        assert!(matches!(
            det_encrypt(&key(Scheme::Probabilistic), b"a"),
            Err(CryptoError::SchemeMismatch { .. })
        ));
        assert!(prob_encrypt(&key(Scheme::Deterministic), b"a").is_err());
    }

    #[test]
    fn corrupted_input_is_detected() {
        let k = key(Scheme::Deterministic);
        let ct = det_encrypt(&k, b"hello").unwrap();
        let truncated = Ciphertext::from_bytes(ct.as_bytes()[..10].to_vec());
        assert!(matches!(det_decrypt(&k, &truncated), Err(CryptoError::Truncated)));
        assert!(matches!(
            det_decrypt(&k, &Ciphertext::from_bytes(vec![])),
            Err(CryptoError::Truncated)
        ));
        let other = ColumnKey::from_bytes([0x43; 32], Scheme::Deterministic);
        // A foreign key almost always yields bad padding; try a few plaintexts.
        let failures = (0..32u8)
            .filter(|i| det_decrypt(&other, &det_encrypt(&k, &[*i; 5]).unwrap()).is_err())
            .count();
        assert!(failures > 20);
        let pk = key(Scheme::Probabilistic);
        assert!(matches!(
            prob_decrypt(&pk, &Ciphertext::from_bytes(vec![0; 8])),
            Err(CryptoError::Truncated)
        ));
    }

    proptest! {
        #[test]
        fn det_round_trip(bytes in proptest::collection::vec(any::<u8>(), 0..64)) {
            let k = key(Scheme::Deterministic);
            prop_assert_eq!(det_decrypt(&k, &det_encrypt(&k, &bytes).unwrap()).unwrap(), bytes);
        }

        #[test]
        fn prob_round_trip(bytes in proptest::collection::vec(any::<u8>(), 0..64)) {
            let k = key(Scheme::Probabilistic);
            prop_assert_eq!(prob_decrypt(&k, &prob_encrypt(&k, &bytes).unwrap()).unwrap(), bytes);
        }

        #[test]
        fn base64_round_trip(bytes in proptest::collection::vec(any::<u8>(), 0..64)) {
            let ct = Ciphertext::from_bytes(bytes);
            prop_assert_eq!(Ciphertext::from_base64(&ct.to_base64()).unwrap(), ct);
        }
    }
}

//! Paillier's additively homomorphic public-key scheme.
//!
//! Encryption is `c = g^m * r^n mod n^2` with `g = n + 1`, so `g^m` collapses
//! to `1 + m*n mod n^2`. Multiplying ciphertexts adds plaintexts modulo `n`,
//! which lets the untrusted store compute encrypted sums with only `n`.

use num_bigint::BigUint;
use num_integer::Integer;
use num_traits::{One, Zero};
use rand::{CryptoRng, RngCore};

use super::CryptoError;

/// Smallest accepted modulus size for generated keys. Real deployments want
/// 2048 bits or more; 512 is the desk-scale default.
pub const MIN_PAILLIER_BITS: u64 = 64;
pub const DEFAULT_PAILLIER_BITS: u64 = 512;

const MILLER_RABIN_ROUNDS: usize = 40;

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct PaillierCiphertext(BigUint);

impl PaillierCiphertext {
    pub fn from_biguint(value: BigUint) -> Self {
        PaillierCiphertext(value)
    }

    pub fn value(&self) -> &BigUint {
        &self.0
    }

    pub fn to_decimal(&self) -> String {
        self.0.to_str_radix(10)
    }

    pub fn from_decimal(text: &str) -> Result<Self, CryptoError> {
        if text.is_empty() || !text.bytes().all(|b| b.is_ascii_digit()) {
            return Err(CryptoError::InvalidPaillierCiphertext);
        }
        BigUint::parse_bytes(text.as_bytes(), 10)
            .map(PaillierCiphertext)
            .ok_or(CryptoError::InvalidPaillierCiphertext)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PaillierPublicKey {
    n: BigUint,
    n_squared: BigUint,
    g: BigUint,
}

impl PaillierPublicKey {
    pub fn from_modulus(n: BigUint) -> Self {
        let n_squared = &n * &n;
        let g = &n + 1u32;
        PaillierPublicKey { n, n_squared, g }
    }

    pub fn n(&self) -> &BigUint {
        &self.n
    }

    pub fn g(&self) -> &BigUint {
        &self.g
    }

    pub fn n_squared(&self) -> &BigUint {
        &self.n_squared
    }

    pub fn bits(&self) -> u64 {
        self.n.bits()
    }

    pub fn encrypt(&self, m: &BigUint) -> Result<PaillierCiphertext, CryptoError> {
        let mut rng = rand::thread_rng();
        let r = loop {
            let r = random_below(&self.n, &mut rng);
            if !r.is_zero() && r.gcd(&self.n).is_one() {
                break r;
            }
        };
        self.encrypt_with_nonce(m, &r)
    }

    /// Encryption with caller-chosen randomness `r`, which must be a unit mod n.
    pub fn encrypt_with_nonce(&self, m: &BigUint, r: &BigUint) -> Result<PaillierCiphertext, CryptoError> {
        if m >= &self.n {
            return Err(CryptoError::PlaintextOutOfRange);
        }
        if r.is_zero() || r >= &self.n || !r.gcd(&self.n).is_one() {
            return Err(CryptoError::InvalidPaillierKey("nonce must be a unit mod n".into()));
        }
        let g_m = (BigUint::one() + m * &self.n) % &self.n_squared;
        let r_n = r.modpow(&self.n, &self.n_squared);
        Ok(PaillierCiphertext(g_m * r_n % &self.n_squared))
    }

    pub fn encrypt_u64(&self, m: u64) -> Result<PaillierCiphertext, CryptoError> {
        self.encrypt(&BigUint::from(m))
    }

    /// Encryption of zero with `r = 1`, the neutral element of [`Self::add`].
    pub fn zero(&self) -> PaillierCiphertext {
        PaillierCiphertext(BigUint::one())
    }

    /// Homomorphic addition: the product of the ciphertexts mod n^2.
    pub fn add(&self, a: &PaillierCiphertext, b: &PaillierCiphertext) -> PaillierCiphertext {
        PaillierCiphertext(&a.0 * &b.0 % &self.n_squared)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PaillierPrivateKey {
    lambda: BigUint,
    mu: BigUint,
    public: PaillierPublicKey,
}

impl PaillierPrivateKey {
    pub fn lambda(&self) -> &BigUint {
        &self.lambda
    }

    pub fn mu(&self) -> &BigUint {
        &self.mu
    }

    pub fn public(&self) -> &PaillierPublicKey {
        &self.public
    }

    pub fn decrypt(&self, c: &PaillierCiphertext) -> Result<BigUint, CryptoError> {
        let pk = &self.public;
        if c.0.is_zero() || c.0 >= pk.n_squared {
            return Err(CryptoError::InvalidPaillierCiphertext);
        }
        let u = c.0.modpow(&self.lambda, &pk.n_squared);
        Ok(l_function(&u, &pk.n) * &self.mu % &pk.n)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PaillierKeypair {
    public: PaillierPublicKey,
    private: PaillierPrivateKey,
}

fn l_function(u: &BigUint, n: &BigUint) -> BigUint {
    (u - 1u32) / n
}

impl PaillierKeypair {
    pub fn generate<R: RngCore + CryptoRng>(bits: u64, rng: &mut R) -> Result<Self, CryptoError> {
        if bits < MIN_PAILLIER_BITS {
            return Err(CryptoError::InvalidPaillierKey(format!(
                "modulus must be at least {MIN_PAILLIER_BITS} bits, got {bits}"
            )));
        }
        let q_bits = bits / 2;
        let p_bits = bits - q_bits;
        loop {
            let p = random_prime(p_bits, rng);
            let q = random_prime(q_bits, rng);
            if p == q {
                continue;
            }
            let pair = PaillierKeypair::from_primes(&p, &q)?;
            debug_assert_eq!(pair.public.bits(), bits);
            return Ok(pair);
        }
    }

    /// Builds the keypair from two distinct primes. Primality is checked.
    pub fn from_primes(p: &BigUint, q: &BigUint) -> Result<Self, CryptoError> {
        if p == q {
            return Err(CryptoError::InvalidPaillierKey("p and q must be distinct".into()));
        }
        if !is_probable_prime(p) || !is_probable_prime(q) {
            return Err(CryptoError::InvalidPaillierKey("p and q must be prime".into()));
        }
        let n = p * q;
        let p1 = p - 1u32;
        let q1 = q - 1u32;
        if !n.gcd(&(&p1 * &q1)).is_one() {
            return Err(CryptoError::InvalidPaillierKey("gcd(pq, (p-1)(q-1)) != 1".into()));
        }
        let lambda = p1.lcm(&q1);
        let public = PaillierPublicKey::from_modulus(n);
        let u = public.g.modpow(&lambda, &public.n_squared);
        let mu = l_function(&u, &public.n)
            .modinv(&public.n)
            .ok_or_else(|| CryptoError::InvalidPaillierKey("mu is not invertible".into()))?;
        Ok(PaillierKeypair {
            private: PaillierPrivateKey {
                lambda,
                mu,
                public: public.clone(),
            },
            public,
        })
    }

    /// Rebuilds a keypair from stored parameters and checks that they agree.
    pub fn from_parameters(n: BigUint, g: BigUint, lambda: BigUint, mu: BigUint) -> Result<Self, CryptoError> {
        let public = PaillierPublicKey::from_modulus(n);
        if g != public.g {
            return Err(CryptoError::InvalidPaillierKey("g must equal n + 1".into()));
        }
        let u = public.g.modpow(&lambda, &public.n_squared);
        if (l_function(&u, &public.n) * &mu % &public.n) != BigUint::one() {
            return Err(CryptoError::InvalidPaillierKey("lambda and mu do not match n".into()));
        }
        Ok(PaillierKeypair {
            private: PaillierPrivateKey {
                lambda,
                mu,
                public: public.clone(),
            },
            public,
        })
    }

    pub fn public(&self) -> &PaillierPublicKey {
        &self.public
    }

    pub fn private(&self) -> &PaillierPrivateKey {
        &self.private
    }
}

fn random_bits<R: RngCore>(bits: u64, rng: &mut R) -> BigUint {
    let bytes = bits.div_ceil(8) as usize;
    let mut buf = vec![0u8; bytes];
    rng.fill_bytes(&mut buf);
    let excess = bytes as u64 * 8 - bits;
    buf[0] &= 0xff >> excess;
    BigUint::from_bytes_be(&buf)
}

fn random_below<R: RngCore>(bound: &BigUint, rng: &mut R) -> BigUint {
    loop {
        let x = random_bits(bound.bits(), rng);
        if &x < bound {
            return x;
        }
    }
}

/// A random prime of exactly `bits` bits with the top two bits set, so the
/// product of two such primes has exactly the sum of their lengths.
fn random_prime<R: RngCore>(bits: u64, rng: &mut R) -> BigUint {
    assert!(bits >= 8);
    loop {
        let mut c = random_bits(bits, rng);
        c.set_bit(bits - 1, true);
        c.set_bit(bits - 2, true);
        c.set_bit(0, true);
        if is_probable_prime(&c) {
            return c;
        }
    }
}

const SMALL_PRIMES: [u32; 25] = [
    2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53, 59, 61, 67, 71, 73, 79, 83, 89, 97,
];

/// Trial division by small primes, then Miller-Rabin with random bases.
pub fn is_probable_prime(n: &BigUint) -> bool {
    let two = BigUint::from(2u32);
    if n < &two {
        return false;
    }
    for p in SMALL_PRIMES {
        if *n == BigUint::from(p) {
            return true;
        }
        if (n % p).is_zero() {
            return false;
        }
    }
    let n1 = n - 1u32;
    let s = n1.trailing_zeros().expect("n - 1 is nonzero");
    let d = &n1 >> s;
    let mut rng = rand::thread_rng();
    let span = n - 3u32;
    'witness: for _ in 0..MILLER_RABIN_ROUNDS {
        let a = random_below(&span, &mut rng) + 2u32;
        let mut x = a.modpow(&d, n);
        if x.is_one() || x == n1 {
            continue;
        }
        for _ in 1..s {
            x = x.modpow(&two, n);
            if x == n1 {
                continue 'witness;
            }
        }
        return false;
    }
    true
}

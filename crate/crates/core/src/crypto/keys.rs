use std::collections::HashMap;
use std::fmt;
use std::io::Write;
use std::path::Path;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine as _;
use hkdf::Hkdf;
use num_bigint::BigUint;
use rand::{CryptoRng, RngCore};
use serde::{Deserialize, Serialize};
use sha2::Sha256;

use super::paillier::{PaillierKeypair, PaillierPrivateKey, PaillierPublicKey};
use super::{CryptoError, Scheme};

pub const MASTER_KEY_LEN: usize = 32;

/// Identifies the column-key derivation. Stored in every keyset file so that a
/// future change of construction cannot silently produce different keys.
pub const KDF_ID: &str = "hkdf-sha256;info=table/column/scheme";

const KEYSET_FORMAT: &str = "mope-keyset/1";

/// A 256-bit key bound to one column and one scheme.
#[derive(Clone, PartialEq, Eq)]
pub struct ColumnKey {
    bytes: [u8; 32],
    scheme: Scheme,
}

impl ColumnKey {
    pub fn from_bytes(bytes: [u8; 32], scheme: Scheme) -> Self {
        ColumnKey { bytes, scheme }
    }

    pub fn bytes(&self) -> &[u8; 32] {
        &self.bytes
    }

    pub fn scheme(&self) -> Scheme {
        self.scheme
    }
}

impl fmt::Debug for ColumnKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ColumnKey")
            .field("scheme", &self.scheme)
            .finish_non_exhaustive()
    }
}

/// HKDF-SHA256 with the master key as input keying material and
/// `table/column/scheme` as the info string. Identifiers never contain `/`, so
/// the info string is unambiguous.
pub fn derive_column_key(master_key: &[u8; MASTER_KEY_LEN], table: &str, column: &str, scheme: Scheme) -> ColumnKey {
    let info = format!("{table}/{column}/{}", scheme.as_str());
    let hk = Hkdf::<Sha256>::new(None, master_key);
    let mut okm = [0u8; 32];
    hk.expand(info.as_bytes(), &mut okm)
        .expect("32 bytes is a valid HKDF-SHA256 output length");
    ColumnKey::from_bytes(okm, scheme)
}

/// Everything the proxy keeps secret: the master key and the Paillier keypair.
#[derive(Clone)]
pub struct Keyset {
    master_key: [u8; MASTER_KEY_LEN],
    paillier: PaillierKeypair,
    created_at: String,
}

impl fmt::Debug for Keyset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Keyset")
            .field("paillier_bits", &self.paillier.public().bits())
            .field("created_at", &self.created_at)
            .finish_non_exhaustive()
    }
}

#[derive(Serialize, Deserialize)]
struct KeysetFile {
    format: String,
    kdf: String,
    created_at: String,
    master_key: String,
    paillier: PaillierFile,
}

#[derive(Serialize, Deserialize)]
struct PaillierFile {
    bits: u64,
    n: String,
    g: String,
    lambda: String,
    mu: String,
}

impl Keyset {
    pub fn generate<R: RngCore + CryptoRng>(paillier_bits: u64, rng: &mut R) -> Result<Self, CryptoError> {
        let mut master_key = [0u8; MASTER_KEY_LEN];
        rng.fill_bytes(&mut master_key);
        let paillier = PaillierKeypair::generate(paillier_bits, rng)?;
        Ok(Keyset::from_parts(master_key, paillier))
    }

    pub fn from_parts(master_key: [u8; MASTER_KEY_LEN], paillier: PaillierKeypair) -> Self {
        Keyset {
            master_key,
            paillier,
            created_at: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
        }
    }

    pub fn master_key(&self) -> &[u8; MASTER_KEY_LEN] {
        &self.master_key
    }

    pub fn paillier(&self) -> &PaillierKeypair {
        &self.paillier
    }

    pub fn created_at(&self) -> &str {
        &self.created_at
    }

    pub fn column_key(&self, table: &str, column: &str, scheme: Scheme) -> ColumnKey {
        derive_column_key(&self.master_key, table, column, scheme)
    }

    /// Keys for every listed column, plus the Paillier private key.
    pub fn keyring<'a>(&self, table: &str, columns: impl IntoIterator<Item = (&'a str, Scheme)>) -> Keyring {
        let keys = columns
            .into_iter()
            .filter(|(_, scheme)| !matches!(scheme, Scheme::None | Scheme::Homomorphic))
            .map(|(name, scheme)| (name.to_string(), self.column_key(table, name, scheme)))
            .collect();
        Keyring {
            table: table.to_string(),
            keys,
            paillier: Some(self.paillier.private().clone()),
        }
    }

    /// Byte strings that must never appear in anything handed to the backend.
    pub fn secret_needles(&self) -> Vec<Vec<u8>> {
        let private = self.paillier.private();
        vec![
            self.master_key.to_vec(),
            B64.encode(self.master_key).into_bytes(),
            private.lambda().to_str_radix(10).into_bytes(),
            private.mu().to_str_radix(10).into_bytes(),
            private.lambda().to_bytes_be(),
            private.mu().to_bytes_be(),
        ]
    }

    pub fn to_json(&self) -> String {
        let public = self.paillier.public();
        let private = self.paillier.private();
        let file = KeysetFile {
            format: KEYSET_FORMAT.to_string(),
            kdf: KDF_ID.to_string(),
            created_at: self.created_at.clone(),
            master_key: B64.encode(self.master_key),
            paillier: PaillierFile {
                bits: public.bits(),
                n: public.n().to_str_radix(10),
                g: public.g().to_str_radix(10),
                lambda: private.lambda().to_str_radix(10),
                mu: private.mu().to_str_radix(10),
            },
        };
        serde_json::to_string_pretty(&file).expect("keyset serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, CryptoError> {
        let file: KeysetFile = serde_json::from_str(text).map_err(|e| CryptoError::KeyFile(e.to_string()))?;
        if file.format != KEYSET_FORMAT {
            return Err(CryptoError::KeyFile(format!("unsupported format `{}`", file.format)));
        }
        if file.kdf != KDF_ID {
            return Err(CryptoError::KeyFile(format!("unsupported kdf `{}`", file.kdf)));
        }
        let raw = B64.decode(file.master_key.as_bytes())?;
        let master_key: [u8; MASTER_KEY_LEN] = raw
            .as_slice()
            .try_into()
            .map_err(|_| CryptoError::MasterKeyLength(raw.len()))?;
        let num = |name: &str, s: &str| {
            BigUint::parse_bytes(s.as_bytes(), 10)
                .ok_or_else(|| CryptoError::KeyFile(format!("paillier `{name}` is not a decimal integer")))
        };
        let paillier = PaillierKeypair::from_parameters(
            num("n", &file.paillier.n)?,
            num("g", &file.paillier.g)?,
            num("lambda", &file.paillier.lambda)?,
            num("mu", &file.paillier.mu)?,
        )?;
        Ok(Keyset {
            master_key,
            paillier,
            created_at: file.created_at,
        })
    }

    /// Writes the keyset, refusing to replace an existing file unless `force`.
    /// On unix the file is created with mode 0600.
    pub fn save(&self, path: &Path, force: bool) -> Result<(), CryptoError> {
        let mut options = std::fs::OpenOptions::new();
        options.write(true);
        if force {
            options.create(true).truncate(true);
        } else {
            options.create_new(true);
        }
        #[cfg(unix)]
        {
            use std::os::unix::fs::OpenOptionsExt;
            options.mode(0o600);
        }
        let mut file = options.open(path).map_err(|e| {
            if e.kind() == std::io::ErrorKind::AlreadyExists {
                CryptoError::KeyFile(format!("{} already exists (use --force to overwrite)", path.display()))
            } else {
                CryptoError::Io(e)
            }
        })?;
        file.write_all(self.to_json().as_bytes())?;
        file.write_all(b"\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CryptoError> {
        Keyset::from_json(&std::fs::read_to_string(path)?)
    }
}

/// The subset of keys a particular client holds.
///
/// A client may hold keys for some columns only; cells of the other columns
/// stay opaque. A keyring without the Paillier private key cannot decrypt sums.
#[derive(Clone, Debug)]
pub struct Keyring {
    table: String,
    keys: HashMap<String, ColumnKey>,
    paillier: Option<PaillierPrivateKey>,
}

impl Keyring {
    /// A client that holds no keys at all.
    pub fn empty(table: &str) -> Self {
        Keyring {
            table: table.to_string(),
            keys: HashMap::new(),
            paillier: None,
        }
    }

    pub fn table(&self) -> &str {
        &self.table
    }

    pub fn key(&self, column: &str) -> Option<&ColumnKey> {
        self.keys.get(column)
    }

    pub fn paillier_private(&self) -> Option<&PaillierPrivateKey> {
        self.paillier.as_ref()
    }

    pub fn paillier_public(&self) -> Option<&PaillierPublicKey> {
        self.paillier.as_ref().map(|p| p.public())
    }

    pub fn without_column(mut self, column: &str) -> Self {
        self.keys.remove(column);
        self
    }

    pub fn without_paillier(mut self) -> Self {
        self.paillier = None;
        self
    }

    pub fn secret_needles(&self) -> Vec<Vec<u8>> {
        let mut out: Vec<Vec<u8>> = self.keys.values().map(|k| k.bytes().to_vec()).collect();
        out.extend(self.keys.values().map(|k| B64.encode(k.bytes()).into_bytes()));
        out
    }
}

//! Encrypted storage and querying of tabular data on an untrusted service.
//!
//! A trusted proxy encrypts each column under its own scheme, sorts and
//! order-encodes one column, and uploads compressed chunks to a backend that
//! never sees a key. Clients rewrite queries into ciphertext form, run them per
//! chunk, and merge and decrypt the (small) answers locally.
//!
//! | module | role |
//! |---|---|
//! | [`crypto`] | key derivation, AES-CBC, pseudonyms, searchword tokens, Paillier |
//! | [`ope`] | mutable order-preserving encoding into 64-bit codes |
//! | [`schema`] | the per-column scheme declaration |
//! | [`ingest`] | the encryption proxy: read, sort, encrypt, chunk, upload, GC |
//! | [`query`] | SQL subset, rewrite, fan-out, k-way merge, decrypt |
//! | [`backend`] | the untrusted store, in-process or over a socket |
//! | [`datagen`], [`bench`] | sample records and the encryption benchmark |

pub mod backend;
pub mod bench;
pub mod chunk;
pub mod crypto;
pub mod datagen;
mod error;
pub mod ingest;
pub mod ope;
pub mod query;
pub mod schema;

pub use error::{exit, Error};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/schemes.md")]
    mod schemes {}
    #[doc = include_str!("../../../book/src/order-encoding.md")]
    mod order_encoding {}
    #[doc = include_str!("../../../book/src/loading.md")]
    mod loading {}
    #[doc = include_str!("../../../book/src/querying.md")]
    mod querying {}
    #[doc = include_str!("../../../book/src/gc.md")]
    mod gc {}
    #[doc = include_str!("../../../book/src/backend.md")]
    mod backend {}
}

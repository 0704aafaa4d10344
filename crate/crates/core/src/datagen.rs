//! Seeded generator of simulated credit-card records.

use std::io::{self, Write};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::schema::Schema;

const FIRST: &[&str] = &[
    "Ana", "Ben", "Chen", "Dana", "Emil", "Fatma", "Gus", "Hana", "Ivo", "Jun", "Kai", "Lena",
];
const LAST: &[&str] = &[
    "Berg", "Costa", "Diaz", "Eriksen", "Fischer", "Garcia", "Huber", "Ito", "Jensen", "Kowalski",
];
const CITIES: &[&str] = &[
    "Oslo", "Rome", "Lyon", "Graz", "Porto", "Turku", "Gent", "Brno", "Cork", "Split",
];
const TIERS: &[&str] = &["basic", "silver", "gold", "platinum"];
const WORDS: &[&str] = &[
    "late", "fee", "travel", "fraud", "check", "limit", "raised", "card", "replaced", "online", "grocery", "fuel",
    "refund", "dispute", "closed", "new",
];

pub const CARD_COLUMNS: [&str; 7] = ["pan", "holder", "city", "tier", "notes", "balance", "credit_limit"];

/// Schema for the generated records: card number order-preserving, holder
/// probabilistic, city deterministic, tier pseudonymized, notes searchable,
/// balance summable and the credit limit in the clear.
pub fn card_schema(table: &str) -> Schema {
    Schema::from_json(&format!(
        r#"{{"table":"{table}","columns":[
            {{"name":"pan","type":"integer","encrypt":"order_preserving"}},
            {{"name":"holder","type":"text","encrypt":"probabilistic"}},
            {{"name":"city","type":"text","encrypt":"deterministic"}},
            {{"name":"tier","type":"text","encrypt":"pseudonym"}},
            {{"name":"notes","type":"text","encrypt":"searchwords"}},
            {{"name":"balance","type":"integer","encrypt":"homomorphic"}},
            {{"name":"credit_limit","type":"integer","encrypt":"none"}}]}}"#
    ))
    .expect("built-in schema is valid")
}

/// A random 16-digit card number.
pub fn pan<R: Rng>(rng: &mut R) -> i64 {
    rng.gen_range(1_000_000_000_000_000..10_000_000_000_000_000)
}

/// `n` random 16-digit numbers.
pub fn pan_samples(n: usize, seed: u64) -> Vec<i64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| pan(&mut rng)).collect()
}

/// One record per row, cells in [`CARD_COLUMNS`] order. About one row in ten
/// reuses an earlier card number.
pub fn card_rows(n: usize, seed: u64) -> Vec<[String; 7]> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pans: Vec<i64> = Vec::with_capacity(n);
    (0..n)
        .map(|_| {
            let p = if !pans.is_empty() && rng.gen_bool(0.1) {
                pans[rng.gen_range(0..pans.len())]
            } else {
                pan(&mut rng)
            };
            pans.push(p);
            let k = rng.gen_range(1..=3);
            let words: Vec<&str> = WORDS.choose_multiple(&mut rng, k).copied().collect();
            [
                p.to_string(),
                format!("{} {}", FIRST.choose(&mut rng).unwrap(), LAST.choose(&mut rng).unwrap()),
                CITIES.choose(&mut rng).unwrap().to_string(),
                TIERS.choose(&mut rng).unwrap().to_string(),
                words.join(" "),
                rng.gen_range(0..1_000_000).to_string(),
                (rng.gen_range(1..=20) * 500).to_string(),
            ]
        })
        .collect()
}

/// Writes `n` records as CSV with a header row. Same seed, same bytes.
pub fn write_cards<W: Write>(out: W, n: usize, seed: u64) -> io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CARD_COLUMNS)?;
    for row in card_rows(n, seed) {
        w.write_record(&row)?;
    }
    w.flush()
}

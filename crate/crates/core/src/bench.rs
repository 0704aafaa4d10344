//! Throughput of the proxy's encryption step on 16-digit samples.
//!
//! The timed work per size is: stable sort, order-encode into a fresh state,
//! and for every sample a deterministic encryption plus its combined field,
//! which is then dropped. Input generation is not timed. Runs are single-threaded so that the
//! numbers scale with `n` rather than with the thread pool.

use cpu_time::ThreadTime;

use serde::Serialize;

use crate::chunk::combined_field;
use crate::crypto::{det_encrypt, ColumnKey};
use crate::datagen::pan_samples;
use crate::ope::{OpeState, OrderKey};
use crate::schema::DataType;

pub const DIGITS: usize = 16;

#[derive(Clone, Debug, Serialize)]
pub struct BenchRow {
    pub n: usize,
    pub digits: usize,
    /// Size of the same samples as a one-column CSV file with header.
    pub plaintext_bytes: u64,
    /// Median over rounds of the mean time per pass.
    pub seconds: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct BenchStep {
    pub from: usize,
    pub to: usize,
    pub time_ratio: f64,
    pub size_ratio: f64,
    pub linear: bool,
}

/// Bounds on consecutive ratios for a tenfold size step to count as linear.
pub const TIME_RATIO: (f64, f64) = (7.0, 13.0);
pub const SIZE_RATIO: (f64, f64) = (9.5, 10.5);

/// Encrypts the samples in code order, handing each combined field to `emit`.
pub fn encrypt_samples_into(samples: &[i64], key: &ColumnKey, mut emit: impl FnMut(&str)) {
    let mut sorted = samples.to_vec();
    sorted.sort();
    let mut keys: Vec<OrderKey> = sorted.iter().map(|&v| OrderKey::Int(v)).collect();
    keys.dedup();
    let mut state = OpeState::new(DataType::Integer);
    state
        .encode_sorted(&keys)
        .expect("fresh state has room for sorted input");
    // The state holds exactly `keys`, so its codes line up with them.
    let codes: Vec<_> = state.iter().map(|(_, c)| c).collect();
    let mut j = 0;
    for (i, &v) in sorted.iter().enumerate() {
        if i > 0 && sorted[i - 1] != v {
            j += 1;
        }
        let ct = det_encrypt(key, v.to_string().as_bytes()).expect("order key encrypts");
        emit(&combined_field(&ct.to_base64(), codes[j]));
    }
}

pub fn encrypt_samples(samples: &[i64], key: &ColumnKey) -> Vec<String> {
    let mut out = Vec::with_capacity(samples.len());
    encrypt_samples_into(samples, key, |f| out.push(f.to_string()));
    out
}

fn plaintext_bytes(samples: &[i64]) -> u64 {
    "pan\n".len() as u64 + samples.iter().map(|s| s.to_string().len() as u64 + 1).sum::<u64>()
}

/// Mean CPU seconds per pass over `samples`, across `repeats` passes. CPU
/// time of the calling thread ignores time the thread spends descheduled.
fn time_passes(samples: &[i64], repeats: usize, key: &ColumnKey) -> f64 {
    let t = ThreadTime::now();
    for _ in 0..repeats {
        let mut fields = 0;
        encrypt_samples_into(samples, key, |f| fields += std::hint::black_box(f).len().min(1));
        assert_eq!(fields, samples.len());
    }
    t.elapsed().as_secs_f64() / repeats as f64
}

/// Benchmarks every size over `rounds` interleaved rounds and reports the
/// median per size, so drift in machine speed hits all sizes alike. Within a
/// round each size repeats until it has processed about as many samples as
/// the largest one.
pub fn bench_encrypt(sizes: &[usize], seed: u64, rounds: usize, key: &ColumnKey) -> Vec<BenchRow> {
    let largest = sizes.iter().copied().max().unwrap_or(1);
    let samples: Vec<Vec<i64>> = sizes.iter().map(|&n| pan_samples(n, seed)).collect();
    // Warm up allocator and AES dispatch before timing.
    encrypt_samples(&pan_samples(1000, seed), key);
    let mut times = vec![Vec::new(); sizes.len()];
    for _ in 0..rounds.max(1) {
        for (i, s) in samples.iter().enumerate() {
            times[i].push(time_passes(s, largest.div_ceil(s.len().max(1)), key));
        }
    }
    sizes
        .iter()
        .zip(times)
        .zip(&samples)
        .map(|((&n, mut t), s)| {
            t.sort_by(f64::total_cmp);
            BenchRow {
                n,
                digits: DIGITS,
                plaintext_bytes: plaintext_bytes(s),
                seconds: t[t.len() / 2],
            }
        })
        .collect()
}

pub fn steps(rows: &[BenchRow]) -> Vec<BenchStep> {
    rows.windows(2)
        .map(|w| {
            let time_ratio = w[1].seconds / w[0].seconds;
            let size_ratio = w[1].plaintext_bytes as f64 / w[0].plaintext_bytes as f64;
            BenchStep {
                from: w[0].n,
                to: w[1].n,
                time_ratio,
                size_ratio,
                linear: (TIME_RATIO.0..=TIME_RATIO.1).contains(&time_ratio)
                    && (SIZE_RATIO.0..=SIZE_RATIO.1).contains(&size_ratio),
            }
        })
        .collect()
}

use std::cmp::Reverse;
use std::collections::{BinaryHeap, VecDeque};

use crate::backend::{ChunkQueryResult, EncryptedPlan, ResultRow};
use crate::crypto::{CryptoError, PaillierCiphertext, PaillierPublicKey};

/// Merges runs that are each sorted by `key`. Equal keys come out in run
/// order, then in their order within the run. Stops after `limit` items.
pub fn kway_merge<T, K: Ord>(runs: Vec<Vec<T>>, key: impl Fn(&T) -> K, limit: Option<usize>) -> Vec<T> {
    let total: usize = runs.iter().map(Vec::len).sum();
    let want = limit.map_or(total, |l| l.min(total));
    let mut runs: Vec<VecDeque<T>> = runs.into_iter().map(VecDeque::from).collect();
    let mut heap = BinaryHeap::with_capacity(runs.len());
    for (i, run) in runs.iter().enumerate() {
        if let Some(front) = run.front() {
            heap.push(Reverse((key(front), i)));
        }
    }
    let mut out = Vec::with_capacity(want);
    while out.len() < want {
        let Some(Reverse((_, i))) = heap.pop() else { break };
        let item = runs[i].pop_front().expect("heap entries track non-empty runs");
        if let Some(front) = runs[i].front() {
            heap.push(Reverse((key(front), i)));
        }
        out.push(item);
    }
    out
}

/// Combines per-chunk answers into the final row order: a k-way merge on the
/// sort values when the plan orders, chunk order otherwise, then LIMIT.
/// `results` must be in chunk-id order. Rows come back tagged with their chunk.
pub fn merge_rows(results: Vec<ChunkQueryResult>, plan: &EncryptedPlan) -> Vec<(u64, ResultRow)> {
    let limit = plan.limit.map(|l| l.min(usize::MAX as u64) as usize);
    let runs: Vec<Vec<(u64, ResultRow)>> = results
        .into_iter()
        .map(|r| {
            let chunk = r.chunk;
            r.rows.into_iter().map(|row| (chunk, row)).collect()
        })
        .collect();
    match &plan.order_by {
        Some(spec) if spec.desc => kway_merge(runs, |(_, r)| Reverse(r.sort.clone()), limit),
        Some(_) => kway_merge(runs, |(_, r)| r.sort.clone(), limit),
        None => {
            let rows = runs.into_iter().flatten();
            match limit {
                Some(l) => rows.take(l).collect(),
                None => rows.collect(),
            }
        }
    }
}

/// Multiplies the per-chunk partial sums into one ciphertext of the total.
pub fn combine_sums(results: &[ChunkQueryResult], pk: &PaillierPublicKey) -> Result<PaillierCiphertext, CryptoError> {
    let mut acc = pk.zero();
    for r in results {
        if let Some(s) = &r.sum {
            acc = pk.add(&acc, &PaillierCiphertext::from_decimal(s)?);
        }
    }
    Ok(acc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{Output, SortSpec, SortValue};
    use crate::crypto::PaillierKeypair;
    use num_bigint::BigUint;
    use proptest::prelude::*;

    fn rows(chunk: u64, codes: &[u64]) -> ChunkQueryResult {
        ChunkQueryResult {
            chunk,
            matched: codes.len() as u64,
            rows: codes
                .iter()
                .enumerate()
                .map(|(i, &c)| ResultRow {
                    index: i as u64,
                    sort: Some(SortValue::Code(c)),
                    cells: vec![format!("{chunk}:{i}")],
                })
                .collect(),
            sum: None,
        }
    }

    fn plan(desc: bool, limit: Option<u64>) -> EncryptedPlan {
        EncryptedPlan {
            epoch: 0,
            output: Output::Rows { columns: vec![] },
            filters: vec![],
            order_by: Some(SortSpec {
                column: "k__ope".into(),
                desc,
            }),
            limit,
        }
    }

    fn codes(out: &[(u64, ResultRow)]) -> Vec<u64> {
        out.iter()
            .map(|(_, r)| match r.sort {
                Some(SortValue::Code(c)) => c,
                _ => unreachable!(),
            })
            .collect()
    }

    #[test]
    fn two_sorted_chunks() {
        let out = merge_rows(vec![rows(0, &[1, 5, 9]), rows(1, &[2, 3, 10])], &plan(false, None));
        assert_eq!(codes(&out), vec![1, 2, 3, 5, 9, 10]);
        let out = merge_rows(vec![rows(0, &[1, 5, 9]), rows(1, &[2, 3, 10])], &plan(false, Some(2)));
        assert_eq!(codes(&out), vec![1, 2]);
        let out = merge_rows(vec![rows(0, &[9, 5, 1]), rows(1, &[10, 3, 2])], &plan(true, None));
        assert_eq!(codes(&out), vec![10, 9, 5, 3, 2, 1]);
    }

    #[test]
    fn ties_follow_chunk_then_row() {
        let out = merge_rows(vec![rows(0, &[4, 4]), rows(3, &[4])], &plan(true, None));
        let cells: Vec<&str> = out.iter().map(|(_, r)| r.cells[0].as_str()).collect();
        assert_eq!(cells, vec!["0:0", "0:1", "3:0"]);
    }

    #[test]
    fn partial_sums_combine() {
        let pair = PaillierKeypair::from_primes(&BigUint::from(1_000_003u32), &BigUint::from(999_983u32)).unwrap();
        let pk = pair.public();
        let partials: Vec<ChunkQueryResult> = [6u64, 15, 9]
            .iter()
            .enumerate()
            .map(|(i, v)| ChunkQueryResult {
                chunk: i as u64,
                matched: 1,
                rows: vec![],
                sum: Some(pk.encrypt_u64(*v).unwrap().to_decimal()),
            })
            .collect();
        let total = combine_sums(&partials, pk).unwrap();
        assert_eq!(pair.private().decrypt(&total).unwrap(), BigUint::from(30u32));
    }

    proptest! {
        #[test]
        fn merge_equals_global_sort(
            chunks in prop::collection::vec(prop::collection::vec(0u64..20, 0..30), 1..6),
            desc in any::<bool>(),
            limit in prop::option::of(0u64..100),
        ) {
            let results: Vec<ChunkQueryResult> = chunks
                .iter()
                .enumerate()
                .map(|(c, codes)| {
                    let mut sorted = codes.clone();
                    if desc { sorted.sort_by(|a, b| b.cmp(a)) } else { sorted.sort() }
                    rows(c as u64, &sorted)
                })
                .collect();
            // Global reference: concatenate in chunk order, stable sort, limit.
            let mut all: Vec<(u64, ResultRow)> = results
                .iter()
                .flat_map(|r| r.rows.iter().cloned().map(move |row| (r.chunk, row)))
                .collect();
            if desc { all.sort_by(|a, b| b.1.sort.cmp(&a.1.sort)) } else { all.sort_by(|a, b| a.1.sort.cmp(&b.1.sort)) }
            if let Some(l) = limit { all.truncate(l as usize) }
            let merged = merge_rows(results, &plan(desc, limit));
            prop_assert_eq!(merged, all);
        }
    }
}

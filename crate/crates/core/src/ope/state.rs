use std::collections::BTreeMap;
use std::ops::Bound;

use super::{OpeError, OrderCode, OrderKey};
use crate::schema::DataType;

/// Result of looking up a key without inserting it.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Probe {
    /// The key is stored under this code.
    Exact(OrderCode),
    /// The key is absent; this is the code it would receive. No stored code
    /// equals it, and it sits between the codes of the key's neighbours.
    Gap(OrderCode),
    /// The key is absent and its neighbours are adjacent. `lo` is the code of
    /// the greatest smaller key (0 if none); only a re-encode resolves it.
    Exhausted { lo: OrderCode, hi: OrderCode },
}

/// Old-to-new code mapping produced by a re-encode, sorted by old code.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ReencodeMap {
    pub epoch_from: u64,
    pub epoch_to: u64,
    pub pairs: Vec<(OrderCode, OrderCode)>,
}

impl ReencodeMap {
    pub fn apply(&self, old: OrderCode) -> Option<OrderCode> {
        self.pairs
            .binary_search_by_key(&old, |(o, _)| *o)
            .ok()
            .map(|i| self.pairs[i].1)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OpeState {
    pub(super) data_type: DataType,
    pub(super) epoch: u64,
    pub(super) pending_reencode: bool,
    pub(super) entries: BTreeMap<OrderKey, OrderCode>,
}

impl OpeState {
    pub fn new(data_type: DataType) -> Self {
        OpeState {
            data_type,
            epoch: 0,
            pending_reencode: false,
            entries: BTreeMap::new(),
        }
    }

    pub fn data_type(&self) -> DataType {
        self.data_type
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Set after a load aborted on a collision; cleared by [`Self::reencode`].
    pub fn pending_reencode(&self) -> bool {
        self.pending_reencode
    }

    pub fn mark_pending_reencode(&mut self) {
        self.pending_reencode = true;
    }

    pub fn get(&self, key: &OrderKey) -> Option<OrderCode> {
        self.entries.get(key).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&OrderKey, OrderCode)> {
        self.entries.iter().map(|(k, c)| (k, *c))
    }

    fn check_kind(&self, key: &OrderKey) -> Result<(), OpeError> {
        match (self.data_type, key) {
            (DataType::Text, OrderKey::Text(_)) => Ok(()),
            (DataType::Integer | DataType::Decimal { .. }, OrderKey::Int(_)) => Ok(()),
            _ => Err(OpeError::KeyKind),
        }
    }

    /// Codes of the nearest stored neighbours, with the range bounds standing
    /// in for missing ones.
    fn neighbours(&self, key: &OrderKey) -> (u64, u64) {
        let lo = self
            .entries
            .range((Bound::Unbounded, Bound::Excluded(key)))
            .next_back()
            .map_or(OrderCode::FLOOR, |(_, c)| c.0);
        let hi = self
            .entries
            .range((Bound::Excluded(key), Bound::Unbounded))
            .next()
            .map_or(OrderCode::CEILING, |(_, c)| c.0);
        (lo, hi)
    }

    /// Code an absent key would get, or the exhausted `(lo, hi)` pair. The
    /// first key of an empty state takes 2^63, the midpoint of `[0, 2^64)`.
    fn gap_code(&self, key: &OrderKey) -> Result<OrderCode, (u64, u64)> {
        if self.entries.is_empty() {
            return Ok(OrderCode::FIRST);
        }
        let (lo, hi) = self.neighbours(key);
        if hi - lo <= 1 {
            return Err((lo, hi));
        }
        Ok(OrderCode(OrderCode::midpoint(lo, hi)))
    }

    /// Returns the key's code, inserting it at the midpoint of its neighbours
    /// when absent.
    pub fn encode_insert(&mut self, key: OrderKey) -> Result<OrderCode, OpeError> {
        self.check_kind(&key)?;
        if let Some(code) = self.entries.get(&key) {
            return Ok(*code);
        }
        let code = match self.gap_code(&key) {
            Ok(code) => code,
            Err((lo, hi)) => return Err(OpeError::Collision { lo, hi }),
        };
        self.entries.insert(key, code);
        Ok(code)
    }

    /// Inserts a sorted batch median-first: within each gap between stored
    /// keys the middle new key takes the gap's midpoint and the halves recurse,
    /// so `m` new keys in one gap use only about `log2(m)` halvings of it.
    /// Either every key is encoded or the state is left unchanged.
    pub fn encode_sorted(&mut self, sorted: &[OrderKey]) -> Result<(), OpeError> {
        debug_assert!(sorted.windows(2).all(|w| w[0] <= w[1]));
        for key in sorted {
            self.check_kind(key)?;
        }
        let mut fresh: Vec<&OrderKey> = sorted.iter().filter(|k| !self.entries.contains_key(k)).collect();
        fresh.dedup();
        if fresh.is_empty() {
            return Ok(());
        }

        // Walk the new keys and the stored ones together, cutting the new keys
        // into runs that share a gap.
        let mut codes = vec![OrderCode(0); fresh.len()];
        let mut stored = self.entries.iter().peekable();
        let mut lo = OrderCode::FLOOR;
        let mut start = 0;
        while start < fresh.len() {
            while let Some((k, c)) = stored.peek() {
                if *k < fresh[start] {
                    lo = c.0;
                    stored.next();
                } else {
                    break;
                }
            }
            let hi = stored.peek().map_or(OrderCode::CEILING, |(_, c)| c.0);
            let end = match stored.peek() {
                Some((k, _)) => start + fresh[start..].partition_point(|f| *f < *k),
                None => fresh.len(),
            };
            fill_gap(&mut codes[start..end], lo, hi, self.entries.is_empty())?;
            start = end;
        }

        let batch = fresh.len();
        let new = fresh.into_iter().cloned().zip(codes);
        if self.entries.len() < 16 * batch {
            // Large batch relative to the state: rebuild in one sorted pass.
            let old = std::mem::take(&mut self.entries);
            self.entries = merge_sorted(old.into_iter(), new).collect();
        } else {
            self.entries.extend(new);
        }
        Ok(())
    }

    /// Looks a key up without mutating the state.
    pub fn probe(&self, key: &OrderKey) -> Result<Probe, OpeError> {
        self.check_kind(key)?;
        if let Some(code) = self.entries.get(key) {
            return Ok(Probe::Exact(*code));
        }
        match self.gap_code(key) {
            Ok(code) => Ok(Probe::Gap(code)),
            Err((lo, hi)) => Ok(Probe::Exhausted {
                lo: OrderCode(lo),
                hi: OrderCode(hi),
            }),
        }
    }

    /// Reassigns evenly spaced codes: the i-th of n keys gets
    /// `floor((i + 1) * (2^64 - 1) / (n + 1))`.
    pub fn reencode(&mut self) -> Result<ReencodeMap, OpeError> {
        if self.entries.is_empty() {
            return Err(OpeError::Empty);
        }
        let n = self.entries.len() as u128;
        let range = OrderCode::CEILING as u128;
        let mut pairs = Vec::with_capacity(self.entries.len());
        for (i, code) in self.entries.values_mut().enumerate() {
            let new = OrderCode(((i as u128 + 1) * range / (n + 1)) as u64);
            pairs.push((*code, new));
            *code = new;
        }
        let epoch_from = self.epoch;
        self.epoch += 1;
        self.pending_reencode = false;
        Ok(ReencodeMap {
            epoch_from,
            epoch_to: self.epoch,
            pairs,
        })
    }
}

/// Assigns midpoint codes to a sorted run of new keys lying strictly between
/// codes `lo` and `hi`. In an empty state the first key takes
/// [`OrderCode::FIRST`].
fn fill_gap(codes: &mut [OrderCode], lo: u64, hi: u64, empty_state: bool) -> Result<(), OpeError> {
    let mut stack = vec![(0, codes.len(), lo, hi, empty_state)];
    while let Some((start, end, lo, hi, first)) = stack.pop() {
        if start >= end {
            continue;
        }
        let code = if first {
            OrderCode::FIRST.0
        } else if hi - lo <= 1 {
            return Err(OpeError::Collision { lo, hi });
        } else {
            OrderCode::midpoint(lo, hi)
        };
        let mid = start + (end - start) / 2;
        codes[mid] = OrderCode(code);
        stack.push((mid + 1, end, code, hi, false));
        stack.push((start, mid, lo, code, false));
    }
    Ok(())
}

/// Merges two key-sorted streams with disjoint keys.
fn merge_sorted<K: Ord, V>(
    a: impl Iterator<Item = (K, V)>,
    b: impl Iterator<Item = (K, V)>,
) -> impl Iterator<Item = (K, V)> {
    let mut a = a.peekable();
    let mut b = b.peekable();
    std::iter::from_fn(move || match (a.peek(), b.peek()) {
        (Some((x, _)), Some((y, _))) => {
            if x < y {
                a.next()
            } else {
                b.next()
            }
        }
        (Some(_), None) => a.next(),
        (None, _) => b.next(),
    })
}

//! Ordered access paths: non-clustered secondary indices and the clustered heap.
//!
//! A secondary index is a flat array of `((value, id), locator)` entries kept
//! strictly ascending, searched by binary search. The table is read-only once
//! a run starts, so there is no incremental maintenance.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{Field, SeekBound, SortKey};
use crate::table::{RowLocator, Table};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IndexKind {
    Clustered,
    NonClustered,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct IndexSpec {
    pub field: Field,
    pub kind: IndexKind,
}

impl IndexSpec {
    pub fn clustered(field: Field) -> Self {
        IndexSpec {
            field,
            kind: IndexKind::Clustered,
        }
    }

    pub fn nonclustered(field: Field) -> Self {
        IndexSpec {
            field,
            kind: IndexKind::NonClustered,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndexEntry {
    pub key: SortKey,
    pub locator: RowLocator,
}

#[derive(Debug, Clone)]
pub struct OrderedIndex {
    field: Field,
    entries: Vec<IndexEntry>,
}

/// Builds a non-clustered index on `field` over the table's current heap.
pub fn build_index(table: &Table, field: Field) -> OrderedIndex {
    OrderedIndex::build(table, field)
}

impl OrderedIndex {
    pub fn build(table: &Table, field: Field) -> Self {
        let mut entries: Vec<IndexEntry> = table
            .scan()
            .iter()
            .enumerate()
            .map(|(pos, row)| IndexEntry {
                key: field.key(row),
                locator: RowLocator(pos as u32),
            })
            .collect();
        entries.sort_unstable_by(|a, b| a.key.cmp(&b.key));
        OrderedIndex { field, entries }
    }

    pub fn field(&self) -> Field {
        self.field
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[IndexEntry] {
        &self.entries
    }

    /// Rank of the first entry strictly after `bound`.
    pub fn position_after(&self, bound: &SeekBound) -> usize {
        match bound {
            SeekBound::Start => 0,
            SeekBound::After(key) => self.entries.partition_point(|e| e.key <= *key),
        }
    }

    /// The first `limit` entries strictly greater than `bound`.
    pub fn seek_gt(&self, bound: &SeekBound, limit: usize) -> &[IndexEntry] {
        let start = self.position_after(bound);
        let end = start.saturating_add(limit).min(self.entries.len());
        &self.entries[start..end]
    }

    pub fn nth_key(&self, rank: usize) -> Result<&SortKey> {
        self.entries
            .get(rank)
            .map(|e| &e.key)
            .ok_or_else(|| rank_error(rank, self.entries.len()))
    }
}

fn rank_error(rank: usize, len: usize) -> Error {
    Error::Config(format!("rank {rank} out of range for {len} rows"))
}

/// An ordered way to reach rows by `(field, id)`: the clustered heap or a
/// secondary index.
#[derive(Debug, Clone, Copy)]
pub enum AccessPath<'a> {
    Clustered { table: &'a Table, field: Field },
    Secondary(&'a OrderedIndex),
}

impl<'a> AccessPath<'a> {
    pub fn is_clustered(&self) -> bool {
        matches!(self, AccessPath::Clustered { .. })
    }

    pub fn len(&self) -> usize {
        match self {
            AccessPath::Clustered { table, .. } => table.row_count(),
            AccessPath::Secondary(index) => index.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Key of rank `rank` in ascending order; O(1) by position.
    pub fn nth_key(&self, rank: usize) -> Result<SortKey> {
        match self {
            AccessPath::Clustered { table, field } => table
                .scan()
                .get(rank)
                .map(|row| field.key(row))
                .ok_or_else(|| rank_error(rank, table.row_count())),
            AccessPath::Secondary(index) => index.nth_key(rank).cloned(),
        }
    }

    pub fn position_after(&self, bound: &SeekBound) -> usize {
        match (self, bound) {
            (_, SeekBound::Start) => 0,
            (AccessPath::Clustered { table, field }, SeekBound::After(key)) => table
                .scan()
                .partition_point(|row| field.compare_to_key(row, key).is_le()),
            (AccessPath::Secondary(index), bound) => index.position_after(bound),
        }
    }

    /// Up to `limit` `(key, locator)` pairs strictly after `bound`, ascending.
    pub fn seek_gt(&self, bound: &SeekBound, limit: usize) -> Vec<IndexEntry> {
        match self {
            AccessPath::Clustered { table, field } => {
                let start = self.position_after(bound);
                let end = start.saturating_add(limit).min(table.row_count());
                table.scan()[start..end]
                    .iter()
                    .enumerate()
                    .map(|(i, row)| IndexEntry {
                        key: field.key(row),
                        locator: RowLocator((start + i) as u32),
                    })
                    .collect()
            }
            AccessPath::Secondary(index) => index.seek_gt(bound, limit).to_vec(),
        }
    }

    /// Locators of every row strictly after `bound`, in key order.
    pub fn locators_after(&self, bound: &SeekBound) -> Vec<RowLocator> {
        let start = self.position_after(bound);
        match self {
            AccessPath::Clustered { table, .. } => (start..table.row_count())
                .map(|p| RowLocator(p as u32))
                .collect(),
            AccessPath::Secondary(index) => {
                index.entries()[start..].iter().map(|e| e.locator).collect()
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::row::Row;

    fn table(n: usize, seed: u64) -> Table {
        let mut t = Table::new(None);
        t.populate(n, seed).unwrap();
        t
    }

    fn oracle_keys(t: &Table, field: Field) -> Vec<SortKey> {
        let mut keys: Vec<SortKey> = t.scan().iter().map(|r| field.key(r)).collect();
        keys.sort();
        keys
    }

    #[test]
    fn empty_index() {
        let idx = build_index(&table(0, 1), Field::Id);
        assert_eq!(idx.len(), 0);
        assert!(idx.seek_gt(&SeekBound::Start, 10).is_empty());
        assert!(idx.nth_key(0).is_err());
    }

    #[test]
    fn index_order_matches_oracle_for_every_field() {
        let t = table(10_000, 77);
        for field in Field::ALL {
            let idx = build_index(&t, field);
            assert_eq!(idx.len(), t.row_count());
            let keys: Vec<SortKey> = idx.entries().iter().map(|e| e.key.clone()).collect();
            assert_eq!(keys, oracle_keys(&t, field));
            assert!(idx.entries().windows(2).all(|w| w[0].key < w[1].key));
            // fetching through the index yields the oracle row order
            let rows = t.fetch(idx.entries().iter().map(|e| e.locator)).unwrap();
            let mut expected: Vec<Row> = t.scan().to_vec();
            expected.sort_by_key(|r| field.key(r));
            assert_eq!(rows, expected);
        }
    }

    #[test]
    fn seek_gt_matches_filter_oracle() {
        let t = table(2000, 8);
        for field in Field::ALL {
            let idx = build_index(&t, field);
            let oracle = oracle_keys(&t, field);
            for probe in [0usize, 1, 17, 999, 1998] {
                let bound = SeekBound::After(oracle[probe].clone());
                for limit in [0usize, 1, 10, 5000] {
                    let got: Vec<SortKey> = idx
                        .seek_gt(&bound, limit)
                        .iter()
                        .map(|e| e.key.clone())
                        .collect();
                    let want: Vec<SortKey> = oracle
                        .iter()
                        .filter(|k| **k > oracle[probe])
                        .take(limit)
                        .cloned()
                        .collect();
                    assert_eq!(got, want);
                }
            }
            assert_eq!(idx.seek_gt(&SeekBound::Start, 10).len(), 10);
            let last = SeekBound::After(oracle.last().unwrap().clone());
            assert!(idx.seek_gt(&last, 10).is_empty());
        }
    }

    #[test]
    fn paging_by_last_key_reconstructs_everything() {
        let t = table(1234, 3);
        for field in Field::ALL {
            let idx = build_index(&t, field);
            let path = AccessPath::Secondary(&idx);
            let mut bound = SeekBound::Start;
            let mut seen = Vec::new();
            loop {
                let page = path.seek_gt(&bound, 10);
                let Some(last) = page.last() else { break };
                bound = SeekBound::After(last.key.clone());
                seen.extend(page.into_iter().map(|e| e.key));
            }
            assert_eq!(seen, oracle_keys(&t, field));
        }
    }

    #[test]
    fn nth_key_extremes_and_oracle() {
        let t = table(500, 4);
        let idx = build_index(&t, Field::Date);
        let oracle = oracle_keys(&t, Field::Date);
        assert_eq!(idx.nth_key(0).unwrap(), &oracle[0]);
        assert_eq!(idx.nth_key(499).unwrap(), &oracle[499]);
        for n in (0..500).step_by(37) {
            assert_eq!(idx.nth_key(n).unwrap(), &oracle[n]);
        }
        assert!(idx.nth_key(500).is_err());
    }

    #[test]
    fn clustered_path_agrees_with_secondary_path() {
        let mut clustered = table(3000, 6);
        clustered.recluster(Field::Text);
        let plain = table(3000, 6);
        let idx = build_index(&plain, Field::Text);
        let cpath = clustered.access_path(Field::Text).unwrap();
        let spath = AccessPath::Secondary(&idx);
        assert!(cpath.is_clustered());
        for rank in [0usize, 1, 1500, 2999] {
            assert_eq!(cpath.nth_key(rank).unwrap(), spath.nth_key(rank).unwrap());
            let bound = SeekBound::After(spath.nth_key(rank).unwrap());
            assert_eq!(cpath.position_after(&bound), spath.position_after(&bound));
            let ck: Vec<SortKey> = cpath
                .seek_gt(&bound, 7)
                .into_iter()
                .map(|e| e.key)
                .collect();
            let sk: Vec<SortKey> = spath
                .seek_gt(&bound, 7)
                .into_iter()
                .map(|e| e.key)
                .collect();
            assert_eq!(ck, sk);
            assert_eq!(
                cpath.locators_after(&bound).len(),
                spath.locators_after(&bound).len()
            );
        }
        assert!(cpath.nth_key(3000).is_err());
    }
}

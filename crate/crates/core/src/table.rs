//! Heap storage for the test table.
//!
//! Rows live in a single vector in physical order. A clustered field keeps the
//! heap sorted by `(field, id)`; there is no separate clustered structure, so
//! a clustered seek is a binary search over the heap itself.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::field::Field;
use crate::index::{AccessPath, IndexKind, IndexSpec, OrderedIndex};
use crate::row::{self, random_row, Row, SplitMix64, MIN_ROW_BYTES};

/// Position of a row in the heap's physical order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct RowLocator(pub u32);

impl RowLocator {
    pub fn position(self) -> usize {
        self.0 as usize
    }
}

pub const TABLE_MAGIC: &[u8; 4] = b"PGB1";

#[derive(Debug, Clone, Default)]
pub struct Table {
    heap: Vec<Row>,
    clustered: Option<Field>,
    indices: BTreeMap<Field, OrderedIndex>,
}

/// Creates an empty table, optionally clustered on the named field.
pub fn create_table(clustered_field: Option<&str>) -> Result<Table> {
    let clustered = clustered_field.map(str::parse).transpose()?;
    Ok(Table::new(clustered))
}

impl Table {
    pub fn new(clustered: Option<Field>) -> Self {
        Table {
            heap: Vec::new(),
            clustered,
            indices: BTreeMap::new(),
        }
    }

    pub fn row_count(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }

    pub fn clustered_field(&self) -> Option<Field> {
        self.clustered
    }

    /// Replaces the contents with `n` rows drawn from `seed`; ids are `1..=n`.
    pub fn populate(&mut self, n: usize, seed: u64) -> Result<()> {
        if n > i32::MAX as usize {
            return Err(Error::Config(format!("row count {n} exceeds id range")));
        }
        let mut rng = SplitMix64::new(seed);
        self.heap = (1..=n as i32).map(|id| random_row(id, &mut rng)).collect();
        if let Some(field) = self.clustered {
            self.sort_heap(field);
        }
        self.rebuild_indices();
        Ok(())
    }

    /// Physically reorders the heap by `(field, id)` and rebuilds secondary
    /// indices against the new locators. A secondary index on `field` is
    /// dropped since the clustered order subsumes it.
    pub fn recluster(&mut self, field: Field) {
        self.sort_heap(field);
        self.clustered = Some(field);
        self.indices.remove(&field);
        self.rebuild_indices();
    }

    /// Rewrites the heap in `(field, id)` order. Rows are copied into fresh
    /// allocations so physical neighbours are also neighbours in memory.
    fn sort_heap(&mut self, field: Field) {
        let mut order: Vec<&Row> = self.heap.iter().collect();
        order.sort_unstable_by(|a, b| field.compare(a, b));
        self.heap = order.into_iter().cloned().collect();
    }

    fn rebuild_indices(&mut self) {
        let fields: Vec<Field> = self.indices.keys().copied().collect();
        for field in fields {
            let index = OrderedIndex::build(self, field);
            self.indices.insert(field, index);
        }
    }

    /// Adds an index. At most one clustered spec per table and one index per field.
    pub fn add_index(&mut self, spec: IndexSpec) -> Result<()> {
        match spec.kind {
            IndexKind::Clustered => match self.clustered {
                Some(existing) if existing != spec.field => Err(Error::Config(format!(
                    "table is already clustered on {existing}"
                ))),
                _ => {
                    self.recluster(spec.field);
                    Ok(())
                }
            },
            IndexKind::NonClustered => {
                if self.clustered == Some(spec.field) || self.indices.contains_key(&spec.field) {
                    return Err(Error::Config(format!(
                        "field {} already has an index",
                        spec.field
                    )));
                }
                let index = OrderedIndex::build(self, spec.field);
                self.indices.insert(spec.field, index);
                Ok(())
            }
        }
    }

    pub fn index_specs(&self) -> Vec<IndexSpec> {
        self.clustered
            .map(|field| IndexSpec {
                field,
                kind: IndexKind::Clustered,
            })
            .into_iter()
            .chain(self.indices.keys().map(|&field| IndexSpec {
                field,
                kind: IndexKind::NonClustered,
            }))
            .collect()
    }

    pub fn secondary_index(&self, field: Field) -> Option<&OrderedIndex> {
        self.indices.get(&field)
    }

    /// The ordered access path on `field`, if the table has one.
    pub fn access_path(&self, field: Field) -> Option<AccessPath<'_>> {
        if self.clustered == Some(field) {
            Some(AccessPath::Clustered { table: self, field })
        } else {
            self.indices.get(&field).map(AccessPath::Secondary)
        }
    }

    /// All rows in physical order.
    pub fn scan(&self) -> &[Row] {
        &self.heap
    }

    pub fn row_at(&self, locator: RowLocator) -> Result<&Row> {
        self.heap.get(locator.position()).ok_or_else(|| {
            Error::Internal(format!(
                "locator {} out of range for {} rows",
                locator.0,
                self.heap.len()
            ))
        })
    }

    /// Fetches rows by locator, in locator order. Each locator is one random heap access.
    pub fn fetch(&self, locators: impl IntoIterator<Item = RowLocator>) -> Result<Vec<Row>> {
        locators
            .into_iter()
            .map(|loc| self.row_at(loc).cloned())
            .collect()
    }

    pub fn encoded_heap(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.heap.iter().map(Row::encoded_len).sum());
        for row in &self.heap {
            row.encode_into(&mut out);
        }
        out
    }

    /// Writes `PGB1`, the row count as u64 LE, then every encoded row in heap order.
    pub fn dump<W: Write>(&self, mut out: W) -> Result<()> {
        out.write_all(TABLE_MAGIC)?;
        out.write_all(&(self.heap.len() as u64).to_le_bytes())?;
        out.write_all(&self.encoded_heap())?;
        out.flush()?;
        Ok(())
    }

    pub fn load<R: Read>(mut input: R) -> Result<Table> {
        let mut bytes = Vec::new();
        input.read_to_end(&mut bytes)?;
        Table::from_dump_bytes(&bytes)
    }

    /// Parses a dump. The loaded table has no clustering or indices; ids must be unique.
    pub fn from_dump_bytes(bytes: &[u8]) -> Result<Table> {
        if bytes.len() < 12 || &bytes[..4] != TABLE_MAGIC {
            return Err(Error::protocol("missing PGB1 table header"));
        }
        let count = u64::from_le_bytes(bytes[4..12].try_into().unwrap());
        let body = &bytes[12..];
        if count > (body.len() / MIN_ROW_BYTES) as u64 {
            return Err(Error::protocol(format!(
                "row count {count} exceeds what {} bytes can hold",
                body.len()
            )));
        }
        let heap = row::decode_rows(body, count as usize)?;
        let mut ids: Vec<i32> = heap.iter().map(|r| r.id).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::protocol("duplicate row id in table dump"));
        }
        Ok(Table {
            heap,
            clustered: None,
            indices: BTreeMap::new(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Sort written independently of `Field::compare`.
    fn oracle_sorted(rows: &[Row], field: Field) -> Vec<Row> {
        let mut rows = rows.to_vec();
        rows.sort_by(|a, b| match field {
            Field::Id => a.id.cmp(&b.id),
            Field::Text => (a.text_field.as_str(), a.id).cmp(&(b.text_field.as_str(), b.id)),
            Field::Int => (a.int_field, a.id).cmp(&(b.int_field, b.id)),
            Field::Bool => (a.bool_field, a.id).cmp(&(b.bool_field, b.id)),
            Field::Date => (a.date_field, a.id).cmp(&(b.date_field, b.id)),
        });
        rows
    }

    fn populated(n: usize, seed: u64) -> Table {
        let mut t = Table::new(None);
        t.populate(n, seed).unwrap();
        t
    }

    #[test]
    fn create_table_cases() {
        assert_eq!(create_table(None).unwrap().row_count(), 0);
        let t = create_table(Some("IntField")).unwrap();
        assert_eq!(t.clustered_field(), Some(Field::Int));
        assert!(matches!(
            create_table(Some("Color")),
            Err(Error::UnknownField(_))
        ));
    }

    #[test]
    fn populate_counts_and_ids() {
        assert_eq!(populated(0, 42).row_count(), 0);
        assert!(populated(0, 42).scan().is_empty());
        let t = populated(500, 3);
        assert_eq!(t.row_count(), 500);
        assert!(t.scan().iter().map(|r| r.id).eq(1..=500));
    }

    #[test]
    fn populate_is_byte_deterministic() {
        assert_eq!(
            populated(1000, 7).encoded_heap(),
            populated(1000, 7).encoded_heap()
        );
        assert_ne!(
            populated(1000, 7).encoded_heap(),
            populated(1000, 8).encoded_heap()
        );
    }

    #[test]
    fn clustered_populate_keeps_heap_sorted() {
        let mut t = Table::new(Some(Field::Int));
        t.populate(2000, 11).unwrap();
        assert_eq!(
            t.scan(),
            oracle_sorted(populated(2000, 11).scan(), Field::Int)
        );
    }

    #[test]
    fn recluster_matches_oracle_for_every_field() {
        let base = populated(10_000, 5);
        for field in Field::ALL {
            let mut t = base.clone();
            t.recluster(field);
            assert_eq!(t.scan(), oracle_sorted(base.scan(), field), "{field}");
        }
    }

    #[test]
    fn recluster_on_id_is_identity_and_round_trips() {
        let base = populated(3000, 21);
        let mut t = base.clone();
        t.recluster(Field::Id);
        assert_eq!(t.scan(), base.scan());
        t.recluster(Field::Text);
        assert_ne!(t.scan(), base.scan());
        t.recluster(Field::Id);
        assert_eq!(t.scan(), base.scan());
    }

    #[test]
    fn recluster_int_scan_is_monotone() {
        let mut t = populated(5000, 1);
        t.recluster(Field::Int);
        assert!(t
            .scan()
            .windows(2)
            .all(|w| w[0].int_field <= w[1].int_field));
    }

    #[test]
    fn fetch_follows_locator_order() {
        let t = populated(100, 2);
        assert!(t.fetch([]).unwrap().is_empty());
        assert_eq!(t.fetch([RowLocator(0)]).unwrap(), vec![t.scan()[0].clone()]);
        let reversed: Vec<RowLocator> = (0..100).rev().map(RowLocator).collect();
        let mut expected = t.scan().to_vec();
        expected.reverse();
        assert_eq!(t.fetch(reversed).unwrap(), expected);
        assert!(matches!(
            t.fetch([RowLocator(100)]),
            Err(Error::Internal(_))
        ));
    }

    #[test]
    fn index_rules() {
        let mut t = populated(50, 1);
        t.add_index(IndexSpec::nonclustered(Field::Text)).unwrap();
        assert!(t.add_index(IndexSpec::nonclustered(Field::Text)).is_err());
        t.add_index(IndexSpec::clustered(Field::Int)).unwrap();
        assert!(t.add_index(IndexSpec::clustered(Field::Date)).is_err());
        assert!(t.add_index(IndexSpec::nonclustered(Field::Int)).is_err());
        assert_eq!(t.index_specs().len(), 2);
    }

    #[test]
    fn recluster_rebuilds_secondary_locators() {
        let mut t = populated(1000, 4);
        t.add_index(IndexSpec::nonclustered(Field::Text)).unwrap();
        t.recluster(Field::Date);
        let index = t.secondary_index(Field::Text).unwrap();
        let rows = t.fetch(index.entries().iter().map(|e| e.locator)).unwrap();
        assert_eq!(rows, oracle_sorted(t.scan(), Field::Text));
    }

    #[test]
    fn dump_load_round_trip() {
        let t = populated(300, 9);
        let mut bytes = Vec::new();
        t.dump(&mut bytes).unwrap();
        assert_eq!(&bytes[..4], b"PGB1");
        assert_eq!(u64::from_le_bytes(bytes[4..12].try_into().unwrap()), 300);
        assert_eq!(bytes.len(), 12 + t.encoded_heap().len());
        let loaded = Table::load(bytes.as_slice()).unwrap();
        assert_eq!(loaded.scan(), t.scan());
    }

    #[test]
    fn load_rejects_bad_dumps() {
        let t = populated(3, 9);
        let mut bytes = Vec::new();
        t.dump(&mut bytes).unwrap();
        assert!(Table::from_dump_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut wrong_count = bytes.clone();
        wrong_count[4] = 2;
        assert!(Table::from_dump_bytes(&wrong_count).is_err());
        let mut huge_count = bytes.clone();
        huge_count[4..12].copy_from_slice(&u64::MAX.to_le_bytes());
        assert!(Table::from_dump_bytes(&huge_count).is_err());
        assert!(Table::from_dump_bytes(b"PGB2\0\0\0\0\0\0\0\0").is_err());
        assert_eq!(
            Table::from_dump_bytes(b"PGB1\0\0\0\0\0\0\0\0")
                .unwrap()
                .row_count(),
            0
        );
    }
}

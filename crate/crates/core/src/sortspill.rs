//! Memory-budgeted sort with a real external merge when the working set does
//! not fit.
//!
//! The spill predicate is conservative: a sort of `n` records is assumed to
//! need `n * width` bytes, where `width` is the maximal encoded record size
//! (69 bytes for a row). Over budget, the input is cut into runs of
//! `budget / width` records. Each run is sorted in memory and appended to a
//! temporary spill file owned by this call, then all runs are merged in a
//! single pass. The file is removed when the sort returns, on success or error.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering as AtomicOrdering};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{Field, FieldValue, SortKey};
use crate::row::{decode_row_prefix, Row, MAX_ROW_BYTES};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u64", into = "u64")]
pub struct MemoryBudget(u64);

impl MemoryBudget {
    pub const UNLIMITED: MemoryBudget = MemoryBudget(u64::MAX);

    /// A budget must hold at least one maximal row.
    pub fn new(bytes: u64) -> Result<Self> {
        if bytes < MAX_ROW_BYTES as u64 {
            return Err(Error::Config(format!(
                "memory budget {bytes} B is below one maximal row ({MAX_ROW_BYTES} B)"
            )));
        }
        Ok(MemoryBudget(bytes))
    }

    /// Budget that holds exactly `rows` maximal rows.
    pub fn for_rows(rows: u64) -> Result<Self> {
        MemoryBudget::new(rows.saturating_mul(MAX_ROW_BYTES as u64))
    }

    pub fn bytes(self) -> u64 {
        self.0
    }
}

impl TryFrom<u64> for MemoryBudget {
    type Error = Error;

    fn try_from(bytes: u64) -> Result<Self> {
        MemoryBudget::new(bytes)
    }
}

impl From<MemoryBudget> for u64 {
    fn from(b: MemoryBudget) -> u64 {
        b.0
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpillStats {
    pub spilled: bool,
    pub runs_written: u32,
    pub bytes_spilled: u64,
}

impl SpillStats {
    /// Combined stats of two sorts run for one request.
    pub fn merge(self, other: SpillStats) -> SpillStats {
        SpillStats {
            spilled: self.spilled || other.spilled,
            runs_written: self.runs_written + other.runs_written,
            bytes_spilled: self.bytes_spilled + other.bytes_spilled,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SortConfig {
    pub budget: MemoryBudget,
    /// Directory for spill files; the system temp dir when unset.
    pub spill_dir: Option<PathBuf>,
    /// `fsync` the spill file before merging so runs really reach the device.
    pub sync_runs: bool,
    /// Synthetic extra delay per spilled byte, for hosts whose page cache hides file I/O.
    pub spill_delay_ns_per_byte: u64,
}

impl Default for SortConfig {
    fn default() -> Self {
        SortConfig {
            budget: MemoryBudget::UNLIMITED,
            spill_dir: None,
            sync_runs: true,
            spill_delay_ns_per_byte: 0,
        }
    }
}

impl SortConfig {
    pub fn with_budget(budget: MemoryBudget) -> Self {
        SortConfig {
            budget,
            ..SortConfig::default()
        }
    }
}

/// Upper bound on the bytes needed to hold `row_count` rows.
pub fn estimate_working_set(row_count: u64) -> u64 {
    row_count.saturating_mul(MAX_ROW_BYTES as u64)
}

/// Sorts rows by `(field, id)` within `cfg.budget`, spilling when needed.
pub fn budgeted_sort(
    rows: Vec<Row>,
    field: Field,
    cfg: &SortConfig,
) -> Result<(Vec<Row>, SpillStats)> {
    external_sort(rows, MAX_ROW_BYTES, field, cfg)
}

/// Maximal encoded width of a spilled `(value, id)` key of `field`.
pub fn key_width(field: Field) -> usize {
    1 + 4 + field.max_value_width()
}

/// Sorts a key column within `cfg.budget`; keys are narrower than rows so
/// more of them fit.
pub fn budgeted_sort_keys(
    keys: Vec<SortKey>,
    field: Field,
    cfg: &SortConfig,
) -> Result<(Vec<SortKey>, SpillStats)> {
    external_sort(keys, key_width(field), field, cfg)
}

/// `(value, id)` of a field with 32-bit values, packed into one integer
/// whose unsigned order equals the `(value, id)` order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ScalarKey(u64);

pub const SCALAR_KEY_BYTES: usize = 8;

impl ScalarKey {
    /// `None` for fields whose values do not fit in 32 bits (text, date).
    pub fn of(field: Field, row: &Row) -> Option<ScalarKey> {
        let value = match field {
            Field::Id => row.id,
            Field::Int => row.int_field,
            Field::Bool => row.bool_field as i32,
            Field::Text | Field::Date => return None,
        };
        // Flipping the sign bit maps i32 order onto u32 order; ids are positive.
        let biased = (value as u32 ^ 0x8000_0000) as u64;
        Some(ScalarKey(biased << 32 | row.id as u32 as u64))
    }

    pub fn id(self) -> i32 {
        self.0 as u32 as i32
    }

    fn value(self) -> i32 {
        ((self.0 >> 32) as u32 ^ 0x8000_0000) as i32
    }

    pub fn to_sort_key(self, field: Field) -> SortKey {
        let value = match field {
            Field::Id | Field::Int => FieldValue::Int(self.value()),
            Field::Bool => FieldValue::Bool(self.value() != 0),
            Field::Text | Field::Date => unreachable!("{field} keys are never scalar"),
        };
        SortKey {
            value,
            id: self.id(),
        }
    }
}

/// Sorts a scalar key column within `cfg.budget`.
pub fn budgeted_sort_scalar_keys(
    keys: Vec<ScalarKey>,
    field: Field,
    cfg: &SortConfig,
) -> Result<(Vec<ScalarKey>, SpillStats)> {
    external_sort(keys, SCALAR_KEY_BYTES, field, cfg)
}

pub(crate) trait SpillRecord: Sized {
    fn compare_by(&self, other: &Self, field: Field) -> Ordering;
    fn encode_into(&self, out: &mut Vec<u8>, field: Field);
    fn decode_prefix(bytes: &[u8], field: Field) -> Result<(Self, usize)>;
}

impl SpillRecord for ScalarKey {
    fn compare_by(&self, other: &Self, _field: Field) -> Ordering {
        self.cmp(other)
    }

    fn encode_into(&self, out: &mut Vec<u8>, _field: Field) {
        out.extend_from_slice(&self.0.to_le_bytes());
    }

    fn decode_prefix(bytes: &[u8], _field: Field) -> Result<(Self, usize)> {
        let raw = bytes
            .get(..SCALAR_KEY_BYTES)
            .ok_or_else(|| Error::Internal("corrupt spilled key".into()))?;
        Ok((
            ScalarKey(u64::from_le_bytes(raw.try_into().unwrap())),
            SCALAR_KEY_BYTES,
        ))
    }
}

impl SpillRecord for Row {
    fn compare_by(&self, other: &Self, field: Field) -> Ordering {
        field.compare(self, other)
    }

    fn encode_into(&self, out: &mut Vec<u8>, _field: Field) {
        Row::encode_into(self, out)
    }

    fn decode_prefix(bytes: &[u8], _field: Field) -> Result<(Self, usize)> {
        decode_row_prefix(bytes)
    }
}

impl SpillRecord for SortKey {
    fn compare_by(&self, other: &Self, _field: Field) -> Ordering {
        self.cmp(other)
    }

    fn encode_into(&self, out: &mut Vec<u8>, _field: Field) {
        let tag = match &self.value {
            FieldValue::Int(_) => 0u8,
            FieldValue::Text(_) => 1,
            FieldValue::Bool(_) => 2,
            FieldValue::Date(_) => 3,
        };
        out.push(tag);
        out.extend_from_slice(&self.id.to_le_bytes());
        match &self.value {
            FieldValue::Int(v) => out.extend_from_slice(&v.to_le_bytes()),
            FieldValue::Text(s) => {
                out.extend_from_slice(&(s.len() as u16).to_le_bytes());
                out.extend_from_slice(s.as_bytes());
            }
            FieldValue::Bool(b) => out.push(*b as u8),
            FieldValue::Date(d) => out.extend_from_slice(&d.to_le_bytes()),
        }
    }

    fn decode_prefix(bytes: &[u8], _field: Field) -> Result<(Self, usize)> {
        let corrupt = || Error::Internal("corrupt spilled key".into());
        let take = |from: usize, len: usize| bytes.get(from..from + len).ok_or_else(corrupt);
        let tag = *bytes.first().ok_or_else(corrupt)?;
        let id = i32::from_le_bytes(take(1, 4)?.try_into().unwrap());
        let (value, used) = match tag {
            0 => (
                FieldValue::Int(i32::from_le_bytes(take(5, 4)?.try_into().unwrap())),
                9,
            ),
            1 => {
                let len = u16::from_le_bytes(take(5, 2)?.try_into().unwrap()) as usize;
                let text = String::from_utf8(take(7, len)?.to_vec()).map_err(|_| corrupt())?;
                (FieldValue::Text(text), 7 + len)
            }
            2 => (FieldValue::Bool(take(5, 1)?[0] != 0), 6),
            3 => (
                FieldValue::Date(i64::from_le_bytes(take(5, 8)?.try_into().unwrap())),
                13,
            ),
            _ => return Err(corrupt()),
        };
        Ok((SortKey { value, id }, used))
    }
}

static SPILL_TOKEN: AtomicU64 = AtomicU64::new(0);

pub(crate) fn external_sort<T: SpillRecord>(
    mut items: Vec<T>,
    width: usize,
    field: Field,
    cfg: &SortConfig,
) -> Result<(Vec<T>, SpillStats)> {
    let working_set = (items.len() as u64).saturating_mul(width as u64);
    if working_set <= cfg.budget.bytes() {
        items.sort_unstable_by(|a, b| a.compare_by(b, field));
        return Ok((items, SpillStats::default()));
    }

    let run_len = ((cfg.budget.bytes() / width as u64) as usize).max(1);
    let total = items.len();
    let token = format!(
        "pgb-spill-{}-{}-",
        std::process::id(),
        SPILL_TOKEN.fetch_add(1, AtomicOrdering::Relaxed)
    );
    let mut builder = tempfile::Builder::new();
    builder.prefix(&token).suffix(".run");
    let spill = match &cfg.spill_dir {
        Some(dir) => builder.tempfile_in(dir),
        None => builder.tempfile(),
    }
    .map_err(Error::Spill)?;

    let mut runs = Vec::with_capacity(total.div_ceil(run_len));
    let mut offset = 0u64;
    {
        let mut out = BufWriter::with_capacity(1 << 16, spill.as_file());
        let mut buf = Vec::with_capacity(run_len.min(total) * width);
        for chunk in items.chunks_mut(run_len) {
            chunk.sort_unstable_by(|a, b| a.compare_by(b, field));
            buf.clear();
            for item in chunk.iter() {
                item.encode_into(&mut buf, field);
            }
            out.write_all(&buf).map_err(Error::Spill)?;
            runs.push((offset, offset + buf.len() as u64));
            offset += buf.len() as u64;
        }
        out.flush().map_err(Error::Spill)?;
    }
    drop(items);
    if cfg.sync_runs {
        spill.as_file().sync_data().map_err(Error::Spill)?;
    }
    if cfg.spill_delay_ns_per_byte > 0 {
        std::thread::sleep(Duration::from_nanos(
            offset.saturating_mul(cfg.spill_delay_ns_per_byte),
        ));
    }

    let file = spill.as_file();
    let buf_cap = (2 * width).max(8 * 1024);
    let mut cursors: Vec<RunCursor> = runs
        .iter()
        .map(|&(start, end)| RunCursor::new(start, end, buf_cap))
        .collect();
    let mut heap = BinaryHeap::with_capacity(cursors.len());
    for (run, cursor) in cursors.iter_mut().enumerate() {
        if let Some(item) = cursor.next::<T>(file, width, field)? {
            heap.push(MergeHead { item, run, field });
        }
    }
    let mut merged = Vec::with_capacity(total);
    while let Some(MergeHead { item, run, .. }) = heap.pop() {
        merged.push(item);
        if let Some(next) = cursors[run].next::<T>(file, width, field)? {
            heap.push(MergeHead {
                item: next,
                run,
                field,
            });
        }
    }
    if merged.len() != total {
        return Err(Error::Internal(format!(
            "merge produced {} of {total} records",
            merged.len()
        )));
    }
    let stats = SpillStats {
        spilled: true,
        runs_written: runs.len() as u32,
        bytes_spilled: offset,
    };
    spill.close().map_err(Error::Spill)?;
    Ok((merged, stats))
}

struct MergeHead<T> {
    item: T,
    run: usize,
    field: Field,
}

impl<T: SpillRecord> Ord for MergeHead<T> {
    // reversed: BinaryHeap is a max-heap
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .item
            .compare_by(&self.item, self.field)
            .then(other.run.cmp(&self.run))
    }
}

impl<T: SpillRecord> PartialOrd for MergeHead<T> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<T: SpillRecord> PartialEq for MergeHead<T> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl<T: SpillRecord> Eq for MergeHead<T> {}

/// Sequential reader over one run's byte range of the shared spill file.
struct RunCursor {
    pos: u64,
    end: u64,
    buf: Vec<u8>,
    start: usize,
    len: usize,
}

impl RunCursor {
    fn new(pos: u64, end: u64, cap: usize) -> Self {
        RunCursor {
            pos,
            end,
            buf: vec![0; cap],
            start: 0,
            len: 0,
        }
    }

    fn next<T: SpillRecord>(
        &mut self,
        file: &File,
        width: usize,
        field: Field,
    ) -> Result<Option<T>> {
        if self.len - self.start < width && self.pos < self.end {
            self.buf.copy_within(self.start..self.len, 0);
            self.len -= self.start;
            self.start = 0;
            while self.len < self.buf.len() && self.pos < self.end {
                let want = (self.buf.len() - self.len).min((self.end - self.pos) as usize);
                let got = read_at(file, &mut self.buf[self.len..self.len + want], self.pos)
                    .map_err(Error::Spill)?;
                if got == 0 {
                    return Err(Error::Spill(io::Error::new(
                        io::ErrorKind::UnexpectedEof,
                        "spill file truncated",
                    )));
                }
                self.len += got;
                self.pos += got as u64;
            }
        }
        if self.start == self.len {
            return Ok(None);
        }
        let (item, used) = T::decode_prefix(&self.buf[self.start..self.len], field)?;
        self.start += used;
        Ok(Some(item))
    }
}

#[cfg(unix)]
fn read_at(file: &File, buf: &mut [u8], offset: u64) -> io::Result<usize> {
    std::os::unix::fs::FileExt::read_at(file, buf, offset)
}

#[cfg(windows)]
fn read_at(file: &File, buf: &mut [u8], offset: u64) -> io::Result<usize> {
    std::os::windows::fs::FileExt::seek_read(file, buf, offset)
}

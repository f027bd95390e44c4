//! The three pagination strategies plus a reference implementation.
//!
//! All four return the same rows for the same request; they differ in how much
//! of the table they touch, sort, and ship across tiers:
//!
//! - [`adb_page`] fetches every row, sorts on the application tier, slices one page.
//! - [`seek_page`] finds the last key of the skipped prefix, then selects and
//!   orders the whole suffix after it before taking one page.
//! - [`two_phase_page`] reads one page of keys from an ordered access path into a
//!   small buffer, then fetches only those rows.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{Field, SeekBound};
use crate::index::AccessPath;
use crate::row::Row;
use crate::sortspill::{
    budgeted_sort, budgeted_sort_keys, budgeted_sort_scalar_keys, ScalarKey, SortConfig, SpillStats,
};
use crate::table::Table;

pub const DEFAULT_PAGE_SIZE: u32 = 10;

/// How many rows the seek strategies skip before page `k`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SkipMode {
    /// `page_size * (k - 1)`: page `k` holds rows `[(k-1)s, ks)`.
    #[default]
    Corrected,
    /// `page_size * k` for `k > 1`, exactly as the original procedure computes
    /// it. Page 2 is unreachable and every later page is shifted by one.
    Faithful,
}

impl SkipMode {
    pub fn code(self) -> u8 {
        match self {
            SkipMode::Corrected => 0,
            SkipMode::Faithful => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<SkipMode> {
        match code {
            0 => Some(SkipMode::Corrected),
            1 => Some(SkipMode::Faithful),
            _ => None,
        }
    }
}

impl FromStr for SkipMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "corrected" => Ok(SkipMode::Corrected),
            "faithful" => Ok(SkipMode::Faithful),
            _ => Err(Error::Config(format!("unknown skip mode {s:?}"))),
        }
    }
}

impl fmt::Display for SkipMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SkipMode::Corrected => "corrected",
            SkipMode::Faithful => "faithful",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PageRequest {
    pub sort_field: Field,
    pub page_number: u32,
    pub page_size: u32,
    pub skip_mode: SkipMode,
}

impl PageRequest {
    pub fn new(sort_field: Field, page_number: u32, page_size: u32) -> Result<Self> {
        let req = PageRequest {
            sort_field,
            page_number,
            page_size,
            skip_mode: SkipMode::Corrected,
        };
        req.validate()?;
        Ok(req)
    }

    pub fn with_skip_mode(mut self, skip_mode: SkipMode) -> Self {
        self.skip_mode = skip_mode;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.page_number == 0 {
            return Err(Error::Config("page_number must be at least 1".into()));
        }
        if self.page_size == 0 {
            return Err(Error::Config("page_size must be at least 1".into()));
        }
        Ok(())
    }

    /// First row of the page in the total order; what an offset-based pager skips.
    pub fn offset(&self) -> u64 {
        self.page_size as u64 * (self.page_number as u64 - 1)
    }

    /// Rows the seek strategies skip to find the last key, per `skip_mode`.
    pub fn rows_to_skip(&self) -> u64 {
        match (self.page_number, self.skip_mode) {
            (1, _) => 0,
            (_, SkipMode::Corrected) => self.offset(),
            (k, SkipMode::Faithful) => self.page_size as u64 * k as u64,
        }
    }
}

/// Number of pages of `page_size` rows in a table of `rows` rows.
pub fn page_count(rows: u64, page_size: u32) -> u64 {
    rows.div_ceil(page_size.max(1) as u64)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostReport {
    pub rows_fetched_from_store: u64,
    pub bytes_crossing_tiers: u64,
    pub spill: SpillStats,
    pub elapsed_ns: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PageResult {
    pub rows: Vec<Row>,
    pub cost: CostReport,
}

fn encoded_bytes(rows: &[Row]) -> u64 {
    rows.iter().map(|r| r.encoded_len() as u64).sum()
}

fn page_slice(mut sorted: Vec<Row>, offset: u64, size: u32) -> Vec<Row> {
    let start = (offset.min(sorted.len() as u64)) as usize;
    let end = start.saturating_add(size as usize).min(sorted.len());
    sorted.truncate(end);
    sorted.drain(..start);
    sorted
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Adb,
    Seek,
    TwoPhase,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [Strategy::Adb, Strategy::Seek, Strategy::TwoPhase];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Adb => "adb",
            Strategy::Seek => "seek",
            Strategy::TwoPhase => "two_phase",
        }
    }

    /// Whether the strategy can serve `field` on this table.
    pub fn applicable(self, table: &Table, field: Field) -> bool {
        match self {
            Strategy::TwoPhase => table.access_path(field).is_some(),
            _ => true,
        }
    }

    pub fn execute(self, table: &Table, req: &PageRequest, cfg: &SortConfig) -> Result<PageResult> {
        match self {
            Strategy::Adb => adb_page(table, req, cfg),
            Strategy::Seek => seek_page(table, req, cfg),
            Strategy::TwoPhase => two_phase_page(table, req),
        }
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "adb" => Ok(Strategy::Adb),
            "seek" | "keyset" => Ok(Strategy::Seek),
            "two_phase" | "twophase" => Ok(Strategy::TwoPhase),
            _ => Err(Error::Config(format!("unknown strategy {s:?}"))),
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Reference pager: full in-memory sort with unlimited memory, then slice.
pub fn oracle_page(table: &Table, req: &PageRequest) -> Result<PageResult> {
    req.validate()?;
    let started = Instant::now();
    let mut all = table.scan().to_vec();
    let field = req.sort_field;
    all.sort_by_cached_key(|r| field.key(r));
    let rows = page_slice(all, req.offset(), req.page_size);
    Ok(PageResult {
        cost: CostReport {
            rows_fetched_from_store: table.row_count() as u64,
            bytes_crossing_tiers: encoded_bytes(&rows),
            spill: SpillStats::default(),
            elapsed_ns: started.elapsed().as_nanos() as u64,
        },
        rows,
    })
}

/// Fetch everything, sort on the application tier within the budget, slice.
pub fn adb_page(table: &Table, req: &PageRequest, cfg: &SortConfig) -> Result<PageResult> {
    req.validate()?;
    let started = Instant::now();
    let all = table.scan().to_vec();
    let fetched = all.len() as u64;
    let shipped = encoded_bytes(&all);
    let (sorted, spill) = budgeted_sort(all, req.sort_field, cfg)?;
    let rows = page_slice(sorted, req.offset(), req.page_size);
    Ok(PageResult {
        rows,
        cost: CostReport {
            rows_fetched_from_store: fetched,
            bytes_crossing_tiers: shipped,
            spill,
            elapsed_ns: started.elapsed().as_nanos() as u64,
        },
    })
}

/// Finds the key after which the requested page starts.
///
/// With an ordered access path this is a positional lookup. Without one the
/// whole key column is sorted under the memory budget.
fn last_key(table: &Table, req: &PageRequest, cfg: &SortConfig) -> Result<(SeekBound, SpillStats)> {
    let skip = req.rows_to_skip();
    let n = table.row_count() as u64;
    if skip == 0 || n == 0 {
        return Ok((SeekBound::Start, SpillStats::default()));
    }
    // Skipping past the end leaves the largest key, so the page comes back empty.
    let rank = (skip.min(n) - 1) as usize;
    let field = req.sort_field;
    match table.access_path(field) {
        Some(path) => Ok((SeekBound::After(path.nth_key(rank)?), SpillStats::default())),
        None if ScalarKey::of(field, &table.scan()[0]).is_none() => {
            let keys = table.scan().iter().map(|r| field.key(r)).collect();
            let (mut sorted, spill) = budgeted_sort_keys(keys, field, cfg)?;
            Ok((SeekBound::After(sorted.swap_remove(rank)), spill))
        }
        None => {
            let keys = table
                .scan()
                .iter()
                .filter_map(|r| ScalarKey::of(field, r))
                .collect();
            let (sorted, spill) = budgeted_sort_scalar_keys(keys, field, cfg)?;
            Ok((SeekBound::After(sorted[rank].to_sort_key(field)), spill))
        }
    }
}

/// Keyset pagination: locate the last skipped key, then select every row after
/// it in order and keep the first page.
///
/// Only a clustered order yields the suffix already sorted. Through a
/// non-clustered index every suffix row is joined back from the heap and the
/// joined set is sorted under the budget; without any index the suffix is
/// filtered out of a full scan and sorted the same way.
pub fn seek_page(table: &Table, req: &PageRequest, cfg: &SortConfig) -> Result<PageResult> {
    req.validate()?;
    let started = Instant::now();
    let field = req.sort_field;
    let (bound, phase1_spill) = last_key(table, req, cfg)?;

    let (rows, fetched, phase2_spill) = match table.access_path(field) {
        Some(AccessPath::Clustered { .. }) => {
            let path = table.access_path(field).expect("clustered path");
            let start = path.position_after(&bound);
            let end = start
                .saturating_add(req.page_size as usize)
                .min(table.row_count());
            let rows = table.scan()[start..end].to_vec();
            let fetched = rows.len() as u64;
            (rows, fetched, SpillStats::default())
        }
        Some(path @ AccessPath::Secondary(_)) => {
            let joined = table.fetch(path.locators_after(&bound))?;
            let fetched = joined.len() as u64;
            let (mut sorted, spill) = budgeted_sort(joined, field, cfg)?;
            sorted.truncate(req.page_size as usize);
            (sorted, fetched, spill)
        }
        None => {
            let suffix: Vec<Row> = table
                .scan()
                .iter()
                .filter(|r| bound.admits(field, r))
                .cloned()
                .collect();
            let fetched = suffix.len() as u64;
            let (mut sorted, spill) = budgeted_sort(suffix, field, cfg)?;
            sorted.truncate(req.page_size as usize);
            (sorted, fetched, spill)
        }
    };

    Ok(PageResult {
        cost: CostReport {
            rows_fetched_from_store: fetched,
            bytes_crossing_tiers: encoded_bytes(&rows),
            spill: phase1_spill.merge(phase2_spill),
            elapsed_ns: started.elapsed().as_nanos() as u64,
        },
        rows,
    })
}

/// Two-phase pagination: read one page of `(key, locator)` pairs from the
/// access path into a key buffer without touching the heap, then fetch just
/// those rows.
pub fn two_phase_page(table: &Table, req: &PageRequest) -> Result<PageResult> {
    req.validate()?;
    let started = Instant::now();
    let field = req.sort_field;
    let path = table.access_path(field).ok_or_else(|| {
        Error::Precondition(format!(
            "two-phase paging needs a clustered or non-clustered index on {field}"
        ))
    })?;
    // Phase 1 never sorts when an access path exists.
    let (bound, _) = last_key(table, req, &SortConfig::default())?;
    let key_buffer = path.seek_gt(&bound, req.page_size as usize);
    let rows = table.fetch(key_buffer.iter().map(|e| e.locator))?;
    Ok(PageResult {
        cost: CostReport {
            rows_fetched_from_store: rows.len() as u64,
            bytes_crossing_tiers: encoded_bytes(&rows),
            spill: SpillStats::default(),
            elapsed_ns: started.elapsed().as_nanos() as u64,
        },
        rows,
    })
}

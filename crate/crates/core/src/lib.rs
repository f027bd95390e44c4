pub mod bench;
pub mod error;
pub mod field;
pub mod index;
pub mod loadgen;
pub mod matrix;
pub mod row;
pub mod sortspill;
pub mod strategy;
pub mod table;
pub mod transport;
pub mod wire;

pub use bench::{
    histogram, peak_count, run_matrix, run_scenario, Histogram, IndexConfig, LatencySample,
    MatrixOptions, MatrixReport, PageDistribution, ScenarioConfig,
};
pub use error::{Error, Result};
pub use field::{Field, FieldValue, SeekBound, SortKey};
pub use index::{build_index, AccessPath, IndexEntry, IndexKind, IndexSpec, OrderedIndex};
pub use loadgen::{compare_reports, run_load, LoadProfile, LoadReport, LoadRequest, LoadTarget};
pub use matrix::parse_matrix;
pub use row::{decode_row, encode_row, Row, MAX_ROW_BYTES, MIN_ROW_BYTES};
pub use sortspill::{
    budgeted_sort, estimate_working_set, MemoryBudget, ScalarKey, SortConfig, SpillStats,
};
pub use strategy::{
    adb_page, oracle_page, page_count, seek_page, two_phase_page, CostReport, PageRequest,
    PageResult, SkipMode, Strategy, DEFAULT_PAGE_SIZE,
};
pub use table::{create_table, RowLocator, Table};
pub use transport::{serve, Client, LinkMode, LinkModel, LocalSource, PageSource, ServerHandle};
pub use wire::{Message, Opcode, WireMessage};

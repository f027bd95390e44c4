//! Options shared by every subcommand, merged from defaults, an optional
//! TOML config file and command-line flags (flags win).

use std::path::{Path, PathBuf};

use clap::Args;
use pagebench::{Field, SkipMode, Strategy};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Settings {
    /// Number of table rows.
    #[arg(long)]
    pub rows: Option<u64>,
    /// Seed for table data and page sequences.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Field the table is physically ordered by.
    #[arg(long)]
    pub cluster: Option<Field>,
    /// Field carrying a non-clustered index; repeatable.
    #[arg(long = "index")]
    #[serde(rename = "index")]
    pub indices: Vec<Field>,
    /// Sort memory budget in bytes.
    #[arg(long)]
    pub budget_bytes: Option<u64>,
    /// Skip arithmetic for seek paging.
    #[arg(long)]
    pub skip_mode: Option<SkipMode>,
    /// Address the store server binds.
    #[arg(long)]
    pub listen: Option<String>,
    /// Store server to run against instead of an in-process table.
    #[arg(long)]
    pub connect: Option<String>,
    /// Scenario matrix file, or a preset name (`full`, `desk`).
    #[arg(long)]
    pub matrix: Option<String>,
    /// Output path: a file for `gen`, a directory otherwise.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Divides load-test durations; 60 runs minutes as seconds.
    #[arg(long)]
    pub time_scale: Option<f64>,
    /// Pagination strategy; repeatable for `loadtest`.
    #[arg(long = "strategy")]
    #[serde(rename = "strategy")]
    pub strategies: Vec<Strategy>,
    /// Sort field.
    #[arg(long)]
    pub field: Option<Field>,
    /// Timed requests per scenario
    #[arg(long)]
    pub trials: Option<u32>,
    /// Rows per page
    #[arg(long)]
    pub page_size: Option<u32>,
    /// Fixed page number; uniform random pages when absent.
    #[arg(long)]
    pub page: Option<u32>,
    /// Histogram bins
    #[arg(long)]
    pub bins: Option<u32>,
    /// Untimed requests before timing
    #[arg(long)]
    pub warmup: Option<u32>,
    /// Results directory or samples.csv to summarize.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Table dump to serve instead of generating one.
    #[arg(long)]
    pub table: Option<PathBuf>,
    /// Directory for spill files.
    #[arg(long)]
    pub spill_dir: Option<PathBuf>,
    /// Skip fsync of spill files.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub no_sync: Option<bool>,
    /// Run matrix scenarios concurrently.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub parallel: Option<bool>,
    /// Virtual users in the first interval
    #[arg(long)]
    pub initial_users: Option<u32>,
    /// Users added each interval
    #[arg(long)]
    pub step_users: Option<u32>,
    /// Number of ramp intervals.
    #[arg(long)]
    pub intervals: Option<u32>,
}

impl Settings {
    pub fn from_file(path: &Path) -> Result<Settings, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text)
            .map_err(|e| CliError::Config(format!("config {}: {e}", path.display())))
    }

    /// Fields set in `self` take precedence over `base`.
    pub fn over(self, base: Settings) -> Settings {
        fn pick<T>(a: Option<T>, b: Option<T>) -> Option<T> {
            a.or(b)
        }
        fn pick_vec<T>(a: Vec<T>, b: Vec<T>) -> Vec<T> {
            if a.is_empty() {
                b
            } else {
                a
            }
        }
        Settings {
            rows: pick(self.rows, base.rows),
            seed: pick(self.seed, base.seed),
            cluster: pick(self.cluster, base.cluster),
            indices: pick_vec(self.indices, base.indices),
            budget_bytes: pick(self.budget_bytes, base.budget_bytes),
            skip_mode: pick(self.skip_mode, base.skip_mode),
            listen: pick(self.listen, base.listen),
            connect: pick(self.connect, base.connect),
            matrix: pick(self.matrix, base.matrix),
            out: pick(self.out, base.out),
            time_scale: pick(self.time_scale, base.time_scale),
            strategies: pick_vec(self.strategies, base.strategies),
            field: pick(self.field, base.field),
            trials: pick(self.trials, base.trials),
            page_size: pick(self.page_size, base.page_size),
            page: pick(self.page, base.page),
            bins: pick(self.bins, base.bins),
            warmup: pick(self.warmup, base.warmup),
            input: pick(self.input, base.input),
            table: pick(self.table, base.table),
            spill_dir: pick(self.spill_dir, base.spill_dir),
            no_sync: pick(self.no_sync, base.no_sync),
            parallel: pick(self.parallel, base.parallel),
            initial_users: pick(self.initial_users, base.initial_users),
            step_users: pick(self.step_users, base.step_users),
            intervals: pick(self.intervals, base.intervals),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_file_values() {
        let file: Settings = toml::from_str(
            r#"
            rows = 500
            seed = 9
            index = ["ID", "TextField"]
            strategy = ["seek"]
            "#,
        )
        .unwrap();
        let flags = Settings {
            rows: Some(1000),
            ..Settings::default()
        };
        let merged = flags.over(file);
        assert_eq!(merged.rows, Some(1000));
        assert_eq!(merged.seed, Some(9));
        assert_eq!(merged.indices, vec![Field::Id, Field::Text]);
        assert_eq!(merged.strategies, vec![Strategy::Seek]);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<Settings>("colour = 3").is_err());
        assert!(toml::from_str::<Settings>("field = \"Colour\"").is_err());
    }
}

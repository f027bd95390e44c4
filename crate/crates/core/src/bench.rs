//! Scenario runner: repeated timed page requests, histograms and CSV output.

use std::collections::HashMap;
use std::fmt;
use std::io::Write;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::Field;
use crate::index::IndexSpec;
use crate::sortspill::{MemoryBudget, SortConfig};
use crate::strategy::{page_count, CostReport, PageRequest, SkipMode, Strategy, DEFAULT_PAGE_SIZE};
use crate::table::Table;
use crate::transport::{LinkModel, LocalSource, PageSource};

pub const DEFAULT_TRIALS: u32 = 500;
pub const DEFAULT_BINS: u32 = 10;
pub const DEFAULT_WARMUP: u32 = 5;

/// Physical design of the benchmark table.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct IndexConfig {
    pub cluster: Option<Field>,
    pub nonclustered: Vec<Field>,
}

impl IndexConfig {
    pub fn none() -> Self {
        IndexConfig::default()
    }

    pub fn nonclustered(fields: &[Field]) -> Self {
        IndexConfig {
            cluster: None,
            nonclustered: fields.to_vec(),
        }
        .normalized()
    }

    pub fn clustered(field: Field, nonclustered: &[Field]) -> Self {
        IndexConfig {
            cluster: Some(field),
            nonclustered: nonclustered.to_vec(),
        }
        .normalized()
    }

    fn normalized(mut self) -> Self {
        self.nonclustered.sort();
        self.nonclustered.dedup();
        self
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = self.nonclustered.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.nonclustered.len() {
            return Err(Error::Config("duplicate non-clustered index".into()));
        }
        if let Some(c) = self.cluster {
            if self.nonclustered.contains(&c) {
                return Err(Error::Config(format!(
                    "{c} is the clustered field and cannot also carry a non-clustered index"
                )));
            }
        }
        Ok(())
    }

    /// True when `field` has a clustered order or a secondary index.
    pub fn covers(&self, field: Field) -> bool {
        self.cluster == Some(field) || self.nonclustered.contains(&field)
    }

    pub fn build_table(&self, rows: u64, seed: u64) -> Result<Table> {
        self.validate()?;
        let n = usize::try_from(rows)
            .map_err(|_| Error::Config(format!("row count {rows} too large")))?;
        let mut table = Table::new(self.cluster);
        table.populate(n, seed)?;
        for &f in &self.nonclustered {
            table.add_index(IndexSpec::nonclustered(f))?;
        }
        Ok(table)
    }
}

impl fmt::Display for IndexConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let nc: Vec<&str> = self.nonclustered.iter().map(|f| f.name()).collect();
        match (self.cluster, nc.is_empty()) {
            (None, true) => f.write_str("none"),
            (None, false) => write!(f, "nc:{}", nc.join("+")),
            (Some(c), true) => write!(f, "cl:{c}"),
            (Some(c), false) => write!(f, "cl:{c};nc:{}", nc.join("+")),
        }
    }
}

/// Which page each trial requests.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "PageSpec", into = "PageSpec")]
pub enum PageDistribution {
    #[default]
    Uniform,
    Fixed(u32),
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum PageSpec {
    Fixed(u32),
    Named(String),
}

impl TryFrom<PageSpec> for PageDistribution {
    type Error = Error;

    fn try_from(spec: PageSpec) -> Result<Self> {
        match spec {
            PageSpec::Fixed(0) => Err(Error::Config("page numbers start at 1".into())),
            PageSpec::Fixed(p) => Ok(PageDistribution::Fixed(p)),
            PageSpec::Named(s) if s.eq_ignore_ascii_case("uniform") => {
                Ok(PageDistribution::Uniform)
            }
            PageSpec::Named(s) => Err(Error::Config(format!(
                "page distribution {s:?}: expected \"uniform\" or a page number"
            ))),
        }
    }
}

impl From<PageDistribution> for PageSpec {
    fn from(d: PageDistribution) -> PageSpec {
        match d {
            PageDistribution::Uniform => PageSpec::Named("uniform".into()),
            PageDistribution::Fixed(p) => PageSpec::Fixed(p),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: Option<String>,
    pub rows: u64,
    pub seed: u64,
    pub cluster: Option<Field>,
    pub indices: Vec<Field>,
    pub strategy: Strategy,
    pub sort_field: Field,
    pub page_size: u32,
    pub page: PageDistribution,
    pub skip_mode: SkipMode,
    pub trials: u32,
    pub bins: u32,
    pub warmup: u32,
    pub budget_bytes: MemoryBudget,
    pub sync_runs: bool,
    pub link: Option<LinkModel>,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            name: None,
            rows: 10_000,
            seed: 42,
            cluster: None,
            indices: Vec::new(),
            strategy: Strategy::Seek,
            sort_field: Field::Id,
            page_size: DEFAULT_PAGE_SIZE,
            page: PageDistribution::Uniform,
            skip_mode: SkipMode::Corrected,
            trials: DEFAULT_TRIALS,
            bins: DEFAULT_BINS,
            warmup: DEFAULT_WARMUP,
            budget_bytes: MemoryBudget::UNLIMITED,
            sync_runs: true,
            link: None,
        }
    }
}

impl ScenarioConfig {
    pub fn index_config(&self) -> IndexConfig {
        IndexConfig {
            cluster: self.cluster,
            nonclustered: self.indices.clone(),
        }
    }

    pub fn id(&self) -> String {
        match &self.name {
            Some(name) => name.clone(),
            None => format!(
                "{}-{}-{}-n{}",
                self.strategy,
                self.sort_field,
                self.index_config(),
                self.rows
            ),
        }
    }

    pub fn sort_config(&self) -> SortConfig {
        SortConfig {
            budget: self.budget_bytes,
            sync_runs: self.sync_runs,
            ..SortConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::Config("trials must be at least 1".into()));
        }
        if self.bins == 0 {
            return Err(Error::Config("bins must be at least 1".into()));
        }
        if self.page_size == 0 {
            return Err(Error::Config("page_size must be at least 1".into()));
        }
        if self.rows > i32::MAX as u64 {
            return Err(Error::Config(format!(
                "row count {} exceeds id range",
                self.rows
            )));
        }
        if let PageDistribution::Fixed(0) = self.page {
            return Err(Error::Config("page numbers start at 1".into()));
        }
        if let Some(link) = &self.link {
            link.validate()?;
        }
        let indices = self.index_config();
        indices.validate()?;
        if self.strategy == Strategy::TwoPhase && !indices.covers(self.sort_field) {
            return Err(Error::Config(format!(
                "two_phase needs an index on {}, table has {indices}",
                self.sort_field
            )));
        }
        Ok(())
    }

    /// Page numbers requested by each trial, reproducible from the seed.
    pub fn page_plan(&self) -> Vec<u32> {
        let pages = page_count(self.rows, self.page_size).clamp(1, u32::MAX as u64) as u32;
        match self.page {
            PageDistribution::Fixed(p) => vec![p; self.trials as usize],
            PageDistribution::Uniform => {
                let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
                (0..self.trials).map(|_| rng.gen_range(1..=pages)).collect()
            }
        }
    }
}

/// One timed request.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LatencySample {
    pub scenario: String,
    pub trial: u32,
    pub page: u32,
    pub elapsed_ns: u64,
    pub cost: CostReport,
}

/// Builds the table and times `cfg.trials` requests against it.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<Vec<LatencySample>> {
    cfg.validate()?;
    let table = Arc::new(cfg.index_config().build_table(cfg.rows, cfg.seed)?);
    run_scenario_on(cfg, table)
}

/// Times `cfg` against an already built table, which must match the scenario.
pub fn run_scenario_on(cfg: &ScenarioConfig, table: Arc<Table>) -> Result<Vec<LatencySample>> {
    cfg.validate()?;
    let mut source = LocalSource::new(table, cfg.sort_config());
    if let Some(link) = cfg.link {
        source = source.with_link(link)?;
    }
    run_trials(cfg, &mut source)
}

/// Times `cfg` against any page source, e.g. a remote client.
pub fn run_trials(cfg: &ScenarioConfig, source: &mut dyn PageSource) -> Result<Vec<LatencySample>> {
    cfg.validate()?;
    let plan = cfg.page_plan();
    let request = |page: u32| {
        PageRequest::new(cfg.sort_field, page, cfg.page_size)
            .map(|r| r.with_skip_mode(cfg.skip_mode))
    };
    for i in 0..cfg.warmup as usize {
        source.page(cfg.strategy, &request(plan[i % plan.len()])?)?;
    }
    let scenario = cfg.id();
    let mut samples = Vec::with_capacity(plan.len());
    for (trial, &page) in plan.iter().enumerate() {
        let result = source.page(cfg.strategy, &request(page)?)?;
        samples.push(LatencySample {
            scenario: scenario.clone(),
            trial: trial as u32,
            page,
            elapsed_ns: result.cost.elapsed_ns.max(1),
            cost: result.cost,
        });
    }
    Ok(samples)
}

/// Equal-width histogram over `[min, max]` of the samples.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Histogram {
    pub min: u64,
    pub max: u64,
    pub counts: Vec<u64>,
}

impl Histogram {
    /// Bin boundaries; `bins + 1` values from `min` to `max`.
    pub fn edges(&self) -> Vec<f64> {
        let bins = self.counts.len();
        let width = (self.max - self.min) as f64 / bins as f64;
        (0..=bins)
            .map(|i| self.min as f64 + width * i as f64)
            .collect()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

pub fn histogram(values: &[u64], bins: u32) -> Result<Histogram> {
    if values.is_empty() {
        return Err(Error::Config("histogram of no samples".into()));
    }
    if bins == 0 {
        return Err(Error::Config("histogram needs at least one bin".into()));
    }
    let min = *values.iter().min().unwrap();
    let max = *values.iter().max().unwrap();
    let mut counts = vec![0u64; bins as usize];
    let span = (max - min) as u128;
    for &v in values {
        let bin = ((v - min) as u128 * bins as u128)
            .checked_div(span)
            .map_or(0, |b| b.min(bins as u128 - 1) as usize);
        counts[bin] += 1;
    }
    Ok(Histogram { min, max, counts })
}

/// Local maxima after merging runs of equal adjacent counts.
pub fn peak_count(hist: &Histogram) -> usize {
    peaks_of(&hist.counts)
}

pub fn peaks_of(counts: &[u64]) -> usize {
    let mut runs: Vec<u64> = Vec::with_capacity(counts.len());
    for &c in counts {
        if runs.last() != Some(&c) {
            runs.push(c);
        }
    }
    match runs.len() {
        0 => 0,
        1 => 1,
        n => (0..n)
            .filter(|&i| (i == 0 || runs[i] > runs[i - 1]) && (i + 1 == n || runs[i] > runs[i + 1]))
            .count(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Summary {
    pub mean: f64,
    pub median: u64,
    pub p95: u64,
}

/// Nearest-rank percentile, `p` in `(0, 100]`.
pub fn percentile(sorted: &[u64], p: f64) -> u64 {
    if sorted.is_empty() {
        return 0;
    }
    let rank = ((p / 100.0) * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

pub fn summarize(values: &[u64]) -> Option<Summary> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_unstable();
    let mean = sorted.iter().map(|&v| v as f64).sum::<f64>() / sorted.len() as f64;
    Some(Summary {
        mean,
        median: percentile(&sorted, 50.0),
        p95: percentile(&sorted, 95.0),
    })
}

fn ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation with average ranks for ties; `None` when undefined.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let n = rx.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let mut cov = 0.0;
    let mut vx = 0.0;
    let mut vy = 0.0;
    for (a, b) in rx.iter().zip(&ry) {
        cov += (a - mx) * (b - my);
        vx += (a - mx).powi(2);
        vy += (b - my).powi(2);
    }
    if vx == 0.0 || vy == 0.0 {
        return None;
    }
    Some(cov / (vx * vy).sqrt())
}

/// One line of the per-sample CSV.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub scenario: String,
    pub trial: u32,
    pub strategy: String,
    pub field: String,
    pub index: String,
    pub rows: u64,
    pub page: u32,
    pub elapsed_ns: u64,
    pub bytes: u64,
    pub spilled: bool,
}

/// One line of `summary.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRecord {
    pub scenario: String,
    pub strategy: String,
    pub field: String,
    pub index: String,
    pub rows: u64,
    pub trials: u32,
    pub mean_ns: Option<f64>,
    pub median_ns: Option<u64>,
    pub p95_ns: Option<u64>,
    pub peak_count: Option<usize>,
    pub mean_bytes: Option<f64>,
    pub spilled_fraction: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MatrixReport {
    pub samples: Vec<SampleRecord>,
    pub summaries: Vec<SummaryRecord>,
}

impl MatrixReport {
    pub fn failed(&self) -> usize {
        self.summaries.iter().filter(|s| s.error.is_some()).count()
    }

    pub fn write_samples_csv<W: Write>(&self, out: W) -> Result<()> {
        write_csv(out, &self.samples)
    }

    pub fn write_summary_csv<W: Write>(&self, out: W) -> Result<()> {
        write_csv(out, &self.summaries)
    }
}

fn write_csv<W: Write, T: Serialize>(out: W, records: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in records {
        w.serialize(r).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_error(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(e) => Error::Io(e),
        other => Error::Internal(format!("csv: {other:?}")),
    }
}

#[derive(Debug, Clone, Default)]
pub struct MatrixOptions {
    /// Run independent scenarios on separate threads.
    pub parallel: bool,
    pub spill_dir: Option<PathBuf>,
}

fn summarize_scenario(cfg: &ScenarioConfig, outcome: &Result<Vec<LatencySample>>) -> SummaryRecord {
    let mut record = SummaryRecord {
        scenario: cfg.id(),
        strategy: cfg.strategy.to_string(),
        field: cfg.sort_field.to_string(),
        index: cfg.index_config().to_string(),
        rows: cfg.rows,
        trials: cfg.trials,
        mean_ns: None,
        median_ns: None,
        p95_ns: None,
        peak_count: None,
        mean_bytes: None,
        spilled_fraction: None,
        error: None,
    };
    match outcome {
        Err(e) => record.error = Some(e.to_string()),
        Ok(samples) => {
            let elapsed: Vec<u64> = samples.iter().map(|s| s.elapsed_ns).collect();
            if let Some(s) = summarize(&elapsed) {
                record.mean_ns = Some(s.mean);
                record.median_ns = Some(s.median);
                record.p95_ns = Some(s.p95);
            }
            record.peak_count = histogram(&elapsed, cfg.bins).ok().map(|h| peak_count(&h));
            let n = samples.len().max(1) as f64;
            record.mean_bytes = Some(
                samples
                    .iter()
                    .map(|s| s.cost.bytes_crossing_tiers as f64)
                    .sum::<f64>()
                    / n,
            );
            record.spilled_fraction =
                Some(samples.iter().filter(|s| s.cost.spill.spilled).count() as f64 / n);
        }
    }
    record
}

fn sample_records(cfg: &ScenarioConfig, samples: &[LatencySample]) -> Vec<SampleRecord> {
    let (strategy, field, index) = (
        cfg.strategy.to_string(),
        cfg.sort_field.to_string(),
        cfg.index_config().to_string(),
    );
    samples
        .iter()
        .map(|s| SampleRecord {
            scenario: s.scenario.clone(),
            trial: s.trial,
            strategy: strategy.clone(),
            field: field.clone(),
            index: index.clone(),
            rows: cfg.rows,
            page: s.page,
            elapsed_ns: s.elapsed_ns,
            bytes: s.cost.bytes_crossing_tiers,
            spilled: s.cost.spill.spilled,
        })
        .collect()
}

/// Report rows for one scenario run outside [`run_matrix`], e.g. remotely.
pub fn report_for(cfg: &ScenarioConfig, outcome: &Result<Vec<LatencySample>>) -> MatrixReport {
    MatrixReport {
        samples: outcome
            .as_ref()
            .map(|s| sample_records(cfg, s))
            .unwrap_or_default(),
        summaries: vec![summarize_scenario(cfg, outcome)],
    }
}

type TableKey = (u64, u64, IndexConfig);

/// Runs every scenario; a failing scenario is reported in its summary row and
/// does not stop the others. Tables are built once per distinct design.
pub fn run_matrix(configs: &[ScenarioConfig], opts: &MatrixOptions) -> MatrixReport {
    let mut tables: HashMap<TableKey, Result<Arc<Table>, String>> = HashMap::new();
    for cfg in configs {
        if cfg.validate().is_err() {
            continue;
        }
        let key = (cfg.rows, cfg.seed, cfg.index_config());
        tables.entry(key).or_insert_with(|| {
            cfg.index_config()
                .build_table(cfg.rows, cfg.seed)
                .map(Arc::new)
                .map_err(|e| e.to_string())
        });
    }

    let run_one = |cfg: &ScenarioConfig| -> Result<Vec<LatencySample>> {
        cfg.validate()?;
        let key = (cfg.rows, cfg.seed, cfg.index_config());
        let table = match &tables[&key] {
            Ok(t) => t.clone(),
            Err(msg) => return Err(Error::Config(msg.clone())),
        };
        let mut sort = cfg.sort_config();
        sort.spill_dir = opts.spill_dir.clone();
        let mut source = LocalSource::new(table, sort);
        if let Some(link) = cfg.link {
            source = source.with_link(link)?;
        }
        run_trials(cfg, &mut source)
    };

    let outcomes: Vec<Result<Vec<LatencySample>>> = if opts.parallel && configs.len() > 1 {
        let slots: Vec<Mutex<Option<Result<Vec<LatencySample>>>>> =
            configs.iter().map(|_| Mutex::new(None)).collect();
        std::thread::scope(|scope| {
            for (cfg, slot) in configs.iter().zip(&slots) {
                let run_one = &run_one;
                scope.spawn(move || *slot.lock().unwrap() = Some(run_one(cfg)));
            }
        });
        slots
            .into_iter()
            .map(|s| s.into_inner().unwrap().expect("scenario thread finished"))
            .collect()
    } else {
        configs.iter().map(run_one).collect()
    };

    let mut report = MatrixReport::default();
    for (cfg, outcome) in configs.iter().zip(&outcomes) {
        report.summaries.push(summarize_scenario(cfg, outcome));
        if let Ok(samples) = outcome {
            report.samples.extend(sample_records(cfg, samples));
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(strategy: Strategy) -> ScenarioConfig {
        ScenarioConfig {
            rows: 500,
            trials: 5,
            warmup: 1,
            strategy,
            sort_field: Field::Int,
            indices: vec![Field::Int],
            sync_runs: false,
            ..ScenarioConfig::default()
        }
    }

    #[test]
    fn histogram_basics() {
        let h = histogram(&[7; 10], 10).unwrap();
        assert_eq!(h.counts[0], 10);
        assert_eq!(peak_count(&h), 1);

        let mut bimodal = vec![1_000_000u64; 100];
        bimodal.extend(vec![100_000_000u64; 100]);
        let h = histogram(&bimodal, 10).unwrap();
        assert_eq!(h.counts, vec![100, 0, 0, 0, 0, 0, 0, 0, 0, 100]);
        assert_eq!(peak_count(&h), 2);
        assert_eq!(h.edges().len(), 11);
        assert_eq!(h.total(), 200);

        assert!(histogram(&[], 10).is_err());
        assert!(histogram(&[1], 0).is_err());
    }

    #[test]
    fn peak_counting() {
        assert_eq!(peaks_of(&[1, 2, 3, 4]), 1);
        assert_eq!(peaks_of(&[9, 5, 2, 0]), 1);
        assert_eq!(peaks_of(&[5, 1, 5]), 2);
        assert_eq!(peaks_of(&[1, 4, 4, 1]), 1);
        assert_eq!(peaks_of(&[3, 3, 3]), 1);
        assert_eq!(peaks_of(&[0, 2, 0, 2, 0, 2]), 3);
        assert_eq!(peaks_of(&[]), 0);
    }

    #[test]
    fn unimodal_and_two_cluster_inputs() {
        // Deterministic quantiles of a bell shape and of two separated bells.
        let bell: Vec<u64> = (1..1000)
            .map(|i| {
                let p = i as f64 / 1000.0;
                (1_000.0 + 100.0 * (p / (1.0 - p)).ln()) as u64
            })
            .collect();
        assert_eq!(peak_count(&histogram(&bell, 10).unwrap()), 1);
        let mut two = bell.clone();
        two.extend(bell.iter().map(|v| v + 10_000));
        assert_eq!(peak_count(&histogram(&two, 10).unwrap()), 2);
    }

    #[test]
    fn percentiles_and_summary() {
        let v: Vec<u64> = (1..=100).collect();
        assert_eq!(percentile(&v, 50.0), 50);
        assert_eq!(percentile(&v, 95.0), 95);
        assert_eq!(percentile(&v, 100.0), 100);
        let s = summarize(&[3, 1, 2]).unwrap();
        assert_eq!((s.mean, s.median, s.p95), (2.0, 2, 3));
        assert!(summarize(&[]).is_none());
    }

    #[test]
    fn spearman_correlation() {
        let x = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(spearman(&x, &[10.0, 20.0, 30.0, 40.0]), Some(1.0));
        assert_eq!(spearman(&x, &[4.0, 3.0, 2.0, 1.0]), Some(-1.0));
        assert_eq!(spearman(&x, &[1.0, 1.0, 1.0, 1.0]), None);
        let tied = spearman(&[1.0, 2.0, 2.0, 3.0], &[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert!(tied > 0.9 && tied < 1.0);
    }

    #[test]
    fn page_plan_is_seeded() {
        let cfg = ScenarioConfig {
            rows: 1000,
            trials: 50,
            ..ScenarioConfig::default()
        };
        let a = cfg.page_plan();
        assert_eq!(a, cfg.page_plan());
        assert!(a.iter().all(|&p| (1..=100).contains(&p)));
        let other = ScenarioConfig {
            seed: 43,
            ..cfg.clone()
        };
        assert_ne!(a, other.page_plan());
        let fixed = ScenarioConfig {
            page: PageDistribution::Fixed(7),
            ..cfg
        };
        assert_eq!(fixed.page_plan(), vec![7; 50]);
    }

    #[test]
    fn scenario_produces_one_sample_per_trial() {
        let samples = run_scenario(&small(Strategy::TwoPhase)).unwrap();
        assert_eq!(samples.len(), 5);
        assert!(samples.iter().all(|s| s.elapsed_ns > 0));
        assert_eq!(
            samples.iter().map(|s| s.trial).collect::<Vec<_>>(),
            vec![0, 1, 2, 3, 4]
        );
    }

    #[test]
    fn validation_errors() {
        let mut cfg = small(Strategy::TwoPhase);
        cfg.indices.clear();
        assert!(matches!(run_scenario(&cfg), Err(Error::Config(_))));
        assert!(ScenarioConfig {
            trials: 0,
            ..small(Strategy::Seek)
        }
        .validate()
        .is_err());
        assert!(ScenarioConfig {
            bins: 0,
            ..small(Strategy::Seek)
        }
        .validate()
        .is_err());
        let both = ScenarioConfig {
            cluster: Some(Field::Int),
            ..small(Strategy::Seek)
        };
        assert!(both.validate().is_err());
    }

    #[test]
    fn matrix_counts_and_errors() {
        let mut configs = Vec::new();
        for rows in [300u64, 600] {
            for strategy in [Strategy::Adb, Strategy::TwoPhase] {
                configs.push(ScenarioConfig {
                    rows,
                    ..small(strategy)
                });
            }
        }
        let report = run_matrix(&configs, &MatrixOptions::default());
        assert_eq!(report.samples.len(), 20);
        assert_eq!(report.summaries.len(), 4);
        assert_eq!(report.failed(), 0);

        configs.push(ScenarioConfig {
            indices: vec![],
            ..small(Strategy::TwoPhase)
        });
        let report = run_matrix(
            &configs,
            &MatrixOptions {
                parallel: true,
                ..MatrixOptions::default()
            },
        );
        assert_eq!(report.samples.len(), 20);
        assert_eq!(report.failed(), 1);

        let mut buf = Vec::new();
        report.write_samples_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text.lines().next().unwrap(),
            "scenario,trial,strategy,field,index,rows,page,elapsed_ns,bytes,spilled"
        );
        assert_eq!(text.lines().count(), 21);
        let mut buf = Vec::new();
        report.write_summary_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 6);
    }

    #[test]
    fn scenario_config_serde() {
        let cfg: ScenarioConfig = toml::from_str(
            r#"
            rows = 1000
            strategy = "two_phase"
            sort_field = "IntField"
            cluster = "IntField"
            indices = ["ID"]
            page = 3
            budget_bytes = 6900
            "#,
        )
        .unwrap();
        assert_eq!(cfg.page, PageDistribution::Fixed(3));
        assert_eq!(cfg.budget_bytes.bytes(), 6900);
        cfg.validate().unwrap();
        assert!(toml::from_str::<ScenarioConfig>("page = \"sometimes\"").is_err());
        assert!(toml::from_str::<ScenarioConfig>("page = 0").is_err());
        assert!(toml::from_str::<ScenarioConfig>("colour = 1").is_err());
        assert!(toml::from_str::<ScenarioConfig>("budget_bytes = 10").is_err());
    }
}

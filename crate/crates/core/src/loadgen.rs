//! Closed-loop load generator with a stepped ramp of virtual users.
//!
//! Users start in groups at the beginning of each step interval and loop
//! request, await, record with no think time. Once the ramp ends no new
//! request is issued; the cool-down only drains requests already in flight.
//!
//! Response times are reported in the interval in which the request
//! completed, so every figure reflects the load it actually ran under.
//! Requests that complete during the cool-down are counted separately.

use std::cmp::Ordering;
use std::io::Write;
use std::net::SocketAddr;
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bench::{summarize, PageDistribution};
use crate::error::{Error, Result};
use crate::field::Field;
use crate::sortspill::SortConfig;
use crate::strategy::{page_count, PageRequest, SkipMode, Strategy, DEFAULT_PAGE_SIZE};
use crate::table::Table;
use crate::transport::{Client, LocalSource, PageSource};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LoadProfile {
    pub initial_users: u32,
    pub step_users: u32,
    #[serde(with = "secs")]
    pub step_interval: Duration,
    #[serde(with = "secs")]
    pub ramp_duration: Duration,
    #[serde(with = "secs")]
    pub cooldown: Duration,
    /// Divides every duration; 60 turns minutes into seconds.
    pub time_scale: f64,
}

mod secs {
    use serde::{Deserialize, Deserializer, Serializer};
    use std::time::Duration;

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(d.as_secs_f64())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        let v = f64::deserialize(d)?;
        Duration::try_from_secs_f64(v).map_err(serde::de::Error::custom)
    }
}

impl Default for LoadProfile {
    fn default() -> Self {
        LoadProfile {
            initial_users: 5,
            step_users: 15,
            step_interval: Duration::from_secs(60),
            ramp_duration: Duration::from_secs(600),
            cooldown: Duration::from_secs(120),
            time_scale: 60.0,
        }
    }
}

impl LoadProfile {
    pub fn validate(&self) -> Result<()> {
        if self.initial_users == 0 {
            return Err(Error::Config("initial_users must be positive".into()));
        }
        if self.step_interval.is_zero() || self.ramp_duration.is_zero() {
            return Err(Error::Config(
                "step interval and ramp duration must be positive".into(),
            ));
        }
        if !(self.time_scale.is_finite() && self.time_scale > 0.0) {
            return Err(Error::Config("time_scale must be a positive number".into()));
        }
        if !self
            .ramp_duration
            .as_nanos()
            .is_multiple_of(self.step_interval.as_nanos())
        {
            return Err(Error::Config(
                "ramp duration must be a whole number of step intervals".into(),
            ));
        }
        if self.max_users() > 10_000 {
            return Err(Error::Config(format!(
                "{} virtual users is too many",
                self.max_users()
            )));
        }
        Ok(())
    }

    pub fn intervals(&self) -> u32 {
        (self.ramp_duration.as_nanos() / self.step_interval.as_nanos().max(1)) as u32
    }

    /// Scheduled users during 0-based interval `i`.
    pub fn users_in(&self, interval: u32) -> u32 {
        self.initial_users + self.step_users * interval
    }

    pub fn max_users(&self) -> u32 {
        self.users_in(self.intervals().saturating_sub(1))
    }

    fn scaled(&self, d: Duration) -> Duration {
        d.div_f64(self.time_scale)
    }

    pub fn scaled_interval(&self) -> Duration {
        self.scaled(self.step_interval)
    }

    pub fn scaled_ramp(&self) -> Duration {
        self.scaled_interval() * self.intervals()
    }

    pub fn scaled_cooldown(&self) -> Duration {
        self.scaled(self.cooldown)
    }

    /// Interval in which 0-based worker `w` starts.
    fn start_interval(&self, worker: u32) -> u32 {
        if worker < self.initial_users || self.step_users == 0 {
            0
        } else {
            (worker - self.initial_users) / self.step_users + 1
        }
    }
}

/// What each virtual user requests.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoadRequest {
    pub strategy: Strategy,
    pub sort_field: Field,
    pub page_size: u32,
    pub skip_mode: SkipMode,
    pub page: PageDistribution,
    pub seed: u64,
}

impl Default for LoadRequest {
    fn default() -> Self {
        LoadRequest {
            strategy: Strategy::Seek,
            sort_field: Field::Id,
            page_size: DEFAULT_PAGE_SIZE,
            skip_mode: SkipMode::Corrected,
            page: PageDistribution::Uniform,
            seed: 42,
        }
    }
}

#[derive(Clone)]
pub enum LoadTarget {
    Local {
        table: Arc<Table>,
        sort: SortConfig,
    },
    /// `sort` governs the web-tier sort of remote ADB.
    Remote {
        addr: SocketAddr,
        sort: SortConfig,
    },
}

impl LoadTarget {
    fn connect(&self) -> Result<Box<dyn PageSource + Send>> {
        Ok(match self {
            LoadTarget::Local { table, sort } => {
                Box::new(LocalSource::new(table.clone(), sort.clone()))
            }
            LoadTarget::Remote { addr, sort } => Box::new(Client::connect(addr, sort.clone())?),
        })
    }
}

/// One completed request in the log.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RequestRecord {
    pub worker: u32,
    /// Interval of issue.
    pub interval: u32,
    /// Issue time relative to the start of the run.
    pub issued_ns: u64,
    pub elapsed_ns: u64,
    pub ok: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IntervalRecord {
    pub interval: u32,
    pub users: u32,
    /// Distinct workers that issued a request in this interval.
    pub active_workers: u32,
    /// Requests completed in this interval.
    pub requests: u64,
    pub mean_ns: Option<f64>,
    pub median_ns: Option<u64>,
    pub p95_ns: Option<u64>,
    pub errors: u64,
}

#[derive(Serialize)]
struct IntervalRow {
    interval: u32,
    users: u32,
    requests: u64,
    mean_ns: Option<f64>,
    median_ns: Option<u64>,
    p95_ns: Option<u64>,
    errors: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoadReport {
    pub profile: LoadProfile,
    pub request: LoadRequest,
    pub intervals: Vec<IntervalRecord>,
    pub log: Vec<RequestRecord>,
    /// False when the target failed and the report is partial.
    pub valid: bool,
    pub problems: Vec<String>,
    /// Time from ramp end until the last in-flight request finished.
    pub drain_ns: u64,
    /// Requests that completed during the cool-down.
    pub drained_requests: u64,
}

impl LoadReport {
    pub fn total_requests(&self) -> u64 {
        self.intervals.iter().map(|i| i.requests).sum()
    }

    pub fn means(&self) -> Vec<Option<f64>> {
        self.intervals.iter().map(|i| i.mean_ns).collect()
    }

    /// CSV: `interval,users,requests,mean_ns,median_ns,p95_ns,errors`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for i in &self.intervals {
            w.serialize(IntervalRow {
                interval: i.interval,
                users: i.users,
                requests: i.requests,
                mean_ns: i.mean_ns,
                median_ns: i.median_ns,
                p95_ns: i.p95_ns,
                errors: i.errors,
            })
            .map_err(|e| Error::Internal(format!("csv: {e}")))?;
        }
        w.flush()?;
        Ok(())
    }
}

enum WorkerEnd {
    Finished,
    Failed(String),
}

fn run_worker(
    worker: u32,
    mut source: Box<dyn PageSource + Send>,
    profile: LoadProfile,
    request: LoadRequest,
    pages: u32,
    t0: Instant,
) -> (Vec<RequestRecord>, WorkerEnd) {
    let interval_len = profile.scaled_interval();
    let ramp_end = profile.scaled_ramp();
    let start = interval_len * profile.start_interval(worker);
    if let Some(wait) = start.checked_sub(t0.elapsed()) {
        thread::sleep(wait);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(
        request.seed ^ (worker as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15),
    );
    let mut log = Vec::new();
    loop {
        let issued = t0.elapsed();
        if issued >= ramp_end {
            return (log, WorkerEnd::Finished);
        }
        let page = match request.page {
            PageDistribution::Fixed(p) => p,
            PageDistribution::Uniform => rng.gen_range(1..=pages),
        };
        let req = match PageRequest::new(request.sort_field, page, request.page_size) {
            Ok(r) => r.with_skip_mode(request.skip_mode),
            Err(e) => return (log, WorkerEnd::Failed(e.to_string())),
        };
        let began = Instant::now();
        let outcome = source.page(request.strategy, &req);
        let elapsed = began.elapsed().as_nanos().max(1) as u64;
        let interval = ((issued.as_nanos() / interval_len.as_nanos().max(1)) as u32)
            .min(profile.intervals() - 1);
        log.push(RequestRecord {
            worker,
            interval,
            issued_ns: issued.as_nanos() as u64,
            elapsed_ns: elapsed,
            ok: outcome.is_ok(),
        });
        match outcome {
            Err(Error::Transport(e)) => {
                return (log, WorkerEnd::Failed(format!("worker {worker}: {e}")))
            }
            Err(Error::Protocol(e)) => {
                return (
                    log,
                    WorkerEnd::Failed(format!("worker {worker}: protocol: {e}")),
                )
            }
            _ => {}
        }
    }
}

/// Runs the ramp against `target` and aggregates per interval.
pub fn run_load(
    profile: &LoadProfile,
    request: &LoadRequest,
    target: &LoadTarget,
    rows: u64,
) -> Result<LoadReport> {
    profile.validate()?;
    if request.page_size == 0 {
        return Err(Error::Config("page_size must be at least 1".into()));
    }
    if let LoadTarget::Local { table, .. } = target {
        if !request.strategy.applicable(table, request.sort_field) {
            return Err(Error::Config(format!(
                "{} is not applicable to {} on this table",
                request.strategy, request.sort_field
            )));
        }
    }
    let pages = page_count(rows, request.page_size).clamp(1, u32::MAX as u64) as u32;
    let mut problems = Vec::new();
    let t0 = Instant::now();
    let mut handles = Vec::new();
    for worker in 0..profile.max_users() {
        let source = match target.connect() {
            Ok(s) => s,
            Err(e) => {
                problems.push(format!("worker {worker}: cannot reach target: {e}"));
                break;
            }
        };
        let (p, r) = (*profile, *request);
        let handle = thread::Builder::new()
            .name(format!("pgb-user-{worker}"))
            .stack_size(256 << 10)
            .spawn(move || run_worker(worker, source, p, r, pages, t0))
            .map_err(|e| Error::Internal(format!("spawning worker: {e}")))?;
        handles.push(handle);
    }
    let mut log = Vec::new();
    for h in handles {
        match h.join() {
            Ok((records, end)) => {
                log.extend(records);
                if let WorkerEnd::Failed(msg) = end {
                    problems.push(msg);
                }
            }
            Err(_) => problems.push("worker panicked".into()),
        }
    }
    let drain_ns = t0
        .elapsed()
        .saturating_sub(profile.scaled_ramp())
        .as_nanos() as u64;
    log.sort_by_key(|r| (r.issued_ns, r.worker));
    let intervals = aggregate(profile, &log);
    let ramp_ns = profile.scaled_ramp().as_nanos() as u64;
    let drained_requests = log.iter().filter(|r| r.completed_ns() >= ramp_ns).count() as u64;
    Ok(LoadReport {
        profile: *profile,
        request: *request,
        intervals,
        log,
        valid: problems.is_empty(),
        problems,
        drain_ns,
        drained_requests,
    })
}

impl RequestRecord {
    pub fn completed_ns(&self) -> u64 {
        self.issued_ns + self.elapsed_ns
    }
}

fn aggregate(profile: &LoadProfile, log: &[RequestRecord]) -> Vec<IntervalRecord> {
    let interval_ns = profile.scaled_interval().as_nanos().max(1) as u64;
    let intervals = profile.intervals();
    let mut completed: Vec<Vec<&RequestRecord>> = vec![Vec::new(); intervals as usize];
    let mut issuers: Vec<Vec<u32>> = vec![Vec::new(); intervals as usize];
    for r in log {
        issuers[r.interval as usize].push(r.worker);
        let done = r.completed_ns() / interval_ns;
        if done < intervals as u64 {
            completed[done as usize].push(r);
        }
    }
    (0..intervals)
        .map(|i| {
            let mine = &completed[i as usize];
            let ok: Vec<u64> = mine.iter().filter(|r| r.ok).map(|r| r.elapsed_ns).collect();
            let workers = &mut issuers[i as usize];
            workers.sort_unstable();
            workers.dedup();
            let summary = summarize(&ok);
            IntervalRecord {
                interval: i,
                users: profile.users_in(i),
                active_workers: workers.len() as u32,
                requests: mine.len() as u64,
                mean_ns: summary.map(|s| s.mean),
                median_ns: summary.map(|s| s.median),
                p95_ns: summary.map(|s| s.p95),
                errors: mine.iter().filter(|r| !r.ok).count() as u64,
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    /// Per interval, how `a`'s mean compares to `b`'s; `Equal` when either is missing.
    pub signs: Vec<Ordering>,
    /// Fraction of intervals where `a` was faster.
    pub a_faster_fraction: f64,
}

pub fn compare_reports(a: &LoadReport, b: &LoadReport) -> Result<Comparison> {
    if a.intervals.is_empty() || b.intervals.is_empty() {
        return Err(Error::Config("cannot compare empty load reports".into()));
    }
    if a.profile != b.profile || a.intervals.len() != b.intervals.len() {
        return Err(Error::Config(
            "load reports come from different profiles".into(),
        ));
    }
    let signs: Vec<Ordering> = a
        .intervals
        .iter()
        .zip(&b.intervals)
        .map(|(x, y)| match (x.mean_ns, y.mean_ns) {
            (Some(mx), Some(my)) => mx.partial_cmp(&my).unwrap_or(Ordering::Equal),
            _ => Ordering::Equal,
        })
        .collect();
    let faster = signs.iter().filter(|s| **s == Ordering::Less).count();
    Ok(Comparison {
        a_faster_fraction: faster as f64 / signs.len() as f64,
        signs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::index::IndexSpec;

    fn table(n: usize) -> Arc<Table> {
        let mut t = Table::new(Some(Field::Int));
        t.populate(n, 5).unwrap();
        t.add_index(IndexSpec::nonclustered(Field::Id)).unwrap();
        Arc::new(t)
    }

    fn quick(initial: u32, step: u32, intervals: u32) -> LoadProfile {
        LoadProfile {
            initial_users: initial,
            step_users: step,
            step_interval: Duration::from_millis(100),
            ramp_duration: Duration::from_millis(100) * intervals,
            cooldown: Duration::from_millis(100),
            time_scale: 1.0,
        }
    }

    #[test]
    fn default_profile_schedule() {
        let p = LoadProfile::default();
        p.validate().unwrap();
        assert_eq!(p.intervals(), 10);
        let users: Vec<u32> = (0..10).map(|i| p.users_in(i)).collect();
        assert_eq!(users, vec![5, 20, 35, 50, 65, 80, 95, 110, 125, 140]);
        assert_eq!(p.max_users(), 140);
        assert_eq!(p.scaled_interval(), Duration::from_secs(1));
        assert_eq!(p.scaled_cooldown(), Duration::from_secs(2));
        assert_eq!(p.start_interval(4), 0);
        assert_eq!(p.start_interval(5), 1);
        assert_eq!(p.start_interval(139), 9);
    }

    #[test]
    fn invalid_profiles() {
        let ok = LoadProfile::default();
        assert!(LoadProfile {
            initial_users: 0,
            ..ok
        }
        .validate()
        .is_err());
        assert!(LoadProfile {
            time_scale: 0.0,
            ..ok
        }
        .validate()
        .is_err());
        assert!(LoadProfile {
            time_scale: f64::NAN,
            ..ok
        }
        .validate()
        .is_err());
        assert!(LoadProfile {
            ramp_duration: Duration::from_secs(90),
            ..ok
        }
        .validate()
        .is_err());
    }

    #[test]
    fn single_user_run() {
        let t = table(1000);
        let target = LoadTarget::Local {
            table: t,
            sort: SortConfig::default(),
        };
        let request = LoadRequest {
            strategy: Strategy::TwoPhase,
            sort_field: Field::Int,
            ..LoadRequest::default()
        };
        let report = run_load(&quick(1, 0, 1), &request, &target, 1000).unwrap();
        assert!(report.valid);
        assert_eq!(report.intervals.len(), 1);
        assert!(report.total_requests() >= 1);
        assert!(report
            .log
            .windows(2)
            .all(|w| w[0].issued_ns <= w[1].issued_ns));
        let ramp = report.profile.scaled_ramp().as_nanos() as u64;
        assert!(report.log.iter().all(|r| r.issued_ns < ramp));
    }

    #[test]
    fn schedule_matches_distinct_workers() {
        let t = table(2000);
        let target = LoadTarget::Local {
            table: t,
            sort: SortConfig::default(),
        };
        let request = LoadRequest {
            strategy: Strategy::TwoPhase,
            sort_field: Field::Id,
            ..LoadRequest::default()
        };
        let report = run_load(&quick(2, 3, 4), &request, &target, 2000).unwrap();
        let active: Vec<u32> = report.intervals.iter().map(|i| i.active_workers).collect();
        let scheduled: Vec<u32> = report.intervals.iter().map(|i| i.users).collect();
        assert_eq!(scheduled, vec![2, 5, 8, 11]);
        assert_eq!(active, scheduled);
        let mut buf = Vec::new();
        report.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text.lines().next().unwrap(),
            "interval,users,requests,mean_ns,median_ns,p95_ns,errors"
        );
        assert_eq!(text.lines().count(), 5);
    }

    #[test]
    fn unreachable_target_gives_invalid_report() {
        let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        drop(listener);
        let target = LoadTarget::Remote {
            addr,
            sort: SortConfig::default(),
        };
        let report = run_load(&quick(1, 0, 1), &LoadRequest::default(), &target, 100).unwrap();
        assert!(!report.valid);
        assert!(!report.problems.is_empty());
    }

    #[test]
    fn inapplicable_strategy_is_rejected() {
        let target = LoadTarget::Local {
            table: table(100),
            sort: SortConfig::default(),
        };
        let request = LoadRequest {
            strategy: Strategy::TwoPhase,
            sort_field: Field::Text,
            ..LoadRequest::default()
        };
        assert!(run_load(&quick(1, 0, 1), &request, &target, 100).is_err());
    }

    #[test]
    fn comparisons() {
        let t = table(500);
        let target = LoadTarget::Local {
            table: t,
            sort: SortConfig::default(),
        };
        let request = LoadRequest {
            strategy: Strategy::TwoPhase,
            sort_field: Field::Int,
            ..LoadRequest::default()
        };
        let r = run_load(&quick(1, 1, 2), &request, &target, 500).unwrap();
        let same = compare_reports(&r, &r).unwrap();
        assert!(same.signs.iter().all(|s| *s == Ordering::Equal));
        assert_eq!(same.a_faster_fraction, 0.0);

        let mut empty = r.clone();
        empty.intervals.clear();
        assert!(compare_reports(&empty, &r).is_err());
        let mut other = r.clone();
        other.profile.time_scale = 2.0;
        assert!(compare_reports(&r, &other).is_err());

        let mut slower = r.clone();
        for i in &mut slower.intervals {
            i.mean_ns = i.mean_ns.map(|m| m * 2.0);
        }
        assert_eq!(compare_reports(&r, &slower).unwrap().a_faster_fraction, 1.0);
    }
}

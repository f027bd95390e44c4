use std::fmt;
use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use clap::{Parser, Subcommand};
use pagebench::bench::{histogram, peak_count, run_trials, summarize, MatrixOptions, SampleRecord};
use pagebench::loadgen::{compare_reports, run_load, LoadProfile, LoadRequest, LoadTarget};
use pagebench::matrix::{parse_matrix, preset};
use pagebench::{
    serve, Client, Field, IndexConfig, MemoryBudget, PageDistribution, ScenarioConfig, SortConfig,
    Strategy, Table,
};
use serde::Serialize;

mod settings;

use settings::Settings;

#[derive(Parser, Debug)]
#[command(name = "pagebench", version, about = "Pagination strategy testbed")]
struct Cli {
    /// TOML file of `key = value` settings; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a table and write it as a dump file.
    #[command(alias = "generate")]
    Gen(Settings),
    /// Run a scenario matrix, or one scenario described by flags.
    Bench(Settings),
    /// Serve a table over the wire protocol until killed.
    Serve(Settings),
    /// Run the ramped closed-loop load test.
    Loadtest(Settings),
    /// Summarize a samples.csv produced by `bench`.
    Report(Settings),
}

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Runtime(String),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Runtime(m) => write!(f, "error: {m}"),
        }
    }
}

impl From<pagebench::Error> for CliError {
    fn from(e: pagebench::Error) -> Self {
        if let pagebench::Error::Config(msg) = e {
            CliError::Config(msg)
        } else if e.is_config() {
            CliError::Config(e.to_string())
        } else {
            CliError::Runtime(e.to_string())
        }
    }
}

fn runtime(context: &str, e: impl fmt::Display) -> CliError {
    CliError::Runtime(format!("{context}: {e}"))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("pagebench: {e}");
            match e {
                CliError::Config(_) => ExitCode::from(1),
                CliError::Runtime(_) => ExitCode::from(2),
            }
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let file = match &cli.config {
        Some(path) => Settings::from_file(path)?,
        None => Settings::default(),
    };
    match cli.command {
        Command::Gen(flags) => gen(flags.over(file), &cli.config),
        Command::Bench(flags) => bench(flags.over(file), &cli.config),
        Command::Serve(flags) => serve_cmd(flags.over(file)),
        Command::Loadtest(flags) => loadtest(flags.over(file), &cli.config),
        Command::Report(flags) => report(flags.over(file)),
    }
}

const DEFAULT_ROWS: u64 = 100_000;
const DEFAULT_SEED: u64 = 42;

fn index_config(s: &Settings) -> Result<IndexConfig, CliError> {
    let cfg = IndexConfig {
        cluster: s.cluster,
        nonclustered: s.indices.clone(),
    };
    cfg.validate()?;
    Ok(cfg)
}

fn budget(s: &Settings) -> Result<MemoryBudget, CliError> {
    Ok(match s.budget_bytes {
        Some(b) => MemoryBudget::new(b)?,
        None => MemoryBudget::UNLIMITED,
    })
}

fn sort_config(s: &Settings) -> Result<SortConfig, CliError> {
    Ok(SortConfig {
        budget: budget(s)?,
        spill_dir: s.spill_dir.clone(),
        sync_runs: !s.no_sync.unwrap_or(false),
        ..SortConfig::default()
    })
}

fn build_table(s: &Settings) -> Result<Table, CliError> {
    let indices = index_config(s)?;
    match &s.table {
        Some(path) => {
            let file = File::open(path).map_err(|e| runtime(&path.display().to_string(), e))?;
            let mut table = Table::load(io::BufReader::new(file))?;
            if let Some(c) = indices.cluster {
                table.recluster(c);
            }
            for &f in &indices.nonclustered {
                table.add_index(pagebench::IndexSpec::nonclustered(f))?;
            }
            Ok(table)
        }
        None => Ok(indices.build_table(
            s.rows.unwrap_or(DEFAULT_ROWS),
            s.seed.unwrap_or(DEFAULT_SEED),
        )?),
    }
}

fn out_dir(s: &Settings, default: &str) -> Result<PathBuf, CliError> {
    let dir = s.out.clone().unwrap_or_else(|| PathBuf::from(default));
    fs::create_dir_all(&dir).map_err(|e| {
        CliError::Config(format!(
            "output directory {} is not writable: {e}",
            dir.display()
        ))
    })?;
    Ok(dir)
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| runtime(&path.display().to_string(), e))
}

#[derive(Serialize)]
struct Manifest<'a, T: Serialize> {
    command: &'a str,
    version: &'a str,
    config_file: &'a Option<PathBuf>,
    settings: &'a Settings,
    resolved: T,
}

fn write_manifest<T: Serialize>(
    dir: &Path,
    command: &str,
    config_file: &Option<PathBuf>,
    settings: &Settings,
    resolved: T,
) -> Result<(), CliError> {
    let manifest = Manifest {
        command,
        version: env!("CARGO_PKG_VERSION"),
        config_file,
        settings,
        resolved,
    };
    let mut w = create(&dir.join("manifest.json"))?;
    serde_json::to_writer_pretty(&mut w, &manifest).map_err(|e| runtime("manifest", e))?;
    writeln!(w)
        .and_then(|_| w.flush())
        .map_err(|e| runtime("manifest", e))
}

fn gen(s: Settings, config_file: &Option<PathBuf>) -> Result<(), CliError> {
    let out = s
        .out
        .clone()
        .ok_or_else(|| CliError::Config("gen needs --out <file>".into()))?;
    let rows = s.rows.unwrap_or(DEFAULT_ROWS);
    let seed = s.seed.unwrap_or(DEFAULT_SEED);
    let table = IndexConfig {
        cluster: s.cluster,
        nonclustered: Vec::new(),
    }
    .build_table(rows, seed)?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| {
            CliError::Config(format!(
                "output directory {} is not writable: {e}",
                parent.display()
            ))
        })?;
    }
    let mut w = create(&out)?;
    table.dump(&mut w)?;
    w.flush().map_err(|e| runtime("writing table", e))?;
    #[derive(Serialize)]
    struct Gen {
        rows: u64,
        seed: u64,
        cluster: Option<Field>,
        file: PathBuf,
    }
    let dir = out
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    write_manifest(
        dir,
        "gen",
        config_file,
        &s,
        Gen {
            rows,
            seed,
            cluster: s.cluster,
            file: out.clone(),
        },
    )?;
    println!("wrote {rows} rows to {}", out.display());
    Ok(())
}

fn load_matrix(spec: &str) -> Result<Vec<ScenarioConfig>, CliError> {
    let text = match preset(spec) {
        Some(text) => text.to_string(),
        None => fs::read_to_string(spec)
            .map_err(|e| CliError::Config(format!("cannot read matrix {spec}: {e}")))?,
    };
    Ok(parse_matrix(&text)?)
}

fn scenarios(s: &Settings) -> Result<Vec<ScenarioConfig>, CliError> {
    let mut list = match &s.matrix {
        Some(spec) => load_matrix(spec)?,
        None => {
            let base = ScenarioConfig::default();
            let strategies = if s.strategies.is_empty() {
                vec![base.strategy]
            } else {
                s.strategies.clone()
            };
            strategies
                .into_iter()
                .map(|strategy| ScenarioConfig {
                    rows: s.rows.unwrap_or(DEFAULT_ROWS),
                    cluster: s.cluster,
                    indices: s.indices.clone(),
                    strategy,
                    sort_field: s.field.unwrap_or(base.sort_field),
                    page_size: s.page_size.unwrap_or(base.page_size),
                    page: s.page.map(PageDistribution::Fixed).unwrap_or_default(),
                    bins: s.bins.unwrap_or(base.bins),
                    warmup: s.warmup.unwrap_or(base.warmup),
                    ..base.clone()
                })
                .collect()
        }
    };
    for cfg in &mut list {
        if let Some(v) = s.trials {
            cfg.trials = v;
        }
        if let Some(v) = s.seed {
            cfg.seed = v;
        }
        if s.budget_bytes.is_some() {
            cfg.budget_bytes = budget(s)?;
        }
        if let Some(v) = s.skip_mode {
            cfg.skip_mode = v;
        }
        if let Some(v) = s.no_sync {
            cfg.sync_runs = !v;
        }
        cfg.validate()?;
    }
    Ok(list)
}

fn bench(s: Settings, config_file: &Option<PathBuf>) -> Result<(), CliError> {
    let list = scenarios(&s)?;
    let dir = out_dir(&s, "results")?;
    let report = match &s.connect {
        None => pagebench::run_matrix(
            &list,
            &MatrixOptions {
                parallel: s.parallel.unwrap_or(false),
                spill_dir: s.spill_dir.clone(),
            },
        ),
        Some(addr) => remote_matrix(&list, addr, &sort_config(&s)?),
    };
    report
        .write_samples_csv(create(&dir.join("samples.csv"))?)
        .map_err(CliError::from)?;
    report
        .write_summary_csv(create(&dir.join("summary.csv"))?)
        .map_err(CliError::from)?;
    write_manifest(&dir, "bench", config_file, &s, &list)?;
    for row in &report.summaries {
        match &row.error {
            Some(e) => println!("{:<48} FAILED {e}", row.scenario),
            None => println!(
                "{:<48} mean {:>12.0} ns  p95 {:>10} ns  peaks {}",
                row.scenario,
                row.mean_ns.unwrap_or(0.0),
                row.p95_ns.unwrap_or(0),
                row.peak_count.unwrap_or(0)
            ),
        }
    }
    println!("results in {}", dir.display());
    match report.failed() {
        0 => Ok(()),
        n => Err(CliError::Runtime(format!("{n} scenario(s) failed"))),
    }
}

fn remote_matrix(
    list: &[ScenarioConfig],
    addr: &str,
    sort: &SortConfig,
) -> pagebench::MatrixReport {
    let mut report = pagebench::MatrixReport::default();
    for cfg in list {
        let outcome =
            Client::connect(addr, sort.clone()).and_then(|mut client| run_trials(cfg, &mut client));
        let single = pagebench::bench::report_for(cfg, &outcome);
        report.samples.extend(single.samples);
        report.summaries.extend(single.summaries);
    }
    report
}

fn serve_cmd(s: Settings) -> Result<(), CliError> {
    let table = Arc::new(build_table(&s)?);
    let listen = s.listen.clone().unwrap_or_else(|| "127.0.0.1:5433".into());
    let handle = serve(table.clone(), listen.as_str(), sort_config(&s)?)
        .map_err(|e| runtime(&format!("cannot listen on {listen}"), e))?;
    println!(
        "listening on {} ({} rows)",
        handle.local_addr(),
        table.row_count()
    );
    io::stdout().flush().ok();
    handle.wait();
    Ok(())
}

fn loadtest(s: Settings, config_file: &Option<PathBuf>) -> Result<(), CliError> {
    let defaults = LoadProfile::default();
    let intervals = s.intervals.unwrap_or(defaults.intervals());
    if intervals == 0 {
        return Err(CliError::Config("intervals must be at least 1".into()));
    }
    let profile = LoadProfile {
        initial_users: s.initial_users.unwrap_or(defaults.initial_users),
        step_users: s.step_users.unwrap_or(defaults.step_users),
        ramp_duration: defaults.step_interval * intervals,
        time_scale: s.time_scale.unwrap_or(defaults.time_scale),
        ..defaults
    };
    profile.validate()?;
    let strategies = if s.strategies.is_empty() {
        vec![Strategy::Seek, Strategy::TwoPhase]
    } else {
        s.strategies.clone()
    };
    let sort = sort_config(&s)?;
    let (target, rows) = match &s.connect {
        Some(addr) => {
            let addr = std::net::ToSocketAddrs::to_socket_addrs(addr.as_str())
                .map_err(|e| CliError::Config(format!("bad --connect {addr}: {e}")))?
                .next()
                .ok_or_else(|| CliError::Config(format!("bad --connect {addr}")))?;
            let rows = s.rows.ok_or_else(|| {
                CliError::Config("loadtest --connect needs --rows of the served table".into())
            })?;
            (LoadTarget::Remote { addr, sort }, rows)
        }
        None => {
            let table = Arc::new(build_table(&s)?);
            let rows = table.row_count() as u64;
            (LoadTarget::Local { table, sort }, rows)
        }
    };
    let dir = out_dir(&s, "results")?;
    let base = LoadRequest {
        sort_field: s.field.unwrap_or(Field::Id),
        page_size: s
            .page_size
            .unwrap_or(pagebench::strategy::DEFAULT_PAGE_SIZE),
        skip_mode: s.skip_mode.unwrap_or_default(),
        page: s.page.map(PageDistribution::Fixed).unwrap_or_default(),
        seed: s.seed.unwrap_or(DEFAULT_SEED),
        ..LoadRequest::default()
    };
    let mut reports = Vec::new();
    for strategy in &strategies {
        let request = LoadRequest {
            strategy: *strategy,
            ..base
        };
        let total = profile.scaled_ramp() + profile.scaled_cooldown();
        println!(
            "{strategy}: {} intervals, {} to {} users, about {:.0?}",
            profile.intervals(),
            profile.users_in(0),
            profile.max_users(),
            Duration::from_secs_f64(total.as_secs_f64())
        );
        let report = run_load(&profile, &request, &target, rows)?;
        report.write_csv(create(&dir.join(format!("load-{strategy}.csv")))?)?;
        for i in &report.intervals {
            println!(
                "  interval {:>2}  users {:>4}  requests {:>8}  mean {:>12.0} ns  errors {}",
                i.interval,
                i.users,
                i.requests,
                i.mean_ns.unwrap_or(0.0),
                i.errors
            );
        }
        if !report.valid {
            for p in &report.problems {
                eprintln!("  {p}");
            }
        }
        reports.push((strategy, report));
    }
    if let [(a_name, a), (b_name, b), ..] = reports.as_slice() {
        let cmp = compare_reports(b, a)?;
        println!(
            "{b_name} faster than {a_name} in {:.0}% of intervals",
            cmp.a_faster_fraction * 100.0
        );
    }
    #[derive(Serialize)]
    struct Load<'a> {
        profile: LoadProfile,
        request: LoadRequest,
        strategies: &'a [Strategy],
        rows: u64,
    }
    write_manifest(
        &dir,
        "loadtest",
        config_file,
        &s,
        Load {
            profile,
            request: base,
            strategies: &strategies,
            rows,
        },
    )?;
    match reports.iter().find(|(_, r)| !r.valid) {
        Some((name, r)) => Err(CliError::Runtime(format!(
            "{name} load test aborted: {}",
            r.problems.join("; ")
        ))),
        None => Ok(()),
    }
}

fn report(s: Settings) -> Result<(), CliError> {
    let input = s.input.clone().unwrap_or_else(|| PathBuf::from("results"));
    let samples_path = if input.is_dir() {
        input.join("samples.csv")
    } else {
        input.clone()
    };
    let mut reader = csv_reader(&samples_path)?;
    let mut by_scenario: Vec<(String, Vec<u64>)> = Vec::new();
    for record in reader.deserialize::<SampleRecord>() {
        let r = record.map_err(|e| CliError::Config(format!("{}: {e}", samples_path.display())))?;
        match by_scenario.iter_mut().find(|(name, _)| *name == r.scenario) {
            Some((_, v)) => v.push(r.elapsed_ns),
            None => by_scenario.push((r.scenario, vec![r.elapsed_ns])),
        }
    }
    if by_scenario.is_empty() {
        return Err(CliError::Config(format!(
            "{} has no samples",
            samples_path.display()
        )));
    }
    let bins = s.bins.unwrap_or(pagebench::bench::DEFAULT_BINS);
    let dir = samples_path
        .parent()
        .unwrap_or(Path::new("."))
        .to_path_buf();
    let mut out = csv_writer(&dir.join("histograms.csv"))?;
    out.write_record(["scenario", "bin", "lower_ns", "upper_ns", "count"])
        .map_err(|e| runtime("histograms.csv", e))?;
    for (name, values) in &by_scenario {
        let hist = histogram(values, bins)?;
        let summary = summarize(values).expect("non-empty");
        println!(
            "{name}: n={} mean={:.0} median={} p95={} peaks={}",
            values.len(),
            summary.mean,
            summary.median,
            summary.p95,
            peak_count(&hist)
        );
        let edges = hist.edges();
        let widest = *hist.counts.iter().max().unwrap_or(&1);
        for (i, &count) in hist.counts.iter().enumerate() {
            let bar = "#".repeat(((count * 40).div_ceil(widest.max(1))) as usize);
            println!(
                "  {:>14.0} .. {:>14.0} {:>6} {bar}",
                edges[i],
                edges[i + 1],
                count
            );
            out.write_record([
                name.clone(),
                i.to_string(),
                format!("{:.0}", edges[i]),
                format!("{:.0}", edges[i + 1]),
                count.to_string(),
            ])
            .map_err(|e| runtime("histograms.csv", e))?;
        }
    }
    out.flush().map_err(|e| runtime("histograms.csv", e))?;
    Ok(())
}

fn csv_reader(path: &Path) -> Result<csv::Reader<File>, CliError> {
    csv::Reader::from_path(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))
}

fn csv_writer(path: &Path) -> Result<csv::Writer<File>, CliError> {
    csv::Writer::from_path(path).map_err(|e| runtime(&path.display().to_string(), e))
}

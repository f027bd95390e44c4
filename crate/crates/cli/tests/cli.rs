use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::process::{Child, Command, Output, Stdio};

use pagebench::Table;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_pagebench"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn pagebench")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

#[test]
fn help_exits_zero() {
    for args in [
        &["--help"][..],
        &["bench", "--help"],
        &["loadtest", "--help"],
    ] {
        let out = run(args);
        assert_eq!(code(&out), 0, "{args:?}");
        assert!(stdout(&out).contains("Usage"));
    }
}

#[test]
fn configuration_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let bad_matrix = dir.path().join("bad.toml");
    fs::write(&bad_matrix, "[[scenario]]\nstrategy = \"sideways\"\n").unwrap();
    let cases: Vec<Vec<String>> = vec![
        vec!["bench".into(), "--bogus".into()],
        vec!["frobnicate".into()],
        vec!["bench".into(), "--field".into(), "Colour".into()],
        vec![
            "bench".into(),
            "--matrix".into(),
            bad_matrix.display().to_string(),
        ],
        vec![
            "bench".into(),
            "--matrix".into(),
            "/no/such/matrix.toml".into(),
        ],
        vec![
            "--config".into(),
            "/no/such/config.toml".into(),
            "bench".into(),
        ],
        vec!["gen".into(), "--rows".into(), "10".into()],
        vec![
            "bench".into(),
            "--strategy".into(),
            "two_phase".into(),
            "--rows".into(),
            "100".into(),
        ],
        vec!["bench".into(), "--budget-bytes".into(), "5".into()],
    ];
    for args in cases {
        let out = bin().args(&args).current_dir(dir.path()).output().unwrap();
        assert_eq!(
            code(&out),
            1,
            "{args:?}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        assert!(!out.stderr.is_empty());
    }
}

#[test]
fn runtime_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let corrupt = dir.path().join("corrupt.pgb");
    fs::write(&corrupt, b"PGB1 not really a table").unwrap();
    let out = run(&[
        "serve",
        "--table",
        corrupt.to_str().unwrap(),
        "--listen",
        "127.0.0.1:0",
    ]);
    assert_eq!(code(&out), 2);

    let out = run(&[
        "loadtest",
        "--connect",
        "127.0.0.1:1",
        "--rows",
        "100",
        "--time-scale",
        "600",
        "--intervals",
        "1",
        "--strategy",
        "seek",
        "--out",
        dir.path().join("load").to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 2);
}

#[test]
fn gen_writes_a_loadable_table_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.pgb");
    let out = run(&[
        "gen",
        "--rows",
        "1000",
        "--seed",
        "42",
        "--out",
        path.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let table = Table::load(fs::File::open(&path).unwrap()).unwrap();
    assert_eq!(table.row_count(), 1000);
    let mut expected = Table::new(None);
    expected.populate(1000, 42).unwrap();
    assert_eq!(table.encoded_heap(), expected.encoded_heap());

    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("manifest.json")).unwrap())
            .unwrap();
    assert_eq!(manifest["command"], "gen");
    assert_eq!(manifest["resolved"]["rows"], 1000);
    assert_eq!(manifest["resolved"]["seed"], 42);

    let again = dir.path().join("again.pgb");
    let out = bin()
        .args(["generate", "--rows", "1000", "--seed", "42", "--out"])
        .arg(&again)
        .output()
        .unwrap();
    assert_eq!(code(&out), 0);
    assert_eq!(fs::read(&path).unwrap(), fs::read(&again).unwrap());
}

fn csv_lines(path: &Path) -> Vec<String> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(str::to_string)
        .collect()
}

#[test]
fn bench_writes_samples_summary_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("run");
    let out = run(&[
        "bench",
        "--rows",
        "2000",
        "--index",
        "IntField",
        "--field",
        "IntField",
        "--strategy",
        "seek",
        "--strategy",
        "two_phase",
        "--trials",
        "12",
        "--budget-bytes",
        "69000",
        "--no-sync",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let samples = csv_lines(&out_dir.join("samples.csv"));
    assert_eq!(
        samples[0],
        "scenario,trial,strategy,field,index,rows,page,elapsed_ns,bytes,spilled"
    );
    assert_eq!(samples.len(), 1 + 24);
    assert_eq!(csv_lines(&out_dir.join("summary.csv")).len(), 1 + 2);

    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_dir.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "bench");
    assert_eq!(manifest["resolved"].as_array().unwrap().len(), 2);
    assert_eq!(manifest["resolved"][0]["trials"], 12);

    let out = run(&["report", "--input", out_dir.to_str().unwrap()]);
    assert_eq!(code(&out), 0);
    assert!(stdout(&out).contains("peaks="));
    assert_eq!(csv_lines(&out_dir.join("histograms.csv")).len(), 1 + 2 * 10);
}

#[test]
fn config_file_is_overridden_by_flags() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("run.toml");
    fs::write(
        &config,
        "rows = 500\ntrials = 3\nstrategy = [\"adb\"]\nfield = \"TextField\"\nseed = 5\n",
    )
    .unwrap();
    let out_dir = dir.path().join("run");
    let out = bin()
        .arg("--config")
        .arg(&config)
        .args(["bench", "--trials", "4", "--out"])
        .arg(&out_dir)
        .output()
        .unwrap();
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_dir.join("manifest.json")).unwrap()).unwrap();
    let scenario = &manifest["resolved"][0];
    assert_eq!(scenario["trials"], 4);
    assert_eq!(scenario["rows"], 500);
    assert_eq!(scenario["seed"], 5);
    assert_eq!(scenario["strategy"], "adb");
    assert_eq!(scenario["sort_field"], "TextField");
}

#[test]
fn bench_reproduces_request_sequence() {
    let dir = tempfile::tempdir().unwrap();
    let pages = |name: &str| {
        let out_dir = dir.path().join(name);
        let out = run(&[
            "bench",
            "--rows",
            "3000",
            "--trials",
            "25",
            "--seed",
            "77",
            "--out",
            out_dir.to_str().unwrap(),
        ]);
        assert_eq!(code(&out), 0);
        csv_lines(&out_dir.join("samples.csv"))
            .iter()
            .skip(1)
            .map(|l| l.split(',').nth(6).unwrap().to_string())
            .collect::<Vec<_>>()
    };
    assert_eq!(pages("a"), pages("b"));
}

#[test]
fn bench_matrix_preset_and_file() {
    let dir = tempfile::tempdir().unwrap();
    let matrix = dir.path().join("m.toml");
    fs::write(
        &matrix,
        r#"
        [defaults]
        rows = [300, 600]
        trials = 5
        cluster = "IntField"
        indices = ["ID"]

        [[scenario]]
        strategy = ["seek", "two_phase"]
        sort_field = "ID"
        "#,
    )
    .unwrap();
    let out_dir = dir.path().join("m");
    let out = run(&[
        "bench",
        "--matrix",
        matrix.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(csv_lines(&out_dir.join("samples.csv")).len(), 1 + 20);
    assert_eq!(csv_lines(&out_dir.join("summary.csv")).len(), 1 + 4);
}

struct Server(Child);

impl Drop for Server {
    fn drop(&mut self) {
        let _ = self.0.kill();
        let _ = self.0.wait();
    }
}

fn start_server(args: &[&str]) -> (Server, String) {
    let mut child = bin()
        .arg("serve")
        .args(args)
        .args(["--listen", "127.0.0.1:0"])
        .stdout(Stdio::piped())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stdout.take().unwrap())
        .read_line(&mut line)
        .unwrap();
    let addr = line
        .strip_prefix("listening on ")
        .and_then(|rest| rest.split_whitespace().next())
        .unwrap_or_else(|| panic!("unexpected serve output {line:?}"))
        .to_string();
    (Server(child), addr)
}

#[test]
fn remote_bench_and_loadtest_against_served_table() {
    let dir = tempfile::tempdir().unwrap();
    let table = dir.path().join("t.pgb");
    assert_eq!(
        code(&run(&[
            "gen",
            "--rows",
            "3000",
            "--out",
            table.to_str().unwrap()
        ])),
        0
    );
    let (_server, addr) =
        start_server(&["--table", table.to_str().unwrap(), "--index", "IntField"]);

    let out_dir = dir.path().join("remote");
    let out = run(&[
        "bench",
        "--connect",
        &addr,
        "--rows",
        "3000",
        "--strategy",
        "adb",
        "--strategy",
        "two_phase",
        "--field",
        "IntField",
        "--index",
        "IntField",
        "--trials",
        "5",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let lines = csv_lines(&out_dir.join("samples.csv"));
    let bytes: Vec<(String, u64)> = lines[1..]
        .iter()
        .map(|l| {
            let cols: Vec<&str> = l.split(',').collect();
            (cols[2].to_string(), cols[8].parse().unwrap())
        })
        .collect();
    let adb = bytes.iter().find(|(s, _)| s == "adb").unwrap().1;
    let two = bytes.iter().find(|(s, _)| s == "two_phase").unwrap().1;
    assert!(adb > 3000 * 20);
    assert!(two < 10 * 69 + 100);

    let load_dir = dir.path().join("load");
    let out = run(&[
        "loadtest",
        "--connect",
        &addr,
        "--rows",
        "3000",
        "--field",
        "IntField",
        "--strategy",
        "two_phase",
        "--time-scale",
        "600",
        "--intervals",
        "2",
        "--out",
        load_dir.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let csv = csv_lines(&load_dir.join("load-two_phase.csv"));
    assert_eq!(
        csv[0],
        "interval,users,requests,mean_ns,median_ns,p95_ns,errors"
    );
    assert_eq!(csv.len(), 3);
    assert!(load_dir.join("manifest.json").exists());
}

use std::path::PathBuf;
use std::process::{Command, Output};

fn scenario(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../scenarios")
        .join(format!("{name}.toml"))
}

fn rinasim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rinasim"))
        .args(args)
        .output()
        .expect("binary runs")
}

#[test]
fn ping_run_writes_trace_and_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let (trace, metrics) = (dir.path().join("t.log"), dir.path().join("m.csv"));
    let out = rinasim(&[
        "run",
        scenario("ping").to_str().unwrap(),
        "--strict",
        "--trace",
        trace.to_str().unwrap(),
        "--metrics",
        metrics.to_str().unwrap(),
    ]);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("leak check: clean"), "{stdout}");

    let csv = std::fs::read_to_string(&metrics).unwrap();
    let rows: Vec<_> = csv.lines().collect();
    assert_eq!(
        rows[0],
        "seq,send_time_ns,responder_recv_ns,response_recv_ns,one_way_ns,rtt_ns,lost"
    );
    assert_eq!(rows.len(), 1 + 3);
    for r in &rows[1..] {
        let cols: Vec<_> = r.split(',').collect();
        assert_eq!(cols[5], "8896000", "{r}");
    }
    let t = std::fs::read_to_string(&trace).unwrap();
    assert!(t.lines().all(|l| l.starts_with("t=")));
}

#[test]
fn same_seed_gives_identical_trace_files() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str, seed: &str| {
        let p = dir.path().join(name);
        let out = rinasim(&[
            "run",
            scenario("lossy").to_str().unwrap(),
            "--seed",
            seed,
            "--trace",
            p.to_str().unwrap(),
        ]);
        assert_eq!(out.status.code(), Some(0));
        std::fs::read(p).unwrap()
    };
    let (a, b, c) = (run("a", "5"), run("b", "5"), run("c", "6"));
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn validate_only_does_not_run() {
    let out = rinasim(&[
        "run",
        scenario("border").to_str().unwrap(),
        "--validate-only",
    ]);
    assert_eq!(out.status.code(), Some(0));
    assert!(!String::from_utf8_lossy(&out.stdout).contains("events"));
}

#[test]
fn invalid_scenario_exits_with_1() {
    let dir = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(scenario("border")).unwrap();
    // A border router stripped to two ranks.
    let broken = text.replace(
        "  { name = \"BR1.top\", dif = \"Top\", address = 2 },\n",
        "",
    );
    let p = dir.path().join("broken.toml");
    std::fs::write(&p, broken).unwrap();
    let out = rinasim(&["run", p.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("border-router"));

    let out = rinasim(&["run", dir.path().join("missing.toml").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn strict_flags_a_run_cut_short() {
    // Stopping mid-flow leaves the application flow allocated.
    let file = scenario("ping");
    let args = ["run", file.to_str().unwrap(), "--until", "0.1"];
    assert_eq!(rinasim(&args).status.code(), Some(0));
    let mut strict = args.to_vec();
    strict.push("--strict");
    assert_eq!(rinasim(&strict).status.code(), Some(2));
}

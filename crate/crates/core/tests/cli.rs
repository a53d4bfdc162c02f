use std::path::Path;
use std::process::Command;

use smc::cli::{parse_results_csv, summarize, RESULTS_HEADER};
use smc::local::RunTrace;

fn smc(dir: &Path, args: &[&str]) -> (i32, String, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_smc"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs");
    (
        out.status.code().unwrap_or(-1),
        String::from_utf8_lossy(&out.stdout).into_owned(),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

fn write(dir: &Path, name: &str, text: &str) {
    std::fs::write(dir.join(name), text).unwrap();
}

#[test]
fn run_writes_results_traces_and_meta() {
    let dir = tempfile::tempdir().unwrap();
    write(
        dir.path(),
        "c.json",
        r#"{"instance": {"builtin": "parabolas"}, "methods": [{"name": "am"}, {"name": "sm"}, {"name": "dca"}], "starts": 4, "out": "o"}"#,
    );
    let (code, stdout, stderr) = smc(dir.path(), &["run", "--config", "c.json", "--seed", "9"]);
    assert_eq!(code, 0, "{stderr}");
    assert!(stdout.contains("enumeration -3"));
    let o = dir.path().join("o");
    let text = std::fs::read_to_string(o.join("results.csv")).unwrap();
    assert!(text.lines().nth(1) == Some(RESULTS_HEADER));
    let (rows, sums) = parse_results_csv(&text).unwrap();
    assert_eq!(rows.len(), 12);
    assert_eq!(summarize(&rows), sums);
    for r in &rows {
        assert!(r.best_value >= -3.0 - 1e-9);
        let trace = std::fs::read_to_string(
            o.join("traces")
                .join(format!("{}_{}.csv", r.method, r.start)),
        )
        .unwrap();
        assert!(trace.starts_with("# smc-trace v1\nk,Fbar,F,gain,epsilon_min,time_ms"));
        assert_eq!(RunTrace::parse_csv(&trace).unwrap().len(), r.iterations);
    }
    let meta: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(o.join("meta.json")).unwrap()).unwrap();
    assert_eq!(meta["seed"], 9);
    assert!(std::fs::read_to_string(o.join("timings.csv"))
        .unwrap()
        .starts_with("method,start,seconds"));
}

#[test]
fn same_seed_same_bytes_other_seed_other_starts() {
    let dir = tempfile::tempdir().unwrap();
    let run = |seed: &str, out: &str| {
        let (code, _, e) = smc(
            dir.path(),
            &[
                "run",
                "--instance",
                "plane_pair",
                "--seed",
                seed,
                "--out",
                out,
            ],
        );
        assert_eq!(code, 0, "{e}");
        std::fs::read(dir.path().join(out).join("results.csv")).unwrap()
    };
    let a = run("1", "a");
    let b = run("1", "b");
    let c = run("2", "c");
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn certify_enumerate_bounds_and_scan() {
    let dir = tempfile::tempdir().unwrap();
    write(
        dir.path(),
        "c.json",
        r#"{"instance": {"builtin": "abs_three"}, "out": "o", "solve": true,
            "certify": {"x": [-0.0625], "neighbourhood": {"kind": "box", "below": [0.4375], "above": [0.3125]}},
            "scan": {"x_grid": [[-2.0, 2.0, 9]]}}"#,
    );
    let o = dir.path().join("o");
    let (code, _, e) = smc(dir.path(), &["certify", "--config", "c.json"]);
    assert_eq!(code, 0, "{e}");
    let v: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(o.join("verdict.json")).unwrap()).unwrap();
    assert!((v["value"].as_f64().unwrap() + 33.0 / 16.0).abs() < 1e-9);
    assert_eq!(v["verdicts"][0]["verdict"], "improved");

    let (code, stdout, _) = smc(dir.path(), &["enumerate", "--config", "c.json"]);
    assert_eq!(code, 0);
    assert!(stdout.contains("-2.0625"));

    let (code, _, e) = smc(
        dir.path(),
        &["bounds", "--config", "c.json", "--time-limit", "10"],
    );
    assert_eq!(code, 0, "{e}");
    let m: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(o.join("micp.json")).unwrap()).unwrap();
    assert_eq!(m["status"], "optimal");
    assert!(std::fs::read_to_string(o.join("model_stats.csv"))
        .unwrap()
        .starts_with("terms,binaries"));

    let (code, _, e) = smc(dir.path(), &["vc-scan", "--config", "c.json"]);
    assert_eq!(code, 0, "{e}");
    let scan = std::fs::read_to_string(o.join("vc_scan.csv")).unwrap();
    assert_eq!(scan.lines().count(), 1 + 5 * 9);
}

#[test]
fn zero_time_limit_is_inconclusive() {
    let dir = tempfile::tempdir().unwrap();
    write(
        dir.path(),
        "c.json",
        r#"{"instance": {"builtin": "abs_three"}, "out": "o",
            "certify": {"x": [0.0], "neighbourhood": {"kind": "cube", "radius": 0.1}}}"#,
    );
    let (code, _, e) = smc(
        dir.path(),
        &["certify", "--config", "c.json", "--time-limit", "0"],
    );
    assert_eq!(code, 0, "{e}");
    let v = std::fs::read_to_string(dir.path().join("o/verdict.json")).unwrap();
    assert!(v.contains("inconclusive"));
}

#[test]
fn bad_input_exits_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    write(
        dir.path(),
        "bad.json",
        r#"{"instance": {"builtin": "abs_three"}, "starts": 0}"#,
    );
    assert_eq!(smc(dir.path(), &["run", "--config", "bad.json"]).0, 1);
    assert_eq!(smc(dir.path(), &["run", "--instance", "nope"]).0, 1);
    assert_eq!(smc(dir.path(), &["run"]).0, 1);
    assert_eq!(
        smc(dir.path(), &["certify", "--instance", "abs_three"]).0,
        1
    );
}

#[test]
fn shipped_configs_parse() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    for entry in std::fs::read_dir(&root).unwrap() {
        let path = entry.unwrap().path();
        let text = std::fs::read_to_string(&path).unwrap();
        let cfg = smc::cli::BenchConfig::from_json(&text)
            .unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        smc::cli::load_instance(&cfg.instance, &root).unwrap();
    }
}

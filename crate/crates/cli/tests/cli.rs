use std::path::Path;
use std::process::{Command, Output};

fn qapm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qapm"))
        .args(args)
        .env_clear()
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn read_report(dir: &Path) -> serde_json::Value {
    serde_json::from_slice(&std::fs::read(dir.join("report.json")).unwrap()).unwrap()
}

fn short_scenario(dir: &Path) -> std::path::PathBuf {
    let out = dir.join("seed");
    let o = qapm(&[
        "run",
        "--builtin",
        "table1",
        "--duration",
        "0.3",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    out.join("scenario.toml")
}

#[test]
fn run_writes_all_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let o = qapm(&[
        "run",
        "--builtin",
        "table1",
        "--cpu",
        "CPU-3",
        "--duration",
        "0.5",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0);
    for f in ["scenario.toml", "trace.csv", "schedule.csv", "report.json"] {
        assert!(out.join(f).is_file(), "missing {f}");
    }
    let report = read_report(&out);
    assert_eq!(report["cpu"], "CPU-3");
    assert_eq!(report["deadline_misses"], 0);
    let trace = std::fs::read_to_string(out.join("trace.csv")).unwrap();
    assert!(trace.starts_with("time_s,loop,r,y,e,u,h_eff_ms,alpha,energy_inst\n"));
}

#[test]
fn outputs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let mut files = Vec::new();
    for name in ["a", "b"] {
        let out = dir.path().join(name);
        let o = qapm(&[
            "run",
            "--builtin",
            "table1",
            "--cpu",
            "CPU-2",
            "--duration",
            "0.5",
            "--seed",
            "9",
            "--out",
            out.to_str().unwrap(),
        ]);
        assert_eq!(code(&o), 0);
        files.push(
            ["trace.csv", "report.json", "schedule.csv"]
                .map(|f| std::fs::read(out.join(f)).unwrap()),
        );
    }
    assert_eq!(files[0], files[1]);
}

#[test]
fn sweep_writes_table() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = short_scenario(dir.path());
    let out = dir.path().join("sweep");
    let o = qapm(&[
        "sweep",
        "--scenario",
        scenario.to_str().unwrap(),
        "--all-cpus",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let table = std::fs::read_to_string(out.join("comparison.csv")).unwrap();
    assert!(table.starts_with("metric,osDVS,CPU-1,CPU-2,CPU-3,CPU-4,CPU-ideal\nE_AVG,"));
    for d in ["osdvs", "cpu-1", "cpu-2", "cpu-3", "cpu-4", "cpu-ideal"] {
        assert!(out.join(d).join("report.json").is_file(), "missing {d}");
    }
    assert!(out.join("comparison.json").is_file());
}

#[test]
fn validate_accepts_good_and_rejects_bad() {
    let dir = tempfile::tempdir().unwrap();
    let good = short_scenario(dir.path());
    assert_eq!(
        code(&qapm(&["validate", "--scenario", good.to_str().unwrap()])),
        0
    );

    let text = std::fs::read_to_string(&good).unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(
        &bad,
        text.replacen("h0_us = 7000", "h0_us = 1000", 1)
            .replace("micro_step_us = 100", "micro_step_us = 0"),
    )
    .unwrap();
    let o = qapm(&["validate", "--scenario", bad.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(
        err.contains("micro_step_us") && err.contains("loops[1]"),
        "{err}"
    );

    let broken = dir.path().join("broken.toml");
    std::fs::write(&broken, "name = \n").unwrap();
    assert_eq!(
        code(&qapm(&["validate", "--scenario", broken.to_str().unwrap()])),
        2
    );
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x");
    let out = out.to_str().unwrap();
    assert_eq!(
        code(&qapm(&[
            "run",
            "--builtin",
            "table1",
            "--cpu",
            "CPU-9",
            "--out",
            out
        ])),
        2
    );
    assert_eq!(code(&qapm(&["run", "--out", out])), 2);
    assert_eq!(
        code(&qapm(&[
            "run",
            "--builtin",
            "table1",
            "--duration",
            "-1",
            "--out",
            out
        ])),
        2
    );
    assert_eq!(
        code(&qapm(&[
            "run",
            "--scenario",
            "/nonexistent/s.toml",
            "--out",
            out
        ])),
        1
    );
}

#[test]
fn strict_flags_deadline_misses() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = short_scenario(dir.path());
    let slow = dir.path().join("slow.toml");
    let text = std::fs::read_to_string(&scenario).unwrap();
    std::fs::write(
        &slow,
        text.replace("switch_overhead_us = 0", "switch_overhead_us = 3000"),
    )
    .unwrap();
    let out = dir.path().join("o");
    let args = [
        "run",
        "--scenario",
        slow.to_str().unwrap(),
        "--cpu",
        "CPU-1",
        "--duration",
        "1",
        "--out",
        out.to_str().unwrap(),
    ];
    assert_eq!(code(&qapm(&args)), 0);
    let mut strict = args.to_vec();
    strict.push("--strict");
    assert_eq!(code(&qapm(&strict)), 3);
}

#[test]
fn environment_overrides_flags_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("env");
    let o = Command::new(env!("CARGO_BIN_EXE_qapm"))
        .args(["run"])
        .env_clear()
        .env("QAPM_BUILTIN", "table1")
        .env("QAPM_DURATION", "0.2")
        .env("QAPM_CPU", "CPU-4")
        .env("QAPM_OUT", out.to_str().unwrap())
        .output()
        .unwrap();
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let report = read_report(&out);
    assert_eq!(report["cpu"], "CPU-4");
    assert_eq!(report["duration_s"], 0.2);
}

use std::path::Path;
use std::process::{Command, Output};

use swkey::report::{config_echo, strip_duration};

fn swkey(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_swkey"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8(out.stderr.clone()).unwrap()
}

fn write_config(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

fn field(report: &str, key: &str) -> String {
    let prefix = format!("{key} = ");
    report
        .lines()
        .find_map(|l| l.strip_prefix(&prefix))
        .unwrap_or_else(|| panic!("no {key} in report"))
        .to_string()
}

#[test]
fn model1_exact_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "m1.cfg", "model = model1\np = 0.05\ncode = hamming(3)\nmode = exact\n");
    let out = swkey(&["run", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let report = stdout(&out);
    assert!(report.starts_with("# swkey-report v1\n"));
    let mismatch: f64 = field(&report, "mismatch_prob").parse().unwrap();
    assert!((mismatch - 0.04438).abs() < 1e-5);
    let leakage: f64 = field(&report, "leakage_bits").parse().unwrap();
    assert!(leakage <= 1e-12);
    assert!(field(&report, "uniformity").starts_with("pass"));
}

#[test]
fn repeated_runs_are_identical_and_replayable() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "m2.cfg",
        "model = model2\np = 0.1\nq = 0.3\ncode = hamming(3)\nxi = 0.15\neps_prime = 0.2\nmode = both\nn_trials = 4000\nmaster_seed = 9\n",
    );
    let a = dir.path().join("a.txt");
    let b = dir.path().join("b.txt");
    let a_str = a.to_str().unwrap();
    let b_str = b.to_str().unwrap();
    assert_eq!(swkey(&["run", "--config", &cfg, "--out", a_str, "--workers", "1"]).status.code(), Some(0));
    assert_eq!(swkey(&["run", "--config", &cfg, "--out", b_str, "--workers", "4"]).status.code(), Some(0));
    let ra = std::fs::read_to_string(&a).unwrap();
    let rb = std::fs::read_to_string(&b).unwrap();
    // the echoed output path differs, everything else must not
    assert_eq!(strip_duration(&ra).replace(a_str, "X"), strip_duration(&rb).replace(b_str, "X"));

    let echo = config_echo(&ra).unwrap();
    let replay = write_config(dir.path(), "replay.cfg", &echo);
    let out = swkey(&["run", "--config", &replay]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(strip_duration(&std::fs::read_to_string(&a).unwrap()), strip_duration(&ra));
}

#[test]
fn flags_override_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "m1.cfg", "model = model1\np = 0.05\ncode = hamming(3)\n");
    let out = swkey(&["run", "--config", &cfg, "--mode", "empirical", "--trials", "2000", "--seed", "17"]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let report = stdout(&out);
    assert_eq!(field(&report, "mode"), "empirical");
    assert_eq!(field(&report, "master_seed"), "17");
    assert_eq!(field(&report, "trials"), "2000");
    assert!(!report.contains("[exact]"));
}

#[test]
fn tsv_rows_append() {
    let dir = tempfile::tempdir().unwrap();
    let tsv = dir.path().join("sweep.tsv");
    for p in ["0.05", "0.1"] {
        let cfg_text = format!("model = model1\np = {p}\ncode = hamming(3)\n");
        let cfg = write_config(dir.path(), "sweep.cfg", &cfg_text);
        assert_eq!(swkey(&["run", "--config", &cfg, "--tsv", tsv.to_str().unwrap()]).status.code(), Some(0));
    }
    let text = std::fs::read_to_string(&tsv).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 3);
    assert!(lines[0].starts_with("model\tcode"));
    assert!(lines[1..].iter().all(|l| l.starts_with("model1\thamming(3)")));
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "bad.cfg",
        "model = model2\np = 0.1\nq = 0.3\ncode = hamming(3)\nxi = 0.15\neps_prime = 0.1\n",
    );
    let out = swkey(&["run", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("eps' > xi + epsilon"), "{}", stderr(&out));

    let cfg = write_config(dir.path(), "typo.cfg", "model = model1\np = 0.05\ncode = hamming(3)\nseed = 1\n");
    let out = swkey(&["run", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("unknown key 'seed'"));

    let out = swkey(&["run", "--config", dir.path().join("missing.cfg").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn infeasible_exact_mode_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "big.cfg", "model = model1\np = 0.05\ncode = hamming(4)\nmode = exact\n");
    let out = swkey(&["run", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(3));
    assert!(stderr(&out).contains("n=15 > 10"), "{}", stderr(&out));
    // the empirical path still works
    let out = swkey(&["run", "--config", &cfg, "--mode", "empirical", "--trials", "500"]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
}

#[test]
fn capacity_table() {
    let cases: [(&[&str], f64); 3] = [
        (&["--model", "model1", "--p", "0.11"], 0.50005),
        (&["--model", "model2", "--p", "0.1", "--q", "0.3"], 0.4558),
        (&["--model", "model3", "--links", "0.03,0.05"], 0.7136),
    ];
    for (args, expected) in cases {
        let mut full = vec!["capacity"];
        full.extend_from_slice(args);
        let out = swkey(&full);
        assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
        let text = stdout(&out);
        let cap: f64 = text
            .lines()
            .find_map(|l| l.strip_prefix("capacity"))
            .unwrap()
            .trim()
            .parse()
            .unwrap();
        assert!((cap - expected).abs() < 1e-4, "{args:?}: {cap}");
    }
    let out = swkey(&["capacity", "--model", "model1", "--p", "0.05", "--code", "hamming(3)"]);
    let text = stdout(&out);
    assert!(text.contains("rate      0.571429"), "{text}");
    assert!(text.contains("gap       0.142174"), "{text}");
    assert_eq!(swkey(&["capacity", "--model", "model1", "--p", "0.7"]).status.code(), Some(2));
}

#[test]
fn code_info_table() {
    let out = swkey(&["code-info", "--code", "hamming(3)", "--p", "0.05"]);
    let text = stdout(&out);
    assert!(text.contains("rate          0.571429"));
    assert!(text.contains("P_e           4.438"), "{text}");
    let out = swkey(&["code-info", "--code", "repetition(5)", "--p", "0.1"]);
    assert!(stdout(&out).contains("P_e           8.560000e-3"));
    let a = stdout(&swkey(&["code-info", "--code", "random_linear(10,5,3)", "--p", "0.1"]));
    let b = stdout(&swkey(&["code-info", "--code", "random_linear(10,5,3)", "--p", "0.1"]));
    assert_eq!(a, b);
    let out = swkey(&["code-info", "--code", "hamming(6)", "--p", "0.1"]);
    assert_eq!(out.status.code(), Some(0));
    assert!(stdout(&out).contains("notice"));
    assert_eq!(swkey(&["code-info", "--code", "hamming(3)", "--p", "0.5"]).status.code(), Some(2));
}

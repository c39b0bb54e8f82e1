use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn levylab(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_levylab"))
        .args(args)
        .current_dir(dir)
        .env_remove("LEVYLAB_SEED")
        .output()
        .expect("binary runs")
}

fn manifest(o: &Output) -> Value {
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    serde_json::from_slice(&o.stdout).expect("manifest is JSON")
}

#[test]
fn potential_example_writes_grid_rows() {
    let dir = tempfile::tempdir().unwrap();
    let o = levylab(
        dir.path(),
        &["simulate-potential", "--potential", "zero", "--eps", "0.01", "--T", "1", "--paths", "100", "--seed", "7", "--out", "p.csv"],
    );
    let m = manifest(&o);
    assert_eq!(m["command"], "simulate-potential");
    assert_eq!(m["seed"], 7);
    assert_eq!(m["config_hash"].as_str().unwrap().len(), 64);
    let text = std::fs::read_to_string(dir.path().join("p.csv")).unwrap();
    assert_eq!(text.lines().count(), 1 + 100 * 11);
    assert!(text.starts_with("path_id,t,x1,alive\n"));
    let paths = levylab_core::io::read_paths(text.as_bytes()).unwrap();
    assert_eq!(paths.len(), 100);
    assert!(paths.iter().all(|p| p.times().len() == 11 && !p.exploded()));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(levylab(d, &["simulate-potential", "--bogus"]).status.code(), Some(64));
    assert_eq!(levylab(d, &["no-such-command"]).status.code(), Some(64));
    let bad_eps = levylab(d, &["simulate-potential", "--potential", "zero", "--eps", "0", "--T", "1", "--seed", "1", "--out", "p.csv"]);
    assert_eq!(bad_eps.status.code(), Some(1));
    assert!(!d.join("p.csv").exists());
    let bad_expr = levylab(d, &["simulate-stable", "--alpha-expr", "1 +", "--dim", "1", "--n", "10", "--T", "1", "--seed", "1", "--out", "s.csv"]);
    assert_eq!(bad_expr.status.code(), Some(1));
    let missing = levylab(d, &["diagnose-paths", "--input", "missing.csv", "--normal", "0:1", "--out", "r.json"]);
    assert_eq!(missing.status.code(), Some(1));
    assert!(levylab(d, &["--help"]).status.success());
}

#[test]
fn seed_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let run = |out: &str, env_seed: Option<&str>, flag: Option<&str>| {
        let mut c = Command::new(env!("CARGO_BIN_EXE_levylab"));
        c.current_dir(dir.path()).env_remove("LEVYLAB_SEED");
        c.args(["simulate-potential", "--potential", "abs(x)", "--eps", "0.1", "--T", "1", "--paths", "20", "--out", out]);
        if let Some(s) = env_seed {
            c.env("LEVYLAB_SEED", s);
        }
        if let Some(s) = flag {
            c.args(["--seed", s]);
        }
        let o = c.output().unwrap();
        (o.status.success(), std::fs::read(dir.path().join(out)).ok())
    };
    let (ok_env, a) = run("a.csv", Some("5"), None);
    let (ok_flag, b) = run("b.csv", None, Some("5"));
    let (ok_other, c) = run("c.csv", None, Some("6"));
    assert!(ok_env && ok_flag && ok_other);
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn thread_count_does_not_change_output() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("t.json"), r#"{"drift": [0.5], "gamma": [[1]], "nu": {"kind": "atoms", "atoms": [{"jump": [1.0], "mass": 0.5}, {"jump": null, "mass": 0.1}]}}"#).unwrap();
    for (threads, out) in [("1", "one.csv"), ("3", "three.csv")] {
        let o = levylab(
            d,
            &["--threads", threads, "simulate-euler", "--triplet-config", "t.json", "--eps", "0.05", "--T", "2", "--paths", "200", "--seed", "9", "--out", out],
        );
        let m = manifest(&o);
        assert_eq!(m["threads"].as_u64().unwrap().to_string(), threads);
    }
    let one = std::fs::read(d.join("one.csv")).unwrap();
    assert_eq!(one, std::fs::read(d.join("three.csv")).unwrap());
    let paths = levylab_core::io::read_paths(&one[..]).unwrap();
    assert!(paths.iter().any(|p| p.exploded()), "killing atom should send some paths to the cemetery");
}

#[test]
fn rwre_writes_one_file_per_environment() {
    let dir = tempfile::tempdir().unwrap();
    let o = levylab(
        dir.path(),
        &["simulate-rwre", "--env", "iid:1:rademacher", "--eps", "0.05", "--envs", "4", "--T", "1", "--paths", "30", "--seed", "3", "--out", "envs"],
    );
    manifest(&o);
    for i in 0..4 {
        let text = std::fs::read(dir.path().join(format!("envs/env_{i}.csv"))).unwrap();
        assert_eq!(levylab_core::io::read_paths(&text[..]).unwrap().len(), 30);
    }
    let summary: Value = serde_json::from_slice(&std::fs::read(dir.path().join("envs/summary.json")).unwrap()).unwrap();
    assert!(summary.is_object());
}

#[test]
fn diagnostics_embed_report_without_out() {
    let dir = tempfile::tempdir().unwrap();
    let o = levylab(dir.path(), &["diagnose-clock", "--eps", "0.01", "--trials", "500", "--coupling-pairs", "50", "--seed", "2"]);
    let m = manifest(&o);
    assert_eq!(m["report"]["coupling"]["mismatches"], 0);
    assert!(m["report"]["doob"]["passed"].as_bool().unwrap());
    assert!(m["outputs"].as_array().unwrap().is_empty());
}

#[test]
fn diagnose_paths_compares_against_reference() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    for (seed, out) in [("1", "a.csv"), ("2", "b.csv")] {
        manifest(&levylab(d, &["simulate-potential", "--potential", "zero", "--eps", "0.05", "--T", "1", "--paths", "500", "--seed", seed, "--out", out]));
    }
    let m = manifest(&levylab(d, &["diagnose-paths", "--input", "a.csv", "--reference", "b.csv", "--t", "1"]));
    let p = m["report"]["two_sample"]["p_value"].as_f64().unwrap();
    assert!(p > 1e-4, "{m}");
}

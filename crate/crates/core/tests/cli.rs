use std::path::Path;
use std::process::{Command, Output};

fn rrsc(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rrsc"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, name: &str, body: &str) {
    std::fs::write(dir.join(name), body).unwrap();
}

const SMALL: &str = r#"{"mechanisms": ["rrsc", "privunitg", "sqkr", "mmrc"], "eps": [1, 2],
    "bits": "eq_eps", "n": 40, "d": 12, "rounds": 2, "calib_trials": 10000, "seed": 5, "out": "out.csv"}"#;

#[test]
fn missing_config_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = rrsc(dir.path(), &["sweep", "--config", "missing.json"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing.json"));
}

#[test]
fn bad_arguments_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(rrsc(dir.path(), &["--bogus"]).status.code(), Some(1));
    assert_eq!(rrsc(dir.path(), &["sweep"]).status.code(), Some(1));
    assert_eq!(rrsc(dir.path(), &["--help"]).status.code(), Some(0));
}

#[test]
fn invalid_cells_fail_before_any_output() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path(), "bad.json", &SMALL.replace("[1, 2]", "[1.5, 2]"));
    let out = rrsc(dir.path(), &["sweep", "--config", "bad.json"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("eps=1.5"));
    assert!(!dir.path().join("out.csv").exists());
    assert!(!dir.path().join("calib_cache.json").exists());
}

#[test]
fn unwritable_output_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path(), "c.json", SMALL);
    let out = rrsc(dir.path(), &["sweep", "--config", "c.json", "--out", "no/such/dir/out.csv"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn sweep_is_reproducible_across_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path(), "c.json", SMALL);
    let run = |out: &str, threads: &str, cache: &str| {
        let o = rrsc(
            dir.path(),
            &["sweep", "--config", "c.json", "--out", out, "--threads", threads, "--calib-cache", cache],
        );
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        std::fs::read_to_string(dir.path().join(out)).unwrap()
    };
    let a = run("a.csv", "1", "cache_a.json");
    let b = run("b.csv", "3", "cache_b.json");
    assert_eq!(a, b);
    let lines: Vec<&str> = a.lines().collect();
    assert_eq!(lines[0], "mechanism,eps,bits,n,d,round,k,r_k,l2_error,wall_ms");
    assert_eq!(lines.len(), 1 + 4 * 2 * 2);
    assert!(lines[1].starts_with("rrsc,1,1,40,12,0,1,"));
    let pu = lines.iter().find(|l| l.starts_with("privunitg")).unwrap();
    assert!(pu.starts_with("privunitg,1,,40,12,0,,,"), "{pu}");

    let reseeded = rrsc(dir.path(), &["sweep", "--config", "c.json", "--out", "c.csv", "--seed", "6"]);
    assert!(reseeded.status.success());
    assert_ne!(std::fs::read_to_string(dir.path().join("c.csv")).unwrap(), a);
}

#[test]
fn calibrate_then_show() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path(), "c.json", SMALL);
    let first = rrsc(dir.path(), &["calibrate", "--config", "c.json"]);
    assert!(first.status.success());
    assert!(String::from_utf8_lossy(&first.stderr).contains("0 hits, 4 misses"));
    let second = rrsc(dir.path(), &["calibrate", "--config", "c.json"]);
    assert!(String::from_utf8_lossy(&second.stderr).contains("4 hits, 0 misses"));

    let shown = rrsc(dir.path(), &["show-calib"]);
    assert!(shown.status.success());
    let text = String::from_utf8_lossy(&shown.stdout);
    assert!(text.starts_with("variant,M,d,eps,k,trials,seed,ck_value,ck_stderr,r_k"));
    assert!(text.contains("simplex,2,12,1,1,10000,5,"));
    assert!(text.contains("mmrc,4,12,2,0,10000,5,"));

    let timed = SMALL.replace("\"out.csv\"", "\"t.csv\", \"timing\": true");
    write_config(dir.path(), "t.json", &timed);
    assert!(rrsc(dir.path(), &["sweep", "--config", "t.json"]).status.success());
    let csv = std::fs::read_to_string(dir.path().join("t.csv")).unwrap();
    assert!(csv.lines().skip(1).all(|l| !l.ends_with(',')));
}

#[test]
fn selftest_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = rrsc(dir.path(), &["selftest"]);
    assert!(out.status.success());
    assert!(!String::from_utf8_lossy(&out.stdout).contains("FAIL"));
}

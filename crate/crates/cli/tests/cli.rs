use std::fs;
use std::process::{Command, Output};

fn acx(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_acx")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

#[test]
fn identities_pass_with_analytic_jets() {
    let o = acx(&["identities", "--set", "forms=4"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let out = stdout(&o);
    assert!(out.starts_with("# acx "));
    assert!(out.contains("# certificate residual_below_tol = true"));
}

#[test]
fn unknown_key_is_a_usage_error() {
    let o = acx(&["tj", "--set", "bogus=1"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("bogus"));
}

#[test]
fn bad_flag_is_a_usage_error() {
    assert_eq!(acx(&["tj", "--no-such-flag"]).status.code(), Some(1));
    assert_eq!(acx(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(acx(&["--help"]).status.code(), Some(0));
}

#[test]
fn failing_certificate_exits_with_two() {
    let o = acx(&["sobolev", "--set", "levels=1,2,3", "--set", "directions=8"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stdout(&o).contains("# certificate final_ratio_below_1e-2 = false"));
}

#[test]
fn integrability_expectation() {
    let ok = acx(&["integrability", "--set", "structure=ja:x2", "--set", "expect=integrable"]);
    assert_eq!(ok.status.code(), Some(0));
    let bad = acx(&["integrability", "--set", "structure=ja:x1", "--set", "expect=integrable"]);
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn config_file_and_output_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    let out = dir.path().join("out.csv");
    fs::write(&cfg, "# point mass\nA = 1\nk_list = 4, 8\ndirections = 200\n").unwrap();
    let o = acx(&["pointmass", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(&out).unwrap();
    assert!(text.contains("# A = 1"));
    assert!(text.contains("# certificate inside_bracket = true"));
    assert_eq!(text.lines().filter(|l| l.starts_with("k,")).count(), 2);

    fs::write(&cfg, "A = 1\nA = 2\n").unwrap();
    assert_eq!(acx(&["pointmass", "--config", cfg.to_str().unwrap()]).status.code(), Some(1));
}

#[test]
fn flags_override_config_values() {
    let o = acx(&["pointmass", "--A", "0.5", "--k-list", "8", "--set", "directions=100"]);
    assert_eq!(o.status.code(), Some(0));
    let out = stdout(&o);
    assert!(out.contains("# A = 0.5"));
    assert!(out.contains("# k_list = 8"));
}

#[test]
fn same_seed_gives_identical_output() {
    let args = ["tj", "--set", "structure=ja:x1*x2", "--seed", "9"];
    let a = acx(&args);
    let b = acx(&args);
    assert_eq!(a.stdout, b.stdout);
    let c = acx(&["tj", "--set", "structure=ja:x1*x2", "--seed", "10"]);
    assert_ne!(a.stdout, c.stdout);
}

#[test]
fn json_lines_are_valid() {
    let o = acx(&["tj", "--set", "structure=ja:x1", "--format", "json"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let lines: Vec<serde_json::Value> =
        stdout(&o).lines().map(|l| serde_json::from_str(l).expect("valid json")).collect();
    assert_eq!(lines[0]["command"], "tj");
    assert_eq!(lines[0]["config"]["structure"], "ja:x1");
    let certs = &lines.last().unwrap()["certificates"];
    assert_eq!(certs["bracket_form_within_tol"], true);
    assert!(lines[1..lines.len() - 1].iter().all(|r| r["t1"].is_number()));
}

use std::path::PathBuf;
use std::process::{Command, Output};

fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_levy-scheme"));
    cmd.env("LEVY_SCHEME_THREADS", "1");
    cmd
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn scratch(name: &str) -> PathBuf {
    let dir = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("cli");
    std::fs::create_dir_all(&dir).unwrap();
    dir.join(name)
}

fn header(out: &[u8]) -> String {
    String::from_utf8_lossy(out).lines().next().unwrap_or_default().to_string()
}

#[test]
fn solve_writes_a_reproducible_surface() {
    let (a, b) = (scratch("solve_a.csv"), scratch("solve_b.csv"));
    for (path, threads) in [(&a, "1"), (&b, "4")] {
        let out = bin()
            .env("LEVY_SCHEME_THREADS", threads)
            .args([
                "solve", "--problem", "linear-symbol", "--n", "20", "--samples", "10000", "--seed", "7", "--output",
                path.to_str().unwrap(),
            ])
            .output()
            .expect("binary runs");
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let (first, second) = (std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert_eq!(header(&first), "t,x,value");
    assert!(first == second, "same seed gave different bytes across thread counts");
}

#[test]
fn rate_writes_the_error_table() {
    let out = run(&[
        "rate", "--problem", "linear-symbol", "--ladder", "0.1,0.05,0.025", "--base-samples", "200", "--base-dx", "0.2",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(header(text.as_bytes()), "h,kappa,theta_kappa,error");
    assert_eq!(text.lines().count(), 4);
}

#[test]
fn mcq_and_validate_measure_headers() {
    let out = run(&["mcq", "--problem", "merton-linear", "--kappa", "0", "--h", "0.04,0.01", "--samples", "2000"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(header(&out.stdout), "kappa,h,n_samples,mcq_value,std_error,quadrature_value,abs_error");
    assert_eq!(String::from_utf8_lossy(&out.stdout).lines().count(), 3);

    let out = run(&["validate-measure", "--measure", r#"{"kind":"power-tail","amplitude":1,"alpha":1}"#]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(header(&out.stdout), "kappa,functional,closed_form,quadrature,rel_error");
}

#[test]
fn bad_config_exits_with_two_and_a_line() {
    let path = scratch("bad.json");
    std::fs::write(&path, "{\n  \"problem\": {\"key\": \"linear-symbol\"},\n  \"scheme\": {\"n\": 10, \"bogus\": 1}\n}\n").unwrap();
    let out = run(&["solve", "--config", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains(&format!("{}:3:", path.display())), "{err}");

    let out = run(&["solve", "--problem", "no-such-problem"]);
    assert_eq!(out.status.code(), Some(2));
    let out = run(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn numerical_failures_exit_with_three() {
    // the rate rule cannot meet both bounds for this tail
    let out = run(&[
        "solve", "--problem", "linear-symbol", "--n", "10", "--samples", "10", "--kappa-rule", "rate", "--config",
        write_power_tail_config().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

fn write_power_tail_config() -> PathBuf {
    let path = scratch("heavy.json");
    std::fs::write(
        &path,
        r#"{
  "problem": {"key": "linear-symbol"},
  "measure": {"kind": "power-tail", "amplitude": 1, "alpha": 1.9},
  "scheme": {"n": 10, "samples": 10, "dx": 0.5}
}
"#,
    )
    .unwrap();
    path
}

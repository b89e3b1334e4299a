use std::path::Path;
use std::process::{Command, Output};

fn dipqrb(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dipqrb")).args(args).current_dir(dir).output().unwrap()
}

#[test]
fn rate_scan_writes_one_row_per_point() {
    let dir = tempfile::tempdir().unwrap();
    let out = dipqrb(
        &["rate-scan", "--mode", "fully_di", "--constraints", "coarse", "--eta-from", "0.8", "--eta-to", "1.0", "--step", "0.1"],
        dir.path(),
    );
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "eta_c,pg_upper,p_gen,rate_per_heralded_event,solver_status,gap");
    assert_eq!(lines.len(), 4);
    let rates: Vec<f64> = lines[1..].iter().map(|l| l.split(',').nth(3).unwrap().parse().unwrap()).collect();
    assert!(rates.windows(2).all(|w| w[1] >= w[0] - 1e-6), "{rates:?}");
    assert!(rates[2] > 0.2);

    let plot = dipqrb(&["rate-scan", "--mode", "fully_di", "--constraints", "coarse", "--eta-from", "1.0", "--plot"], dir.path());
    let text = String::from_utf8(plot.stdout).unwrap();
    assert_eq!(text.lines().last().unwrap().split(',').count(), 2);
}

#[test]
fn usage_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(dipqrb(&["certify", "--level", "0"], dir.path()).status.code(), Some(2));
    assert_eq!(dipqrb(&["certify", "--eta-c", "1.5"], dir.path()).status.code(), Some(2));
    assert_eq!(dipqrb(&["extract"], dir.path()).status.code(), Some(2));
    std::fs::write(dir.path().join("bad.toml"), "[optics]\netac = 0.5\n").unwrap();
    assert_eq!(dipqrb(&["simulate", "--config", "bad.toml"], dir.path()).status.code(), Some(2));
}

#[test]
fn certify_coarse_fully_di() {
    let dir = tempfile::tempdir().unwrap();
    let out = dipqrb(&["certify", "--mode", "fully_di", "--constraints", "coarse", "--eta-c", "1.0"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(!out.stdout.is_empty());
}

#[test]
fn empty_input_extracts_nothing() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("empty.bin"), b"").unwrap();
    let out = dipqrb(&["extract", "--in", "empty.bin", "--certified-bits", "0"], dir.path());
    assert!(out.status.success());
    assert!(String::from_utf8(out.stdout).unwrap().trim().is_empty());
}

#[test]
fn local_session_then_check_then_extract() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let run = dipqrb(&["run-client", "--local", "--mode", "fully_di", "--rounds", "2000", "--out", "t.jsonl"], d);
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    let check = dipqrb(&["check", "--transcript", "t.jsonl"], d);
    assert!(check.status.success());
    assert!(String::from_utf8(check.stdout).unwrap().lines().all(|l| l.starts_with("PASS")));

    // 2000 client bits; hash down to 16 with an all-ones seed
    std::fs::write(d.join("seed.hex"), "ff".repeat((2000 + 16 - 1usize).div_ceil(8))).unwrap();
    let ex = dipqrb(&["extract", "--transcript", "t.jsonl", "--seed", "seed.hex", "--out-bits", "16"], d);
    assert!(ex.status.success(), "{}", String::from_utf8_lossy(&ex.stderr));
    assert_eq!(String::from_utf8(ex.stdout).unwrap().trim().len(), 4);

    // a tampered record fails the checks with exit 1
    let text = std::fs::read_to_string(d.join("t.jsonl")).unwrap();
    let tampered = text.replacen("\"i\":5,", "\"i\":6,", 1);
    std::fs::write(d.join("bad.jsonl"), tampered).unwrap();
    assert_eq!(dipqrb(&["check", "--transcript", "bad.jsonl"], d).status.code(), Some(1));
}

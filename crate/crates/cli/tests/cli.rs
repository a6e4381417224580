use std::path::Path;
use std::process::{Command, Output};

use qgemm_lab_cli::BenchReport;

const SMALL: &str = r#"
seed = 3
shapes = [[2, 256, 16, 64], [3, 200, 8, 40]]
variants = ["baseline", "smb", "vml+ila", "opt4gptq"]
perm_mode = ["none", "seeded-shuffle"]
"#;

fn qgemm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qgemm-lab"))
        .args(args)
        .env_remove("QGEMM_LAB_THREADS")
        .output()
        .expect("spawn qgemm-lab")
}

fn write_config(dir: &Path, text: &str) -> String {
    let p = dir.join("run.toml");
    std::fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn run_writes_reports_and_report_rerenders_csv() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = dir.path().join("out");
    let o = qgemm(&["run", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("run: 8 rows, 0 failed"));

    let csv = std::fs::read_to_string(out.join("report.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 9);
    assert!(lines[1].starts_with("s0-none-seed3,2,256,16,64,false,false,false,"));
    assert!(lines[1].ends_with(",0.0000,0.0000,0.0000,0.0000"));
    assert!(lines[5].starts_with("s1-seeded-shuffle-seed3,3,200,8,40,"));

    let report =
        BenchReport::from_json(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report.seed, 3);
    assert!(report.summary.passed);

    let again = dir.path().join("again");
    let o = qgemm(&[
        "report",
        "--input",
        out.join("report.json").to_str().unwrap(),
        "--out",
        again.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(
        std::fs::read_to_string(again.join("report.csv")).unwrap(),
        csv
    );
}

#[test]
fn seed_override_and_thread_cap_keep_output_stable() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let o = qgemm(&[
        "run",
        "--config",
        &cfg,
        "--seed",
        "11",
        "--out",
        a.to_str().unwrap(),
    ]);
    assert!(o.status.success());
    let o = Command::new(env!("CARGO_BIN_EXE_qgemm-lab"))
        .args([
            "run",
            "--config",
            &cfg,
            "--seed",
            "11",
            "--out",
            b.to_str().unwrap(),
        ])
        .env("QGEMM_LAB_THREADS", "1")
        .output()
        .unwrap();
    assert!(o.status.success());
    for f in ["report.csv", "report.json"] {
        assert_eq!(
            std::fs::read(a.join(f)).unwrap(),
            std::fs::read(b.join(f)).unwrap(),
            "{f}"
        );
    }
    assert!(std::fs::read_to_string(a.join("report.csv"))
        .unwrap()
        .contains("-seed11,"));
}

#[test]
fn bad_thread_env_is_a_config_error() {
    let o = Command::new(env!("CARGO_BIN_EXE_qgemm-lab"))
        .args([
            "pack",
            "--out",
            tempfile::tempdir().unwrap().path().to_str().unwrap(),
        ])
        .env("QGEMM_LAB_THREADS", "0")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).starts_with("error kind=config message="));
}

#[test]
fn pack_is_reproducible_and_accepts_single_group() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "shapes = [[1, 256, 16, 256], [2, 64, 8, 8]]\nperm_mode = \"reversed\"\n",
    );
    let mut digests = Vec::new();
    for sub in ["p1", "p2"] {
        let out = dir.path().join(sub);
        let o = qgemm(&["pack", "--config", &cfg, "--out", out.to_str().unwrap()]);
        assert!(o.status.success(), "{}", stderr(&o));
        let text = stdout(&o);
        assert_eq!(text.lines().count(), 2);
        assert!(text.lines().all(|l| l.starts_with("sha256:")));
        digests.push(text);
        let bytes = std::fs::read(out.join("s0-reversed-seed0.gq4s")).unwrap();
        let w = qgemm_lab::QuantizedWeight::from_bytes(&bytes).unwrap();
        assert_eq!((w.k(), w.group_size(), w.groups()), (256, 256, 1));
        assert!(out.join("pack.json").exists());
    }
    assert_eq!(digests[0], digests[1]);
}

#[test]
fn shape_errors_exit_nonzero_with_machine_line() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "shapes = [[1, 100, 16, 10]]\n");
    let o = qgemm(&[
        "pack",
        "--config",
        &cfg,
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
    let line = stderr(&o);
    assert!(line.starts_with("error kind=shape message=\""), "{line}");
    assert_eq!(line.lines().count(), 1);
}

#[test]
fn verify_rejects_corrupted_weights() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let o = qgemm(&[
        "pack",
        "--config",
        &cfg,
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(o.status.success());
    let good = dir.path().join("s0-none-seed3.gq4s");
    let o = qgemm(&[
        "verify",
        "--config",
        &cfg,
        "--weights",
        good.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stdout(&o));
    assert!(stdout(&o).contains("failed") && stdout(&o).contains(", 0 failed"));

    let mut bytes = std::fs::read(&good).unwrap();
    bytes.truncate(bytes.len() - 3);
    let bad = dir.path().join("bad.gq4s");
    std::fs::write(&bad, bytes).unwrap();
    let o = qgemm(&[
        "verify",
        "--config",
        &cfg,
        "--weights",
        bad.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).contains("FAIL weights-file:"));
    assert!(stdout(&o).contains("FormatError"));
    assert!(stderr(&o).starts_with("error kind=check"));
}

#[test]
fn zero_tolerance_exposes_smb_reordering() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let o = qgemm(&["verify", "--config", &cfg, "--tolerance", "0"]);
    assert_eq!(o.status.code(), Some(1));
    let text = stdout(&o);
    assert!(
        text.lines()
            .any(|l| l.starts_with("FAIL smb-vs-baseline:s0-none-seed3:smb ")),
        "{text}"
    );

    let o = qgemm(&[
        "run",
        "--config",
        &cfg,
        "--tolerance",
        "0",
        "--out",
        dir.path().join("r").to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("within_tolerance=false"));
    // Rows are still written so failures can be inspected.
    assert!(dir.path().join("r/report.csv").exists());
}

#[test]
fn unknown_config_keys_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "sed = 4\n");
    let o = qgemm(&["run", "--config", &cfg, "--strict"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).starts_with("error kind=config"));
}

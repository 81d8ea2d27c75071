use std::path::Path;
use std::process::{Command, Output};

fn icssm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_icssm"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn error_json(out: &Output) -> serde_json::Value {
    let stderr = String::from_utf8_lossy(&out.stderr);
    let line = stderr
        .lines()
        .rev()
        .find(|l| l.starts_with('{'))
        .expect("error json on stderr");
    serde_json::from_str(line).unwrap()
}

fn generate(dir: &Path, scenario: &str, quarters: &str) {
    let out = icssm(&[
        "generate",
        "--scenario",
        scenario,
        "--seed",
        "4",
        "--quarters",
        quarters,
        "--reports-per-quarter",
        "300",
        "--out",
        dir.to_str().unwrap(),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn p(dir: &Path, name: &str) -> String {
    dir.join(name).to_str().unwrap().to_string()
}

#[test]
fn generate_then_check_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("d");
    generate(&dir, "concordant_cluster", "12");
    let out = icssm(&["generate", "--check", dir.to_str().unwrap()]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("match"));

    let reports = dir.join("reports.tsv");
    let text = std::fs::read_to_string(&reports).unwrap();
    let mut lines: Vec<&str> = text.lines().collect();
    lines.remove(5);
    std::fs::write(&reports, lines.join("\n") + "\n").unwrap();
    let out = icssm(&["generate", "--check", dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_json(&out)["error"], "validation");
}

#[test]
fn validate_prints_summary() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    generate(d, "null", "8");
    let out = icssm(&[
        "validate",
        "--reports",
        &p(d, "reports.tsv"),
        "--ontology",
        &p(d, "ontology.tsv"),
        "--reference",
        &p(d, "reference.tsv"),
    ]);
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["ontology"]["roots"], 1);
    assert_eq!(v["reports"]["summary"]["drugs"], 4);
    assert_eq!(
        v["reference"]["negative_control_flags"]
            .as_array()
            .unwrap()
            .len(),
        0
    );
}

#[test]
fn cyclic_ontology_exits_with_2() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("cyclic.tsv");
    std::fs::write(
        &path,
        "N\tA\tOTHER\ta\nN\tB\tOTHER\tb\nN\tC\tOTHER\tc\nE\tA\tB\tISA\nE\tB\tC\tISA\nE\tC\tA\tISA\n",
    )
    .unwrap();
    let out = icssm(&["validate", "--ontology", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let err = error_json(&out);
    assert_eq!(err["error"], "cycle");
    assert_eq!(err["exit_code"], 2);
}

#[test]
fn missing_file_exits_with_1() {
    let tmp = tempfile::tempdir().unwrap();
    let out = icssm(&[
        "run",
        "--methods",
        "IC",
        "--reports",
        "/definitely/not/here.tsv",
        "--out",
        tmp.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(error_json(&out)["error"], "io");
}

#[test]
fn config_file_errors_exit_with_2() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("c.toml");
    std::fs::write(&cfg, "min_ssm = 0.3\nminssm = 0.4\n").unwrap();
    let out = icssm(&["--config", cfg.to_str().unwrap(), "validate"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(error_json(&out)["message"]
        .as_str()
        .unwrap()
        .contains("minssm"));

    std::fs::write(&cfg, "min_ssm = 1.5\n").unwrap();
    let out = icssm(&[
        "--config",
        cfg.to_str().unwrap(),
        "run",
        "--methods",
        "IC",
        "--reports",
        "x",
        "--out",
        tmp.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unknown_subcommand_flag_exits_with_2() {
    assert_eq!(icssm(&["sweep", "--nope"]).status.code(), Some(2));
    assert_eq!(
        icssm(&["generate", "--scenario", "nope", "--out", "x"])
            .status
            .code(),
        Some(2)
    );
}

#[test]
fn run_evaluate_compare_sweep_write_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path().join("d");
    generate(&d, "dominated_method", "10");
    let out_dir = tmp.path().join("o");
    let o = out_dir.to_str().unwrap();
    let (r, g, f) = (
        p(&d, "reports.tsv"),
        p(&d, "ontology.tsv"),
        p(&d, "reference.tsv"),
    );
    let common = [
        "--reports",
        &r,
        "--ontology",
        &g,
        "--reference",
        &f,
        "--out",
        o,
        "--n-samples",
        "1000",
    ];
    for (cmd, extra) in [
        ("run", vec!["--reference-only"]),
        ("evaluate", vec![]),
        ("compare", vec!["--bootstrap-iter", "50"]),
        (
            "sweep",
            vec![
                "--min-ssm-grid",
                "0.2",
                "--w-grid",
                "0.8",
                "--vague-sd-grid",
                "1",
                "--threshold-grid",
                "0.5",
            ],
        ),
    ] {
        let mut args = vec![cmd];
        args.extend(common);
        args.extend(extra);
        let out = icssm(&args);
        assert!(
            out.status.success(),
            "{cmd}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
    }
    for f in [
        "results_IC.csv",
        "results_IC_HLGT.csv",
        "results_IC_SSM.csv",
        "metrics.csv",
        "detections.csv",
        "compare.csv",
        "compare_delta.csv",
        "bootstrap.json",
        "sweep.csv",
        "sweep_grid.toml",
        "effective_config.toml",
        "README.md",
    ] {
        assert!(out_dir.join(f).exists(), "{f} missing");
    }
    let sweep = std::fs::read_to_string(out_dir.join("sweep.csv")).unwrap();
    // Header, then per method: reference row and each axis at its one grid
    // value plus the reference value.
    assert_eq!(sweep.lines().count(), 1 + 3 * (1 + 4 * 2));
    let header = std::fs::read_to_string(out_dir.join("results_IC_SSM.csv")).unwrap();
    assert!(header.starts_with("drug,event,cutoff,a,b,c,d,oe,pme,var,ci_low,ci_high,signal"));

    // The snapshot reproduces the run.
    let snap = out_dir.join("effective_config.toml");
    let again = tmp.path().join("again");
    let out = icssm(&[
        "--config",
        snap.to_str().unwrap(),
        "evaluate",
        "--out",
        again.to_str().unwrap(),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert_eq!(
        std::fs::read(out_dir.join("metrics.csv")).unwrap(),
        std::fs::read(again.join("metrics.csv")).unwrap()
    );
}

#[test]
fn plain_ic_needs_no_ontology() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path().join("d");
    generate(&d, "null", "6");
    let o = tmp.path().join("o");
    let out = icssm(&[
        "run",
        "--methods",
        "IC",
        "--reports",
        &p(&d, "reports.tsv"),
        "--out",
        o.to_str().unwrap(),
        "--n-samples",
        "1000",
        "--threshold",
        "-1",
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(o.join("results_IC.csv").exists());
    assert!(!o.join("results_IC_SSM.csv").exists());

    let out = icssm(&[
        "run",
        "--methods",
        "IC_SSM",
        "--reports",
        &p(&d, "reports.tsv"),
        "--out",
        o.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

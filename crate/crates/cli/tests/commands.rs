use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command as Process;

use arex::dataio::{ExperimentConfig, ExperimentKind};
use arex::theory::Verdict;
use arex::Error;
use arex_cli::{run, run_check, run_noharm, summarize, Command, RunManifest, RunStatus, CONFIG_FILE, MANIFEST_FILE};

fn config(name: &str) -> ExperimentConfig {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name);
    ExperimentConfig::load(&path).unwrap()
}

fn files(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if p.file_name().unwrap() != MANIFEST_FILE {
                out.push((p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn noharm_default_population() {
    let r = run_noharm(&config("noharm.toml")).unwrap();
    let arex = summarize(&r.arex).unwrap();
    let taylor = summarize(&r.taylor).unwrap();
    assert_eq!(arex.harmed, 0);
    assert!(arex.min >= -1e-12);
    assert!((0.29..=0.69).contains(&taylor.harmed_fraction), "{}", taylor.harmed_fraction);
}

#[test]
fn noharm_rerun_from_snapshot_is_bitwise_identical() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let mut cfg = config("noharm.toml");
    cfg.seed = 7;
    let report = run(Command::Noharm, cfg, &a, None).unwrap();
    assert!(report.failed.is_empty());
    let snapshot = ExperimentConfig::load(&a.join(CONFIG_FILE)).unwrap();
    run(Command::Noharm, snapshot, &b, None).unwrap();
    assert_eq!(files(&a), files(&b));
    let manifest = RunManifest::load(&a.join(MANIFEST_FILE)).unwrap();
    assert_eq!(manifest.status, RunStatus::Completed);
    assert_eq!(manifest.seed, 7);
    assert_eq!(manifest.config.as_bytes(), fs::read(a.join(CONFIG_FILE)).unwrap());
    assert!(manifest.files.iter().any(|f| f == "utility_changes.csv"));
}

#[test]
fn tangent_surrogate_is_flagged_at_two() {
    let r = run_check(&config("check-tangent.toml")).unwrap();
    assert_eq!(r.necessary.verdict, Verdict::Violated);
    let w = r.necessary.witness.unwrap();
    assert_eq!((w.x, w.lhs, w.rhs), (vec![2.0], 30.0, 21.0));
    assert!(r.harm.unwrap() < 0.0);
}

#[test]
fn disclosing_the_model_passes_both_checks() {
    let r = run_check(&config("check-identity.toml")).unwrap();
    assert_eq!(r.necessary.verdict, Verdict::HoldsOnDomain);
    assert_eq!(r.sufficient.verdict, Verdict::HoldsOnDomain);
    assert!(r.witness.is_none());
}

#[test]
fn check_writes_report_and_witness() {
    let dir = tempfile::tempdir().unwrap();
    run(Command::Check, config("check-tangent.toml"), dir.path(), None).unwrap();
    let witness = fs::read_to_string(dir.path().join("witness.csv")).unwrap();
    assert_eq!(witness, "x,cost,lower_set,is_witness\n2.0,25.5,true,true\n");
    let report = fs::read_to_string(dir.path().join("condition_report.txt")).unwrap();
    assert!(report.contains("verdict: violated"));
}

#[test]
fn missing_credit_file_is_a_path_error() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("absent.data");
    let err = run(Command::CreditRrm, config("credit-rrm.toml"), &dir.path().join("out"), Some(&missing)).unwrap_err();
    assert!(matches!(err, Error::Io { ref path, .. } if *path == missing), "{err}");
    let manifest = RunManifest::load(&dir.path().join("out").join(MANIFEST_FILE)).unwrap();
    assert_eq!(manifest.status, RunStatus::Failed);
}

#[test]
fn credit_without_data_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig::new(ExperimentKind::CreditRrm);
    let err = run(Command::CreditRrm, cfg, dir.path(), None).unwrap_err();
    assert!(matches!(err, Error::Config { ref path, .. } if path == "credit.data"), "{err}");
}

#[test]
fn unknown_config_keys_are_reported_with_their_path() {
    let err = ExperimentConfig::from_toml("kind = \"noharm\"\n[noharm]\nagentz = 3\n").unwrap_err();
    assert!(matches!(err, Error::Config { ref path, .. } if path.starts_with("noharm")), "{err}");
}

#[test]
fn binary_prints_examples() {
    let out = Process::new(env!("CARGO_BIN_EXE_arex")).args(["check", "--examples"]).output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("U([2, 5]): -3\n") && text.contains("U([2, 8]): 12\n"));
    assert!(text.contains("true utility at base: -25\n") && text.contains("after responding: -31\n"));
}

#[test]
fn binary_requires_a_config_and_honors_the_output_root() {
    let out = Process::new(env!("CARGO_BIN_EXE_arex")).arg("noharm").output().unwrap();
    assert!(!out.status.success());
    let root = tempfile::tempdir().unwrap();
    let cfg = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/check-identity.toml");
    let out = Process::new(env!("CARGO_BIN_EXE_arex"))
        .args(["check", "--seed", "3", "--config"])
        .arg(&cfg)
        .env("AREX_OUTPUT_ROOT", root.path())
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(root.path().join("theory-check-seed3").join("witness.csv").is_file());
}

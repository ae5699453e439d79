use std::path::Path;
use std::process::Command;

const BIN: &str = env!("CARGO_BIN_EXE_bpire");

fn write_spec(dir: &Path, body: &str) -> std::path::PathBuf {
    let p = dir.join("spec.toml");
    std::fs::write(&p, body).unwrap();
    p
}

fn run(args: &[&str]) -> (i32, String, String) {
    let out = Command::new(BIN).args(args).env_remove("BPIRE_WORKERS").output().unwrap();
    (out.status.code().unwrap(), String::from_utf8_lossy(&out.stdout).into(), String::from_utf8_lossy(&out.stderr).into())
}

const T1: &str = r#"
target = "T1_ratio"
n_values = [12, 22]
n_samples = 2e4
master_seed = 11
i = 2

[law]
family = "gaussian"
mu = -1.5
sigma2 = 1.0
"#;

#[test]
fn list_targets_names_everything() {
    let (code, stdout, _) = run(&["list-targets"]);
    assert_eq!(code, 0);
    for t in ["T1_fixedN", "T1_ratio", "T2_fixedN", "T2_ratio", "T3_fixedN", "T3_fixed_i", "T3_ratio", "L5_gh", "L5_h", "oracle_equivalence", "harmonicity", "bridge"] {
        assert!(stdout.contains(t), "{t} missing from\n{stdout}");
    }
}

#[test]
fn run_writes_table_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write_spec(dir.path(), T1);
    let out = dir.path().join("out");
    let (code, _, err) = run(&["run", spec.to_str().unwrap(), "--out", out.to_str().unwrap(), "--workers", "2"]);
    assert_eq!(code, 0, "{err}");
    let csv = std::fs::read_to_string(out.join("T1_ratio.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
    assert!(csv.starts_with("n,estimate,stderr,normalized,ratio_to_prev\n"));
    let summary: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("T1_ratio.summary.json")).unwrap()).unwrap();
    assert_eq!(summary["master_seed"], 11);
    assert_eq!(summary["pass"], true);
}

#[test]
fn same_seed_same_bytes_and_seed_override_changes_them() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write_spec(dir.path(), T1);
    let csv_for = |name: &str, extra: &[&str]| {
        let out = dir.path().join(name);
        let mut args = vec!["run", spec.to_str().unwrap(), "--out", out.to_str().unwrap()];
        args.extend_from_slice(extra);
        assert_eq!(run(&args).0, 0);
        std::fs::read(out.join("T1_ratio.csv")).unwrap()
    };
    let a = csv_for("a", &["--workers", "1"]);
    let b = csv_for("b", &["--workers", "3"]);
    let c = csv_for("c", &["--seed", "12"]);
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write_spec(dir.path(), &T1.replace("[law]", "[lwa]"));
    let (code, _, err) = run(&["run", spec.to_str().unwrap()]);
    assert_eq!(code, 2);
    assert!(err.contains("law"), "{err}");

    let spec = write_spec(dir.path(), &T1.replace("T1_ratio", "T9"));
    assert_eq!(run(&["run", spec.to_str().unwrap()]).0, 2);
    assert_eq!(run(&["run", dir.path().join("missing.toml").to_str().unwrap()]).0, 2);
}

#[test]
fn regime_mismatch_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    // a strong law asked for a weak-regime target
    let spec = write_spec(dir.path(), &T1.replace("T1_ratio", "T3_ratio"));
    let (code, _, err) = run(&["run", spec.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code, 3, "{err}");

    let lattice = "target = \"T1_ratio\"\nn_values = [12]\n[law]\nfamily = \"two_point\"\nx_minus = -2.0\nx_plus = 1.0\np_plus = 0.3\n";
    let spec = write_spec(dir.path(), lattice);
    assert_eq!(run(&["run", spec.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]).0, 3);
}

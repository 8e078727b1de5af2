use std::path::Path;
use std::process::Command;

use sha2::{Digest, Sha256};

fn nmosc(args: &[&str], cwd: &Path) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_nmosc")).args(args).current_dir(cwd).output().expect("binary runs")
}

/// Data rows of a CSV written by the binary, without `#` headers and column names.
fn rows(path: &Path) -> Vec<Vec<String>> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#'))
        .skip(1)
        .map(|l| l.split(',').map(String::from).collect())
        .collect()
}

#[test]
fn spectrum_matches_library_and_manifest_hashes_files() {
    let dir = tempfile::tempdir().unwrap();
    let out = nmosc(&["spectrum", "--pair", "2,2", "--eta", "1.0", "--dim", "20", "--out", "run"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let run = dir.path().join("run");

    let p = nmosc::ModelParams::new(2, 2, 1.0, 20);
    let spec = nmosc::liouvillian::spectrum(&p, 4).unwrap();
    let table = rows(&run.join("spectrum.csv"));
    assert_eq!(table.len(), 4);
    for (r, l) in table.iter().zip(&spec.eigenvalues) {
        let re: f64 = r[6].parse().unwrap();
        assert!((re - l.re).abs() < 1e-9 * l.norm().max(1.0));
    }

    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(run.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["kind"], "spectrum");
    assert_eq!(manifest["points"][0]["params"]["dim"], 20);
    let files = manifest["files"].as_array().unwrap();
    assert!(files.iter().any(|f| f["path"] == "spectrum.csv"));
    for f in files {
        let bytes = std::fs::read(run.join(f["path"].as_str().unwrap())).unwrap();
        let digest: String = Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect();
        assert_eq!(f["sha256"].as_str().unwrap(), digest);
    }
}

#[test]
fn csv_headers_carry_metadata() {
    let dir = tempfile::tempdir().unwrap();
    let out = nmosc(&["mandel", "--pair", "2,3", "--eta", "2.0", "--dim", "24", "--out", "m"], dir.path());
    assert!(out.status.success());
    let text = std::fs::read_to_string(dir.path().join("m/mandel.csv")).unwrap();
    assert!(text.starts_with("# kind: mandel\n"));
    assert!(text.contains("# sweep: eta\n"));
    assert!(text.lines().any(|l| l == "n,m,target,eta,dim,mean_n,q"));
}

#[test]
fn same_seed_gives_identical_tables() {
    let dir = tempfile::tempdir().unwrap();
    for name in ["a", "b"] {
        let out = nmosc(
            &["qam", "--pair", "2,2", "--eta", "1.0", "--dim", "24", "--realizations", "3", "--seed", "9", "--out", name],
            dir.path(),
        );
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let a = std::fs::read(dir.path().join("a/qam_outcomes.csv")).unwrap();
    let b = std::fs::read(dir.path().join("b/qam_outcomes.csv")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn config_file_runs_and_flags_override() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("exp.toml"),
        "kind = \"steady\"\npairs = [[2, 4]]\neta = [1.0]\ndim = 30\nout = \"from_file\"\n\n[rates]\ngamma1 = 0.0\n",
    )
    .unwrap();
    let out = nmosc(&["run", "--config", "exp.toml", "--out", "flag_dir"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(!dir.path().join("from_file").exists());
    let table = rows(&dir.path().join("flag_dir/steady.csv"));
    assert_eq!(table.len(), 2);
    let mut parities: Vec<f64> = table.iter().map(|r| r[8].parse().unwrap()).collect();
    parities.sort_by(f64::total_cmp);
    assert!((parities[0] + 1.0).abs() < 1e-6 && (parities[1] - 1.0).abs() < 1e-6);
}

#[test]
fn errors_are_json_with_nonzero_exit() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.toml"), "kind = \"nope\"\npairs = [[2, 2]]\n").unwrap();
    let out = nmosc(&["run", "--config", "bad.toml"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    let err: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"], "config");

    let out = nmosc(&["ep-scan", "--pair", "2,3", "--n-ss", "4", "--out", "x"], dir.path());
    assert_eq!(out.status.code(), Some(4));
    let err: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"], "model");

    let out = nmosc(&["run", "--config", "missing.toml"], dir.path());
    assert_eq!(out.status.code(), Some(3));
}

//! End-to-end tests of the `spinlab` binary: exit codes, artifact shape,
//! and the machine-readable error record on standard error.

use std::path::PathBuf;
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_spinlab")
}

fn config(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../configs")
        .join(name)
}

/// Fresh scratch directory per test, cleaned up on drop.
struct Scratch(PathBuf);

impl Scratch {
    fn new(tag: &str) -> Self {
        let dir = std::env::temp_dir().join(format!("spinlab-cli-{tag}-{}", std::process::id()));
        let _ = std::fs::remove_dir_all(&dir);
        std::fs::create_dir_all(&dir).unwrap();
        Scratch(dir)
    }

    fn path(&self) -> &std::path::Path {
        &self.0
    }

    fn arg(&self) -> String {
        self.0.display().to_string()
    }

    fn read(&self, name: &str) -> String {
        std::fs::read_to_string(self.0.join(name))
            .unwrap_or_else(|e| panic!("missing artifact {name}: {e}"))
    }
}

impl Drop for Scratch {
    fn drop(&mut self) {
        let _ = std::fs::remove_dir_all(&self.0);
    }
}

fn run(args: &[&str]) -> Output {
    Command::new(bin())
        .args(args)
        .output()
        .expect("binary spawns")
}

/// The JSON error record is the last `{…}` line on stderr.
fn stderr_record(output: &Output) -> Value {
    let text = String::from_utf8_lossy(&output.stderr);
    let line = text
        .lines()
        .rev()
        .find(|l| l.starts_with('{'))
        .unwrap_or_else(|| panic!("no JSON record on stderr: {text}"));
    serde_json::from_str(line).unwrap()
}

/// Data rows of a CSV artifact (comment and header lines stripped).
fn csv_rows(text: &str) -> Vec<Vec<String>> {
    text.lines()
        .filter(|l| !l.starts_with('#') && !l.is_empty())
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

#[test]
fn zeros_pass_on_small_box() {
    let scratch = Scratch::new("zeros");
    let cfg = config("ising_3x3.toml");
    let out = run(&[
        "zeros",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        &scratch.arg(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let csv = scratch.read("zeros.csv");
    assert!(csv.starts_with("# schema_version: 1\n"));
    let rows = csv_rows(&csv);
    assert_eq!(rows.len(), 18, "2·9 fugacity roots on a 3×3 box");
    for row in &rows {
        let defect: f64 = row[4].parse().unwrap();
        let residual: f64 = row[5].parse().unwrap();
        assert!(defect <= 1e-8, "root off the unit circle: {row:?}");
        assert!(residual <= 1e-10, "root residual too large: {row:?}");
    }

    let report: Value = serde_json::from_str(&scratch.read("zeros.report.json")).unwrap();
    assert_eq!(report["schema_version"], 1);
    assert_eq!(report["command"], "zeros");
    assert_eq!(report["report"]["violations"], 0);
}

#[test]
fn antiferromagnetic_coupling_exits_one() {
    let scratch = Scratch::new("antiferro");
    let cfg_path = scratch.path().join("bad.toml");
    std::fs::write(
        &cfg_path,
        "dims = [4]\nboundary = \"free\"\nbeta = 1.0\nmeasure = \"ising\"\n\n[couplings]\n\"1\" = [-1.0]\n",
    )
    .unwrap();
    let out = run(&[
        "enumerate",
        "--config",
        cfg_path.to_str().unwrap(),
        "--out",
        &scratch.arg(),
    ]);
    assert_eq!(out.status.code(), Some(1));
    let record = stderr_record(&out);
    assert_eq!(record["error"], "FerromagnetismViolation");
    assert_eq!(record["exit_code"], 1);
    assert!(!scratch.path().join("enumerate.csv").exists());
}

#[test]
fn half_plane_boundary_exits_one() {
    let scratch = Scratch::new("halfplane");
    let cfg = config("ising_chain_16.toml");
    let out = run(&[
        "ratio-scan",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        &scratch.arg(),
        "--re-grid",
        "0:1:2",
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(stderr_record(&out)["error"], "OutsideHalfPlane");
}

#[test]
fn unknown_flag_exits_one_with_usage_record() {
    let out = run(&["zeros", "--no-such-flag"]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(stderr_record(&out)["error"], "Usage");
}

#[test]
fn missing_config_exits_one() {
    let out = run(&["enumerate"]);
    assert_eq!(out.status.code(), Some(1));
    let record = stderr_record(&out);
    assert_eq!(record["error"], "Usage");
    assert!(record["detail"].as_str().unwrap().contains("--config"));
}

#[test]
fn failed_check_exits_two_and_keeps_artifacts() {
    // Impossible residual tolerance: the check fails, but the diagnostic
    // table and report must still be on disk when the error surfaces.
    let scratch = Scratch::new("checkfail");
    let cfg = config("ising_3x3.toml");
    let out = run(&[
        "zeros",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        &scratch.arg(),
        "--residual-tol",
        "1e-300",
    ]);
    assert_eq!(out.status.code(), Some(2));
    let record = stderr_record(&out);
    assert_eq!(record["error"], "CheckFailure");
    assert_eq!(record["exit_code"], 2);
    assert!(scratch.path().join("zeros.csv").exists());
    assert!(scratch.path().join("zeros.report.json").exists());
}

#[test]
fn json_tables_follow_the_schema() {
    let scratch = Scratch::new("jsontable");
    let cfg = config("ising_chain_16.toml");
    let out = run(&[
        "transfer-scan",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        &scratch.arg(),
        "--format",
        "json",
        "--re-grid",
        "0.5:2:4",
        "--im-grid",
        "0:1:2",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let doc: Value = serde_json::from_str(&scratch.read("transfer-scan.json")).unwrap();
    assert_eq!(doc["schema_version"], 1);
    assert_eq!(doc["command"], "transfer-scan");
    let columns: Vec<&str> = doc["columns"]
        .as_array()
        .unwrap()
        .iter()
        .map(|c| c.as_str().unwrap())
        .collect();
    assert_eq!(columns, ["h_re", "h_im", "lambda1_abs", "lambda2_abs", "m"]);
    let rows = doc["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 8);
    for row in rows {
        let m = row[4].as_f64().expect("gaps on this grid are finite");
        assert!(m > 0.0);
    }
}

#[test]
fn negative_real_field_is_flipped_with_a_note() {
    let scratch = Scratch::new("spinflip");
    let cfg_path = scratch.path().join("negative.toml");
    std::fs::write(
        &cfg_path,
        "dims = [6]\nboundary = \"free\"\nbeta = 1.0\nfield_re = -1.0\nmeasure = \"ising\"\n\n[couplings]\n\"1\" = [1.0]\n",
    )
    .unwrap();
    let out = run(&[
        "enumerate",
        "--config",
        cfg_path.to_str().unwrap(),
        "--out",
        &scratch.arg(),
    ]);
    assert!(out.status.success());
    let csv = scratch.read("enumerate.csv");
    assert!(csv.contains("# note:"), "spin-flip note missing:\n{csv}");
    assert!(csv.contains("spin-flip"));

    // |Z| must equal the value at the reflected field +1.
    let flipped: f64 = csv_rows(&csv)[0][3].parse().unwrap();
    let cfg_pos = scratch.path().join("positive.toml");
    std::fs::write(
        &cfg_pos,
        "dims = [6]\nboundary = \"free\"\nbeta = 1.0\nfield_re = 1.0\nmeasure = \"ising\"\n\n[couplings]\n\"1\" = [1.0]\n",
    )
    .unwrap();
    let scratch_pos = Scratch::new("spinflip-pos");
    let out_pos = run(&[
        "enumerate",
        "--config",
        cfg_pos.to_str().unwrap(),
        "--out",
        &scratch_pos.arg(),
    ]);
    assert!(out_pos.status.success());
    let reference: f64 = csv_rows(&scratch_pos.read("enumerate.csv"))[0][3]
        .parse()
        .unwrap();
    assert_eq!(flipped, reference);
}

#[test]
fn overwriting_artifacts_is_atomic_and_clean() {
    let scratch = Scratch::new("overwrite");
    let cfg = config("ising_chain_16.toml");
    for _ in 0..2 {
        let out = run(&[
            "enumerate",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            &scratch.arg(),
        ]);
        assert!(out.status.success());
    }
    let leftovers: Vec<_> = std::fs::read_dir(scratch.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .filter(|n| n.ends_with(".tmp"))
        .collect();
    assert!(leftovers.is_empty(), "stale temp files: {leftovers:?}");
}

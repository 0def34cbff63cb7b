use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use sha2::{Digest, Sha256};
use sns_core::mesh::{icosphere, io};
use tempfile::TempDir;

fn sns(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sns")).current_dir(dir).args(args).output().expect("run sns")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn manifest(path: &Path) -> Value {
    serde_json::from_slice(&std::fs::read(path).expect("manifest")).expect("manifest json")
}

/// Numeric rows of a `.txt` table, header skipped.
fn table(path: &Path) -> Vec<Vec<f64>> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#'))
        .map(|l| l.split_whitespace().map(|v| v.parse().unwrap()).collect())
        .collect()
}

/// A tiny fitted sphere, enough for every downstream command.
fn tiny_model(dir: &TempDir) -> PathBuf {
    let out = sns(dir.path(), &["fit", "--input", "analytic:sphere", "--out", "m.sns", "--epochs", "20", "--width", "16", "--blocks", "1", "--seed", "3"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    dir.path().join("m.sns")
}

#[test]
fn profile_list_prints_both_profiles() {
    let dir = TempDir::new().unwrap();
    let out = sns(dir.path(), &["profile-list"]);
    assert_eq!(code(&out), 0);
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert!(lines.contains(&"desk") && lines.contains(&"paper"));
    for key in ["fit.width", "fit.epochs", "fit.lambda_normal", "eigen.k", "eigen.lambda_ortho", "flow.d"] {
        assert_eq!(text.matches(key).count(), 2, "{key} in both profiles");
    }
    assert!(text.contains("256") && text.contains("20000"));
}

#[test]
fn missing_input_exits_2_without_manifest() {
    let dir = TempDir::new().unwrap();
    let out = sns(dir.path(), &["fit", "--input", "missing.obj", "--out", "m.sns", "--seed", "1"]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing.obj"));
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 0);
}

#[test]
fn usage_errors_exit_2() {
    let dir = TempDir::new().unwrap();
    assert_eq!(code(&sns(dir.path(), &["fit", "--bogus"])), 2);
    assert_eq!(code(&sns(dir.path(), &["teleport"])), 2);
    assert_eq!(code(&sns(dir.path(), &["fit", "--input", "analytic:sphere", "--seed", "1"])), 2, "missing --out");
    assert_eq!(code(&sns(dir.path(), &["fit", "--input", "analytic:blob", "--out", "x.sns", "--seed", "1"])), 2);
}

#[test]
fn fit_records_manifest_with_input_hash() {
    let dir = TempDir::new().unwrap();
    let mesh = dir.path().join("ico.obj");
    io::save(&icosphere(2), &mesh).unwrap();
    let out = sns(dir.path(), &["fit", "--input", "ico.obj", "--out", "runs/ico.sns", "--epochs", "10", "--width", "8", "--blocks", "1", "--seed", "5"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("runs/ico.sns").exists());

    let m = manifest(&dir.path().join("runs/ico.sns.manifest.json"));
    assert_eq!(m["command"], "fit");
    assert_eq!(m["seed"], 5);
    assert_eq!(m["seed_generated"], false);
    assert_eq!(m["config"]["epochs"], 10);
    assert_eq!(m["config"]["profile"], "desk");
    assert!(m["versions"]["sns-core"].is_string());
    let digest: String = Sha256::digest(std::fs::read(&mesh).unwrap()).iter().map(|b| format!("{b:02x}")).collect();
    assert_eq!(m["inputs"][0]["sha256"], digest);
    assert_eq!(m["outputs"][0], "runs/ico.sns");
    assert!(m["summary"]["best_holdout_loss"].as_f64().unwrap().is_finite());
    assert!(m["summary"]["resolved"].as_str().unwrap().contains("epochs: 10"));
}

#[test]
fn omitted_seed_is_printed_and_recorded() {
    let dir = TempDir::new().unwrap();
    let model = tiny_model(&dir);
    let out = sns(dir.path(), &["quantities", "--model", model.to_str().unwrap(), "--which", "K", "--samples", "50", "--out", "k.txt"]);
    assert_eq!(code(&out), 0);
    let stderr = String::from_utf8(out.stderr).unwrap();
    let printed: u64 = stderr.lines().find_map(|l| l.strip_prefix("seed ")).expect("seed line").trim().parse().unwrap();
    let m = manifest(&dir.path().join("k.txt.manifest.json"));
    assert_eq!(m["seed"], printed);
    assert_eq!(m["seed_generated"], true);
}

#[test]
fn lbo_forms_agree() {
    let dir = TempDir::new().unwrap();
    let model = tiny_model(&dir);
    let model = model.to_str().unwrap();
    for form in ["divgrad", "meancurv"] {
        let out = sns(dir.path(), &["lbo", "--model", model, "--field", "analytic:sine:2:1", "--form", form, "--samples", "500", "--seed", "2", "--out", &format!("{form}.txt")]);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    }
    let (a, b) = (table(&dir.path().join("divgrad.txt")), table(&dir.path().join("meancurv.txt")));
    assert_eq!(a.len(), 500);
    let scale = a.iter().map(|r| r[7].abs()).fold(0.0f64, f64::max);
    for (ra, rb) in a.iter().zip(&b) {
        assert_eq!(ra[..7], rb[..7]);
        assert!((ra[7] - rb[7]).abs() <= 1e-6 * scale.max(1.0), "{} vs {}", ra[7], rb[7]);
    }
}

#[test]
fn config_file_fills_unset_flags() {
    let dir = TempDir::new().unwrap();
    let model = tiny_model(&dir);
    std::fs::write(dir.path().join("c.json"), r#"{"samples": 40, "form": "meancurv", "field": "analytic:xy"}"#).unwrap();
    let args = ["lbo", "--config", "c.json", "--model", model.to_str().unwrap(), "--samples", "30", "--seed", "1", "--out", "c.txt"];
    let out = sns(dir.path(), &args);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(table(&dir.path().join("c.txt")).len(), 30, "flag beats config");
    let m = manifest(&dir.path().join("c.txt.manifest.json"));
    assert_eq!(m["config"]["form"], "meancurv");
    assert_eq!(m["config"]["field"], "analytic:xy");
    assert_eq!(m["config"]["config"], "c.json");

    std::fs::write(dir.path().join("bad.json"), r#"{"sampels": 40}"#).unwrap();
    let out = sns(dir.path(), &["lbo", "--config", "bad.json", "--model", "m.sns", "--field", "analytic:x", "--seed", "1", "--out", "b.txt"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn quantity_and_size_errors() {
    let dir = TempDir::new().unwrap();
    let model = tiny_model(&dir);
    let model = model.to_str().unwrap();
    assert_eq!(code(&sns(dir.path(), &["quantities", "--model", model, "--which", "torsion", "--out", "q.txt", "--seed", "1"])), 2);
    assert_eq!(code(&sns(dir.path(), &["quantities", "--model", model, "--out", "q.csv", "--seed", "1"])), 2);
    assert_eq!(code(&sns(dir.path(), &["lbo", "--model", model, "--field", "analytic:x", "--samples", "0", "--out", "z.txt", "--seed", "1"])), 3);
    assert_eq!(code(&sns(dir.path(), &["sample", "--model", model, "-m", "0", "--out", "s.txt", "--seed", "1"])), 3);
    assert!(!dir.path().join("z.txt.manifest.json").exists());
}

#[test]
fn same_seed_same_output() {
    let dir = TempDir::new().unwrap();
    let model = tiny_model(&dir);
    let model = model.to_str().unwrap();
    for name in ["a.txt", "b.txt"] {
        assert_eq!(code(&sns(dir.path(), &["sample", "--model", model, "-m", "3000", "--n-target", "300", "--seed", "9", "--out", name])), 0);
    }
    let a = std::fs::read(dir.path().join("a.txt")).unwrap();
    assert_eq!(a, std::fs::read(dir.path().join("b.txt")).unwrap());
    let m = manifest(&dir.path().join("a.txt.manifest.json"));
    let kept = m["summary"]["kept"].as_u64().unwrap() as f64;
    assert!((kept - 300.0).abs() < 3.0 * 300f64.sqrt() + 1.0, "kept {kept}");
}

#[test]
fn export_writes_meshes() {
    let dir = TempDir::new().unwrap();
    let model = tiny_model(&dir);
    let model = model.to_str().unwrap();
    assert_eq!(code(&sns(dir.path(), &["export", "--model", model, "--level", "2", "--colormap", "H", "--out", "e.ply", "--seed", "1"])), 0);
    assert_eq!(code(&sns(dir.path(), &["export", "--model", model, "--level", "1", "--out", "e.obj", "--seed", "1"])), 0);
    let ply = io::load(&dir.path().join("e.ply")).unwrap();
    assert_eq!(ply.vertices.len(), 162);
    assert!(ply.colors.is_some());
    assert_eq!(io::load(&dir.path().join("e.obj")).unwrap().faces.len(), 80);
}

#[test]
fn eigen_and_flows_write_run_directories() {
    let dir = TempDir::new().unwrap();
    let model = tiny_model(&dir);
    let model = model.to_str().unwrap();

    let out = sns(dir.path(), &["eigen", "--model", model, "-k", "2", "--epochs", "20", "-m", "2000", "--n-target", "200", "--seed", "1", "--out", "eig"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["mode_1.sns", "mode_2.sns", "eigen.json", "manifest.json"] {
        assert!(dir.path().join("eig").join(f).exists(), "{f}");
    }

    let flow = ["--model", model, "--steps", "2", "--snapshot-every", "1", "--samples", "200", "--finetune-epochs", "3", "--level", "1", "--seed", "1"];
    let out = sns(dir.path(), &[&["flow", "mcf"][..], &flow, &["--out", "mcf"]].concat());
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let diag = std::fs::read_to_string(dir.path().join("mcf/diagnostics.csv")).unwrap();
    assert_eq!(diag.lines().count(), 3);
    assert!(dir.path().join("mcf/mcf_0002.ply").exists() && dir.path().join("mcf/model_final.sns").exists());

    let out = sns(dir.path(), &[&["flow", "heat"][..], &flow, &["--out", "heat"]].concat());
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("heat/field_final.sns").exists());
}

#[test]
fn baseline_writes_error_table() {
    let dir = TempDir::new().unwrap();
    let model = tiny_model(&dir);
    let model = model.to_str().unwrap();
    let out = sns(
        dir.path(),
        &["baseline", "--mesh", "icosphere:1", "--mesh", "icosphere:2", "--model", model, "--model", model, "--sphere-gt", "--samples", "100", "--seed", "1", "--out", "bl"],
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(dir.path().join("bl/errors.csv")).unwrap();
    assert!(csv.starts_with("mesh_id,method,mean_abs,max_abs,n_samples"));
    assert!(csv.contains("cotan-consistency") && csv.contains("neural-consistency"));
    assert_eq!(code(&sns(dir.path(), &["baseline", "--mesh", "icosphere:1", "--out", "bl2", "--seed", "1"])), 2, "mesh/model count mismatch");
}

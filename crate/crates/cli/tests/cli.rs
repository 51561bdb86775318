use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("adiabat-cli-{}-{name}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let p = dir.join("run.toml");
    std::fs::write(&p, text).unwrap();
    p
}

fn adiabat(args: &[&str], config: &Path, out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_adiabat"))
        .args(args)
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .output()
        .unwrap()
}

const SMALL: &str = r#"
[model]
kind = "strip"
profile = "0.25 + 0.1*cos(x)"

[numerics]
n_x = 32
n_z = 8

[sweep]
epsilon = [0.2, 0.1]
"#;

fn flat_strip() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/flat_strip.toml")
}

#[test]
fn verify_flat_strip_passes() {
    let dir = scratch("verify");
    let out = adiabat(&["verify"], &flat_strip(), &dir);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(dir.join("verify.csv")).unwrap();
    assert!(csv.lines().any(|l| l.contains("separable_exactness")));
    assert!(!csv.lines().any(|l| l.ends_with(",fail")));
}

#[test]
fn rate_study_needs_four_points() {
    let dir = scratch("short-sweep");
    let out = adiabat(&["convergence", "--eps", "0.2,0.1"], &flat_strip(), &dir);
    assert_eq!(out.status.code(), Some(1));
    assert!(!dir.join("convergence.csv").exists());
}

#[test]
fn bad_config_is_a_usage_error() {
    let dir = scratch("bad-config");
    let cfg = write_config(&dir, "[model]\nkind = \"strip\"\nprofile = \"0\"\nbogus = 1\n[sweep]\nepsilon = [0.1]\n");
    let out = adiabat(&["bands"], &cfg, &dir);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 4"));
}

#[test]
fn missing_config_file_is_a_usage_error() {
    let dir = scratch("missing");
    let out = adiabat(&["bands"], &dir.join("nope.toml"), &dir);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn unknown_subcommand_is_a_usage_error() {
    let out = Command::new(env!("CARGO_BIN_EXE_adiabat")).arg("nonsense").output().unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn bands_csv_has_metadata_and_is_deterministic() {
    let dir = scratch("bands");
    let cfg = write_config(&dir, SMALL);
    let body = |sub: &str| {
        let out_dir = dir.join(sub);
        let out = adiabat(&["bands"], &cfg, &out_dir);
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
        std::fs::read_to_string(out_dir.join("bands.csv")).unwrap()
    };
    let first = body("a");
    let second = body("b");
    let meta: Vec<&str> = first.lines().take_while(|l| l.starts_with('#')).collect();
    assert!(meta[0].starts_with("# adiabat "));
    assert!(meta.iter().any(|l| l.starts_with("# model: ")));
    let header = first.lines().find(|l| !l.starts_with('#')).unwrap();
    assert_eq!(header, "x,lambda0,lambda1,delta");
    assert_eq!(first.lines().filter(|l| !l.starts_with('#')).count(), 33);
    assert_eq!(first, second);
}

#[test]
fn effective_and_full_write_spectra() {
    let dir = scratch("spectra");
    let cfg = write_config(&dir, SMALL);
    for (sub, file) in [("effective", "effective_spectrum.csv"), ("full", "full_spectrum.csv")] {
        let out = adiabat(&[sub, "--eps", "0.2"], &cfg, &dir);
        assert!(out.status.success(), "{sub}: {}", String::from_utf8_lossy(&out.stderr));
        assert!(dir.join(file).exists(), "{file}");
    }
}

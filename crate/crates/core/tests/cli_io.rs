use std::fs;
use std::path::Path;
use std::process::{Command, Output};
use std::sync::Arc;

use fourth_nls::io::{
    decode_field, encode_complex_field, load_field, parse_config_str, save_field, verify_manifest, RunManifest,
    StoredField,
};
use fourth_nls::{make_grid, ComplexField, Field, Sampled};
use num_complex::Complex64;

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_fourth-nls")
}

fn run_cli(dir: &Path, name: &str, config: &str) -> Output {
    let cfg = dir.join(format!("{name}.json"));
    fs::write(&cfg, config).unwrap();
    Command::new(bin()).arg("--config").arg(&cfg).arg("--out").arg(dir.join(name)).output().unwrap()
}

fn manifest(dir: &Path) -> RunManifest {
    verify_manifest(dir).expect("manifest checksums verify")
}

fn exact_profile(n: usize, length: f64) -> Field {
    let g = make_grid(1, n, length).unwrap();
    let a = 30f64.sqrt() / 2.0;
    Field::from_fn(g, |x| a / (x[0] / 2.0).cosh().powi(2))
}

#[test]
fn minimal_config_gets_defaults() {
    let c = parse_config_str(r#"{"command":"ground-state","gamma":1,"beta":5,"alpha":4,"sigma":1,"dim":1,"n":512,"L":80}"#)
        .unwrap();
    assert_eq!((c.tol, c.max_iter), (1e-10, 2000));
}

#[test]
fn config_errors_name_the_key() {
    for (text, key) in [
        (r#"{"command":"ground-state","gamma":1,"beta":1,"alpha":1,"sigma":-1}"#, "sigma"),
        (r#"{"command":"ground-state","gamma":-1,"beta":1,"alpha":1,"sigma":1}"#, "gamma"),
        (r#"{"command":"ground-state","gamma":1,"beta":1,"alpha":1,"sigma":1,"n":"big"}"#, "n"),
        (r#"{"command":"ground-state","gamma":1,"beta":1,"alpha":1,"sigma":1,"typo":1}"#, "typo"),
        (r#"{"command":"mass-min","gamma":1,"beta":1,"sigma":1}"#, "mu"),
        (r#"{"command":"ground-state","gamma":1,"beta":1,"alpha":1,"sigma":1,"window_fraction":1.5}"#, "window_fraction"),
    ] {
        let e = parse_config_str(text).unwrap_err().to_string();
        assert!(e.contains(key), "{text}: {e}");
    }
    let dup = r#"{"command":"ground-state","gamma":1,"beta":1,"alpha":1,"sigma":1,"sigma":2}"#;
    assert!(parse_config_str(dup).unwrap_err().to_string().contains("duplicate"));
}

#[test]
fn field_files_round_trip_bitwise() {
    let tmp = tempfile::tempdir().unwrap();
    let g = make_grid(3, 16, 7.5).unwrap();
    let f = Field::from_fn(Arc::clone(&g), |x| (x[0] * x[1]).sin() + x[2] * 1e-17);
    let path = tmp.path().join("f.m4nl");
    save_field(&path, &f).unwrap();
    let back = load_field(&path).unwrap().into_real().unwrap();
    assert_eq!(back.grid().n(), 16);
    assert_eq!(back.grid().length().to_bits(), 7.5f64.to_bits());
    assert!(f.values().iter().zip(back.values()).all(|(a, b)| a.to_bits() == b.to_bits()));

    let c = ComplexField::from_fn(make_grid(1, 32, 2.0).unwrap(), |x| Complex64::new(x[0], -x[0].exp()));
    let bytes = encode_complex_field(&c).unwrap();
    assert_eq!(&bytes[..4], b"M4NL");
    assert_eq!(bytes.len(), 24 + 32 * 16);
    match decode_field(&bytes).unwrap() {
        StoredField::Complex(d) => assert!(c.values().iter().zip(d.values()).all(|(a, b)| a.re.to_bits() == b.re.to_bits()
            && a.im.to_bits() == b.im.to_bits())),
        StoredField::Real(_) => panic!("dtype lost"),
    }
}

#[test]
fn corrupt_field_files_are_rejected() {
    let f = exact_profile(64, 20.0);
    let good = fourth_nls::io::encode_field(&f).unwrap();
    let mut magic = good.clone();
    magic[..4].copy_from_slice(b"XXXX");
    assert!(decode_field(&magic).unwrap_err().to_string().contains("bad magic"));
    let mut version = good.clone();
    version[4] = 2;
    assert!(decode_field(&version).unwrap_err().to_string().contains("version"));
    let short = &good[..good.len() - 8];
    assert!(decode_field(short).unwrap_err().to_string().contains("truncated"));
}

#[test]
fn verify_accepts_the_exact_solution() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("exact.m4nl");
    save_field(&path, &exact_profile(512, 80.0)).unwrap();
    let cfg = format!(
        r#"{{"command":"verify","gamma":1,"beta":5,"alpha":4,"sigma":1,"input":{}}}"#,
        serde_json::to_string(path.to_str().unwrap()).unwrap()
    );
    let out = run_cli(tmp.path(), "verify", &cfg);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let m = manifest(&tmp.path().join("verify"));
    assert_eq!(m.exit_code, 0);
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("verify/summary.json")).unwrap()).unwrap();
    assert_eq!(summary["passed"], true);
}

#[test]
fn verify_rejects_a_wrong_profile() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("wrong.m4nl");
    save_field(&path, &exact_profile(512, 80.0).scaled(1.1)).unwrap();
    let cfg = format!(
        r#"{{"command":"verify","gamma":1,"beta":5,"alpha":4,"sigma":1,"input":{}}}"#,
        serde_json::to_string(path.to_str().unwrap()).unwrap()
    );
    let out = run_cli(tmp.path(), "verify", &cfg);
    assert_eq!(out.status.code(), Some(2));
    assert!(!manifest(&tmp.path().join("verify")).flags.is_empty());
}

#[test]
fn evolve_flags_possible_blow_up() {
    let tmp = tempfile::tempdir().unwrap();
    let g = make_grid(1, 128, 40.0).unwrap();
    let path = tmp.path().join("bump.m4nl");
    save_field(&path, &Field::from_fn(g, |x| 0.8 * (-x[0] * x[0]).exp())).unwrap();
    let cfg = format!(
        r#"{{"command":"evolve","gamma":1,"beta":1,"alpha":1,"sigma":5,"n":128,"L":40,"t_end":0.05,"dt":1e-3,"input":{}}}"#,
        serde_json::to_string(path.to_str().unwrap()).unwrap()
    );
    let out = run_cli(tmp.path(), "evolve", &cfg);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let m = manifest(&tmp.path().join("evolve"));
    assert!(m.flags.iter().any(|f| f == "blow-up possible"), "{:?}", m.flags);
    assert!(m.outputs.iter().any(|o| o.file == "final_state.m4nl"));
}

#[test]
fn symbol_violation_exits_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run_cli(tmp.path(), "neg", r#"{"command":"ground-state","gamma":1,"beta":-3,"alpha":1,"sigma":1}"#);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("symbol"));
}

#[test]
fn usage_errors_exit_with_one() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run_cli(tmp.path(), "bad", r#"{"command":"ground-state","gamma":1,"beta":1,"alpha":1,"sigma":-1}"#);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("sigma"));
    let missing = Command::new(bin()).output().unwrap();
    assert_eq!(missing.status.code(), Some(1));
}

#[test]
fn ground_state_then_spectrum_from_file() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run_cli(tmp.path(), "gs", r#"{"command":"ground-state","gamma":1,"beta":5,"alpha":4,"sigma":1,"n":512,"L":80}"#);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    manifest(&tmp.path().join("gs"));
    let profile = tmp.path().join("gs/profile.m4nl");
    let cfg = format!(
        r#"{{"command":"spectrum","gamma":1,"beta":5,"alpha":4,"sigma":1,"n":512,"L":80,"k":3,"input":{}}}"#,
        serde_json::to_string(profile.to_str().unwrap()).unwrap()
    );
    let out = run_cli(tmp.path(), "spec", &cfg);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(tmp.path().join("spec/spectrum.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("index,eigenvalue,residual"));
    let first: f64 = lines.next().unwrap().split(',').nth(1).unwrap().parse().unwrap();
    assert!(first < 0.0);
}

#[test]
fn identical_configs_give_identical_csv() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = r#"{"command":"stability-experiment","gamma":1,"beta":5,"alpha":4,"sigma":1,"n":512,"L":80,
        "perturbation":"noise","epsilon":1e-3,"seed":11,"t_end":0.2,"dt":1e-2,"record_every":2}"#;
    let a = run_cli(tmp.path(), "a", cfg);
    let b = run_cli(tmp.path(), "b", cfg);
    assert_eq!(a.status.code(), Some(0), "{}", String::from_utf8_lossy(&a.stderr));
    assert_eq!(b.status.code(), Some(0));
    let ta = fs::read(tmp.path().join("a/trace.csv")).unwrap();
    let tb = fs::read(tmp.path().join("b/trace.csv")).unwrap();
    assert_eq!(ta, tb);
    assert!(String::from_utf8(ta).unwrap().starts_with("t,mass,energy,orbital_distance\n"));
}

#[test]
fn shooting_run_writes_trajectory() {
    let tmp = tempfile::tempdir().unwrap();
    let a = 30f64.sqrt() / 2.0;
    let cfg = format!(r#"{{"command":"shoot-1d","gamma":1,"beta":5,"alpha":4,"sigma":1,"u0":{a},"upp0":{},"x_max":15,"step":1e-3}}"#, -a / 2.0);
    let out = run_cli(tmp.path(), "shoot", &cfg);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("shoot/summary.json")).unwrap()).unwrap();
    assert_eq!(summary["outcome"], "decayed");
    manifest(&tmp.path().join("shoot"));
}

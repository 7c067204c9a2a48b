use std::path::Path;
use std::process::Command;

fn nkit() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_nkit"));
    c.env_remove("NKIT_THREADS");
    c
}

fn write(dir: &Path, name: &str, body: &str) -> std::path::PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, body).unwrap();
    p
}

const SMALL_DECAY: &str = r#"
experiment = "decay-study"
k = 4.0
threads = 2
[grid]
n = 33
[coefficient]
kind = "constant"
gamma0 = 1.0
"#;

#[test]
fn presets_lists_twelve_names_in_order() {
    let out = nkit().arg("presets").output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let names: Vec<&str> = text.lines().collect();
    assert_eq!(names.len(), 12);
    assert_eq!(names[0], "decay-study");
    assert!(names.contains(&"pat-convergence"));
    assert_eq!(names, nkit::preset_names());
}

#[test]
fn malformed_config_exits_2_without_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("out");
    let cfg = write(dir.path(), "bad.toml", "experiment = \"decay-study\"\n[grid\nn = 3");
    let status = nkit().arg("run").arg(&cfg).arg("--out").arg(&out_dir).status().unwrap();
    assert_eq!(status.code(), Some(2));
    assert!(!out_dir.exists());

    let cfg = write(dir.path(), "unknown.toml", &format!("{SMALL_DECAY}\ncolour = 1\n"));
    let status = nkit().arg("run").arg(&cfg).arg("--out").arg(&out_dir).status().unwrap();
    assert_eq!(status.code(), Some(2));
    assert!(!out_dir.exists());

    // valid syntax, invalid anomaly placement
    let cfg = write(
        dir.path(),
        "anomaly.toml",
        r#"
experiment = "pat-forward"
[grid]
n = 17
[medium]
omega_over_c = 1.0
g = [1.0, 0.0, 0.0, 0.0, 0.0, 0.0]
mu_s = { kind = "constant", gamma0 = 10.0 }
[anomaly]
z = [0.1, 0.5, 0.5]
eps = 0.1
mu_a = 0.2
"#,
    );
    let status = nkit().arg("run").arg(&cfg).arg("--out").arg(&out_dir).status().unwrap();
    assert_eq!(status.code(), Some(2));
    assert!(!out_dir.exists());
}

#[test]
fn bad_thread_override_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", SMALL_DECAY);
    let status = nkit()
        .env("NKIT_THREADS", "zero")
        .arg("run")
        .arg(&cfg)
        .arg("--out")
        .arg(dir.path().join("o"))
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));
}

#[test]
fn decay_study_writes_manifest_csv_and_verdicts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", SMALL_DECAY);
    let out_dir = dir.path().join("o");
    let status = nkit().arg("run").arg(&cfg).arg("--out").arg(&out_dir).status().unwrap();
    assert!(matches!(status.code(), Some(0) | Some(1)));
    let csv = std::fs::read_to_string(out_dir.join("decay.csv")).unwrap();
    assert!(csv.starts_with("r [length],stat [field units]"));
    assert!(csv.lines().count() > 4);
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["experiment"], "decay-study");
    assert_eq!(manifest["config_hash"].as_str().unwrap().len(), 64);
    assert_eq!(manifest["threads"], 2);
    assert_eq!(status.code() == Some(0), manifest["pass"].as_bool().unwrap());
    let verdicts: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("verdicts.json")).unwrap()).unwrap();
    assert_eq!(verdicts[0]["name"], "pointwise_decay");
    assert!(verdicts[0]["details"]["slope"].is_number());
}

#[test]
fn json_configs_are_accepted_and_hash_like_toml() {
    let dir = tempfile::tempdir().unwrap();
    let toml_path = write(dir.path(), "c.toml", SMALL_DECAY);
    let cfg = nkit::RunConfig::load(&toml_path).unwrap();
    let json_path = write(dir.path(), "c.json", &serde_json::to_string(&cfg).unwrap());
    let again = nkit::RunConfig::load(&json_path).unwrap();
    assert_eq!(nkit::config_hash(&cfg), nkit::config_hash(&again));
}

#[test]
fn invert_demo_emits_an_estimate() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "c.toml",
        r#"
experiment = "pat-invert-demo"
[grid]
n = 33
[medium]
omega_over_c = 1.0
g = [1.0, 0.0, 0.0, 0.0, 0.0, 0.0]
mu_s = { kind = "constant", gamma0 = 10.0 }
[anomaly]
z = [0.5, 0.5, 0.5]
eps = 0.1
mu_a = 0.2
"#,
    );
    let out_dir = dir.path().join("o");
    let status = nkit().arg("run").arg(&cfg).arg("--out").arg(&out_dir).status().unwrap();
    assert_eq!(status.code(), Some(0));
    let inv: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("inversion.json")).unwrap()).unwrap();
    let est = inv["pde"]["estimate"].as_f64().unwrap();
    assert!((est - 0.2).abs() < 0.02, "{est}");
    let (field, side) = nkit_core::io::load_field(&out_dir.join("absorbed_energy")).unwrap();
    assert_eq!(side.n, 33);
    assert!(field.max_abs() > 0.0);
}

#[test]
fn dump_matrix_prints_seven_point_rows() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", &SMALL_DECAY.replace("n = 33", "n = 9"));
    let out = nkit().arg("dump-matrix").arg(&cfg).output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let rows = text.lines().filter(|l| !l.starts_with('%')).count();
    // 729 diagonal entries plus two per interior face
    assert_eq!(rows, 729 + 2 * 3 * 8 * 81);
}

#[test]
fn shipped_configs_parse() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut seen = Vec::new();
    for entry in std::fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        let cfg = nkit::RunConfig::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        assert_eq!(path.file_stem().unwrap().to_str().unwrap(), cfg.experiment.name());
        seen.push(cfg.experiment);
    }
    assert_eq!(seen.len(), 12);
}

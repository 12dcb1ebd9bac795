use std::fs;
use std::path::Path;
use std::process::Command;

fn pem() -> Command {
    Command::new(env!("CARGO_BIN_EXE_pem"))
}

fn write_config(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("small.toml");
    fs::write(&path, "horizon_s = 300\n\n[fleet]\nsize = 200\n").unwrap();
    path
}

#[test]
fn validate_twice_gives_identical_traces() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    for run in ["a", "b"] {
        let out = pem()
            .args(["validate", "--config"])
            .arg(&cfg)
            .arg("--out")
            .arg(dir.path().join(run))
            .output()
            .unwrap();
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        assert!(String::from_utf8_lossy(&out.stdout).contains("power_rmse_macro_micro_kw = "));
    }
    for name in ["macro_trace.csv", "micro_trace.csv", "temperature_stats.csv", "manifest.txt"] {
        let a = fs::read(dir.path().join("a").join(name)).unwrap();
        let b = fs::read(dir.path().join("b").join(name)).unwrap();
        assert_eq!(a, b, "{name}");
    }
}

#[test]
fn seed_flag_and_env_output_override() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let out = pem()
        .args(["validate", "--seed", "7", "--config"])
        .arg(&cfg)
        .env("PEM_OUT", dir.path().join("env_out"))
        .output()
        .unwrap();
    assert!(out.status.success());
    let manifest = fs::read_to_string(dir.path().join("env_out/manifest.txt")).unwrap();
    assert!(manifest.contains("seed = 7"));
    assert!(manifest.contains("command = validate"));
}

#[test]
fn steady_state_prints_the_stationary_vector() {
    let dir = tempfile::tempdir().unwrap();
    let out = pem().arg("steady-state").arg("--out").arg(dir.path()).output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("q_on[0] = ") && text.contains("q_off[39] = "));
    assert!(dir.path().join("stationary.csv").exists());
}

#[test]
fn bad_config_exits_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    fs::write(&path, "bins = 40\nnot_a_key = 1\n").unwrap();
    let out = pem().args(["validate", "--config"]).arg(&path).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    fs::write(&path, "[signal]\nkind = \"file\"\npath = \"missing.csv\"\n").unwrap();
    let out = pem().args(["track", "--config"]).arg(&path).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    let out = pem().args(["validate", "--config"]).arg(dir.path().join("absent.toml")).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
}

use std::fs;
use std::process::Command;

fn beamloc() -> Command {
    Command::new(env!("CARGO_BIN_EXE_beamloc"))
}

const SMALL: &str = r#"
seed = 3
users = 4
snapshots = 1

[sweep]
heights_km = [1200.0]
positioning_sats = [4]
schemes = ["tmcb", "fbhca"]
"#;

#[test]
fn validate_config_accepts_and_warns() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("low.toml");
    fs::write(&path, "[constellation]\naltitude_km = 600.0\n\n[sweep]\nheights_km = [600.0]\n").unwrap();
    let out = beamloc().args(["validate-config", "--config"]).arg(&path).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("warning:"), "{stdout}");
    assert!(stdout.contains(": ok"));
}

#[test]
fn validate_config_rejects_unknown_keys() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    fs::write(&path, "[algo]\nbeam_radius = 0.03\n").unwrap();
    let out = beamloc().args(["validate-config", "--config"]).arg(&path).output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
}

#[test]
fn height_sweep_writes_csv_and_plot() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("small.toml");
    fs::write(&cfg, SMALL).unwrap();
    let out_dir = dir.path().join("out");
    let out = beamloc()
        .args(["height-sweep", "--threads", "1", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out_dir)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let csv = fs::read_to_string(out_dir.join("height_sweep.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 3, "{csv}");
    assert!(lines[1].starts_with("1200,TMCB,4,"));
    assert!(lines[2].starts_with("1200,FBHCA,4,"));
    assert!(!csv.contains('\r'));
    assert!(out_dir.join("height_sweep.gp").exists());
}

#[test]
fn seed_flag_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("small.toml");
    fs::write(&cfg, SMALL).unwrap();
    let run = |seed: &str, sub: &str| {
        let out_dir = dir.path().join(format!("{sub}-{seed}"));
        let out = beamloc()
            .args(["height-sweep", "--threads", "1", "--seed", seed, "--config"])
            .arg(&cfg)
            .arg("--out")
            .arg(&out_dir)
            .output()
            .unwrap();
        assert!(out.status.success());
        fs::read_to_string(out_dir.join("height_sweep.csv")).unwrap()
    };
    assert_eq!(run("9", "a"), run("9", "b"));
    assert_ne!(run("9", "a"), run("10", "a"));
}

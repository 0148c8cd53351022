use std::path::PathBuf;
use std::process::Command;

fn assets() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../assets")
}

fn sonarnav() -> Command {
    Command::new(env!("CARGO_BIN_EXE_sonarnav"))
}

#[test]
fn run_writes_outputs() {
    let out = tempfile::tempdir().unwrap();
    let status = sonarnav()
        .args(["run", "--ticks-max", "20", "--seed", "4"])
        .arg("--world")
        .arg(assets().join("worlds/corridor.json"))
        .arg("--config")
        .arg(assets().join("configs/setup04.json"))
        .arg("--out-dir")
        .arg(out.path())
        .output()
        .unwrap();
    assert!(
        status.status.success(),
        "{}",
        String::from_utf8_lossy(&status.stderr)
    );
    assert!(out.path().join("report.json").is_file());
    assert!(out.path().join("heatmap.csv").is_file());
    assert!(out.path().join("trajectories/setup04_run000.csv").is_file());
}

#[test]
fn calibrate_reports_every_layer() {
    let out = sonarnav()
        .args(["calibrate", "--frames", "20"])
        .arg("--config")
        .arg(assets().join("configs/setup02.json"))
        .output()
        .unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    for layer in ["CA", "OA", "RCF", "AFF"] {
        assert!(
            text.lines()
                .any(|l| l.split_whitespace().nth(1) == Some(layer)),
            "{text}"
        );
    }
}

#[test]
fn bad_world_is_an_error() {
    let out = sonarnav()
        .args(["run", "--world", "/nonexistent.json"])
        .arg("--config")
        .arg(assets().join("configs/setup01.json"))
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("loading world"));
}

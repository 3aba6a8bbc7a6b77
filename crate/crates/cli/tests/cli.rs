use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = r#"
name = "small"
seed = 4
duration_s = 2.0
bootstrap_s = 4.0
accumulation_interval_s = 1.0
pairs = [["alice", "bob"]]

[source]
mean_pairs = 0.05

[dtm]
enabled = true

[[parties]]
name = "alice"
port_transmission = [1.0, 0.7]
link = { length_km = 5.0, excess_loss_db = 10.0 }
detector = { efficiency = 0.2, dark_rate_hz = 1000.0 }

[[parties]]
name = "bob"
link = { length_km = 12.0, excess_loss_db = 10.0 }
detector = { efficiency = 0.2, dark_rate_hz = 1000.0 }
"#;

fn dtm_qkd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dtm-qkd"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn write_scenario(dir: &Path, text: &str) -> String {
    let path = dir.join("scenario.toml");
    std::fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_owned()
}

#[test]
fn run_writes_outputs_and_self_compare_is_zero() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = write_scenario(dir.path(), SMALL);
    let out = dir.path().join("out");
    let o = dtm_qkd(&["run", &scenario, "--out", out.to_str().unwrap(), "--records"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("alice-bob"));
    for f in ["metrics.json", "metrics.csv", "manifest.json", "records_alice.csv", "histogram_bob.csv"] {
        assert!(out.join(f).is_file(), "missing {f}");
    }

    let o = dtm_qkd(&["compare", out.to_str().unwrap(), out.to_str().unwrap()]);
    assert!(o.status.success());
    let text = stdout(&o);
    assert!(text.contains("observed reduction      0.00 %"), "{text}");

    let records = out.join("records_alice.csv");
    let o = dtm_qkd(&["histogram", records.to_str().unwrap(), "--bin-width", "20"]);
    assert!(o.status.success());
    let csv = stdout(&o);
    // Header plus one row per 20 ps bin of the 9100 ps period.
    assert_eq!(csv.lines().count(), 1 + 455);
    assert!(String::from_utf8_lossy(&o.stderr).matches("peak at").count() >= 3);
}

#[test]
fn seed_override_changes_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = write_scenario(dir.path(), SMALL);
    let read = |seed: &str, sub: &str| {
        let out = dir.path().join(sub);
        let o = dtm_qkd(&["run", &scenario, "--seed", seed, "--duration", "1", "--out", out.to_str().unwrap()]);
        assert!(o.status.success());
        std::fs::read(out.join("metrics.csv")).unwrap()
    };
    assert_eq!(read("7", "a"), read("7", "b"));
    assert_ne!(read("7", "c"), read("8", "d"));
}

#[test]
fn invalid_config_exits_with_validation_code() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = write_scenario(dir.path(), &SMALL.replace("efficiency = 0.2", "efficiency = 1.5"));
    let out = dir.path().join("out");
    let o = dtm_qkd(&["run", &scenario, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("efficiency"), "{err}");
}

#[test]
fn comparing_different_networks_fails() {
    let dir = tempfile::tempdir().unwrap();
    let a = write_scenario(dir.path(), SMALL);
    let other = tempfile::tempdir().unwrap();
    let b = write_scenario(other.path(), &SMALL.replace("length_km = 12.0", "length_km = 13.0"));
    let (oa, ob) = (dir.path().join("a"), dir.path().join("b"));
    for (s, o) in [(&a, &oa), (&b, &ob)] {
        assert!(dtm_qkd(&["run", s, "--duration", "0.5", "--out", o.to_str().unwrap()]).status.success());
    }
    let o = dtm_qkd(&["compare", oa.to_str().unwrap(), ob.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(4));
}

#[test]
fn presets_are_listed_and_printable() {
    let o = dtm_qkd(&["presets"]);
    assert!(o.status.success());
    let names = stdout(&o);
    assert!(names.lines().any(|l| l == "twoparty_dtm_idqube"));
    let o = dtm_qkd(&["presets", "fourparty_baseline"]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("name = \"fourparty_baseline\""));
    assert_eq!(dtm_qkd(&["presets", "nope"]).status.code(), Some(2));
}

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_wpmec"))
}

fn shipped(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

/// Shrinks a shipped config so a run takes well under a second.
fn small_config(dir: &Path, name: &str, edit: impl FnOnce(&mut Value)) -> PathBuf {
    let mut v: Value = serde_json::from_str(&std::fs::read_to_string(shipped(name)).unwrap()).unwrap();
    let k = 2;
    v["params"]["num_users"] = k.into();
    v["params"]["num_slots"] = 4.into();
    for key in ["harvest_efficiency", "user_capacitance", "user_cycles_per_bit"] {
        let x = v["params"][key][0].clone();
        v["params"][key] = Value::Array(vec![x; k]);
    }
    let d = v["geometry"]["distances"][0].clone();
    v["geometry"]["distances"] = Value::Array(vec![d; k]);
    v["trials"] = 2.into();
    edit(&mut v);
    let path = dir.join(name);
    std::fs::write(&path, serde_json::to_string_pretty(&v).unwrap()).unwrap();
    path
}

fn run(cmd: &mut Command) -> Output {
    let out = cmd.output().unwrap();
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    out
}

#[test]
fn experiment_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), "fig3_vs_amean.json", |v| v["sweep"] = serde_json::json!([1e6, 2e6]));
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    for out in [&a, &b] {
        run(bin().args(["experiment", "--config"]).arg(&cfg).args(["--seed", "9", "--out"]).arg(out));
    }
    // Everything but the wall-clock column must repeat.
    let strip = |p: &Path| -> Vec<String> {
        std::fs::read_to_string(p).unwrap().lines().map(|l| l.rsplit_once(',').unwrap().0.to_owned()).collect()
    };
    assert_eq!(strip(&a), strip(&b));
    let text = std::fs::read_to_string(&a).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("sweep,scheme,mean_energy_J,stderr,trials,runtime_s"));
    assert_eq!(lines.count(), 8);
}

#[test]
fn experiment_writes_plot_series() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), "fig6_vs_m.json", |v| {
        v["sweep"] = serde_json::json!([1.0, 2.0]);
        v["schemes"] = serde_json::json!(["online", "online_myopic"]);
    });
    let plots = dir.path().join("plots");
    let out = run(bin().args(["experiment", "--config"]).arg(&cfg).arg("--plot-dir").arg(&plots));
    assert!(String::from_utf8(out.stdout).unwrap().starts_with("sweep,scheme"));
    assert!(plots.join("online.dat").exists());
    assert!(plots.join("online_myopic.dat").exists());
}

#[test]
fn trace_writes_bits() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), "fig2_trace.json", |_| {});
    let bits = dir.path().join("bits.csv");
    let out = run(bin().args(["experiment", "--config"]).arg(&cfg).arg("--bits-out").arg(&bits));
    // Four schemes, four slots each.
    assert_eq!(String::from_utf8(out.stdout).unwrap().lines().count(), 1 + 16);
    assert_eq!(std::fs::read_to_string(&bits).unwrap().lines().count(), 1 + 8);
}

#[test]
fn solve_commands() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), "fig6_vs_m.json", |v| v["sweep"] = serde_json::json!([2.0]));
    let off = dir.path().join("off.json");
    run(bin().args(["solve-offline", "--config"]).arg(&cfg).arg("--out").arg(&off));
    let doc: Value = serde_json::from_str(&std::fs::read_to_string(&off).unwrap()).unwrap();
    let objective = doc["objective"].as_f64().unwrap();
    assert!(objective > 0.0 && doc["duality_gap"].as_f64().unwrap() <= 1e-3 * objective);

    let base = run(bin().args(["solve-baseline", "--config"]).arg(&cfg).args(["--scheme", "myopic"]));
    let doc: Value = serde_json::from_slice(&base.stdout).unwrap();
    assert!(doc["objective"].as_f64().unwrap() >= objective);

    let online = run(bin().args(["solve-online", "--config"]).arg(&cfg).args(["--window", "2", "--energy-carry"]));
    let text = String::from_utf8(online.stdout).unwrap();
    assert!(text.starts_with("slot,window,user"));
    assert_eq!(text.lines().count(), 1 + 4 * 2);
}

#[test]
fn errors_exit_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let missing = bin().args(["experiment", "--config"]).arg(dir.path().join("none.json")).output().unwrap();
    assert!(!missing.status.success());
    assert!(String::from_utf8_lossy(&missing.stderr).starts_with("error:"));

    let cfg = small_config(dir.path(), "fig3_vs_amean.json", |_| {});
    let bad = bin().args(["solve-baseline", "--config"]).arg(&cfg).args(["--scheme", "nope"]).output().unwrap();
    assert!(!bad.status.success());

    let zero = bin().args(["experiment", "--config"]).arg(&cfg).args(["--trials", "0"]).output().unwrap();
    assert!(!zero.status.success());

    let broken = small_config(dir.path(), "fig7_vs_sigma.json", |v| v["trials"] = 0.into());
    assert!(!bin().args(["experiment", "--config"]).arg(&broken).output().unwrap().status.success());
}

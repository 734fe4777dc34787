use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use ahgfc::dataset::{load_dataset, load_report};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_ahgfc"))
}

fn tiny3() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/tiny3.json")
}

fn write_config(dir: &Path, body: &str) -> PathBuf {
    let p = dir.join("config.json");
    fs::write(&p, body).unwrap();
    p
}

fn tiny_config(dir: &Path) -> PathBuf {
    write_config(
        dir,
        &format!(
            r#"{{"manifest": {:?}, "train": {{"encoder": {{"epochs": 5}}, "final_restarts": 2}}}}"#,
            tiny3()
        ),
    )
}

fn synth_config(dir: &Path) -> PathBuf {
    write_config(
        dir,
        r#"{"synthetic": {"n_nodes": 40, "n_clusters": 2, "n_views": 2, "p_in": [0.3], "p_out": [0.05],
            "n_features": 4, "mu": 3.0, "sigma": 1.0, "seed": 3},
            "train": {"encoder": {"epochs": 10}, "final_restarts": 2}}"#,
    )
}

fn run(cmd: &mut Command) -> Output {
    cmd.output().expect("binary runs")
}

#[test]
fn run_on_tiny3_writes_report_and_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let out = dir.path().join("out");
    let o = run(bin().args(["run", "--epochs", "1", "--config"]).arg(&cfg).arg("--out").arg(&out));
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8(o.stdout).unwrap();
    let line = stdout.lines().last().unwrap();
    let fields: Vec<&str> = line.split(' ').collect();
    assert_eq!(fields.len(), 4, "{line}");
    for (f, key) in fields.iter().zip(["NMI=", "ARI=", "ACC=", "F1="]) {
        assert!(f.starts_with(key), "{line}");
        f[key.len()..].parse::<f64>().unwrap();
    }
    assert_eq!(load_report(&out.join("report.json")).unwrap().epochs.len(), 1);
    assert!(out.join("embedding.csv").exists());
}

#[test]
fn negative_gamma_exits_one_without_output() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let out = dir.path().join("out");
    let o = run(bin().args(["run", "--gamma-rec", "-1", "--config"]).arg(&cfg).arg("--out").arg(&out));
    assert_eq!(o.status.code(), Some(1));
    assert!(!out.exists());
}

#[test]
fn malformed_config_exits_one_without_output() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), r#"{"manifest": "x.json", "train": {"epochs": "many"}}"#);
    let out = dir.path().join("out");
    let o = run(bin().args(["run", "--config"]).arg(&cfg).arg("--out").arg(&out));
    assert_eq!(o.status.code(), Some(1));
    assert!(!out.exists());

    let both = write_config(dir.path(), r#"{"manifest": "x.json", "synthetic": {}}"#);
    let o = run(bin().args(["run", "--config"]).arg(&both).arg("--out").arg(&out));
    assert_eq!(o.status.code(), Some(1));
    assert!(!out.exists());
}

#[test]
fn unknown_variant_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let o = run(bin().args(["ablate", "--variant", "no_filter", "--config"]).arg(&cfg).arg("--out").arg(dir.path().join("o")));
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn unknown_flag_exits_one() {
    let o = run(bin().args(["run", "--bogus"]));
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn no_kl_variant_zeroes_the_kl_column() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = synth_config(dir.path());
    let out = dir.path().join("out");
    let o = run(bin().args(["ablate", "--variant", "no_kl", "--epochs", "4", "--config"]).arg(&cfg).arg("--out").arg(&out));
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report = load_report(&out.join("report.json")).unwrap();
    assert_eq!(report.epochs.len(), 4);
    assert!(report.epochs.iter().all(|e| e.l_kl == 0.0));
}

#[test]
fn run_is_byte_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = synth_config(dir.path());
    let mut reports = Vec::new();
    for name in ["a", "b"] {
        let out = dir.path().join(name);
        let o = run(bin().args(["run", "--epochs", "6", "--seed", "9", "--config"]).arg(&cfg).arg("--out").arg(&out));
        assert!(o.status.success());
        reports.push(fs::read(out.join("report.json")).unwrap());
    }
    assert_eq!(reports[0], reports[1]);
}

#[test]
fn spectrum_writes_two_csvs_per_view() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = synth_config(dir.path());
    let out = dir.path().join("spec");
    let o = run(bin().args(["spectrum", "--config"]).arg(&cfg).arg("--out").arg(&out));
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csvs: Vec<_> = fs::read_dir(&out)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .filter(|n| n.ends_with(".csv"))
        .collect();
    assert_eq!(csvs.len(), 4, "{csvs:?}");
    let eig = fs::read_to_string(out.join("spectrum_view1_joint_aggregation_rw.csv")).unwrap();
    assert_eq!(eig.lines().count(), 40);
}

#[test]
fn synth_round_trips_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = synth_config(dir.path());
    for name in ["a", "b"] {
        let o = run(bin().args(["synth", "--seed", "4", "--config"]).arg(&cfg).arg("--out").arg(dir.path().join(name)));
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let g = load_dataset(&dir.path().join("a/synthetic.json")).unwrap();
    assert_eq!((g.n_nodes(), g.n_views()), (40, 2));
    for entry in fs::read_dir(dir.path().join("a")).unwrap() {
        let name = entry.unwrap().file_name();
        assert_eq!(
            fs::read(dir.path().join("a").join(&name)).unwrap(),
            fs::read(dir.path().join("b").join(&name)).unwrap(),
            "{name:?}"
        );
    }
}

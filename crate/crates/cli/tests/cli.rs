use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn qcal(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qcal"))
        .arg("--out")
        .arg(out)
        .args(args)
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn run_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for d in [&a, &b] {
        assert!(qcal(d, &["run", "pi", "--seed", "3"]).status.success());
    }
    assert_eq!(
        fs::read(a.join("run-pi.json")).unwrap(),
        fs::read(b.join("run-pi.json")).unwrap()
    );
}

#[test]
fn unknown_primitive_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let o = qcal(tmp.path(), &["run", "bogus"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(!tmp.path().join("run-bogus.json").exists());
}

#[test]
fn unknown_config_key_names_its_path() {
    let tmp = tempfile::tempdir().unwrap();
    let o = qcal(tmp.path(), &["--set", "device.gamma_one=0.1", "config"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("device"), "{}", stderr(&o));
}

#[test]
fn crb_analysis_time_is_negligible() {
    let tmp = tempfile::tempdir().unwrap();
    assert!(qcal(tmp.path(), &["run", "crb-ade"]).status.success());
    let v: serde_json::Value =
        serde_json::from_slice(&fs::read(tmp.path().join("run-crb-ade.json")).unwrap()).unwrap();
    let b = &v["budget"];
    let part = |k: &str| b[k].as_u64().unwrap();
    let total =
        part("seq_ns") + part("meas_ns") + part("reset_ns") + part("analysis_ns") + part("ping_ns");
    assert!((part("analysis_ns") as f64) < 1e-3 * total as f64);
}

#[test]
fn zero_cycles_writes_empty_dataset() {
    let tmp = tempfile::tempdir().unwrap();
    let o = qcal(tmp.path(), &["--set", "campaign.n_cycles=0", "campaign"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(
        fs::read_to_string(tmp.path().join("campaign.ndjson")).unwrap(),
        ""
    );
    assert!(tmp.path().join("campaign-summary.tsv").exists());
}

#[test]
fn interrupted_campaign_resumes_exactly() {
    let tmp = tempfile::tempdir().unwrap();
    let (full, cut) = (tmp.path().join("full"), tmp.path().join("cut"));
    let args = ["--set", "campaign.n_cycles=60", "campaign"];
    assert!(qcal(&full, &args).status.success());
    let reference = fs::read_to_string(full.join("campaign.ndjson")).unwrap();

    // Simulate a kill partway through line 26.
    assert!(qcal(&cut, &args).status.success());
    let lines: Vec<&str> = reference.lines().collect();
    let mut partial: String = lines[..25].iter().map(|l| format!("{l}\n")).collect();
    partial.push_str(&lines[25][..lines[25].len() / 2]);
    fs::write(cut.join("campaign.ndjson"), partial).unwrap();

    let o = qcal(&cut, &args);
    assert!(o.status.success(), "{}", stderr(&o));
    let resumed = fs::read_to_string(cut.join("campaign.ndjson")).unwrap();
    assert_eq!(resumed.lines().count(), 60);
    assert_eq!(resumed, reference);
}

#[test]
fn resume_with_changed_config_is_refused() {
    let tmp = tempfile::tempdir().unwrap();
    assert!(
        qcal(tmp.path(), &["--set", "campaign.n_cycles=5", "campaign"])
            .status
            .success()
    );
    let o = qcal(
        tmp.path(),
        &["--set", "campaign.n_cycles=5", "--seed", "9", "campaign"],
    );
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("--fresh"));
    assert!(qcal(
        tmp.path(),
        &[
            "--set",
            "campaign.n_cycles=5",
            "--seed",
            "9",
            "campaign",
            "--fresh"
        ]
    )
    .status
    .success());
}

#[test]
fn analyze_nothing_is_a_no_op() {
    let tmp = tempfile::tempdir().unwrap();
    let o = qcal(tmp.path(), &["analyze"]);
    assert!(o.status.success());
    assert!(!tmp.path().exists() || fs::read_dir(tmp.path()).unwrap().next().is_none());
}

#[test]
fn constant_channels_fit_as_degenerate() {
    let tmp = tempfile::tempdir().unwrap();
    let set = [
        "--set",
        "drift.bindings=[]",
        "--set",
        "sim.shot_mode=\"exact\"",
        "--set",
        "campaign.n_cycles=60",
    ];
    assert!(qcal(tmp.path(), &[&set[..], &["campaign"]].concat())
        .status
        .success());
    let o = qcal(tmp.path(), &[&set[..], &["analyze", "allan"]].concat());
    assert!(o.status.success(), "{}", stderr(&o));
    let table = fs::read_to_string(tmp.path().join("allan-fit.tsv")).unwrap();
    let rows: Vec<&str> = table.lines().skip(2).collect();
    assert!(!rows.is_empty());
    assert!(rows.iter().all(|r| r.ends_with("\ttrue")), "{table}");
}

#[test]
fn schema_mismatch_is_reported() {
    let tmp = tempfile::tempdir().unwrap();
    assert!(
        qcal(tmp.path(), &["--set", "campaign.n_cycles=3", "campaign"])
            .status
            .success()
    );
    let path = tmp.path().join("campaign.ndjson");
    let text = fs::read_to_string(&path)
        .unwrap()
        .replace("\"schema_version\":1", "\"schema_version\":2");
    fs::write(&path, text).unwrap();
    let o = qcal(
        tmp.path(),
        &["--set", "campaign.n_cycles=3", "analyze", "allan"],
    );
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("schema version 2"), "{}", stderr(&o));
}

#[test]
fn outputs_carry_provenance() {
    let tmp = tempfile::tempdir().unwrap();
    assert!(
        qcal(tmp.path(), &["--set", "campaign.n_cycles=40", "campaign"])
            .status
            .success()
    );
    assert!(qcal(
        tmp.path(),
        &["--set", "campaign.n_cycles=40", "analyze", "correlations"]
    )
    .status
    .success());
    for f in [
        "campaign-summary.tsv",
        "correlations.tsv",
        "correlations.svg",
    ] {
        let text = fs::read_to_string(tmp.path().join(f)).unwrap();
        assert!(text.contains("seed=7 config_hash="), "{f}");
    }
    let line = fs::read_to_string(tmp.path().join("campaign.ndjson")).unwrap();
    let v: serde_json::Value = serde_json::from_str(line.lines().next().unwrap()).unwrap();
    assert_eq!(v["seed"], 7);
    assert_eq!(v["schema_version"], 1);
}

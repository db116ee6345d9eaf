use std::path::Path;
use std::process::{Command, Output};

fn uqd(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_uqd"))
        .current_dir(dir)
        .args(args)
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    assert!(
        o.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&o.stderr)
    );
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn small_synth(dir: &Path) {
    stdout(&uqd(
        dir,
        &[
            "synth",
            "--out-dir",
            "d",
            "--seed",
            "7",
            "--stroke-subjects",
            "12",
            "--healthy-subjects",
            "4",
            "--trials",
            "6",
        ],
    ));
}

fn error_code(o: &Output) -> String {
    assert_eq!(o.status.code(), Some(1));
    let v: serde_json::Value = serde_json::from_slice(&o.stderr).unwrap();
    assert!(v["message"].is_string());
    v["code"].as_str().unwrap().to_string()
}

#[test]
fn synth_is_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let out_a = stdout(&uqd(a.path(), &["synth", "--out-dir", "d", "--seed", "7"]));
    let out_b = stdout(&uqd(b.path(), &["synth", "--out-dir", "d", "--seed", "7"]));
    assert_eq!(out_a, out_b);
    for f in ["dataset.jsonl", "sequences.jsonl", "setup.json"] {
        let x = std::fs::read(a.path().join("d").join(f)).unwrap();
        let y = std::fs::read(b.path().join("d").join(f)).unwrap();
        assert_eq!(x, y, "{f}");
    }
    let other = tempfile::tempdir().unwrap();
    stdout(&uqd(
        other.path(),
        &["synth", "--out-dir", "d", "--seed", "8"],
    ));
    assert_ne!(
        std::fs::read(a.path().join("d/dataset.jsonl")).unwrap(),
        std::fs::read(other.path().join("d/dataset.jsonl")).unwrap()
    );
}

#[test]
fn usage_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let o = uqd(dir.path(), &["synth", "--no-such-flag"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("Usage"));
    let o = uqd(dir.path(), &["uq-sweep", "--method", "oracle"]);
    assert_eq!(o.status.code(), Some(2));
    let o = uqd(dir.path(), &["delegate", "--tau", "0.5", "--auto"]);
    assert_eq!(o.status.code(), Some(2));
    let o = uqd(dir.path(), &["report"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn validation_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(
        error_code(&uqd(dir.path(), &["uq-sweep", "--data", "missing"])),
        "invalid_argument"
    );
    small_synth(dir.path());
    assert_eq!(
        error_code(&uqd(
            dir.path(),
            &["uq-sweep", "--data", "d", "--step", "0"]
        )),
        "invalid_argument"
    );
    assert_eq!(
        error_code(&uqd(
            dir.path(),
            &["delegate", "--data", "d", "--tau", "1.5"]
        )),
        "invalid_argument"
    );
    assert_eq!(
        error_code(&uqd(
            dir.path(),
            &["synth", "--out-dir", "e", "--classes", "1"]
        )),
        "invalid_argument"
    );
    assert_eq!(
        error_code(&uqd(
            dir.path(),
            &["report", "--simulate", "0", "--data", "d"]
        )),
        "invalid_argument"
    );
}

#[test]
fn help_lists_every_flag() {
    let dir = tempfile::tempdir().unwrap();
    let cases: [(&str, &[&str]); 7] = [
        (
            "synth",
            &[
                "--out-dir",
                "--seed",
                "--stroke-subjects",
                "--healthy-subjects",
                "--trials",
                "--classes",
                "--separation",
                "--ood-fraction",
                "--noise-sd",
                "--disagreement",
                "--frames",
                "--format",
                "--out",
            ],
        ),
        (
            "train",
            &[
                "--data",
                "--component",
                "--grid",
                "--layers",
                "--lr",
                "--epochs",
                "--seed",
                "--checkpoint",
                "--format",
                "--out",
            ],
        ),
        (
            "uq-sweep",
            &[
                "--data",
                "--component",
                "--model",
                "--layers",
                "--lr",
                "--epochs",
                "--seed",
                "--method",
                "--step",
                "--format",
                "--out",
            ],
        ),
        (
            "embed",
            &["--method", "--k", "--metric", "--layer", "--model"],
        ),
        ("delegate", &["--tau", "--auto", "--model", "--format"]),
        (
            "report",
            &[
                "--decisions",
                "--simulate",
                "--save-decisions",
                "--group",
                "--condition",
                "--format",
                "--out",
            ],
        ),
        (
            "serve",
            &["--data-dir", "--port", "--host", "UQD_DATA_DIR", "UQD_PORT"],
        ),
    ];
    for (cmd, flags) in cases {
        let help = stdout(&uqd(dir.path(), &[cmd, "--help"]));
        for f in flags {
            assert!(help.contains(f), "{cmd} --help lacks {f}");
        }
    }
}

#[test]
fn sweep_emits_twenty_one_rows() {
    let dir = tempfile::tempdir().unwrap();
    small_synth(dir.path());
    let table = stdout(&uqd(
        dir.path(),
        &[
            "uq-sweep", "--data", "d", "--method", "mcp", "--step", "0.05", "--epochs", "100",
        ],
    ));
    let rows: Vec<&str> = table
        .lines()
        .filter(|l| !l.starts_with('#') && !l.trim_start().starts_with("threshold"))
        .collect();
    assert_eq!(rows.len(), 21);
    assert!(rows[0].trim_start().starts_with("0.00"));
    assert!(rows[20].trim_start().starts_with("1.00"));
    let json = stdout(&uqd(
        dir.path(),
        &[
            "uq-sweep", "--data", "d", "--method", "nndist", "--epochs", "100", "--format", "json",
        ],
    ));
    let v: serde_json::Value = serde_json::from_str(&json).unwrap();
    assert_eq!(v["rows"].as_array().unwrap().len(), 21);
}

#[test]
fn train_accepts_the_three_layer_flags() {
    let dir = tempfile::tempdir().unwrap();
    small_synth(dir.path());
    let out = stdout(&uqd(
        dir.path(),
        &[
            "train",
            "--data",
            "d",
            "--component",
            "rom",
            "--layers",
            "256,256,256",
            "--lr",
            "0.005",
            "--epochs",
            "3",
            "--format",
            "json",
        ],
    ));
    let v: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert_eq!(
        v["best"]["layer_sizes"],
        serde_json::json!([11, 256, 256, 256, 3])
    );
    assert_eq!(v["best"]["learning_rate"], 0.005);
    assert!(dir.path().join("d/model-rom.json").exists());
}

#[test]
fn delegate_and_report_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    stdout(&uqd(
        dir.path(),
        &["synth", "--out-dir", "d", "--seed", "3"],
    ));
    let plan = stdout(&uqd(
        dir.path(),
        &[
            "delegate", "--data", "d", "--tau", "0.8", "--format", "json",
        ],
    ));
    let v: serde_json::Value = serde_json::from_str(&plan).unwrap();
    assert_eq!(v["source"], "user_explored");
    assert_eq!(v["threshold"], 0.8);
    let n =
        v["delegated_ids"].as_array().unwrap().len() + v["review_ids"].as_array().unwrap().len();
    assert_eq!(n, 70);
    let auto = stdout(&uqd(
        dir.path(),
        &["delegate", "--data", "d", "--auto", "--format", "json"],
    ));
    let a: serde_json::Value = serde_json::from_str(&auto).unwrap();
    assert_eq!(a["source"], "default");
    assert_eq!(a["threshold"], a["default_threshold"]["threshold"]);

    let text = stdout(&uqd(
        dir.path(),
        &[
            "report",
            "--data",
            "d",
            "--simulate",
            "4",
            "--save-decisions",
            "log.jsonl",
        ],
    ));
    assert!(text.contains("agree-Wrong"));
    let from_log = stdout(&uqd(dir.path(), &["report", "--decisions", "log.jsonl"]));
    assert_eq!(text, from_log);
    let filtered = stdout(&uqd(
        dir.path(),
        &[
            "report",
            "--decisions",
            "log.jsonl",
            "--group",
            "explore",
            "--format",
            "json",
        ],
    ));
    let r: serde_json::Value = serde_json::from_str(&filtered).unwrap();
    assert!(r["groups"]
        .as_array()
        .unwrap()
        .iter()
        .all(|g| g["group"] == "explore"));
}

#[test]
fn embed_grid() {
    let dir = tempfile::tempdir().unwrap();
    small_synth(dir.path());
    let out = stdout(&uqd(
        dir.path(),
        &[
            "embed", "--data", "d", "--method", "pca", "--k", "5,10", "--epochs", "100",
            "--format", "json",
        ],
    ));
    let v: serde_json::Value = serde_json::from_str(&out).unwrap();
    let rows = v["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 2);
    for r in rows {
        for m in ["euclidean", "cosine"] {
            let acc = r["accuracy"][m].as_f64().unwrap();
            assert!((0.0..=1.0).contains(&acc));
        }
    }
}

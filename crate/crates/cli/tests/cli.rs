use std::path::Path;
use std::process::{Command, Output};

use frechet_core::io::{load_result, ResultFile};

fn frechet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_frechet"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn s(p: &Path) -> String {
    p.to_string_lossy().into_owned()
}

/// Two examples sharing one signature, predictions [1, 0], P(Y=1|z) = 0.75.
fn two_point(dir: &Path) -> (String, String) {
    let data = dir.join("two_point.csv");
    let lm = dir.join("two_point.json");
    std::fs::write(&data, "pred,wl_0\n1,1\n0,1\n").unwrap();
    std::fs::write(
        &lm,
        r#"{"num_classes": 2, "entries": [{"z": [1], "p": [0.25, 0.75]}]}"#,
    )
    .unwrap();
    (s(&data), s(&lm))
}

#[test]
fn oracle_on_two_point_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let (data, lm) = two_point(dir.path());
    let out = frechet(&["oracle", "--data", &data, "--label-model", &lm]);
    assert_eq!(code(&out), 0);
    assert!(String::from_utf8_lossy(&out.stderr).contains("L=0.25 U=0.75"));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["lower"], 0.25);
    assert_eq!(v["upper"], 0.75);
}

#[test]
fn estimate_writes_ordered_bounds() {
    let dir = tempfile::tempdir().unwrap();
    let syn = dir.path().join("syn");
    assert_eq!(code(&frechet(&["synth", "--n", "80", "--seed", "2", "--out-dir", &s(&syn)])), 0);
    let out_path = dir.path().join("res.json");
    let out = frechet(&[
        "estimate",
        "--data",
        &s(&syn.join("data.csv")),
        "--label-model",
        &s(&syn.join("label_model.json")),
        "--metric",
        "accuracy",
        "--out",
        &s(&out_path),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let r: ResultFile = load_result(&out_path).unwrap();
    let m = &r.metrics[0];
    assert_eq!(m.metric, "accuracy");
    assert!(m.lower <= m.upper);
    assert!(m.ci_lower[0] <= m.lower && m.lower <= m.ci_lower[1]);
    assert_eq!(m.ci_level, 0.95);
    assert_eq!(r.metadata.n, 80);
}

#[test]
fn joint_positive_adds_prf_entries() {
    let dir = tempfile::tempdir().unwrap();
    let syn = dir.path().join("syn");
    frechet(&["synth", "--n", "120", "--seed", "4", "--out-dir", &s(&syn)]);
    let out = frechet(&[
        "estimate",
        "--data",
        &s(&syn.join("data.csv")),
        "--label-model",
        &s(&syn.join("label_model.json")),
        "--metric",
        "joint-positive",
        "--threshold",
        "0.5",
        "--prior",
        "0.5",
    ]);
    assert_eq!(code(&out), 0);
    let r: ResultFile = serde_json::from_slice(&out.stdout).unwrap();
    let names: Vec<&str> = r.metrics.iter().map(|m| m.metric.as_str()).collect();
    assert_eq!(names, ["joint_positive", "precision", "recall", "f1"]);
    // recall = joint / prior, up to result rounding
    let (joint, recall) = (&r.metrics[0], &r.metrics[2]);
    assert!((recall.lower - joint.lower / 0.5).abs() < 1e-8);
    for m in &r.metrics[1..] {
        assert!(0.0 <= m.lower && m.lower <= m.upper && m.upper <= 1.0);
    }
}

#[test]
fn synthetic_estimate_tracks_oracle() {
    let dir = tempfile::tempdir().unwrap();
    for seed in 0..5u64 {
        let syn = dir.path().join(format!("syn{seed}"));
        let seed_s = seed.to_string();
        frechet(&["synth", "--n", "200", "--seed", &seed_s, "--out-dir", &s(&syn)]);
        let data = s(&syn.join("data.csv"));
        let lm = s(&syn.join("label_model.json"));
        let oracle: serde_json::Value = serde_json::from_slice(
            &frechet(&["oracle", "--data", &data, "--label-model", &lm]).stdout,
        )
        .unwrap();
        let eps = 1e-3;
        let est: ResultFile = serde_json::from_slice(
            &frechet(&["estimate", "--data", &data, "--label-model", &lm, "--epsilon", "0.001"]).stdout,
        )
        .unwrap();
        let gap = eps * 2f64.ln() + 1e-5;
        let (l, u) = (oracle["lower"].as_f64().unwrap(), oracle["upper"].as_f64().unwrap());
        assert!((est.metrics[0].lower - l).abs() <= gap, "seed {seed}");
        assert!((est.metrics[0].upper - u).abs() <= gap, "seed {seed}");
    }
}

#[test]
fn sweep_emits_plot_ready_csv() {
    let dir = tempfile::tempdir().unwrap();
    let syn = dir.path().join("syn");
    frechet(&["synth", "--n", "100", "--seed", "1", "--out-dir", &s(&syn)]);
    let out = frechet(&[
        "sweep",
        "--data",
        &s(&syn.join("data.csv")),
        "--label-model",
        &s(&syn.join("label_model.json")),
        "--thresholds",
        "0.7,0.3",
        "--metrics",
        "accuracy,f1",
    ]);
    assert_eq!(code(&out), 0);
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert!(lines[0].starts_with("threshold,metric,lower,upper"));
    assert_eq!(lines.len(), 5);
    assert!(lines[1].starts_with("0.3,accuracy"));
    assert!(lines[4].starts_with("0.7,f1"));
}

#[test]
fn select_picks_by_strategy() {
    let dir = tempfile::tempdir().unwrap();
    let syn = dir.path().join("syn");
    frechet(&["synth", "--n", "100", "--seed", "6", "--out-dir", &s(&syn)]);
    let cand = dir.path().join("cand");
    std::fs::create_dir(&cand).unwrap();
    for (name, t) in [("a.json", "0.2"), ("b.json", "0.5")] {
        let out = frechet(&[
            "estimate",
            "--data",
            &s(&syn.join("data.csv")),
            "--label-model",
            &s(&syn.join("label_model.json")),
            "--threshold",
            t,
            "--out",
            &s(&cand.join(name)),
        ]);
        assert_eq!(code(&out), 0);
    }
    let out = frechet(&["select", "--candidates", &s(&cand), "--strategy", "label-model"]);
    assert_eq!(code(&out), 0);
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let scores: Vec<f64> = v["scores"].as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect();
    let best = if scores[1] > scores[0] { 1 } else { 0 };
    assert_eq!(v["chosen_index"], best);
}

#[test]
fn diagnose_reports_entropy_bound_and_certificate() {
    let dir = tempfile::tempdir().unwrap();
    let (data, lm) = two_point(dir.path());
    let alt = dir.path().join("alt.json");
    std::fs::write(&alt, r#"{"num_classes": 2, "entries": [{"z": [1], "p": [0.5, 0.5]}]}"#).unwrap();
    let out = frechet(&["diagnose", "--data", &data, "--label-model", &lm, "--label-model-alt", &s(&alt)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let h = v["conditional_entropy_y"].as_f64().unwrap();
    assert!((h - 0.562335145).abs() < 1e-8);
    assert_eq!(v["misspecification"]["delta"], 0.25);
    assert_eq!(v["misspecification"]["within_certificate"], true);
    assert_eq!(v["exact_bounds"]["lower"], 0.25);
}

#[test]
fn counted_label_model_without_file() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.csv");
    std::fs::write(&data, "pred,label,wl_0\n1,1,1\n1,1,1\n0,0,1\n1,1,0\n").unwrap();
    let out = frechet(&["oracle", "--data", &s(&data)]);
    assert_eq!(code(&out), 0);
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let (l, u) = (v["lower"].as_f64().unwrap(), v["upper"].as_f64().unwrap());
    assert!(0.0 <= l && l <= u && u <= 1.0);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let (data, lm) = two_point(dir.path());

    let unknown = frechet(&["estimate", "--bogus"]);
    assert_eq!(code(&unknown), 1);
    assert!(String::from_utf8_lossy(&unknown.stderr).contains("Usage"));
    assert_eq!(code(&frechet(&[])), 1);
    assert_eq!(code(&frechet(&["--help"])), 0);

    // argument out of range
    assert_eq!(code(&frechet(&["estimate", "--data", &data, "--label-model", &lm, "--gamma", "2"])), 1);
    assert_eq!(code(&frechet(&["estimate", "--data", &data, "--label-model", &lm, "--epsilon", "0"])), 1);
    assert_eq!(code(&frechet(&["coverage", "--replications", "50"])), 1);

    // data errors
    assert_eq!(code(&frechet(&["estimate", "--data", "/nonexistent.csv"])), 2);
    let bad = dir.path().join("bad.csv");
    std::fs::write(&bad, "pred,wl_0\n1,abc\n").unwrap();
    assert_eq!(code(&frechet(&["estimate", "--data", &s(&bad), "--label-model", &lm])), 2);
    let unseen = dir.path().join("unseen.csv");
    std::fs::write(&unseen, "pred,wl_0\n1,0\n0,1\n").unwrap();
    assert_eq!(code(&frechet(&["estimate", "--data", &s(&unseen), "--label-model", &lm])), 2);
}

#[test]
fn uniform_fallback_covers_unseen_signatures() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.csv");
    std::fs::write(&data, "pred,wl_0\n1,0\n0,1\n1,1\n").unwrap();
    let lm = dir.path().join("lm.json");
    std::fs::write(
        &lm,
        r#"{"num_classes": 2, "entries": [{"z": [1], "p": [0.25, 0.75]}], "fallback": "uniform"}"#,
    )
    .unwrap();
    let out = frechet(&["estimate", "--data", &s(&data), "--label-model", &s(&lm)]);
    assert_eq!(code(&out), 0);
    let r: ResultFile = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(r.metadata.fallback_rows, 1);
}

#[test]
fn subsampling_is_seeded() {
    let dir = tempfile::tempdir().unwrap();
    let syn = dir.path().join("syn");
    frechet(&["synth", "--n", "200", "--seed", "8", "--out-dir", &s(&syn)]);
    let run = |seed: &str| {
        frechet(&[
            "estimate",
            "--data",
            &s(&syn.join("data.csv")),
            "--label-model",
            &s(&syn.join("label_model.json")),
            "--n",
            "100",
            "--seed",
            seed,
        ])
        .stdout
    };
    assert_eq!(run("1"), run("1"));
    assert_ne!(run("1"), run("2"));
}

//! End-to-end runs of the `polyseg` binary: file layout, exit codes and the
//! synth → train → predict → evaluate → report chain on the tiny network.

use std::path::Path;
use std::process::{Command, Output};

use polyseg::io::load_segv;
use polyseg::metrics::LEADERBOARD_FIELDS;
use polyseg::model::PolyUNetConfig;
use polyseg::pipeline::read_loss_csv;
use serde_json::{json, Value};

fn polyseg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_polyseg"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn synth(dir: &Path, n: &str) {
    let out = polyseg(&["synth", "--out", p(dir), "--n", n, "--seed", "3"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn synth_writes_manifest_and_volumes_deterministically() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    synth(&a, "4");
    synth(&b, "4");
    let mut names: Vec<String> = std::fs::read_dir(&a)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    assert!(names.contains(&"manifest.json".to_string()));
    assert_eq!(names.iter().filter(|n| n.ends_with(".segv")).count(), 8);
    for name in &names {
        assert_eq!(
            std::fs::read(a.join(name)).unwrap(),
            std::fs::read(b.join(name)).unwrap(),
            "{name}"
        );
    }
}

#[test]
fn usage_errors_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("missing");
    assert_eq!(code(&polyseg(&["synth"])), 2);
    assert_eq!(
        code(&polyseg(&["train", "--stage", "3", "--manifest", "m", "--out", "o"])),
        2
    );
    assert_eq!(
        code(&polyseg(&[
            "train",
            "--stage",
            "1",
            "--manifest",
            p(&missing),
            "--out",
            p(tmp.path())
        ])),
        2
    );
    synth(tmp.path(), "1");
    let ct = tmp.path().join("case_000_ct.segv");
    let out = polyseg(&[
        "predict",
        "--ct",
        p(&ct),
        "--ckpt1",
        p(&missing),
        "--ckpt2",
        p(&missing),
        "--out",
        p(&tmp.path().join("x.segv")),
    ]);
    assert_eq!(code(&out), 2);
    assert_eq!(code(&polyseg(&["gradcheck", "--ops", "no_such_op"])), 2);
    assert_eq!(code(&polyseg(&["report"])), 2);
}

#[test]
fn gradcheck_filter_runs_only_matching_checks() {
    let out = polyseg(&["gradcheck", "--ops", "relu"]);
    assert_eq!(code(&out), 0);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("relu"));
    assert!(!text.contains("maxpool"));
}

#[test]
fn evaluating_references_against_themselves_is_perfect() {
    let tmp = tempfile::tempdir().unwrap();
    synth(tmp.path(), "3");
    let prefix = tmp.path().join("eval/self");
    let out = polyseg(&[
        "evaluate",
        "--pred",
        p(tmp.path()),
        "--ref",
        p(tmp.path()),
        "--out",
        p(&prefix),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let v: Value = serde_json::from_str(&std::fs::read_to_string(tmp.path().join("eval/self.json")).unwrap()).unwrap();
    let keys: Vec<&str> = v.as_object().unwrap().keys().map(String::as_str).collect();
    let mut want = LEADERBOARD_FIELDS.to_vec();
    want.sort_unstable();
    let mut got = keys.clone();
    got.sort_unstable();
    assert_eq!(got, want);
    assert_eq!(v["dice_per_case"]["liver"], json!(1.0));
    assert_eq!(v["dice_per_case"]["lesion"], json!(1.0));
    assert_eq!(v["burden_rmse"], json!(0.0));
    let csv = std::fs::read_to_string(tmp.path().join("eval/self.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 3 * 2);
}

#[test]
fn tiny_pipeline_trains_resumes_predicts_and_reports() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth(&data, "2");
    let manifest = data.join("manifest.json");
    let cfg = tmp.path().join("tiny.json");
    std::fs::write(
        &cfg,
        json!({ "model": PolyUNetConfig::tiny(1), "batch_size": 2 }).to_string(),
    )
    .unwrap();
    let models = tmp.path().join("models");

    for stage in ["1", "2"] {
        let args = [
            "train",
            "--stage",
            stage,
            "--manifest",
            p(&manifest),
            "--out",
            p(&models),
            "--config",
            p(&cfg),
        ];
        let first = polyseg(&[&args[..], &["--iters", "2"]].concat());
        assert_eq!(code(&first), 0, "{}", String::from_utf8_lossy(&first.stderr));
        let resumed = polyseg(&[&args[..], &["--iters", "4", "--resume"]].concat());
        assert_eq!(code(&resumed), 0, "{}", String::from_utf8_lossy(&resumed.stderr));
        let log = read_loss_csv(models.join(format!("stage{stage}_loss.csv"))).unwrap();
        assert_eq!(log.iter().map(|r| r.iter).collect::<Vec<_>>(), vec![0, 1, 2, 3]);
    }

    let pred_dir = tmp.path().join("pred");
    std::fs::create_dir_all(&pred_dir).unwrap();
    for case in ["case_000", "case_001"] {
        let out_path = pred_dir.join(format!("{case}_pred.segv"));
        let out = polyseg(&[
            "predict",
            "--ct",
            p(&data.join(format!("{case}_ct.segv"))),
            "--ckpt1",
            p(&models.join("stage1.punw")),
            "--ckpt2",
            p(&models.join("stage2.punw")),
            "--out",
            p(&out_path),
            "--pad",
            "4,4,2",
        ]);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
        let labels = load_segv(&out_path).unwrap().into_labels().unwrap();
        assert!(labels.data().iter().all(|&v| v <= 2));
        assert!(Path::new(&format!("{}.roi.json", out_path.display())).exists());
    }

    let prefix = tmp.path().join("eval");
    let out = polyseg(&[
        "evaluate",
        "--pred",
        p(&pred_dir),
        "--ref",
        p(&data),
        "--out",
        p(&prefix),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let summary = tmp.path().join("summary.txt");
    let out = polyseg(&[
        "report",
        "--eval",
        p(&tmp.path().join("eval.json")),
        "--loss",
        p(&models.join("stage1_loss.csv")),
        "--out",
        p(&summary),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(summary).unwrap();
    assert!(text.contains("dice_per_case"));
    assert!(text.contains("4 iterations"));
}

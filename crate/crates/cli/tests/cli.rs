//! Behaviour of the `pose` binary on small inputs.

use std::path::Path;
use std::process::{Command, Output};

fn pose(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pose"))
        .args(args)
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .output()
        .expect("pose runs")
}

fn ok(args: &[&str], dir: &Path) -> String {
    let out = pose(args, dir);
    assert!(
        out.status.success(),
        "pose {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

const SMALL: [&str; 10] = [
    "--k-large",
    "2",
    "--k-small",
    "2",
    "--cv-rounds",
    "2",
    "--epochs",
    "2",
    "--seed",
    "4",
];

#[test]
fn synth_train_parse_eval() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&["synth", "--out", "data", "--n", "8", "--seed", "2"], d);
    for f in [
        "data/all.jsonl",
        "data/train.jsonl",
        "data/test.jsonl",
        "data/train/img_0000.pgm",
        "data/test/img_0004.pgm",
    ] {
        assert!(d.join(f).is_file(), "{f} missing");
    }
    assert_eq!(
        std::fs::read_dir(d.join("data/negatives")).unwrap().count(),
        4
    );

    let train = |out: &str| {
        let mut args = vec!["train", "--data", "data/all.jsonl", "--out", out];
        args.extend(SMALL);
        ok(&args, d);
    };
    train("a.psym");
    train("b.psym");
    assert_eq!(
        std::fs::read(d.join("a.psym")).unwrap(),
        std::fs::read(d.join("b.psym")).unwrap()
    );
    for f in [
        "a.psym.epochs.csv",
        "a.psym.symbols.txt",
        "a.psym.context.csv",
    ] {
        assert!(d.join(f).is_file(), "{f} missing");
    }

    ok(
        &[
            "parse",
            "--model",
            "a.psym",
            "--images",
            "data/test",
            "--out",
            "pred.jsonl",
            "--overlay",
            "overlay",
        ],
        d,
    );
    let preds = std::fs::read_to_string(d.join("pred.jsonl")).unwrap();
    assert_eq!(preds.lines().count(), 4);
    assert_eq!(std::fs::read_dir(d.join("overlay")).unwrap().count(), 4);

    let table = ok(
        &[
            "eval",
            "--pred",
            "pred.jsonl",
            "--truth",
            "data/test.jsonl",
            "--out",
            "pcp.csv",
        ],
        d,
    );
    assert!(table.contains("PCP total:"), "{table}");
    assert!(d.join("pcp.csv").is_file());
}

#[test]
fn truth_scored_against_itself_is_perfect() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(
        &[
            "synth",
            "--out",
            "data",
            "--n",
            "4",
            "--seed",
            "9",
            "--negatives",
            "0",
        ],
        d,
    );
    let truth = pose_core::read_manifest(&d.join("data/all.jsonl")).unwrap();
    let records: Vec<pose_core::ParseRecord> = truth
        .iter()
        .map(|r| {
            let a = r.to_annotation();
            pose_core::ParseRecord {
                image_id: a.image_id.clone(),
                rank: 0,
                parts: Vec::new(),
                joints: a.joints.iter().map(|j| [j.x, j.y]).collect(),
                total_score: 0.0,
            }
        })
        .collect();
    let text = pose_core::pipeline::records_to_jsonl(&records).unwrap();
    std::fs::write(d.join("pred.jsonl"), text).unwrap();
    let table = ok(
        &[
            "eval",
            "--pred",
            "pred.jsonl",
            "--truth",
            "data/all.jsonl",
            "--out",
            "pcp.csv",
        ],
        d,
    );
    assert!(table.contains("PCP total: 100.0"), "{table}");
}

#[test]
fn model_of_another_version_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(
        &[
            "synth",
            "--out",
            "data",
            "--n",
            "4",
            "--seed",
            "1",
            "--negatives",
            "2",
        ],
        d,
    );
    let mut args = vec![
        "train",
        "--data",
        "data/all.jsonl",
        "--split",
        "train",
        "--out",
        "m.psym",
    ];
    args.extend(SMALL);
    ok(&args, d);
    let mut bytes = std::fs::read(d.join("m.psym")).unwrap();
    bytes[4..8].copy_from_slice(&99u32.to_le_bytes());
    std::fs::write(d.join("m.psym"), bytes).unwrap();

    let out = pose(
        &[
            "parse",
            "--model",
            "m.psym",
            "--images",
            "data/test",
            "--out",
            "p.jsonl",
        ],
        d,
    );
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.starts_with("error: model-version-mismatch:"), "{err}");
}

#[test]
fn missing_manifest_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = pose(
        &["train", "--data", "nope.jsonl", "--out", "m.psym"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(
        err.starts_with("error: io-error: loading nope.jsonl"),
        "{err}"
    );
}

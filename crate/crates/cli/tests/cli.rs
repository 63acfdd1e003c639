use std::path::Path;
use std::process::{Command, Output};

fn printid(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_printid"))
        .current_dir(dir)
        .args(args)
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let o = printid(dir, args);
    assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    stdout(&o)
}

#[test]
fn version_names_both_formats() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(dir.path(), &["--version"]);
    assert!(out.contains("0.1.0"));
    assert!(out.contains("feature format v1"));
    assert!(out.contains("model format v1"));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(printid(d, &["extract", "--bogus"]).status.code(), Some(2));
    assert_eq!(printid(d, &["--jobs", "0", "train", "--features", "x", "--out", "y"]).status.code(), Some(2));

    std::fs::write(d.join("bad.toml"), "alpha = 0.7\nunknown_key = 1\n").unwrap();
    let o = printid(d, &["extract", "--config", "bad.toml", "--manifest", "m.csv", "--out", "f"]);
    assert_eq!(o.status.code(), Some(3));

    let o = printid(d, &["extract", "--alpha=-1", "--manifest", "m.csv", "--out", "f"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("alpha"));

    let o = printid(d, &["extract", "--manifest", "missing.csv", "--out", "f"]);
    assert_eq!(o.status.code(), Some(4));

    std::fs::write(d.join("garbage.feat"), "not a feature file\n").unwrap();
    let o = printid(d, &["train", "--features", "garbage.feat", "--out", "m.json"]);
    assert_eq!(o.status.code(), Some(3));

    let o = printid(d, &["synth", "--out", "s", "--pages-per-printer", "1", "--train-pages", "2"]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn small_chain_and_inspect() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let out = ok(d, &["synth", "--out", "data", "--pages-per-printer", "2", "--letters-per-page", "60"]);
    assert!(out.contains("8 pages from 4 printers"));
    for f in ["manifest.csv", "truth.csv", "profiles.toml", "synth.run.json", "pages/bold-001.png"] {
        assert!(d.join("data").join(f).exists(), "{f}");
    }
    let manifest = std::fs::read_to_string(d.join("data/manifest.csv")).unwrap();
    assert_eq!(manifest.lines().count(), 9);

    ok(d, &["extract", "--manifest", "data/manifest.csv", "--split", "train", "--group-size", "15", "--out", "train.feat"]);
    assert!(d.join("train.feat.run.json").exists());
    let header = std::fs::read_to_string(d.join("train.feat")).unwrap();
    assert!(header.starts_with("#printid-features v1 "));
    assert!(header.lines().next().unwrap().ends_with("dim=4602"));

    // a model trained with a different extraction config must be refused
    ok(d, &["train", "--features", "train.feat", "--group-size", "15", "--out", "model.json"]);
    let o = printid(d, &["train", "--features", "train.feat", "--group-size", "20", "--out", "other.json"]);
    assert_eq!(o.status.code(), Some(3));

    let report = ok(d, &["evaluate", "--model", "model.json", "--manifest", "data/manifest.csv", "--out-dir", "eval"]);
    assert!(report.contains("average accuracy"));
    for f in ["group_confusion.csv", "page_confusion.txt", "summary.json", "evaluate.run.json"] {
        assert!(d.join("eval").join(f).exists(), "{f}");
    }
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.join("eval/summary.json")).unwrap()).unwrap();
    assert_eq!(summary["pages"], 4);

    let pred = ok(d, &["predict", "--model", "model.json", "--image", "data/pages/edgy-001.png", "--out", "pred.csv"]);
    assert!(pred.starts_with("page edgy-001: "));
    let csv = std::fs::read_to_string(d.join("pred.csv")).unwrap();
    assert!(csv.starts_with("page_id,group_index,group_label,page_label,votes_"));

    let o = printid(d, &["predict", "--model", "model.json", "--image", "data/pages/edgy-001.png", "--features", "train.feat"]);
    assert_eq!(o.status.code(), Some(2));

    let inspect = ok(d, &["inspect", "--image", "data/pages/speckled-000.png", "--out-dir", "insp", "--regions"]);
    assert!(inspect.contains("speckled-000: 60 letters"), "{inspect}");
    let boxes = std::fs::read_to_string(d.join("insp/boxes.csv")).unwrap();
    assert_eq!(boxes.lines().next(), Some("page_id,index,x,y,w,h,area"));
    assert_eq!(boxes.lines().count(), 61);
    let maps = std::fs::read_dir(d.join("insp/speckled-000_regions")).unwrap().count();
    assert!(maps >= 55, "{maps} region maps");
    assert!(d.join("insp/speckled-000_regions/0000.png").exists());
}

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn mia(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mia")).args(args).current_dir(cwd).output().expect("spawn mia")
}

fn ok(args: &[&str], cwd: &Path) -> String {
    let out = mia(args, cwd);
    assert!(out.status.success(), "mia {args:?} failed:\n{}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

const TINY: [&str; 8] = ["--step1-epochs", "2", "--step2-epochs", "2", "--step3-epochs", "2", "--batch-size", "4"];

fn corpus(dir: &Path) {
    ok(&["gen-data", "--ids", "4", "--per-id", "2", "--test-ids", "2", "--out", "corp"], dir);
}

fn train(dir: &Path, ckpt: &str, extra: &[&str]) {
    let mut args = vec!["train", "--corpus", "corp", "--ckpt", ckpt, "--quiet"];
    args.extend(TINY);
    args.extend(extra);
    ok(&args, dir);
}

#[test]
fn gen_data_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let summary: Value = serde_json::from_str(ok(&["gen-data", "--ids", "3", "--per-id", "2", "--test-ids", "1", "--out", "a"], dir.path()).trim()).unwrap();
    assert_eq!(summary["images"], 8);
    ok(&["gen-data", "--ids", "3", "--per-id", "2", "--test-ids", "1", "--out", "b"], dir.path());
    for f in ["train.jsonl", "test.jsonl", "masks.jsonl", "images/train_00003.ten"] {
        assert_eq!(fs::read(dir.path().join("a").join(f)).unwrap(), fs::read(dir.path().join("b").join(f)).unwrap(), "{f}");
    }
}

#[test]
fn train_eval_retrieve_sweep() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    corpus(d);
    train(d, "m.miac", &[]);
    assert!(d.join("m.miac.json").exists());
    let log = fs::read_to_string(d.join("m.miac.log.jsonl")).unwrap();
    let lines: Vec<Value> = log.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 6);
    assert_eq!(lines[5]["step_id"], 3);
    assert!(lines[2]["L_M_G"].as_f64().unwrap() > 0.0);

    let reports: Value = serde_json::from_str(&ok(&["eval", "--ckpt", "m.miac", "--corpus", "corp", "--report", "all", "--json"], d)).unwrap();
    let reports = reports.as_array().unwrap();
    assert_eq!(reports.len(), 4);
    for r in reports {
        assert_eq!(r["queries"], 8);
        let (r1, r5, r10) = (r["R@1"].as_f64().unwrap(), r["R@5"].as_f64().unwrap(), r["R@10"].as_f64().unwrap());
        assert!(r1 <= r5 && r5 <= r10 && r10 <= 1.0);
        assert!((r["Total"].as_f64().unwrap() - (r1 + r5 + r10)).abs() < 1e-12);
    }
    let table = ok(&["eval", "--ckpt", "m.miac", "--corpus", "corp"], d);
    assert!(table.contains("R@1") && table.contains("sF"), "{table}");

    let top: Value = serde_json::from_str(&ok(&["retrieve", "--ckpt", "m.miac", "--corpus", "corp", "--caption", "a man in a red hat", "--topk", "3", "--json"], d)).unwrap();
    assert_eq!(top["results"].as_array().map(Vec::len).unwrap_or_else(|| top.as_array().unwrap().len()), 3);

    ok(&["sweep", "--ckpt", "m.miac", "--corpus", "corp", "--l1", "0:1:0.5", "--l2", "0,2", "--csv", "grid.csv"], d);
    let csv = fs::read_to_string(d.join("grid.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 3 * 2, "{csv}");
}

#[test]
fn steps_resume_from_checkpoint_and_must_run_in_order() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    corpus(d);
    let out = mia(&["train", "--corpus", "corp", "--ckpt", "s.miac", "--step", "2", "--quiet"], d);
    assert!(!out.status.success());
    train(d, "s.miac", &["--step", "1"]);
    let out = mia(&["train", "--corpus", "corp", "--ckpt", "s.miac", "--step", "3", "--quiet"], d);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("step"));
    train(d, "s.miac", &["--step", "2"]);
    train(d, "s.miac", &["--step", "3"]);
    train(d, "all.miac", &[]);
    assert!(fs::read(d.join("s.miac")).unwrap() == fs::read(d.join("all.miac")).unwrap(), "resumed and uninterrupted checkpoints differ");
}

#[test]
fn config_file_and_flag_precedence() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    corpus(d);
    fs::write(
        d.join("run.cfg"),
        "# tiny run\ncorpus = corp\nckpt = c.miac\nstep1_epochs = 1\nstep2_epochs = 1\nstep3_epochs = 1\nbatch_size = 4\nseed = 5\n",
    )
    .unwrap();
    ok(&["train", "--config", "run.cfg", "--quiet", "--seed", "6"], d);
    let meta: Value = serde_json::from_str(&fs::read_to_string(d.join("c.miac.json")).unwrap()).unwrap();
    assert_eq!(meta["train"]["seed"], 6);
    assert_eq!(meta["train"]["step1"]["epochs"], 1);

    fs::write(d.join("bad.cfg"), "corpus = corp\nlearning_rate = 3\n").unwrap();
    let out = mia(&["train", "--config", "bad.cfg", "--quiet"], d);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("bad.cfg:2") && err.contains("learning_rate"), "{err}");
}

#[test]
fn grad_check_passes_on_a_fresh_model() {
    let dir = tempfile::tempdir().unwrap();
    let out: Value = serde_json::from_str(&ok(&["grad-check", "--samples", "40", "--json"], dir.path())).unwrap();
    for step in out.as_array().unwrap() {
        assert_eq!(step["passed"], true, "{step}");
        assert!(step["max_rel_error"].as_f64().unwrap() <= 1e-4);
    }
}

#[test]
fn chunk_prints_phrases() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("caps.txt"), "a woman with a red bag and black shoes\n\nthe man wears blue jeans\n").unwrap();
    let text = ok(&["chunk", "--in", "caps.txt"], dir.path());
    assert!(text.contains("woman | red bag | black shoes"), "{text}");
    let json = ok(&["chunk", "--in", "caps.txt", "--json"], dir.path());
    let rows: Vec<Value> = json.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(rows.len(), 3);
    assert_eq!(rows[1]["phrases"], serde_json::json!([]));
    assert_eq!(rows[2]["phrases"], serde_json::json!(["man", "blue jeans"]));
}

#[test]
fn missing_files_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    let out = mia(&["eval", "--ckpt", "nope.miac", "--corpus", "corp"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope.miac"));
}

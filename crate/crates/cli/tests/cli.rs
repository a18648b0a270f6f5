use std::fs;
use std::path::{Path, PathBuf};

use qsgan_cli::{metrics_path, run_cli, EXIT_FAILURE, EXIT_OK, EXIT_USAGE};

const TINY: &str = r#"{
  "synth": {"n_videos": 4, "shots": 12, "d_frame": 6, "d_shot": 5, "d_text": 4},
  "train": {
    "model": {"d_frame": 6, "d_shot": 5, "d_text": 4, "d_fused": 6, "d_qenc": 3, "gen_hidden": 4,
              "predictor_hidden": 4, "critic_hidden": 3, "critic_widths": [6, 4, 3]},
    "n_critic": 2, "max_steps": 6, "segment_len": 8, "eval_every": 2
  }
}"#;

fn run(args: &[&str]) -> i32 {
    let mut argv = vec!["qsgan"];
    argv.extend_from_slice(args);
    run_cli(argv)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Work {
    dir: tempfile::TempDir,
}

impl Work {
    fn new() -> Self {
        let w = Work { dir: tempfile::tempdir().unwrap() };
        fs::write(w.path("tiny.json"), TINY).unwrap();
        w
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn corpus(&self) -> PathBuf {
        let out = self.path("corpus");
        if !out.exists() {
            assert_eq!(run(&["synth", "--config", s(&self.path("tiny.json")), "--seed", "1", "--out", s(&out)]), EXIT_OK);
        }
        out
    }

    fn train(&self, name: &str, extra: &[&str]) -> PathBuf {
        let corpus = self.corpus();
        let out = self.path(name);
        let config = self.path("tiny.json");
        let mut args = vec!["train", "--config", s(&config), "--corpus", s(&corpus), "--out", s(&out)];
        args.extend_from_slice(extra);
        assert_eq!(run(&args), EXIT_OK);
        out
    }
}

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap())
        .map(|e| (e.file_name().into_string().unwrap(), fs::read(e.path()).unwrap()))
        .collect();
    files.sort();
    files
}

#[test]
fn gradcheck_passes() {
    assert_eq!(run(&["gradcheck", "--seed", "7"]), EXIT_OK);
}

#[test]
fn synth_is_deterministic() {
    let w = Work::new();
    let (a, b) = (w.path("a"), w.path("b"));
    for out in [&a, &b] {
        assert_eq!(run(&["synth", "--out", s(out), "--seed", "1"]), EXIT_OK);
    }
    let (fa, fb) = (dir_bytes(&a), dir_bytes(&b));
    assert!(fa.len() >= 3);
    assert_eq!(fa, fb);
    assert_eq!(run(&["synth", "--out", s(&w.path("c")), "--seed", "2"]), EXIT_OK);
    assert_ne!(dir_bytes(&w.path("c")), fa);
}

#[test]
fn usage_errors_exit_one() {
    let w = Work::new();
    assert_eq!(run(&["evaluate"]), EXIT_USAGE);
    assert_eq!(run(&["frobnicate"]), EXIT_USAGE);
    assert_eq!(run(&["synth", "--out", s(&w.path("x")), "--bogus"]), EXIT_USAGE);
    assert_eq!(run(&[]), EXIT_USAGE);
    let corpus = w.corpus();
    let out = w.path("bad.qsck");
    for bad in [["--threshold", "1.5"], ["--ablation", "no-critic"], ["--max-steps", "many"]] {
        let mut args = vec!["train", "--corpus", s(&corpus), "--out", s(&out)];
        args.extend_from_slice(&bad);
        assert_eq!(run(&args), EXIT_USAGE, "{bad:?}");
    }
    fs::write(w.path("unknown.json"), r#"{"train": {"learning_rate": 1}}"#).unwrap();
    assert_eq!(run(&["train", "--config", s(&w.path("unknown.json")), "--corpus", s(&corpus), "--out", s(&out)]), EXIT_USAGE);
    assert!(!out.exists());
    assert_eq!(run(&["--help"]), EXIT_OK);
}

#[test]
fn runtime_failures_exit_two_without_output() {
    let w = Work::new();
    let out = w.path("run.qsck");
    assert_eq!(run(&["train", "--corpus", s(&w.path("missing")), "--out", s(&out)]), EXIT_FAILURE);
    // Desk-scale model against the tiny corpus: dimension mismatch.
    assert_eq!(run(&["train", "--corpus", s(&w.corpus()), "--out", s(&out)]), EXIT_FAILURE);
    assert!(!out.exists());
    assert!(!metrics_path(&out).exists());
    fs::write(w.path("junk.qsck"), b"QSCK\x01\x00").unwrap();
    let report = w.path("report.csv");
    assert_eq!(
        run(&["evaluate", "--checkpoint", s(&w.path("junk.qsck")), "--corpus", s(&w.corpus()), "--out", s(&report)]),
        EXIT_FAILURE
    );
    assert!(!report.exists());
}

#[test]
fn train_evaluate_summarize() {
    let w = Work::new();
    let ckpt = w.train("run.qsck", &[]);
    let metrics = fs::read_to_string(metrics_path(&ckpt)).unwrap();
    assert!(metrics.starts_with("step,critic_loss,gen_adv,loss_summ,loss_length,total_gen\n"));
    assert_eq!(metrics.lines().count(), 7);

    let corpus = w.corpus();
    let report = w.path("report.csv");
    let args = ["evaluate", "--checkpoint", s(&ckpt), "--corpus", s(&corpus), "--split", "test", "--out", s(&report), "--length-study"];
    assert_eq!(run(&args), EXIT_OK);
    let first = fs::read(&report).unwrap();
    let text = String::from_utf8(first.clone()).unwrap();
    assert!(text.starts_with("video_id,query_id,scenario,precision,recall,f1\n"));
    assert!(text.lines().last().unwrap().starts_with("all,mean,all,"));
    let length = fs::read_to_string(report.with_extension("length.csv")).unwrap();
    assert!(length.starts_with("split,queries,length_distance,length_gap\n"));
    assert_eq!(run(&args), EXIT_OK);
    assert_eq!(fs::read(&report).unwrap(), first);

    let manifest: serde_json::Value = serde_json::from_slice(&fs::read(corpus.join("manifest.json")).unwrap()).unwrap();
    let video = &manifest["videos"][0];
    let (vid, qid) = (video["id"].as_str().unwrap(), video["queries"][0]["id"].as_str().unwrap());
    let summary = w.path("summary.csv");
    let args = ["summarize", "--checkpoint", s(&ckpt), "--corpus", s(&corpus), "--video", vid, "--query", qid, "--out", s(&summary)];
    assert_eq!(run(&args), EXIT_OK);
    let text = fs::read_to_string(&summary).unwrap();
    assert_eq!(text.lines().next(), Some("shot,score,selected,concepts"));
    assert_eq!(text.lines().count(), 13);
    assert_eq!(
        run(&["summarize", "--checkpoint", s(&ckpt), "--corpus", s(&corpus), "--video", "nope", "--query", qid]),
        EXIT_FAILURE
    );
}

#[test]
fn resume_reproduces_uninterrupted_run() {
    let w = Work::new();
    let whole = w.train("whole.qsck", &["--seed", "5"]);
    let part = w.train("part.qsck", &["--seed", "5", "--max-steps", "3"]);
    let resumed = w.path("resumed.qsck");
    let corpus = w.corpus();
    assert_eq!(run(&["train", "--resume", s(&part), "--max-steps", "6", "--corpus", s(&corpus), "--out", s(&resumed)]), EXIT_OK);
    assert_eq!(fs::read(metrics_path(&resumed)).unwrap(), fs::read(metrics_path(&whole)).unwrap());
    assert_eq!(fs::read(&resumed).unwrap(), fs::read(&whole).unwrap());
    assert_eq!(run(&["train", "--resume", s(&part), "--seed", "1", "--corpus", s(&corpus), "--out", s(&resumed)]), EXIT_USAGE);
}

#[test]
fn identical_seeds_give_identical_files() {
    let w = Work::new();
    let a = w.train("a.qsck", &["--seed", "3"]);
    let b = w.train("b.qsck", &["--seed", "3"]);
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    assert_eq!(fs::read(metrics_path(&a)).unwrap(), fs::read(metrics_path(&b)).unwrap());
    let c = w.train("c.qsck", &["--seed", "4"]);
    assert_ne!(fs::read(metrics_path(&a)).unwrap(), fs::read(metrics_path(&c)).unwrap());
}

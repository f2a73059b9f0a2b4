use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sha2::{Digest, Sha256};
use tempfile::TempDir;

fn sfnet(args: &[&str]) -> Output {
    sfnet_env(args, None)
}

fn sfnet_env(args: &[&str], log_dir: Option<&Path>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_sfnet"));
    cmd.args(args).env_remove("SFNET_LOG_DIR");
    if let Some(d) = log_dir {
        cmd.env("SFNET_LOG_DIR", d);
    }
    cmd.output().expect("sfnet runs")
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "status {:?}\nstdout:\n{}\nstderr:\n{}",
        out.status,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn digest(path: &Path) -> Vec<u8> {
    Sha256::digest(std::fs::read(path).unwrap()).to_vec()
}

struct Fixture {
    dir: TempDir,
}

impl Fixture {
    fn new() -> Self {
        Fixture {
            dir: tempfile::tempdir().unwrap(),
        }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn arg(&self, name: &str) -> String {
        self.path(name).to_str().unwrap().to_string()
    }

    /// A small corpus that trains in well under a second.
    fn small_corpus(&self, name: &str) -> String {
        std::fs::write(
            self.path("small.spec"),
            "num_classes = 3\ndim = 8\ntrain_videos = 8\ntest_videos = 4\nmin_length = 40\nmax_length = 60\n",
        )
        .unwrap();
        let out = self.arg(name);
        ok(&sfnet(&["gen", "--spec", &self.arg("small.spec"), "--out", &out]));
        out
    }
}

const SMALL_TRAIN: [&str; 6] = ["--set", "hidden=8", "--set", "iterations=20", "--set", "batch_size=4"];

#[test]
fn gen_prints_summary_and_is_reproducible() {
    let f = Fixture::new();
    let a = f.arg("a.sfc");
    let b = f.arg("b.sfc");
    let text = ok(&sfnet(&["gen", "--out", &a, "--ground-truth-csv", &f.arg("gt.csv")]));
    assert!(text.contains("videos: 100 (80 train, 20 test)"), "{text}");
    assert!(text.contains("class histogram: 1:"), "{text}");
    let range = text.lines().find(|l| l.starts_with("frames per video")).unwrap();
    let (lo, hi) = range.rsplit_once(' ').unwrap().1.split_once("..").unwrap();
    assert!(lo.parse::<usize>().unwrap() >= 150 && hi.parse::<usize>().unwrap() <= 250);
    ok(&sfnet(&["gen", "--out", &b]));
    assert_eq!(digest(Path::new(&a)), digest(Path::new(&b)));
    let gt = std::fs::read_to_string(f.path("gt.csv")).unwrap();
    assert!(gt.starts_with("video_id,start,end,class\n"));
}

#[test]
fn gen_rejects_empty_and_bad_specs() {
    let f = Fixture::new();
    let out = sfnet(&["gen", "--out", &f.arg("x.sfc"), "--set", "train_videos=0", "--set", "test_videos=0"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!String::from_utf8_lossy(&out.stderr).is_empty());
    let out = sfnet(&["gen", "--out", &f.arg("x.sfc"), "--set", "colour=blue"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!f.path("x.sfc").exists());
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(sfnet(&["train"]).status.code(), Some(1));
    assert_eq!(sfnet(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(sfnet(&["--help"]).status.code(), Some(0));
    let f = Fixture::new();
    let out = sfnet(&["eval", "--corpus", &f.arg("missing.sfc"), "--checkpoint", &f.arg("none")]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn train_then_eval_is_deterministic() {
    let f = Fixture::new();
    let corpus = f.small_corpus("c.sfc");
    let logs = f.path("logs");
    let mut args = vec!["train", "--corpus", &corpus, "--preset", "sfbae"];
    args.extend(SMALL_TRAIN);
    let ck1 = f.arg("one.ck");
    let ck2 = f.arg("two.ck");
    ok(&sfnet_env(&[&args[..], &["--out", &ck1]].concat(), Some(&logs)));
    ok(&sfnet_env(&[&args[..], &["--out", &ck2]].concat(), Some(&logs)));
    assert_eq!(digest(Path::new(&ck1)), digest(Path::new(&ck2)));
    let log1 = std::fs::read_to_string(logs.join("one.log.csv")).unwrap();
    assert_eq!(log1, std::fs::read_to_string(logs.join("two.log.csv")).unwrap());
    assert!(log1.starts_with("iter,frame_l,frame_b,actionness,video,total\n"));
    assert_eq!(log1.lines().count(), 21);

    let r1 = ok(&sfnet(&["eval", "--corpus", &corpus, "--checkpoint", &ck1]));
    let r2 = ok(&sfnet(&["eval", "--corpus", &corpus, "--checkpoint", &ck2]));
    assert_eq!(r1, r2);
    assert!(r1.starts_with("metric,value\nmAP@0.1,"), "{r1}");
    assert!(r1.contains("\nmAP@hit,") && r1.contains("\nAVG(0.1:0.7),"));
}

#[test]
fn log_falls_back_next_to_checkpoint() {
    let f = Fixture::new();
    let corpus = f.small_corpus("c.sfc");
    let ck = f.arg("model.ck");
    let mut args = vec!["train", "--corpus", &corpus, "--out", &ck];
    args.extend(SMALL_TRAIN);
    ok(&sfnet(&args));
    assert!(f.path("model.log.csv").exists());
}

#[test]
fn weak_preset_logs_only_video_loss() {
    let f = Fixture::new();
    let corpus = f.small_corpus("c.sfc");
    let ck = f.arg("w.ck");
    let log = f.arg("w.csv");
    let mut args = vec!["train", "--corpus", &corpus, "--preset", "weak", "--out", &ck, "--log", &log];
    args.extend(SMALL_TRAIN);
    ok(&sfnet(&args));
    let text = std::fs::read_to_string(&log).unwrap();
    for row in text.lines().skip(1) {
        let cols: Vec<f64> = row.split(',').map(|c| c.parse().unwrap()).collect();
        assert_eq!(&cols[1..4], &[0.0, 0.0, 0.0]);
        assert!(cols[4] > 0.0);
    }
}

#[test]
fn eval_rejects_mismatched_checkpoint() {
    let f = Fixture::new();
    let corpus = f.small_corpus("c.sfc");
    let other = f.arg("other.sfc");
    ok(&sfnet(&["gen", "--out", &other, "--set", "dim=6", "--set", "num_classes=3", "--set", "train_videos=2", "--set", "test_videos=1"]));
    let ck = f.arg("m.ck");
    ok(&sfnet(&["train", "--corpus", &corpus, "--out", &ck, "--set", "iterations=0", "--set", "hidden=4"]));
    let out = sfnet(&["eval", "--corpus", &other, "--checkpoint", &ck]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("D=8"));
}

#[test]
fn ground_truth_scores_one_through_the_csv_path() {
    let f = Fixture::new();
    ok(&sfnet(&["gen", "--out", &f.arg("c.sfc"), "--ground-truth-csv", &f.arg("gt.csv")]));
    let gt = std::fs::read_to_string(f.path("gt.csv")).unwrap();
    let mut segs = String::from("video_id,class,start,end,confidence\n");
    let mut dets = String::from("video_id,class,frame,confidence\n");
    for row in gt.lines().skip(1) {
        let v: Vec<usize> = row.split(',').map(|c| c.parse().unwrap()).collect();
        segs.push_str(&format!("{},{},{},{},1\n", v[0], v[3], v[1], v[2]));
        dets.push_str(&format!("{},{},{},1\n", v[0], v[3], (v[1] + v[2]) / 2));
    }
    std::fs::write(f.path("segs.csv"), segs).unwrap();
    std::fs::write(f.path("dets.csv"), dets).unwrap();
    let report = ok(&sfnet(&[
        "eval",
        "--corpus",
        &f.arg("c.sfc"),
        "--segments",
        &f.arg("segs.csv"),
        "--detections",
        &f.arg("dets.csv"),
    ]));
    for row in report.lines().skip(1) {
        let (name, value) = row.split_once(',').unwrap();
        assert_eq!(value, "1.000000", "{name}");
    }
}

#[test]
fn sweep_emits_one_row_per_value() {
    let f = Fixture::new();
    let corpus = f.small_corpus("c.sfc");
    let mut args = vec!["sweep", "--corpus", &corpus, "--param", "eta", "--values", "0,1,5"];
    args.extend(SMALL_TRAIN);
    let table = ok(&sfnet(&args));
    assert_eq!(table, ok(&sfnet(&args)));
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines.len(), 4);
    assert!(lines[0].starts_with("eta,mAP@hit,mAP@0.1,"));
    assert!(lines[0].ends_with(",AVG(0.1:0.7),AVG(0.1:0.5),background_frames"));
    assert!(lines[1].starts_with("0,") && lines[1].ends_with(",0"));
    assert!(!lines[3].ends_with(",0"));
}

#[test]
fn single_value_sweep_matches_train_and_eval() {
    let f = Fixture::new();
    let corpus = f.small_corpus("c.sfc");
    let mut args = vec!["sweep", "--corpus", &corpus, "--param", "alpha", "--values", "1"];
    args.extend(SMALL_TRAIN);
    let table = ok(&sfnet(&args));
    let ck = f.arg("m.ck");
    let mut targs = vec!["train", "--corpus", &corpus, "--out", &ck];
    targs.extend(SMALL_TRAIN);
    ok(&sfnet(&targs));
    let report = ok(&sfnet(&["eval", "--corpus", &corpus, "--checkpoint", &ck]));
    let metric = |name: &str| report.lines().find_map(|l| l.strip_prefix(&format!("{name},"))).unwrap().to_string();
    let header: Vec<&str> = table.lines().next().unwrap().split(',').collect();
    let row: Vec<&str> = table.lines().nth(1).unwrap().split(',').collect();
    for (h, v) in header.iter().zip(&row).skip(1).take(header.len() - 2) {
        assert_eq!(*v, metric(h), "{h}");
    }
}

#[test]
fn gradcheck_passes_and_catches_a_planted_bug() {
    let text = ok(&sfnet(&["gradcheck"]));
    assert!(text.lines().last().unwrap().starts_with("PASS"), "{text}");
    ok(&sfnet(&["gradcheck", "--classes", "1"]));
    let out = sfnet(&["gradcheck", "--inject-fault", "0:3:0.01"]);
    assert_eq!(out.status.code(), Some(2));
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("FAIL worst: cls.fc1.weight entry 3"), "{text}");
    assert_eq!(sfnet(&["gradcheck", "--frames", "40"]).status.code(), Some(1));
}

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use dualsup::evaluator::{gold_facts, micro_f1, threshold_predictions};
use dualsup::model::Model;
use dualsup::synth_data::read_dataset;

const SMALL: &str = "\
n_entities = 60
n_relations = 6
n_triples = 90
n_train_ha = 30
n_train_ds = 80
n_dev = 20
n_test = 25
hidden = 4
epochs = 2
batch_size = 8
";

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dualsup")).args(args).output().expect("spawn dualsup")
}

fn ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(
        out.status.success(),
        "dualsup {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

struct Workspace {
    _tmp: tempfile::TempDir,
    root: PathBuf,
    config: PathBuf,
}

impl Workspace {
    fn new(extra: &str) -> Self {
        let tmp = tempfile::tempdir().unwrap();
        let root = tmp.path().to_path_buf();
        let config = root.join("exp.toml");
        fs::write(&config, format!("{SMALL}{extra}data_dir = {:?}\n", root.join("data"))).unwrap();
        Self { _tmp: tmp, root, config }
    }

    fn cmd(&self, sub: &str, out: &str, extra: &[&str]) -> Output {
        let out_dir = self.root.join(out);
        let mut args = vec![sub, "--config", self.config.to_str().unwrap(), "--out-dir", out_dir.to_str().unwrap()];
        args.extend_from_slice(extra);
        ok(&args)
    }

    fn data(&self) -> PathBuf {
        self.root.join("data")
    }
}

fn read_dir_bytes(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut m = BTreeMap::new();
    for e in fs::read_dir(dir).unwrap() {
        let e = e.unwrap();
        if e.file_type().unwrap().is_file() {
            m.insert(e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap());
        }
    }
    m
}

fn csv_rows(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let mut r = csv::Reader::from_path(path).unwrap();
    let header = r.headers().unwrap().iter().map(String::from).collect();
    let rows = r.records().map(|x| x.unwrap().iter().map(String::from).collect()).collect();
    (header, rows)
}

#[test]
fn gen_is_deterministic_and_round_trips() {
    let ws = Workspace::new("");
    let out = ws.cmd("gen", "g", &[]);
    let first = read_dir_bytes(&ws.data());
    for name in ["train_ha.jsonl", "train_ds.jsonl", "dev.jsonl", "test.jsonl", "kb.jsonl", "meta.json"] {
        assert!(first.contains_key(name), "missing {name}");
    }
    let d = read_dataset(&ws.data().join("train_ds.jsonl")).unwrap();
    assert_eq!(d.documents.len(), 80);
    let table = String::from_utf8(out.stdout).unwrap();
    assert!(table.contains("target") && table.contains("measured"));

    ws.cmd("gen", "g", &[]);
    assert_eq!(read_dir_bytes(&ws.data()), first);
    ws.cmd("gen", "g", &["--seed", "3"]);
    assert_ne!(read_dir_bytes(&ws.data()), first);
}

#[test]
fn every_command_is_rerun_byte_identical() {
    let ws = Workspace::new("");
    ws.cmd("gen", "g", &[]);
    for sub in ["train", "eval", "bias", "gradcheck"] {
        ws.cmd(sub, "a", &["--n-checks", "10"]);
    }
    let a = read_dir_bytes(&ws.root.join("a"));
    for sub in ["train", "eval", "bias", "gradcheck"] {
        ws.cmd(sub, "b", &["--n-checks", "10"]);
    }
    let b = read_dir_bytes(&ws.root.join("b"));
    for f in ["model.ckpt", "history.csv", "metrics.csv", "pr.csv", "groups.csv", "bias.csv", "fit.csv", "gradcheck.csv"] {
        assert!(a.contains_key(f), "missing {f}");
    }
    assert_eq!(a, b);
}

#[test]
fn multitask_history_equals_dual_without_penalty() {
    let ws = Workspace::new("");
    ws.cmd("gen", "g", &[]);
    ws.cmd("train", "dual", &["--mode", "dual", "--lambda", "0"]);
    ws.cmd("train", "multi", &["--mode", "multitask", "--lambda", "0.5"]);
    let hist = |d: &str| fs::read(ws.root.join(d).join("history.csv")).unwrap();
    assert_eq!(hist("dual"), hist("multi"));
    let (header, rows) = csv_rows(&ws.root.join("dual").join("history.csv"));
    assert_eq!(header, ["epoch", "loss_ha", "loss_ds", "loss_penalty", "dev_f1", "threshold"]);
    assert_eq!(rows.len(), 2);
}

#[test]
fn missing_dataset_is_a_clear_error() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("nowhere");
    let out = run(&["train", "--data-dir", data.to_str().unwrap(), "--out-dir", tmp.path().to_str().unwrap()]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("nowhere") && err.contains("dualsup gen"), "{err}");
}

#[test]
fn unknown_config_keys_and_bad_values_are_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("c.toml");
    fs::write(&cfg, "lamda = 0.1\n").unwrap();
    let out = run(&["gen", "--config", cfg.to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("lamda"));
    assert!(!run(&["train", "--mode", "triple"]).status.success());
}

#[test]
fn eval_matches_library_and_groups_partition_relations() {
    let ws = Workspace::new("");
    ws.cmd("gen", "g", &[]);
    ws.cmd("train", "r", &[]);
    ws.cmd("eval", "r", &["--n-groups", "3"]);
    let dir = ws.root.join("r");

    let model = Model::load(&dir.join("model.ckpt")).unwrap();
    let test = read_dataset(&ws.data().join("test.jsonl")).unwrap();
    let scores = model.score_dataset(&test).unwrap();
    let expect = micro_f1(&threshold_predictions(&scores, model.threshold), &gold_facts(&test.examples));

    let (header, rows) = csv_rows(&dir.join("metrics.csv"));
    assert_eq!(header, ["mode", "seed", "split", "precision", "recall", "f1", "threshold"]);
    assert_eq!(rows.len(), 1);
    let row = &rows[0];
    assert_eq!(&row[..3], ["dual", "0", "test"]);
    assert_eq!(row[3].parse::<f64>().unwrap(), expect.precision);
    assert_eq!(row[4].parse::<f64>().unwrap(), expect.recall);
    assert_eq!(row[5].parse::<f64>().unwrap(), expect.f1);
    assert_eq!(row[6].parse::<f64>().unwrap(), model.threshold);

    let (header, rows) = csv_rows(&dir.join("groups.csv"));
    assert_eq!(header, ["group", "inflation_range", "n_relations", "f1"]);
    assert_eq!(rows.len(), 3);
    let total: usize = rows.iter().map(|r| r[2].parse::<usize>().unwrap()).sum();
    assert_eq!(total, 6);

    let (header, _) = csv_rows(&dir.join("pr.csv"));
    assert_eq!(header, ["rank", "score", "recall", "precision"]);
}

#[test]
fn bias_on_unbiased_corpus_reports_unit_inflation() {
    let ws = Workspace::new("inflation_lo = 1.0\ninflation_hi = 1.0\n");
    ws.cmd("gen", "g", &[]);
    ws.cmd("bias", "b", &["--bias-docs", "all"]);
    let (header, rows) = csv_rows(&ws.root.join("b").join("bias.csv"));
    assert_eq!(header, ["relation_id", "ha_freq", "ds_freq", "inflation", "group"]);
    assert_eq!(rows.len(), 6);
    for r in &rows {
        assert_eq!(r[3].parse::<f64>().unwrap(), 1.0, "{r:?}");
    }
    let (header, _) = csv_rows(&ws.root.join("b").join("fit.csv"));
    assert_eq!(header, ["family", "params", "ks_D", "p_value"]);

    // Separate pools only match in expectation.
    ws.cmd("bias", "p", &[]);
    let (_, rows) = csv_rows(&ws.root.join("p").join("bias.csv"));
    for r in &rows {
        let (ha, ds, infl): (f64, f64, f64) = (r[1].parse().unwrap(), r[2].parse().unwrap(), r[3].parse().unwrap());
        assert!(ha > 0.0 && ds > 0.0);
        assert!((infl - ds / ha).abs() < 1e-12);
    }
}

#[test]
fn gradcheck_passes_and_fails_with_exit_status() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().to_str().unwrap();
    let out = ok(&["gradcheck", "--out-dir", dir]);
    assert!(String::from_utf8_lossy(&out.stdout).contains("0 failed"));
    let (_, rows) = csv_rows(&tmp.path().join("gradcheck.csv"));
    assert_eq!(rows.len(), 100);
    for r in rows.iter().filter(|r| r[2] == "DS" && r[3] == "0") {
        assert_eq!(r[5].parse::<f64>().unwrap(), 0.0, "HA gradient from a DS example without penalty");
    }
    let bad = run(&["gradcheck", "--out-dir", dir, "--tolerance", "-1"]);
    assert_eq!(bad.status.code(), Some(2));
}

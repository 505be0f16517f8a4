use std::collections::BTreeSet;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use dualsup::bias_stats::{
    compute_inflation, group_by_inflation, group_ranges, rank_families, write_bias_csv, write_fit_csv,
    InflationReport,
};
use dualsup::evaluator::{
    argmax_predictions, f1_by_group, gold_facts, micro_f1, pr_curve, scored_facts, threshold_predictions,
    write_group_csv, write_metrics_csv, write_pr_csv,
};
use dualsup::loss::{verify_gradient_identities, LossConfig};
use dualsup::model::Model;
use dualsup::output_layer::{Net, OutputConfig};
use dualsup::params::ParamStore;
use dualsup::synth_data::{
    ds_label, generate, ha_label, label_counts, read_dataset, read_kb, write_dataset, write_kb, Dataset,
    GenConfig, SynthDocument,
};
use dualsup::trainer::{train, TrainData};
use dualsup::types::{ExampleLabels, RelationId, Source, Target, Task};

use crate::config::Settings;

pub const TRAIN_HA: &str = "train_ha.jsonl";
pub const TRAIN_DS: &str = "train_ds.jsonl";
pub const DEV: &str = "dev.jsonl";
pub const TEST: &str = "test.jsonl";
pub const KB: &str = "kb.jsonl";
pub const META: &str = "meta.json";

/// Generator settings and label task of a dataset directory.
#[derive(Serialize, Deserialize)]
pub struct Meta {
    pub task: Task,
    pub vocab_size: usize,
    pub gen: GenConfig,
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating directory {}", dir.display()))?;
    }
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

fn read_split(dir: &Path, name: &str) -> Result<Dataset> {
    let path = dir.join(name);
    read_dataset(&path).with_context(|| format!("reading dataset {} (run `dualsup gen` first?)", path.display()))
}

fn read_meta(s: &Settings) -> Result<Meta> {
    let path = s.data_dir.join(META);
    let text = fs::read_to_string(&path)
        .with_context(|| format!("reading {} (run `dualsup gen` first?)", path.display()))?;
    let meta: Meta = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    if meta.task != s.task {
        bail!(
            "dataset in {} is labeled for the {:?} task but task = {:?}",
            s.data_dir.display(),
            meta.task,
            s.task
        );
    }
    Ok(meta)
}

fn labeled(docs: &[SynthDocument], label: impl Fn(&SynthDocument) -> Vec<dualsup::synth_data::LabeledExample>) -> Dataset {
    Dataset {
        documents: docs.to_vec(),
        examples: docs.iter().flat_map(label).collect(),
    }
}

fn inflation_between(ha: &Dataset, ds: &Dataset, n_relations: usize, smoothing: f64) -> Result<InflationReport> {
    Ok(compute_inflation(
        &label_counts(ha.documents.len(), &ha.examples, n_relations),
        &label_counts(ds.documents.len(), &ds.examples, n_relations),
        smoothing,
    )?)
}

/// Inflation per relation as selected by `bias_docs`.
fn bias_report(s: &Settings, meta: &Meta) -> Result<InflationReport> {
    let ha = read_split(&s.data_dir, TRAIN_HA)?;
    let ds = read_split(&s.data_dir, TRAIN_DS)?;
    if s.bias_docs == "pools" {
        return inflation_between(&ha, &ds, meta.gen.n_relations, s.smoothing);
    }
    let kb_path = s.data_dir.join(KB);
    let kb = read_kb(&kb_path).with_context(|| format!("reading {}", kb_path.display()))?;
    let mut docs = Vec::new();
    for name in [TRAIN_HA, TRAIN_DS, DEV, TEST] {
        docs.extend(read_split(&s.data_dir, name)?.documents);
    }
    inflation_between(
        &labeled(&docs, |d| ha_label(d, meta.task)),
        &labeled(&docs, |d| ds_label(d, &kb, meta.task)),
        meta.gen.n_relations,
        s.smoothing,
    )
}

pub fn gen(s: &Settings) -> Result<()> {
    let cfg = s.gen_config()?;
    let corpus = generate(&cfg)?;
    let task = s.task;
    let splits = [
        (TRAIN_HA, labeled(&corpus.train_ha, |d| ha_label(d, task))),
        (TRAIN_DS, labeled(&corpus.train_ds, |d| ds_label(d, &corpus.kb, task))),
        (DEV, labeled(&corpus.dev, |d| ha_label(d, task))),
        (TEST, labeled(&corpus.test, |d| ha_label(d, task))),
    ];
    fs::create_dir_all(&s.data_dir).with_context(|| format!("creating directory {}", s.data_dir.display()))?;
    for (name, data) in &splits {
        write_dataset(&s.data_dir.join(name), data)?;
    }
    write_kb(&s.data_dir.join(KB), &corpus.kb)?;
    let meta = Meta {
        task,
        vocab_size: cfg.vocab_size(),
        gen: cfg.clone(),
    };
    let mut w = create(&s.data_dir.join(META))?;
    serde_json::to_writer_pretty(&mut w, &meta)?;
    writeln!(w)?;
    w.flush()?;

    // Both labelings of the same documents.
    let docs: Vec<SynthDocument> = corpus.all_documents().cloned().collect();
    let report = inflation_between(
        &labeled(&docs, |d| ha_label(d, task)),
        &labeled(&docs, |d| ds_label(d, &corpus.kb, task)),
        cfg.n_relations,
        0.0,
    )?;
    println!(
        "wrote {} documents to {}",
        docs.len(),
        s.data_dir.display()
    );
    println!("{:>8} {:>10} {:>10} {:>9}", "relation", "target", "measured", "rel_err");
    for row in &report.per_relation {
        let target = cfg.target_inflation(row.relation);
        println!(
            "{:>8} {:>10.4} {:>10.4} {:>+9.3}",
            row.relation.to_string(),
            target,
            row.inflation,
            row.inflation / target - 1.0
        );
    }
    Ok(())
}

pub fn train_cmd(s: &Settings) -> Result<()> {
    let meta = read_meta(s)?;
    let ha = read_split(&s.data_dir, TRAIN_HA)?;
    let ds = read_split(&s.data_dir, TRAIN_DS)?;
    let dev = read_split(&s.data_dir, DEV)?;
    let data = TrainData {
        ha: &ha,
        ds: &ds,
        dev: Some(&dev),
        vocab_size: meta.vocab_size,
        n_relations: meta.gen.n_relations,
    };
    let (model, history) = train(&s.train_config(), &data)?;
    let ckpt = s.checkpoint_path();
    if let Some(dir) = ckpt.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating directory {}", dir.display()))?;
    }
    model.save(&ckpt).with_context(|| format!("writing checkpoint {}", ckpt.display()))?;
    let hist_path = s.out_dir.join("history.csv");
    history.write_csv(create(&hist_path)?)?;
    println!("{:>5} {:>10} {:>10} {:>12} {:>8} {:>9}", "epoch", "loss_ha", "loss_ds", "loss_penalty", "dev_f1", "threshold");
    for r in &history.epochs {
        println!(
            "{:>5} {:>10.5} {:>10.5} {:>12.5} {:>8.4} {:>9}",
            r.epoch,
            r.loss_ha,
            r.loss_ds,
            r.loss_penalty,
            r.dev_f1.unwrap_or(f64::NAN),
            r.threshold.map_or("-".to_string(), |t| format!("{t:.4}"))
        );
    }
    println!(
        "selected epoch {}; wrote {} and {}",
        history.selected_epoch.unwrap_or(0),
        ckpt.display(),
        hist_path.display()
    );
    Ok(())
}

pub struct EvalPaths {
    pub metrics: PathBuf,
    pub pr: PathBuf,
    pub groups: PathBuf,
}

pub fn eval_paths(s: &Settings) -> EvalPaths {
    EvalPaths {
        metrics: s.out_dir.join("metrics.csv"),
        pr: s.out_dir.join("pr.csv"),
        groups: s.out_dir.join("groups.csv"),
    }
}

pub fn eval(s: &Settings) -> Result<()> {
    let meta = read_meta(s)?;
    let ckpt = s.checkpoint_path();
    let model = Model::load(&ckpt).with_context(|| format!("loading checkpoint {}", ckpt.display()))?;
    let task = model.config.output.task;
    if task != s.task {
        bail!("checkpoint {} was trained for the {task:?} task", ckpt.display());
    }
    let data = read_split(&s.data_dir, if s.split == "dev" { DEV } else { TEST })?;
    let scores = model.score_dataset(&data)?;
    let gold = gold_facts(&data.examples);
    let (pred, threshold) = match task {
        Task::Document => (threshold_predictions(&scores, model.threshold), Some(model.threshold)),
        Task::Sentence => (argmax_predictions(&scores), None),
    };
    let result = micro_f1(&pred, &gold);
    let paths = eval_paths(s);
    write_metrics_csv(
        create(&paths.metrics)?,
        &[(s.mode.name(), s.seed, &s.split, result, threshold)],
    )?;
    write_pr_csv(create(&paths.pr)?, &pr_curve(&scored_facts(&scores, task), &gold))?;

    let report = bias_report(s, &meta)?;
    let groups = group_by_inflation(&report, s.n_groups)?;
    let by_group = f1_by_group(&pred, &gold, &groups)?;
    let ranges: Vec<(f64, f64)> = group_ranges(&report, &groups, s.n_groups)
        .into_iter()
        .map(|(lo, hi, _)| (lo, hi))
        .collect();
    write_group_csv(create(&paths.groups)?, &by_group, &ranges)?;

    println!(
        "{} {}: precision {:.4} recall {:.4} f1 {:.4}{}",
        s.mode,
        s.split,
        result.precision,
        result.recall,
        result.f1,
        threshold.map_or(String::new(), |t| format!(" (threshold {t:.4})"))
    );
    for g in &by_group {
        let (lo, hi) = ranges[g.group];
        println!("  group {} inflation {lo:.3}-{hi:.3}: f1 {:.4}", g.group, g.result.f1);
    }
    Ok(())
}

pub fn bias(s: &Settings) -> Result<()> {
    let meta = read_meta(s)?;
    let report = bias_report(s, &meta)?;
    let groups = group_by_inflation(&report, s.n_groups)?;
    let bias_path = s.out_dir.join("bias.csv");
    write_bias_csv(create(&bias_path)?, &report, &groups)?;
    let sample = report.finite_sample();
    let ranking = rank_families(&sample).context("fitting inflation families")?;
    let fit_path = s.out_dir.join("fit.csv");
    write_fit_csv(create(&fit_path)?, &ranking)?;
    println!("{:>12} {:>10} {:>10}", "family", "ks_D", "p_value");
    for f in &ranking.fits {
        println!("{:>12} {:>10.4} {:>10.4}", f.family.name(), f.ks_statistic, f.p_value);
    }
    for (family, why) in &ranking.skipped {
        println!("{:>12} skipped: {why}", family.name());
    }
    println!("wrote {} and {}", bias_path.display(), fit_path.display());
    Ok(())
}

#[derive(Serialize)]
struct GradRow {
    index: usize,
    task: Task,
    source: String,
    lambda: f64,
    discrepancy: f64,
    autodiff_max_abs: f64,
    analytic_max_abs: f64,
}

const GRADCHECK_LAMBDAS: [f64; 4] = [0.0, 1e-3, 0.1, 1.0];

/// Returns whether every check passed.
pub fn gradcheck(s: &Settings) -> Result<bool> {
    let mut rng = ChaCha8Rng::seed_from_u64(s.seed);
    let (d, n_rel) = (s.hidden, s.n_relations.clamp(1, 8));
    let path = s.out_dir.join("gradcheck.csv");
    let mut wr = csv::Writer::from_writer(create(&path)?);
    let (mut worst, mut failures) = (0.0f64, 0usize);
    for i in 0..s.n_checks {
        let task = if i % 2 == 0 { Task::Document } else { Task::Sentence };
        let source = if rng.random_bool(0.5) { Source::Human } else { Source::Distant };
        let lambda = GRADCHECK_LAMBDAS[(i / 2) % GRADCHECK_LAMBDAS.len()];
        let out_cfg = OutputConfig::new(d, n_rel, task);
        let mut store = ParamStore::new();
        out_cfg.init_params(&mut store, &Net::ALL, s.seed.wrapping_add(i as u64));
        // Split the heads apart so HA and DS disagree.
        for (_, t) in store.iter_mut() {
            for v in t.data_mut() {
                *v += rng.random_range(-0.5..0.5);
            }
        }
        let vec = |rng: &mut ChaCha8Rng| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<f64>>();
        let (h, t) = (vec(&mut rng), vec(&mut rng));
        let target = match task {
            Task::Document => Target::Document {
                relations: (0..n_rel as u32)
                    .filter(|_| rng.random_bool(0.4))
                    .map(RelationId)
                    .collect::<BTreeSet<_>>(),
            },
            Task::Sentence => Target::Sentence {
                relation: rng
                    .random_bool(0.8)
                    .then(|| RelationId(rng.random_range(0..n_rel as u32))),
            },
        };
        let labels = ExampleLabels { source, target };
        let check = verify_gradient_identities(&store, &out_cfg, &h, &t, &labels, &LossConfig::new(lambda, task))?;
        let mut failed = !(check.discrepancy <= s.tolerance);
        // Without the penalty a DS example must not reach HA-Net at all.
        if lambda == 0.0 && source == Source::Distant && check.autodiff_max_abs != 0.0 {
            failed = true;
        }
        failures += usize::from(failed);
        worst = worst.max(check.discrepancy);
        wr.serialize(GradRow {
            index: i,
            task,
            source: source.to_string(),
            lambda,
            discrepancy: check.discrepancy,
            autodiff_max_abs: check.autodiff_max_abs,
            analytic_max_abs: check.analytic_max_abs,
        })?;
    }
    wr.flush()?;
    println!(
        "{} checks, max discrepancy {worst:.3e} (tolerance {:.1e}), {failures} failed; wrote {}",
        s.n_checks,
        s.tolerance,
        path.display()
    );
    Ok(failures == 0)
}

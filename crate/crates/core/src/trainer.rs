//! Training loop over the composite loss, with ablation modes, optimizers,
//! and decision-threshold tuning for the document task.
//!
//! Modes:
//!
//! * `Dual`: HA-Net, DS-Net, mu-Net and sigma-Net with the penalty weighted
//!   by `lambda`;
//! * `Multitask`: the same code path with `lambda` forced to 0;
//! * `Single`: one prediction head trained on both sources with plain
//!   cross entropy;
//! * `HaOnly` / `DsOnly`: one prediction head trained on a single source.
//!
//! Single-head modes store their head under the HA-Net names, so evaluation
//! always reads `p_ha`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::encoder::{EncoderConfig, EncoderError, EncoderVars, EntityEncoderKind};
use crate::evaluator::{
    argmax_predictions, gold_facts, micro_f1, scored_facts, threshold_predictions, EvalResult, Fact,
};
use crate::loss::{loss_terms, LossConfig};
use crate::model::{Model, ModelConfig};
use crate::ndgrad::{GradError, Graph, Var};
use crate::output_layer::{Net, OutputConfig, OutputVars, DEFAULT_SANITY_BOUND};
use crate::synth_data::{BatchMode, BatchSampler, DataError, Dataset, LabeledExample, SynthDocument};
use crate::types::{DocId, Source, Task};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Grad(#[from] GradError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T> = std::result::Result<T, TrainError>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Mode {
    #[serde(rename = "dual")]
    Dual,
    #[serde(rename = "multitask")]
    Multitask,
    #[serde(rename = "single")]
    Single,
    #[serde(rename = "ha-only")]
    HaOnly,
    #[serde(rename = "ds-only")]
    DsOnly,
}

impl Mode {
    pub const ALL: [Mode; 5] = [Mode::Dual, Mode::Multitask, Mode::Single, Mode::HaOnly, Mode::DsOnly];

    pub fn nets(self) -> &'static [Net] {
        match self {
            Mode::Dual | Mode::Multitask => &Net::ALL,
            Mode::Single | Mode::HaOnly | Mode::DsOnly => &[Net::Ha],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Mode::Dual => "dual",
            Mode::Multitask => "multitask",
            Mode::Single => "single",
            Mode::HaOnly => "ha-only",
            Mode::DsOnly => "ds-only",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Mode {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let norm = s.to_ascii_lowercase().replace('_', "-");
        Mode::ALL
            .into_iter()
            .find(|m| m.name() == norm || m.name().replace('-', "") == norm)
            .ok_or_else(|| format!("unknown mode '{s}' (expected dual|multitask|single|ha-only|ds-only)"))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Optimizer {
    Sgd { lr: f64 },
    Adam { lr: f64, beta1: f64, beta2: f64, eps: f64 },
}

impl Optimizer {
    pub fn adam(lr: f64) -> Self {
        Optimizer::Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub mode: Mode,
    pub task: Task,
    pub lambda: f64,
    pub hidden: usize,
    /// Defaults to `hidden`.
    pub attention_width: Option<usize>,
    pub context_window: usize,
    pub entity_encoder: EntityEncoderKind,
    pub score_with_projected: bool,
    pub sanity_bound: f64,
    pub optimizer: Optimizer,
    pub batch_size: usize,
    pub batch_mode: BatchMode,
    pub epochs: usize,
    pub seed: u64,
    /// Keep the parameters of the epoch with the best dev F1.
    pub select_best_dev: bool,
}

impl TrainConfig {
    /// Full-scale defaults: sentence task lambda 1e-3, d 200; document task
    /// lambda 1e-5, d 128.
    pub fn full_scale(task: Task) -> Self {
        let (lambda, hidden) = match task {
            Task::Sentence => (1e-3, 200),
            Task::Document => (1e-5, 128),
        };
        Self {
            mode: Mode::Dual,
            task,
            lambda,
            hidden,
            attention_width: None,
            context_window: 1,
            entity_encoder: EntityEncoderKind::CrossAttention,
            score_with_projected: false,
            sanity_bound: DEFAULT_SANITY_BOUND,
            optimizer: Optimizer::adam(1e-3),
            batch_size: 32,
            batch_mode: BatchMode::Mixed,
            epochs: 5,
            seed: 0,
            select_best_dev: true,
        }
    }

    /// Lambda actually applied in the loss.
    pub fn effective_lambda(&self) -> f64 {
        match self.mode {
            Mode::Dual => self.lambda,
            _ => 0.0,
        }
    }

    pub fn model_config(&self, vocab_size: usize, n_relations: usize) -> ModelConfig {
        let mut encoder = EncoderConfig::new(vocab_size, self.hidden);
        encoder.attention_width = self.attention_width.unwrap_or(self.hidden);
        encoder.context_window = self.context_window;
        encoder.kind = self.entity_encoder;
        encoder.score_with_projected = self.score_with_projected;
        let mut output = OutputConfig::new(self.hidden, n_relations, self.task);
        output.sanity_bound = self.sanity_bound;
        ModelConfig { encoder, output }
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(TrainError::Config(m));
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad(format!("lambda {} must be finite and non-negative", self.lambda));
        }
        if self.hidden == 0 || self.batch_size == 0 {
            return bad("hidden and batch_size must be positive".into());
        }
        if !(self.sanity_bound > 0.0) {
            return bad(format!("sanity_bound {} must be positive", self.sanity_bound));
        }
        let lr = match self.optimizer {
            Optimizer::Sgd { lr } | Optimizer::Adam { lr, .. } => lr,
        };
        if !(lr > 0.0 && lr.is_finite()) {
            return bad(format!("learning rate {lr} must be positive"));
        }
        Ok(())
    }
}

/// Training inputs. Documents of all pools are looked up by id.
pub struct TrainData<'a> {
    pub ha: &'a Dataset,
    pub ds: &'a Dataset,
    pub dev: Option<&'a Dataset>,
    pub vocab_size: usize,
    pub n_relations: usize,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct BatchStats {
    pub n_ha: usize,
    pub n_ds: usize,
    pub loss_ha: f64,
    pub loss_ds: f64,
    pub penalty: f64,
    pub n_penalty: usize,
    /// Mean composite loss of the batch (the optimized quantity).
    pub mean_total: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean prediction loss over HA examples.
    pub loss_ha: f64,
    /// Mean prediction loss over DS examples.
    pub loss_ds: f64,
    /// Mean unweighted disagreement penalty.
    pub loss_penalty: f64,
    pub dev_f1: Option<f64>,
    pub threshold: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    /// Index of the epoch whose parameters were kept.
    pub selected_epoch: Option<usize>,
}

impl TrainHistory {
    /// CSV: `epoch, loss_ha, loss_ds, loss_penalty, dev_f1, threshold`.
    pub fn write_csv<W: io::Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        for r in &self.epochs {
            wr.serialize(r)?;
        }
        wr.flush()?;
        Ok(())
    }
}

enum OptState {
    Sgd,
    Adam {
        t: i32,
        moments: BTreeMap<String, (Vec<f64>, Vec<f64>)>,
    },
}

pub struct Trainer<'a> {
    cfg: TrainConfig,
    model: Model,
    loss_cfg: LossConfig,
    docs: BTreeMap<DocId, &'a SynthDocument>,
    ha: &'a [LabeledExample],
    ds: &'a [LabeledExample],
    sampler: BatchSampler,
    opt: OptState,
    /// Examples fetched from each pool so far.
    pub ha_reads: usize,
    pub ds_reads: usize,
}

impl<'a> Trainer<'a> {
    pub fn new(cfg: &TrainConfig, data: &TrainData<'a>) -> Result<Self> {
        cfg.validate()?;
        let check = |d: &Dataset, source: Source| -> Result<()> {
            if let Some(e) = d.examples.iter().find(|e| e.source != source || e.target.task() != cfg.task) {
                return Err(TrainError::Config(format!(
                    "{source} pool holds a {} {} example; expected {source} {}",
                    e.source,
                    e.target.task(),
                    cfg.task
                )));
            }
            Ok(())
        };
        check(data.ha, Source::Human)?;
        check(data.ds, Source::Distant)?;
        let (n_ha, n_ds) = (data.ha.examples.len(), data.ds.examples.len());
        let seed = cfg.seed ^ 0xba7c_4e5f;
        let sampler = match cfg.mode {
            Mode::HaOnly => BatchSampler::single(Source::Human, n_ha, cfg.batch_size, seed),
            Mode::DsOnly => BatchSampler::single(Source::Distant, n_ds, cfg.batch_size, seed),
            _ => BatchSampler::new(n_ha, n_ds, cfg.batch_size, cfg.batch_mode, seed),
        }
        .map_err(|e| TrainError::Config(format!("{} mode: {e}", cfg.mode)))?;
        let docs = data
            .ha
            .documents
            .iter()
            .chain(&data.ds.documents)
            .map(|d| (d.id, d))
            .collect();
        let model = Model::init(cfg.model_config(data.vocab_size, data.n_relations), cfg.mode.nets(), cfg.seed);
        let opt = match cfg.optimizer {
            Optimizer::Sgd { .. } => OptState::Sgd,
            Optimizer::Adam { .. } => OptState::Adam {
                t: 0,
                moments: BTreeMap::new(),
            },
        };
        Ok(Self {
            cfg: cfg.clone(),
            model,
            loss_cfg: LossConfig::new(cfg.effective_lambda(), cfg.task),
            docs,
            ha: &data.ha.examples,
            ds: &data.ds.examples,
            sampler,
            opt,
            ha_reads: 0,
            ds_reads: 0,
        })
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn into_model(self) -> Model {
        self.model
    }

    pub fn next_epoch_batches(&mut self) -> Vec<crate::synth_data::Batch> {
        self.sampler.next_epoch()
    }

    fn fetch(&mut self, source: Source, i: usize) -> &'a LabeledExample {
        match source {
            Source::Human => {
                self.ha_reads += 1;
                &self.ha[i]
            }
            Source::Distant => {
                self.ds_reads += 1;
                &self.ds[i]
            }
        }
    }

    /// Loss and gradients of one batch, then one optimizer update.
    pub fn step(&mut self, batch: &[(Source, usize)]) -> Result<BatchStats> {
        let mut g = Graph::new();
        let bound = self.model.params.bind(&mut g, &self.model.prefixes());
        let enc = EncoderVars::from_bound(&mut g, &bound)?;
        let out = OutputVars::from_bound(&bound);
        let mut stats = BatchStats::default();
        let mut totals: Vec<Var> = Vec::with_capacity(batch.len());
        for &(source, i) in batch {
            let ex = self.fetch(source, i);
            let doc = self.docs.get(&ex.doc).ok_or_else(|| {
                TrainError::Config(format!("example refers to unknown document {}", ex.doc.0))
            })?;
            let pred = self.model.forward_pair(&mut g, &enc, &out, doc, ex.head, ex.tail)?;
            let terms = loss_terms(&mut g, &pred, &ex.labels(), &self.loss_cfg)?;
            let p = g.value(terms.prediction).item();
            match source {
                Source::Human => {
                    stats.n_ha += 1;
                    stats.loss_ha += p;
                }
                Source::Distant => {
                    stats.n_ds += 1;
                    stats.loss_ds += p;
                }
            }
            if let Some(pen) = terms.penalty {
                stats.penalty += g.value(pen).item();
                stats.n_penalty += 1;
            }
            totals.push(terms.total);
        }
        if totals.is_empty() {
            return Err(TrainError::Config("empty batch".into()));
        }
        let mut sum = totals[0];
        for &t in &totals[1..] {
            sum = g.add(sum, t)?;
        }
        let mean = g.scale(sum, 1.0 / totals.len() as f64);
        stats.mean_total = g.value(mean).item();
        let grads = g.backward(mean)?;
        self.apply(&bound, &grads);
        Ok(stats)
    }

    fn apply(&mut self, bound: &crate::params::Bound, grads: &crate::ndgrad::Gradients) {
        if let OptState::Adam { t, .. } = &mut self.opt {
            *t += 1;
        }
        for (name, var) in bound.iter() {
            let Some(grad) = grads.get(var) else { continue };
            let w = self.model.params.get_mut(name).expect("bound from store").data_mut();
            match (&mut self.opt, self.cfg.optimizer) {
                (OptState::Sgd, Optimizer::Sgd { lr }) => {
                    for (w, g) in w.iter_mut().zip(grad) {
                        *w -= lr * g;
                    }
                }
                (
                    OptState::Adam { t, moments },
                    Optimizer::Adam {
                        lr,
                        beta1,
                        beta2,
                        eps,
                    },
                ) => {
                    let (m, v) = moments
                        .entry(name.to_string())
                        .or_insert_with(|| (vec![0.0; grad.len()], vec![0.0; grad.len()]));
                    let c1 = 1.0 - beta1.powi(*t);
                    let c2 = 1.0 - beta2.powi(*t);
                    for i in 0..grad.len() {
                        m[i] = beta1 * m[i] + (1.0 - beta1) * grad[i];
                        v[i] = beta2 * v[i] + (1.0 - beta2) * grad[i] * grad[i];
                        w[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + eps);
                    }
                }
                _ => unreachable!("optimizer state matches config"),
            }
        }
    }

    /// Runs one epoch and returns the mean per-term losses.
    pub fn run_epoch(&mut self) -> Result<EpochRecord> {
        let batches = self.sampler.next_epoch();
        let mut acc = BatchStats::default();
        for b in &batches {
            let s = self.step(b)?;
            acc.n_ha += s.n_ha;
            acc.n_ds += s.n_ds;
            acc.loss_ha += s.loss_ha;
            acc.loss_ds += s.loss_ds;
            acc.penalty += s.penalty;
            acc.n_penalty += s.n_penalty;
        }
        let mean = |x: f64, n: usize| if n == 0 { 0.0 } else { x / n as f64 };
        Ok(EpochRecord {
            epoch: 0,
            loss_ha: mean(acc.loss_ha, acc.n_ha),
            loss_ds: mean(acc.loss_ds, acc.n_ds),
            loss_penalty: mean(acc.penalty, acc.n_penalty),
            dev_f1: None,
            threshold: None,
        })
    }
}

/// Best decision threshold for `p >= threshold` over the candidates: every
/// distinct score plus 0.5. Ties resolve to the lowest threshold.
pub fn tune_threshold(scored: &[(Fact, f64)], gold: &BTreeSet<Fact>) -> Result<(f64, EvalResult)> {
    if scored.is_empty() {
        return Err(TrainError::Config("threshold tuning needs a non-empty dev set".into()));
    }
    let mut sorted: Vec<(f64, bool)> = scored.iter().map(|(f, s)| (*s, gold.contains(f))).collect();
    sorted.sort_by(|a, b| b.0.total_cmp(&a.0));
    // Predictions at threshold theta are exactly the prefix with score >= theta.
    let n_gold = gold.len();
    let at = |n_pred: usize, tp: usize| EvalResult::from_counts(tp, n_pred - tp, n_gold - tp);
    let mut candidates: Vec<(f64, EvalResult)> = Vec::new();
    let mut tp = 0;
    let mut i = 0;
    let mut half_done = false;
    while i < sorted.len() {
        let s = sorted[i].0;
        if !half_done && s < 0.5 {
            candidates.push((0.5, at(i, tp)));
            half_done = true;
        }
        while i < sorted.len() && sorted[i].0 == s {
            tp += usize::from(sorted[i].1);
            i += 1;
        }
        candidates.push((s, at(i, tp)));
        if s == 0.5 {
            half_done = true;
        }
    }
    if !half_done {
        candidates.push((0.5, at(sorted.len(), tp)));
    }
    let best = candidates
        .into_iter()
        .fold(None::<(f64, EvalResult)>, |best, (t, r)| match best {
            Some((bt, br)) if br.f1 > r.f1 || (br.f1 == r.f1 && bt <= t) => Some((bt, br)),
            _ => Some((t, r)),
        })
        .expect("at least one candidate");
    Ok(best)
}

/// Dev-set F1 of the model: tuned threshold for the document task, argmax
/// for the sentence task.
pub fn evaluate_dev(model: &Model, dev: &Dataset) -> Result<(EvalResult, Option<f64>)> {
    let scores = model.score_dataset(dev)?;
    let gold = gold_facts(&dev.examples);
    match model.config.output.task {
        Task::Document => {
            let (t, r) = tune_threshold(&scored_facts(&scores, Task::Document), &gold)?;
            Ok((r, Some(t)))
        }
        Task::Sentence => Ok((micro_f1(&argmax_predictions(&scores), &gold), None)),
    }
}

/// Predictions of a trained model on a dataset: thresholded for the document
/// task, argmax for the sentence task.
pub fn predict(model: &Model, data: &Dataset) -> Result<BTreeSet<Fact>> {
    let scores = model.score_dataset(data)?;
    Ok(match model.config.output.task {
        Task::Document => threshold_predictions(&scores, model.threshold),
        Task::Sentence => argmax_predictions(&scores),
    })
}

/// Full training run with optional best-dev selection.
pub fn train(cfg: &TrainConfig, data: &TrainData) -> Result<(Model, TrainHistory)> {
    let mut trainer = Trainer::new(cfg, data)?;
    let mut history = TrainHistory::default();
    let mut best: Option<(f64, Model)> = None;
    for epoch in 0..cfg.epochs {
        let mut rec = trainer.run_epoch()?;
        rec.epoch = epoch + 1;
        if let Some(dev) = data.dev {
            let (r, threshold) = evaluate_dev(trainer.model(), dev)?;
            rec.dev_f1 = Some(r.f1);
            rec.threshold = threshold;
            if best.as_ref().is_none_or(|(f, _)| r.f1 > *f) {
                let mut m = trainer.model().clone();
                m.threshold = threshold.unwrap_or(0.5);
                best = Some((r.f1, m));
                history.selected_epoch = Some(epoch + 1);
            }
        }
        history.epochs.push(rec);
    }
    let model = match best {
        Some((_, m)) if cfg.select_best_dev => m,
        _ => {
            history.selected_epoch = Some(cfg.epochs);
            let threshold = history.epochs.last().and_then(|r| r.threshold).unwrap_or(0.5);
            let mut m = trainer.into_model();
            m.threshold = threshold;
            m
        }
    };
    Ok((model, history))
}

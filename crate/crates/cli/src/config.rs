//! Flat experiment configuration. Every key can come from a TOML file or a
//! flag of the same name (`n_train_ds` <-> `--n-train-ds`); flags win over
//! the file, the file wins over built-in defaults.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};

use dualsup::encoder::EntityEncoderKind;
use dualsup::synth_data::{BatchMode, GenConfig};
use dualsup::trainer::{Mode, Optimizer, TrainConfig};
use dualsup::types::Task;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

impl std::str::FromStr for OptimizerKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "sgd" => Ok(OptimizerKind::Sgd),
            "adam" => Ok(OptimizerKind::Adam),
            other => Err(format!("unknown optimizer '{other}' (expected sgd|adam)")),
        }
    }
}

macro_rules! settings {
    ($( $(#[doc = $doc:literal])* $name:ident : $ty:ty = $default:expr ),* $(,)?) => {
        /// Partial configuration: one layer of file keys or flags.
        #[derive(clap::Args, Deserialize, Default, Debug, Clone)]
        #[serde(deny_unknown_fields)]
        pub struct Overrides {
            $( $(#[doc = $doc])* #[arg(long)] pub $name: Option<$ty>, )*
        }

        /// Fully resolved configuration.
        #[derive(Serialize, Debug, Clone, PartialEq)]
        pub struct Settings {
            $( pub $name: $ty, )*
        }

        impl Overrides {
            /// Keys set here win over `base`.
            pub fn over(self, base: Overrides) -> Overrides {
                Overrides { $( $name: self.$name.or(base.$name), )* }
            }

            pub fn resolve(self) -> Settings {
                Settings { $( $name: self.$name.unwrap_or_else(|| $default), )* }
            }
        }
    };
}

settings! {
    /// Seed for generation, initialization and batching
    seed: u64 = 0,
    /// Dataset directory (written by gen, read by the other commands)
    data_dir: PathBuf = PathBuf::from("data"),
    /// Directory for reports, checkpoints and histories
    out_dir: PathBuf = PathBuf::from("out"),
    /// Checkpoint path; defaults to <out_dir>/model.ckpt
    checkpoint: PathBuf = PathBuf::new(),
    /// sentence | document
    task: Task = Task::Document,

    n_entities: usize = 600,
    n_relations: usize = 60,
    n_triples: usize = 1200,
    n_train_ha: usize = 300,
    n_train_ds: usize = 3000,
    n_dev: usize = 150,
    n_test: usize = 300,
    /// Lowest per-relation target inflation
    inflation_lo: f64 = 0.5,
    /// Highest per-relation target inflation
    inflation_hi: f64 = 16.0,
    /// Probability that a clause holds a pair with no KB relation
    negative_prob: f64 = 0.25,
    min_pairs: usize = 2,
    max_pairs: usize = 6,
    n_filler: usize = 20,
    template_len: usize = 2,

    /// dual | multitask | single | ha-only | ds-only
    mode: Mode = Mode::Dual,
    /// Weight of the disagreement penalty
    lambda: f64 = 0.1,
    hidden: usize = 16,
    /// Attention width; 0 means equal to hidden
    attention_width: usize = 0,
    context_window: usize = 1,
    /// cross_attention | average
    entity_encoder: EntityEncoderKind = EntityEncoderKind::CrossAttention,
    /// Score attention on projected rather than raw word vectors
    score_with_projected: bool = false,
    /// Floor added to sigma
    sanity_bound: f64 = 0.1,
    /// sgd | adam
    optimizer: OptimizerKind = OptimizerKind::Adam,
    lr: f64 = 0.01,
    batch_size: usize = 32,
    /// mixed | alternate
    batch_mode: BatchMode = BatchMode::Mixed,
    epochs: usize = 4,
    /// Keep the epoch with the best dev F1
    select_best_dev: bool = true,

    /// Split scored by eval: dev | test
    split: String = "test".to_string(),
    /// Number of inflation groups in the group report
    n_groups: usize = 4,
    /// Additive smoothing of label counts in the bias report
    smoothing: f64 = 0.0,
    /// Documents behind the inflation estimate: pools (HA labels of
    /// train_ha against DS labels of train_ds) | all (both labelings of
    /// every generated document)
    bias_docs: String = "pools".to_string(),

    /// Random examples checked by gradcheck
    n_checks: usize = 100,
    /// Maximum tolerated relative discrepancy in gradcheck
    tolerance: f64 = 1e-8,
}

/// Merges `flags` over the optional config file over the defaults.
pub fn load(file: Option<&Path>, flags: Overrides) -> anyhow::Result<Settings> {
    let base = match file {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
            toml::from_str::<Overrides>(&text).with_context(|| format!("parsing config {}", p.display()))?
        }
        None => Overrides::default(),
    };
    let s = flags.over(base).resolve();
    s.validate()?;
    Ok(s)
}

impl Settings {
    fn validate(&self) -> anyhow::Result<()> {
        if !matches!(self.split.as_str(), "dev" | "test") {
            bail!("split must be dev or test, got '{}'", self.split);
        }
        if !matches!(self.bias_docs.as_str(), "pools" | "all") {
            bail!("bias_docs must be pools or all, got '{}'", self.bias_docs);
        }
        if self.n_groups == 0 {
            bail!("n_groups must be positive");
        }
        Ok(())
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        if self.checkpoint.as_os_str().is_empty() {
            self.out_dir.join("model.ckpt")
        } else {
            self.checkpoint.clone()
        }
    }

    pub fn gen_config(&self) -> anyhow::Result<GenConfig> {
        let mut g = GenConfig::unbiased(self.n_entities, self.n_relations, self.n_triples, self.seed)
            .with_inflation_range(self.inflation_lo, self.inflation_hi)?;
        g.n_train_ha = self.n_train_ha;
        g.n_train_ds = self.n_train_ds;
        g.n_dev = self.n_dev;
        g.n_test = self.n_test;
        g.negative_prob = self.negative_prob;
        g.min_pairs = self.min_pairs;
        g.max_pairs = self.max_pairs;
        g.n_filler = self.n_filler;
        g.template_len = self.template_len;
        g.validate()?;
        Ok(g)
    }

    pub fn train_config(&self) -> TrainConfig {
        let mut c = TrainConfig::full_scale(self.task);
        c.mode = self.mode;
        c.lambda = self.lambda;
        c.hidden = self.hidden;
        c.attention_width = (self.attention_width > 0).then_some(self.attention_width);
        c.context_window = self.context_window;
        c.entity_encoder = self.entity_encoder;
        c.score_with_projected = self.score_with_projected;
        c.sanity_bound = self.sanity_bound;
        c.optimizer = match self.optimizer {
            OptimizerKind::Sgd => Optimizer::Sgd { lr: self.lr },
            OptimizerKind::Adam => Optimizer::adam(self.lr),
        };
        c.batch_size = self.batch_size;
        c.batch_mode = self.batch_mode;
        c.epochs = self.epochs;
        c.seed = self.seed;
        c.select_best_dev = self.select_best_dev;
        c
    }

    /// The effective configuration as TOML, in the same format the file
    /// accepts.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("settings serialize")
    }
}

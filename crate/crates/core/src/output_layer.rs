//! Dual-supervision output layer: prediction networks HA-Net and DS-Net and
//! the parameter networks mu-Net and sigma-Net, all bilinear in `(h, t)`.
//!
//! Parameter names: `{ha,ds,mu,sigma}.w` with shape `[d, R, d]` and
//! `{ha,ds,mu,sigma}.b` with shape `[R]`. HA-Net and DS-Net draw their
//! initial values from the same stream, so they start identical.

use crate::ndgrad::{self, GradError, Graph, Tensor, Var};
use crate::params::{Bound, ParamStore};
use crate::types::Task;

pub const DEFAULT_SANITY_BOUND: f64 = 1e-4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Net {
    Ha,
    Ds,
    Mu,
    Sigma,
}

impl Net {
    pub const ALL: [Net; 4] = [Net::Ha, Net::Ds, Net::Mu, Net::Sigma];

    pub fn prefix(self) -> &'static str {
        match self {
            Net::Ha => "ha.",
            Net::Ds => "ds.",
            Net::Mu => "mu.",
            Net::Sigma => "sigma.",
        }
    }

    fn init_key(self) -> &'static str {
        match self {
            Net::Ha | Net::Ds => "pred",
            Net::Mu => "mu",
            Net::Sigma => "sigma",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OutputConfig {
    pub hidden: usize,
    /// Number of real relation types; the sentence task adds an NA class.
    pub n_relations: usize,
    pub task: Task,
    pub sanity_bound: f64,
}

impl OutputConfig {
    pub fn new(hidden: usize, n_relations: usize, task: Task) -> Self {
        Self {
            hidden,
            n_relations,
            task,
            sanity_bound: DEFAULT_SANITY_BOUND,
        }
    }

    pub fn width(&self) -> usize {
        self.task.output_width(self.n_relations)
    }

    pub fn init_params(&self, store: &mut ParamStore, nets: &[Net], seed: u64) {
        let (d, r) = (self.hidden, self.width());
        let bound = 1.0 / (d as f64).sqrt();
        for &net in nets {
            let (p, k) = (net.prefix(), net.init_key());
            store.init_uniform(&format!("{p}w"), &format!("{k}.w"), &[d, r, d], bound, seed);
            store.init_uniform(&format!("{p}b"), &format!("{k}.b"), &[r], bound, seed);
        }
    }
}

/// `score_r = h^T W[:, r, :] t + b_r`.
pub fn bilinear(g: &mut Graph, h: Var, t: Var, w: Var, b: Var) -> ndgrad::Result<Var> {
    let ws = g.value(w).shape().to_vec();
    let (hs, ts, bs) = (
        g.value(h).shape().to_vec(),
        g.value(t).shape().to_vec(),
        g.value(b).shape().to_vec(),
    );
    let ok = ws.len() == 3 && hs == [ws[0]] && ts == [ws[2]] && bs == [ws[1]];
    if !ok {
        return Err(GradError::ShapeMismatch {
            op: "bilinear",
            shapes: vec![hs, ws, ts, bs],
        });
    }
    let (d, r, e) = (ws[0], ws[1], ws[2]);
    let flat = g.reshape(w, &[d, r * e])?;
    let hw = g.matmul(h, flat)?;
    let hw = g.reshape(hw, &[r, e])?;
    let scores = g.matmul(hw, t)?;
    g.add(scores, b)
}

/// Graph handles of the four networks; absent networks were not bound.
#[derive(Clone, Copy, Debug, Default)]
pub struct OutputVars {
    pub ha: Option<(Var, Var)>,
    pub ds: Option<(Var, Var)>,
    pub mu: Option<(Var, Var)>,
    pub sigma: Option<(Var, Var)>,
}

impl OutputVars {
    pub fn from_bound(bound: &Bound) -> Self {
        let pair = |net: Net| {
            let p = net.prefix();
            Some((bound.get(&format!("{p}w"))?, bound.get(&format!("{p}b"))?))
        };
        Self {
            ha: pair(Net::Ha),
            ds: pair(Net::Ds),
            mu: pair(Net::Mu),
            sigma: pair(Net::Sigma),
        }
    }
}

/// Forward outputs as graph nodes. Each is `None` when its network is not
/// bound.
#[derive(Clone, Copy, Debug)]
pub struct PredictionVars {
    pub p_ha: Option<Var>,
    pub p_ds: Option<Var>,
    pub mu: Option<Var>,
    pub sigma: Option<Var>,
}

/// Plain values of one forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictionOutput {
    pub p_ha: Vec<f64>,
    pub p_ds: Vec<f64>,
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
}

impl PredictionVars {
    pub fn values(&self, g: &Graph) -> PredictionOutput {
        let get = |v: Option<Var>| v.map(|v| g.value(v).data().to_vec()).unwrap_or_default();
        PredictionOutput {
            p_ha: get(self.p_ha),
            p_ds: get(self.p_ds),
            mu: get(self.mu),
            sigma: get(self.sigma),
        }
    }
}

fn activate(g: &mut Graph, task: Task, s: Var) -> ndgrad::Result<Var> {
    match task {
        Task::Sentence => g.softmax(s),
        Task::Document => Ok(g.sigmoid(s)),
    }
}

pub fn forward(g: &mut Graph, h: Var, t: Var, vars: &OutputVars, cfg: &OutputConfig) -> ndgrad::Result<PredictionVars> {
    let mut run = |net: Option<(Var, Var)>| -> ndgrad::Result<Option<Var>> {
        net.map(|(w, b)| bilinear(g, h, t, w, b)).transpose()
    };
    let (s_ha, s_ds, s_mu, s_sigma) = (run(vars.ha)?, run(vars.ds)?, run(vars.mu)?, run(vars.sigma)?);
    let p_ha = s_ha.map(|s| activate(g, cfg.task, s)).transpose()?;
    let p_ds = s_ds.map(|s| activate(g, cfg.task, s)).transpose()?;
    let mu = s_mu.map(|s| g.tanh(s));
    let sigma = match s_sigma {
        Some(s) => {
            let sp = g.softplus(s);
            let n = g.value(sp).len();
            let eps = g.constant(Tensor::filled(&[n], cfg.sanity_bound));
            Some(g.add(sp, eps)?)
        }
        None => None,
    };
    Ok(PredictionVars { p_ha, p_ds, mu, sigma })
}

//! Prediction losses, the log-normal disagreement penalty, and the analytic
//! gradient coefficients of the dual-supervision objective.
//!
//! Scalar functions work on plain values. [`loss_terms`] builds the same
//! quantities on a [`Graph`] for training.

use crate::ndgrad::{self, Graph, Tensor, Var};
use crate::output_layer::{forward, OutputConfig, OutputVars, PredictionOutput, PredictionVars};
use crate::params::ParamStore;
use crate::types::{ExampleLabels, Source, Target, Task};

pub const PROB_CLAMP: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct LossConfig {
    pub lambda: f64,
    pub task: Task,
    pub clamp: f64,
}

impl LossConfig {
    pub fn new(lambda: f64, task: Task) -> Self {
        assert!(lambda >= 0.0, "lambda must be non-negative");
        Self {
            lambda,
            task,
            clamp: PROB_CLAMP,
        }
    }
}

fn clamp_p(p: f64, eps: f64) -> f64 {
    p.clamp(eps, 1.0 - eps)
}

pub fn categorical_ce(p: &[f64], r: usize) -> f64 {
    -clamp_p(p[r], PROB_CLAMP).ln()
}

/// `labels` holds output indices of the positive relations.
pub fn binary_ce(p: &[f64], labels: &[usize]) -> f64 {
    p.iter()
        .enumerate()
        .map(|(r, &pr)| {
            let pr = clamp_p(pr, PROB_CLAMP);
            if labels.contains(&r) {
                -pr.ln()
            } else {
                -(1.0 - pr).ln()
            }
        })
        .sum()
}

/// Negative log-likelihood of the conditional inflation `p_ds / p_ha` under
/// LogNormal(mu, sigma^2), without the constant `log(2 pi) / 2`.
pub fn disagreement_penalty(p_ha: f64, p_ds: f64, mu: f64, sigma: f64) -> f64 {
    let l = clamp_p(p_ds, PROB_CLAMP).ln() - clamp_p(p_ha, PROB_CLAMP).ln();
    let z = (l - mu) / sigma;
    0.5 * z * z + l + sigma.ln()
}

pub fn phi(p_ha: f64, p_ds: f64, mu: f64, sigma: f64) -> f64 {
    let l = clamp_p(p_ds, PROB_CLAMP).ln() - clamp_p(p_ha, PROB_CLAMP).ln();
    (l - mu) / (sigma * sigma)
}

/// Multiplier of `-(1/p_ha) grad p_ha` in the HA-Net gradient.
pub fn analytic_grad_coefficient(source: Source, lambda: f64, phi_r: f64) -> f64 {
    let pen = lambda * (1.0 + phi_r);
    match source {
        Source::Human => 1.0 + pen,
        Source::Distant => pen,
    }
}

fn active<'a>(out: &'a PredictionOutput, source: Source) -> &'a [f64] {
    match source {
        Source::Human => &out.p_ha,
        Source::Distant => &out.p_ds,
    }
}

fn penalty_sum(out: &PredictionOutput, idx: &[usize]) -> f64 {
    idx.iter()
        .map(|&r| disagreement_penalty(out.p_ha[r], out.p_ds[r], out.mu[r], out.sigma[r]))
        .sum()
}

pub fn sentence_loss(out: &PredictionOutput, labels: &ExampleLabels, cfg: &LossConfig) -> f64 {
    let idx = labels.target.positive_indices();
    let r = idx[0];
    categorical_ce(active(out, labels.source), r) + cfg.lambda * penalty_sum(out, &idx)
}

pub fn document_loss(out: &PredictionOutput, labels: &ExampleLabels, cfg: &LossConfig) -> f64 {
    let idx = labels.target.positive_indices();
    binary_ce(active(out, labels.source), &idx) + cfg.lambda * penalty_sum(out, &idx)
}

pub fn example_loss(out: &PredictionOutput, labels: &ExampleLabels, cfg: &LossConfig) -> f64 {
    match labels.target {
        Target::Sentence { .. } => sentence_loss(out, labels, cfg),
        Target::Document { .. } => document_loss(out, labels, cfg),
    }
}

/// Graph nodes of one example's loss.
#[derive(Clone, Copy, Debug)]
pub struct LossTerms {
    pub prediction: Var,
    /// Unweighted penalty sum; `None` when the parameter networks are absent.
    pub penalty: Option<Var>,
    pub total: Var,
}

/// Builds the example loss on the graph. The prediction term uses `p_ha` for
/// HA labels and `p_ds` for DS labels, falling back to `p_ha` when DS-Net is
/// not bound (single-head modes). The penalty is added whenever DS-Net,
/// mu-Net and sigma-Net are all bound.
pub fn loss_terms(
    g: &mut Graph,
    pred: &PredictionVars,
    labels: &ExampleLabels,
    cfg: &LossConfig,
) -> ndgrad::Result<LossTerms> {
    let p_ha = pred.p_ha.expect("HA-Net output is always bound");
    let head = match labels.source {
        Source::Human => p_ha,
        Source::Distant => pred.p_ds.unwrap_or(p_ha),
    };
    let (lo, hi) = (cfg.clamp, 1.0 - cfg.clamp);
    let idx = labels.target.positive_indices();

    let prediction = match labels.target {
        Target::Sentence { .. } => {
            let p = g.index_select(head, &idx)?;
            let p = g.clamp(p, lo, hi);
            let lp = g.log(p)?;
            let s = g.sum(lp);
            g.scale(s, -1.0)
        }
        Target::Document { .. } => {
            let n = g.value(head).len();
            let mut y = vec![0.0; n];
            for &r in &idx {
                y[r] = 1.0;
            }
            let not_y: Vec<f64> = y.iter().map(|v| 1.0 - v).collect();
            let y = g.constant(Tensor::vector(y));
            let not_y = g.constant(Tensor::vector(not_y));
            let ones = g.constant(Tensor::filled(&[n], 1.0));
            let p = g.clamp(head, lo, hi);
            let q = g.sub(ones, p)?;
            let lp = g.log(p)?;
            let lq = g.log(q)?;
            let a = g.mul(y, lp)?;
            let b = g.mul(not_y, lq)?;
            let ab = g.add(a, b)?;
            let s = g.sum(ab);
            g.scale(s, -1.0)
        }
    };

    let penalty = match (pred.p_ds, pred.mu, pred.sigma) {
        (Some(p_ds), Some(mu), Some(sigma)) => Some(graph_penalty(g, p_ha, p_ds, mu, sigma, &idx, lo, hi)?),
        _ => None,
    };
    let total = match penalty {
        Some(pen) => {
            let w = g.scale(pen, cfg.lambda);
            g.add(prediction, w)?
        }
        None => prediction,
    };
    Ok(LossTerms {
        prediction,
        penalty,
        total,
    })
}

#[allow(clippy::too_many_arguments)]
fn graph_penalty(
    g: &mut Graph,
    p_ha: Var,
    p_ds: Var,
    mu: Var,
    sigma: Var,
    idx: &[usize],
    lo: f64,
    hi: f64,
) -> ndgrad::Result<Var> {
    if idx.is_empty() {
        return Ok(g.constant(Tensor::scalar(0.0)));
    }
    let mut pick = |v: Var| g.index_select(v, idx);
    let (a, b, m, s) = (pick(p_ha)?, pick(p_ds)?, pick(mu)?, pick(sigma)?);
    let a = g.clamp(a, lo, hi);
    let b = g.clamp(b, lo, hi);
    let la = g.log(a)?;
    let lb = g.log(b)?;
    let l = g.sub(lb, la)?;
    let diff = g.sub(l, m)?;
    let z = g.div(diff, s)?;
    let z2 = g.mul(z, z)?;
    let half = g.scale(z2, 0.5);
    let log_s = g.log(s)?;
    let t = g.add(half, l)?;
    let t = g.add(t, log_s)?;
    Ok(g.sum(t))
}

/// Outcome of comparing the autodiff HA-Net gradient with the analytic
/// prediction.
#[derive(Clone, Debug, PartialEq)]
pub struct IdentityCheck {
    /// `max |autodiff - analytic| / max(|analytic|_inf, tiny)`.
    pub discrepancy: f64,
    pub autodiff_max_abs: f64,
    pub analytic_max_abs: f64,
    /// Coefficient per labeled output index.
    pub coefficients: Vec<(usize, f64)>,
}

const HA_PARAMS: [&str; 2] = ["ha.w", "ha.b"];

fn flat_grads(g: &Graph, out: Var, vars: &[Var]) -> ndgrad::Result<Vec<f64>> {
    let grads = g.backward(out)?;
    Ok(vars.iter().flat_map(|v| grads.tensor(*v).into_data()).collect())
}

/// Checks the closed-form HA-Net gradient against autodiff with DS-Net,
/// mu-Net and sigma-Net outputs held constant. `h`, `t` are fixed entity
/// vectors.
pub fn verify_gradient_identities(
    store: &ParamStore,
    out_cfg: &OutputConfig,
    h: &[f64],
    t: &[f64],
    labels: &ExampleLabels,
    cfg: &LossConfig,
) -> ndgrad::Result<IdentityCheck> {
    let build = |g: &mut Graph| -> ndgrad::Result<(PredictionVars, Vec<Var>)> {
        let bound = store
            .bind(g, &["ha."])
            .merge(store.bind_constants(g, &["ds.", "mu.", "sigma."]));
        let vars = OutputVars::from_bound(&bound);
        let hv = g.constant(Tensor::vector(h.to_vec()));
        let tv = g.constant(Tensor::vector(t.to_vec()));
        let pred = forward(g, hv, tv, &vars, out_cfg)?;
        Ok((pred, HA_PARAMS.iter().map(|n| bound.var(n)).collect()))
    };

    // Autodiff of the full example loss with the other outputs detached.
    let mut g = Graph::new();
    let (pred, ha_vars) = build(&mut g)?;
    let stopped = PredictionVars {
        p_ha: pred.p_ha,
        p_ds: pred.p_ds.map(|v| g.detach(v)),
        mu: pred.mu.map(|v| g.detach(v)),
        sigma: pred.sigma.map(|v| g.detach(v)),
    };
    let terms = loss_terms(&mut g, &stopped, labels, cfg)?;
    let autodiff = flat_grads(&g, terms.total, &ha_vars)?;
    let out = pred.values(&g);

    // Analytic side: sum of per-relation gradients of p_ha, each from its own
    // autodiff pass.
    let idx = labels.target.positive_indices();
    let mut coefficients = Vec::new();
    let mut weights: Vec<(usize, f64)> = Vec::new();
    for &r in &idx {
        let f = phi(out.p_ha[r], out.p_ds[r], out.mu[r], out.sigma[r]);
        let c = analytic_grad_coefficient(labels.source, cfg.lambda, f);
        coefficients.push((r, c));
        weights.push((r, -c / clamp_p(out.p_ha[r], cfg.clamp)));
    }
    if cfg.task == Task::Document && labels.source == Source::Human {
        for r in 0..out.p_ha.len() {
            if !idx.contains(&r) {
                weights.push((r, 1.0 / (1.0 - clamp_p(out.p_ha[r], cfg.clamp))));
            }
        }
    }
    let mut analytic = vec![0.0; autodiff.len()];
    for (r, w) in weights {
        let mut g = Graph::new();
        let (pred, ha_vars) = build(&mut g)?;
        let pr = g.index_select(pred.p_ha.expect("bound"), &[r])?;
        let pr = g.sum(pr);
        for (a, d) in analytic.iter_mut().zip(flat_grads(&g, pr, &ha_vars)?) {
            *a += w * d;
        }
    }

    let max_abs = |v: &[f64]| v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let diff = autodiff
        .iter()
        .zip(&analytic)
        .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    let scale = max_abs(&analytic).max(f64::MIN_POSITIVE);
    Ok(IdentityCheck {
        discrepancy: diff / scale,
        autodiff_max_abs: max_abs(&autodiff),
        analytic_max_abs: max_abs(&analytic),
        coefficients,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::output_layer::Net;
    use crate::types::RelationId;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::collections::BTreeSet;

    fn close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b}");
    }

    fn sent(source: Source, r: Option<u32>) -> ExampleLabels {
        ExampleLabels {
            source,
            target: Target::Sentence {
                relation: r.map(RelationId),
            },
        }
    }

    fn doc(source: Source, rs: &[u32]) -> ExampleLabels {
        ExampleLabels {
            source,
            target: Target::Document {
                relations: rs.iter().map(|r| RelationId(*r)).collect::<BTreeSet<_>>(),
            },
        }
    }

    fn output(p_ha: Vec<f64>, p_ds: Vec<f64>, mu: Vec<f64>, sigma: Vec<f64>) -> PredictionOutput {
        PredictionOutput { p_ha, p_ds, mu, sigma }
    }

    #[test]
    fn cross_entropy_examples() {
        close(categorical_ce(&[0.5, 0.5], 0), 0.693147, 1e-6);
        assert_eq!(categorical_ce(&[0.0, 1.0], 1), -(1.0 - 1e-12f64).ln());
        close(categorical_ce(&[0.9, 0.1], 1), 2.302585, 1e-6);
        close(binary_ce(&[0.5, 0.5], &[0]), 1.386294, 1e-6);
        close(binary_ce(&[0.5; 3], &[]), 2.079442, 1e-6);
    }

    #[test]
    fn binary_ce_matches_direct_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let p: Vec<f64> = (0..6).map(|_| rng.random_range(0.01..0.99)).collect();
            let labels: Vec<usize> = (0..6).filter(|_| rng.random_bool(0.4)).collect();
            let mut expect = 0.0;
            for (r, pr) in p.iter().enumerate() {
                expect -= if labels.contains(&r) { pr.ln() } else { (1.0 - pr).ln() };
            }
            close(binary_ce(&p, &labels), expect, 1e-12);
        }
    }

    #[test]
    fn penalty_and_phi_examples() {
        close(disagreement_penalty(0.3, 0.3, 0.0, 1.0), 0.0, 1e-15);
        close(disagreement_penalty(0.25, 0.5, 2f64.ln(), 1.0), 0.693147, 1e-6);
        close(disagreement_penalty(0.2, 0.4, 0.0, 0.5), 0.960906, 1e-6);
        close(phi(0.4, 0.4, 0.0, 0.7), 0.0, 1e-15);
        close(phi(0.3, 0.6, 0.0, 1.0), 0.693147, 1e-6);
        close(phi(0.6, 0.3, 0.0, 2.0), -0.173287, 1e-6);
    }

    #[test]
    fn coefficient_examples() {
        assert_eq!(analytic_grad_coefficient(Source::Human, 0.0, 3.0), 1.0);
        assert_eq!(analytic_grad_coefficient(Source::Distant, 0.0, 3.0), 0.0);
        close(analytic_grad_coefficient(Source::Human, 0.1, 1.0), 1.2, 1e-15);
    }

    #[test]
    fn sentence_loss_examples() {
        let cfg0 = LossConfig::new(0.0, Task::Sentence);
        let out = output(vec![0.5, 0.5], vec![0.5, 0.5], vec![0.0; 2], vec![1.0; 2]);
        close(sentence_loss(&out, &sent(Source::Human, Some(0)), &cfg0), 0.693147, 1e-6);
        close(sentence_loss(&out, &sent(Source::Distant, Some(0)), &cfg0), 0.693147, 1e-6);
        let out = output(
            vec![0.5, 0.25, 0.25],
            vec![0.25, 0.5, 0.25],
            vec![0.0, 2f64.ln(), 0.0],
            vec![1.0; 3],
        );
        let cfg1 = LossConfig::new(1.0, Task::Sentence);
        close(sentence_loss(&out, &sent(Source::Human, Some(0)), &cfg1), 2.079442, 1e-6);
    }

    #[test]
    fn document_loss_examples() {
        let cfg = LossConfig::new(0.7, Task::Document);
        let out = output(vec![0.3, 0.8], vec![0.6, 0.1], vec![0.2, -0.3], vec![0.5, 2.0]);
        close(
            document_loss(&out, &doc(Source::Distant, &[]), &cfg),
            binary_ce(&out.p_ds, &[]),
            1e-15,
        );
        let one = output(vec![0.5], vec![0.5], vec![0.0], vec![1.0]);
        close(
            document_loss(&one, &doc(Source::Human, &[0]), &LossConfig::new(0.0, Task::Document)),
            0.693147,
            1e-6,
        );
    }

    #[test]
    fn document_loss_decomposes_into_terms() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let n = 5;
            let mut v = |lo: f64, hi: f64| -> Vec<f64> { (0..n).map(|_| rng.random_range(lo..hi)).collect() };
            let out = output(v(0.01, 0.99), v(0.01, 0.99), v(-0.9, 0.9), v(0.1, 2.0));
            let rels: Vec<u32> = (0..n as u32).filter(|r| r % 2 == 0).collect();
            let lambda = rng.random_range(0.0..2.0);
            for source in [Source::Human, Source::Distant] {
                let labels = doc(source, &rels);
                let p = if source == Source::Human { &out.p_ha } else { &out.p_ds };
                let mut expect = 0.0;
                for r in 0..n {
                    let y = rels.contains(&(r as u32));
                    expect -= if y { p[r].ln() } else { (1.0 - p[r]).ln() };
                    if y {
                        let l = (out.p_ds[r] / out.p_ha[r]).ln();
                        let z = (l - out.mu[r]) / out.sigma[r];
                        expect += lambda * (0.5 * z * z + l + out.sigma[r].ln());
                    }
                }
                close(document_loss(&out, &labels, &LossConfig::new(lambda, Task::Document)), expect, 1e-10);
            }
        }
    }

    fn random_store(out_cfg: &OutputConfig, seed: u64) -> ParamStore {
        let mut s = ParamStore::new();
        out_cfg.init_params(&mut s, &Net::ALL, seed);
        // Separate DS-Net from HA-Net so the penalty is not at ell = 0.
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for name in ["ds.w", "mu.w", "sigma.w"] {
            for v in s.get_mut(name).unwrap().data_mut() {
                *v += rng.random_range(-0.5..0.5);
            }
        }
        s
    }

    /// Graph loss equals the scalar formula on the same forward values.
    #[test]
    fn graph_loss_matches_scalar_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for task in [Task::Sentence, Task::Document] {
            let out_cfg = OutputConfig::new(4, 3, task);
            for trial in 0..20 {
                let store = random_store(&out_cfg, trial);
                let h: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
                let t: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
                let labels = match task {
                    Task::Sentence => sent(Source::Distant, if trial % 3 == 0 { None } else { Some(trial as u32 % 3) }),
                    Task::Document => doc(Source::Human, &[0, (trial % 3) as u32]),
                };
                let cfg = LossConfig::new(rng.random_range(0.0..1.0), task);
                let mut g = Graph::new();
                let bound = store.bind(&mut g, &[""]);
                let vars = OutputVars::from_bound(&bound);
                let hv = g.constant(Tensor::vector(h));
                let tv = g.constant(Tensor::vector(t));
                let pred = forward(&mut g, hv, tv, &vars, &out_cfg).unwrap();
                let terms = loss_terms(&mut g, &pred, &labels, &cfg).unwrap();
                let expect = example_loss(&pred.values(&g), &labels, &cfg);
                close(g.value(terms.total).item(), expect, 1e-12);
            }
        }
    }

    #[test]
    fn identity_trivial_cases() {
        let out_cfg = OutputConfig::new(3, 2, Task::Sentence);
        let store = random_store(&out_cfg, 5);
        let (h, t) = ([0.3, -0.2, 0.9], [0.5, 0.1, -0.4]);
        let cfg0 = LossConfig::new(0.0, Task::Sentence);
        let ha = verify_gradient_identities(&store, &out_cfg, &h, &t, &sent(Source::Human, Some(1)), &cfg0).unwrap();
        assert!(ha.discrepancy <= 1e-10, "{}", ha.discrepancy);
        let ds = verify_gradient_identities(&store, &out_cfg, &h, &t, &sent(Source::Distant, Some(1)), &cfg0).unwrap();
        assert_eq!(ds.autodiff_max_abs, 0.0);
        assert_eq!(ds.discrepancy, 0.0);
    }

    #[test]
    fn identity_holds_on_random_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for trial in 0..24 {
            let task = if trial % 2 == 0 { Task::Sentence } else { Task::Document };
            let out_cfg = OutputConfig::new(3, 4, task);
            let store = random_store(&out_cfg, 100 + trial);
            let h: Vec<f64> = (0..3).map(|_| rng.random_range(-1.5..1.5)).collect();
            let t: Vec<f64> = (0..3).map(|_| rng.random_range(-1.5..1.5)).collect();
            let source = if rng.random_bool(0.5) { Source::Human } else { Source::Distant };
            let labels = match task {
                Task::Sentence => sent(source, Some(rng.random_range(0..4))),
                Task::Document => doc(source, &[1, 3]),
            };
            let cfg = LossConfig::new(rng.random_range(0.0..2.0), task);
            let check = verify_gradient_identities(&store, &out_cfg, &h, &t, &labels, &cfg).unwrap();
            assert!(check.discrepancy <= 1e-8, "trial {trial}: {}", check.discrepancy);
        }
    }

    /// The HA-Net gradient is a scalar multiple of grad(-log p_ha_r) whose
    /// sign follows the coefficient.
    #[test]
    fn gradient_direction_follows_coefficient_sign() {
        let out_cfg = OutputConfig::new(3, 2, Task::Sentence);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut seen_negative = false;
        for trial in 0..40 {
            let store = random_store(&out_cfg, 300 + trial);
            let h: Vec<f64> = (0..3).map(|_| rng.random_range(-2.0..2.0)).collect();
            let t: Vec<f64> = (0..3).map(|_| rng.random_range(-2.0..2.0)).collect();
            let labels = sent(Source::Distant, Some(0));
            let cfg = LossConfig::new(1.0, Task::Sentence);

            let grad_of = |with_loss: bool| -> Vec<f64> {
                let mut g = Graph::new();
                let bound = store.bind(&mut g, &["ha."]).merge(store.bind_constants(&mut g, &["ds.", "mu.", "sigma."]));
                let vars = OutputVars::from_bound(&bound);
                let hv = g.constant(Tensor::vector(h.clone()));
                let tv = g.constant(Tensor::vector(t.clone()));
                let pred = forward(&mut g, hv, tv, &vars, &out_cfg).unwrap();
                let out = if with_loss {
                    let stopped = PredictionVars {
                        p_ha: pred.p_ha,
                        p_ds: pred.p_ds.map(|v| g.detach(v)),
                        mu: pred.mu.map(|v| g.detach(v)),
                        sigma: pred.sigma.map(|v| g.detach(v)),
                    };
                    loss_terms(&mut g, &stopped, &labels, &cfg).unwrap().total
                } else {
                    let p = g.index_select(pred.p_ha.unwrap(), &[1]).unwrap();
                    let lp = g.log(p).unwrap();
                    let s = g.sum(lp);
                    g.scale(s, -1.0)
                };
                let vs = [bound.var("ha.w"), bound.var("ha.b")];
                flat_grads(&g, out, &vs).unwrap()
            };
            let (a, b) = (grad_of(true), grad_of(false));
            let dot: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
            let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
            let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
            let cos = dot / (na * nb);
            let check = verify_gradient_identities(&store, &out_cfg, &h, &t, &labels, &cfg).unwrap();
            let c = check.coefficients[0].1;
            if c >= 0.0 {
                close(cos, 1.0, 1e-8);
            } else {
                seen_negative = true;
                close(cos, -1.0, 1e-8);
            }
        }
        assert!(seen_negative, "fixture never produced a negative coefficient");
    }

    #[test]
    fn penalty_minimum_in_ell() {
        // d/d ell of the penalty is (ell - mu)/sigma^2 + 1.
        let (mu, sigma) = (0.3f64, 0.8f64);
        let p_ds = 0.5f64;
        let pen_at = |l: f64| disagreement_penalty(p_ds / l.exp(), p_ds, mu, sigma);
        let target = mu - sigma * sigma;
        assert!(pen_at(target - 1e-3) > pen_at(target));
        assert!(pen_at(target + 1e-3) > pen_at(target));
    }

    proptest! {
        #[test]
        fn phi_monotone(p_ha in 0.01f64..0.98, p_ds in 0.01f64..0.98, mu in -0.99f64..0.99, sigma in 0.05f64..3.0, dp in 0.001f64..0.01) {
            prop_assert!(phi(p_ha, p_ds + dp, mu, sigma) > phi(p_ha, p_ds, mu, sigma));
            prop_assert!(phi(p_ha + dp, p_ds, mu, sigma) < phi(p_ha, p_ds, mu, sigma));
        }

        #[test]
        fn larger_mu_shrinks_ds_coefficient(p_ha in 0.01f64..0.99, p_ds in 0.01f64..0.99, mu in -0.99f64..0.9, sigma in 0.05f64..3.0, lambda in 0.001f64..2.0, delta in 0.001f64..0.5) {
            let c = |m: f64| analytic_grad_coefficient(Source::Distant, lambda, phi(p_ha, p_ds, m, sigma));
            prop_assert!(c(mu + delta) < c(mu));
        }
    }
}

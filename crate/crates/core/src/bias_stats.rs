//! Labeling-bias statistics: per-relation inflation between distantly
//! supervised and human-annotated data, distribution fitting of the inflation
//! sample, Kolmogorov-Smirnov ranking, and inflation grouping.
//!
//! The inflation of a relation is the ratio of its average label frequency
//! per text in DS data to the same frequency in HA data. A value of 1 means
//! the two labeling processes agree on how often the relation occurs.

use std::collections::BTreeMap;
use std::fmt;
use std::io;

use serde::Serialize;
use statrs::distribution::{ChiSquared, ContinuousCDF, Exp, LogNormal, Normal, Weibull};
use statrs::function::gamma::{digamma, ln_gamma};
use thiserror::Error;

use crate::types::RelationId;

#[derive(Debug, Error)]
pub enum BiasError {
    #[error("{0} dataset is empty")]
    EmptyDataset(&'static str),
    #[error("smoothing must be non-negative and finite, got {0}")]
    InvalidSmoothing(f64),
    #[error("need at least {need} samples, got {got}")]
    TooFewSamples { need: usize, got: usize },
    #[error("{family} requires strictly positive samples, found {value}")]
    NonPositiveSample { family: Family, value: f64 },
    #[error("degenerate {family} fit: {reason}")]
    Degenerate { family: Family, reason: String },
    #[error("every candidate family was degenerate: {0:?}")]
    AllDegenerate(Vec<(Family, String)>),
    #[error("n_groups must be at least 1")]
    NoGroups,
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T> = std::result::Result<T, BiasError>;

/// Per-relation label tallies for one labeled corpus.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LabelCounts {
    pub texts: usize,
    pub counts: BTreeMap<RelationId, u64>,
}

impl LabelCounts {
    pub fn tally(texts: usize, labels: impl IntoIterator<Item = RelationId>) -> Self {
        let mut counts = BTreeMap::new();
        for r in labels {
            *counts.entry(r).or_insert(0) += 1;
        }
        Self { texts, counts }
    }

    /// Registers relations that occur zero times so they show up in reports.
    pub fn with_relations(mut self, relations: impl IntoIterator<Item = RelationId>) -> Self {
        for r in relations {
            self.counts.entry(r).or_insert(0);
        }
        self
    }

    fn count(&self, r: RelationId) -> u64 {
        self.counts.get(&r).copied().unwrap_or(0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RelationInflation {
    pub relation: RelationId,
    pub ha_count: u64,
    pub ds_count: u64,
    /// Labels per HA text (smoothed).
    pub ha_freq: f64,
    /// Labels per DS text (smoothed).
    pub ds_freq: f64,
    /// `+inf` when the relation never occurs in HA data and smoothing is 0.
    pub inflation: f64,
    pub unbounded: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct InflationReport {
    pub ha_text_count: usize,
    pub ds_text_count: usize,
    pub smoothing: f64,
    pub per_relation: Vec<RelationInflation>,
}

impl InflationReport {
    pub fn get(&self, r: RelationId) -> Option<&RelationInflation> {
        self.per_relation.iter().find(|row| row.relation == r)
    }

    pub fn inflation(&self, r: RelationId) -> Option<f64> {
        self.get(r).map(|row| row.inflation)
    }

    /// Finite inflations, for distribution fitting.
    pub fn finite_sample(&self) -> Vec<f64> {
        self.per_relation
            .iter()
            .filter(|r| !r.unbounded)
            .map(|r| r.inflation)
            .collect()
    }
}

/// Per-relation inflation between two labeled corpora.
pub fn compute_inflation(
    ha: &LabelCounts,
    ds: &LabelCounts,
    smoothing: f64,
) -> Result<InflationReport> {
    if ha.texts == 0 {
        return Err(BiasError::EmptyDataset("HA"));
    }
    if ds.texts == 0 {
        return Err(BiasError::EmptyDataset("DS"));
    }
    if !(smoothing >= 0.0 && smoothing.is_finite()) {
        return Err(BiasError::InvalidSmoothing(smoothing));
    }
    let mut relations: Vec<RelationId> = ha.counts.keys().chain(ds.counts.keys()).copied().collect();
    relations.sort();
    relations.dedup();

    let per_relation = relations
        .into_iter()
        .map(|relation| {
            let (hc, dc) = (ha.count(relation), ds.count(relation));
            let ha_freq = (hc as f64 + smoothing) / ha.texts as f64;
            let ds_freq = (dc as f64 + smoothing) / ds.texts as f64;
            let unbounded = ha_freq == 0.0;
            let inflation = if unbounded {
                f64::INFINITY
            } else if ha_freq == ds_freq {
                1.0
            } else {
                ds_freq / ha_freq
            };
            RelationInflation {
                relation,
                ha_count: hc,
                ds_count: dc,
                ha_freq,
                ds_freq,
                inflation,
                unbounded,
            }
        })
        .collect();

    Ok(InflationReport {
        ha_text_count: ha.texts,
        ds_text_count: ds.texts,
        smoothing,
        per_relation,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum Family {
    LogNormal,
    Weibull,
    ChiSquare,
    Exponential,
    Normal,
}

impl Family {
    pub const ALL: [Family; 5] = [
        Family::LogNormal,
        Family::Weibull,
        Family::ChiSquare,
        Family::Exponential,
        Family::Normal,
    ];

    pub fn positive_support(self) -> bool {
        !matches!(self, Family::Normal)
    }

    pub fn name(self) -> &'static str {
        match self {
            Family::LogNormal => "log-normal",
            Family::Weibull => "weibull",
            Family::ChiSquare => "chi-square",
            Family::Exponential => "exponential",
            Family::Normal => "normal",
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Maximum-likelihood parameters of one family.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub enum Fitted {
    LogNormal { mu: f64, sigma: f64 },
    Weibull { shape: f64, scale: f64 },
    ChiSquare { dof: f64 },
    Exponential { rate: f64 },
    Normal { mean: f64, sd: f64 },
}

impl Fitted {
    pub fn family(&self) -> Family {
        match self {
            Fitted::LogNormal { .. } => Family::LogNormal,
            Fitted::Weibull { .. } => Family::Weibull,
            Fitted::ChiSquare { .. } => Family::ChiSquare,
            Fitted::Exponential { .. } => Family::Exponential,
            Fitted::Normal { .. } => Family::Normal,
        }
    }

    pub fn params(&self) -> Vec<f64> {
        match *self {
            Fitted::LogNormal { mu, sigma } => vec![mu, sigma],
            Fitted::Weibull { shape, scale } => vec![shape, scale],
            Fitted::ChiSquare { dof } => vec![dof],
            Fitted::Exponential { rate } => vec![rate],
            Fitted::Normal { mean, sd } => vec![mean, sd],
        }
    }

    pub fn cdf(&self, x: f64) -> f64 {
        // Parameters are validated at fit time, so construction cannot fail.
        match *self {
            Fitted::LogNormal { mu, sigma } => {
                if x <= 0.0 {
                    0.0
                } else {
                    LogNormal::new(mu, sigma).unwrap().cdf(x)
                }
            }
            Fitted::Weibull { shape, scale } => Weibull::new(shape, scale).unwrap().cdf(x),
            Fitted::ChiSquare { dof } => ChiSquared::new(dof).unwrap().cdf(x),
            Fitted::Exponential { rate } => Exp::new(rate).unwrap().cdf(x),
            Fitted::Normal { mean, sd } => Normal::new(mean, sd).unwrap().cdf(x),
        }
    }

    /// Sample log-likelihood.
    pub fn log_likelihood(&self, xs: &[f64]) -> f64 {
        use std::f64::consts::PI;
        match *self {
            Fitted::LogNormal { mu, sigma } => xs
                .iter()
                .map(|&x| {
                    let z = (x.ln() - mu) / sigma;
                    -0.5 * z * z - x.ln() - sigma.ln() - 0.5 * (2.0 * PI).ln()
                })
                .sum(),
            Fitted::Weibull { shape, scale } => xs
                .iter()
                .map(|&x| {
                    shape.ln() - scale.ln() + (shape - 1.0) * (x / scale).ln()
                        - (x / scale).powf(shape)
                })
                .sum(),
            Fitted::ChiSquare { dof } => chi_square_ll(xs, dof),
            Fitted::Exponential { rate } => xs.iter().map(|&x| rate.ln() - rate * x).sum(),
            Fitted::Normal { mean, sd } => xs
                .iter()
                .map(|&x| {
                    let z = (x - mean) / sd;
                    -0.5 * z * z - sd.ln() - 0.5 * (2.0 * PI).ln()
                })
                .sum(),
        }
    }
}

fn chi_square_ll(xs: &[f64], k: f64) -> f64 {
    let n = xs.len() as f64;
    let half = k / 2.0;
    xs.iter().map(|&x| (half - 1.0) * x.ln() - x / 2.0).sum::<f64>()
        - n * (half * 2f64.ln() + ln_gamma(half))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FitResult {
    pub family: Family,
    pub fitted: Fitted,
    pub ks_statistic: f64,
    pub p_value: f64,
}

impl FitResult {
    pub fn params(&self) -> Vec<f64> {
        self.fitted.params()
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn population_sd(xs: &[f64]) -> f64 {
    let m = mean(xs);
    (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64).sqrt()
}

const MAX_CHI_SQUARE_DOF: f64 = 200.0;

/// Maximum-likelihood fit of `family` followed by a K-S test against the
/// fitted CDF.
pub fn fit_family(samples: &[f64], family: Family) -> Result<FitResult> {
    if samples.len() < 2 {
        return Err(BiasError::TooFewSamples {
            need: 2,
            got: samples.len(),
        });
    }
    if family.positive_support() {
        if let Some(&bad) = samples.iter().find(|x| !(**x > 0.0)) {
            return Err(BiasError::NonPositiveSample { family, value: bad });
        }
    }
    let degenerate = |reason: &str| BiasError::Degenerate {
        family,
        reason: reason.to_string(),
    };

    let fitted = match family {
        Family::LogNormal => {
            let logs: Vec<f64> = samples.iter().map(|x| x.ln()).collect();
            let sigma = population_sd(&logs);
            if !(sigma > 0.0) {
                return Err(degenerate("log-samples have zero variance"));
            }
            Fitted::LogNormal {
                mu: mean(&logs),
                sigma,
            }
        }
        Family::Exponential => Fitted::Exponential {
            rate: 1.0 / mean(samples),
        },
        Family::Normal => {
            let sd = population_sd(samples);
            if !(sd > 0.0) {
                return Err(degenerate("samples have zero variance"));
            }
            Fitted::Normal {
                mean: mean(samples),
                sd,
            }
        }
        Family::Weibull => {
            let logs: Vec<f64> = samples.iter().map(|x| x.ln()).collect();
            if !(population_sd(&logs) > 0.0) {
                return Err(degenerate("log-samples have zero variance"));
            }
            let (shape, scale) = weibull_mle(&logs).ok_or_else(|| degenerate("shape equation did not converge"))?;
            Fitted::Weibull { shape, scale }
        }
        Family::ChiSquare => Fitted::ChiSquare {
            dof: chi_square_mle(samples),
        },
    };

    let (ks_statistic, p_value) = ks_test(samples, |x| fitted.cdf(x));
    Ok(FitResult {
        family,
        fitted,
        ks_statistic,
        p_value,
    })
}

/// Newton iteration on the Weibull shape equation
/// `sum x^k ln x / sum x^k - 1/k - mean(ln x) = 0`, safeguarded by bisection.
/// Takes log-samples; returns `(shape, scale)`.
fn weibull_mle(logs: &[f64]) -> Option<(f64, f64)> {
    let n = logs.len() as f64;
    let mean_log = mean(logs);
    let max_log = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);

    // Returns (g, g') at shape k, weights shifted by exp(-k * max_log).
    let eval = |k: f64| {
        let (mut s0, mut s1, mut s2) = (0.0, 0.0, 0.0);
        for &y in logs {
            let w = (k * (y - max_log)).exp();
            s0 += w;
            s1 += w * y;
            s2 += w * y * y;
        }
        let a = s1 / s0;
        let g = a - 1.0 / k - mean_log;
        let dg = s2 / s0 - a * a + 1.0 / (k * k);
        (g, dg)
    };

    let (mut lo, mut hi) = (1e-8_f64, 1.0_f64);
    while eval(hi).0 < 0.0 {
        hi *= 2.0;
        if hi > 1e8 {
            return None;
        }
    }
    let mut k = (1.2825 / population_sd(logs)).clamp(lo, hi);
    for _ in 0..200 {
        let (g, dg) = eval(k);
        if g.abs() < 1e-13 {
            break;
        }
        if g < 0.0 {
            lo = k;
        } else {
            hi = k;
        }
        let step = k - g / dg;
        k = if step > lo && step < hi && dg > 0.0 {
            step
        } else {
            0.5 * (lo + hi)
        };
        if hi - lo < 1e-14 * hi {
            break;
        }
    }
    // ln(scale) = (logsumexp(k * y) - ln n) / k
    let lse = k * max_log
        + logs
            .iter()
            .map(|&y| (k * (y - max_log)).exp())
            .sum::<f64>()
            .ln();
    let scale = ((lse - n.ln()) / k).exp();
    (k.is_finite() && scale.is_finite() && scale > 0.0).then_some((k, scale))
}

/// Degrees of freedom maximizing the chi-square likelihood over (0, 200].
/// The log-likelihood is concave in k, so the stationary point
/// `digamma(k/2) = mean(ln x) - ln 2` is found by bisection.
fn chi_square_mle(samples: &[f64]) -> f64 {
    let target = samples.iter().map(|x| x.ln()).sum::<f64>() / samples.len() as f64 - 2f64.ln();
    let score = |k: f64| target - digamma(k / 2.0);
    if score(MAX_CHI_SQUARE_DOF) >= 0.0 {
        return MAX_CHI_SQUARE_DOF;
    }
    let (mut lo, mut hi) = (1e-10_f64, MAX_CHI_SQUARE_DOF);
    if score(lo) <= 0.0 {
        return lo;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if score(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-13 * hi {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// One-sample Kolmogorov-Smirnov test. Returns `(D, p_value)` with the
/// p-value from the asymptotic Kolmogorov distribution.
pub fn ks_test(samples: &[f64], cdf: impl Fn(f64) -> f64) -> (f64, f64) {
    assert!(!samples.is_empty(), "ks_test needs at least one sample");
    let mut xs = samples.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    let d = xs
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            let i = (i + 1) as f64;
            ((i / n - f).abs()).max((f - (i - 1.0) / n).abs())
        })
        .fold(0.0, f64::max);
    (d, kolmogorov_p_value(xs.len(), d))
}

/// `p = 2 sum_{k>=1} (-1)^(k-1) exp(-2 k^2 n D^2)`, truncated once a term
/// drops below 1e-10 and clamped to [0, 1].
///
/// Below `z = sqrt(n) D = 1.18` the alternating series cancels badly, so the
/// same distribution is evaluated through its Jacobi theta form
/// `1 - sqrt(2 pi) / z * sum exp(-(2k-1)^2 pi^2 / (8 z^2))`.
pub fn kolmogorov_p_value(n: usize, d: f64) -> f64 {
    if !(d > 0.0) {
        return 1.0;
    }
    let z2 = n as f64 * d * d;
    let z = z2.sqrt();
    if z < 1.18 {
        let c = std::f64::consts::PI * std::f64::consts::PI / (8.0 * z2);
        let mut cdf = 0.0;
        for k in 1..=50u32 {
            let m = (2 * k - 1) as f64;
            let term = (-m * m * c).exp();
            cdf += term;
            if term < 1e-18 {
                break;
            }
        }
        return (1.0 - (2.0 * std::f64::consts::PI).sqrt() / z * cdf).clamp(0.0, 1.0);
    }
    let mut sum = 0.0;
    let mut sign = 1.0;
    for k in 1..=1_000u64 {
        let kf = k as f64;
        let term = 2.0 * (-2.0 * kf * kf * z2).exp();
        sum += sign * term;
        if term < 1e-10 {
            break;
        }
        sign = -sign;
    }
    sum.clamp(0.0, 1.0)
}

/// All families fitted to the same sample, best (highest p-value) first.
#[derive(Clone, Debug)]
pub struct Ranking {
    pub fits: Vec<FitResult>,
    /// Families that could not be fitted, with the reason.
    pub skipped: Vec<(Family, String)>,
}

impl Ranking {
    pub fn best(&self) -> &FitResult {
        &self.fits[0]
    }

    pub fn position(&self, family: Family) -> Option<usize> {
        self.fits.iter().position(|f| f.family == family)
    }
}

pub fn rank_families(samples: &[f64]) -> Result<Ranking> {
    if samples.len() < 5 {
        return Err(BiasError::TooFewSamples {
            need: 5,
            got: samples.len(),
        });
    }
    let mut fits = Vec::new();
    let mut skipped = Vec::new();
    for family in Family::ALL {
        match fit_family(samples, family) {
            Ok(fit) => fits.push(fit),
            Err(e) => skipped.push((family, e.to_string())),
        }
    }
    if fits.is_empty() {
        return Err(BiasError::AllDegenerate(skipped));
    }
    // Stable sort keeps the canonical family order among ties.
    fits.sort_by(|a, b| b.p_value.total_cmp(&a.p_value));
    Ok(Ranking { fits, skipped })
}

/// Splits relations, ordered by inflation, into `n_groups` contiguous buckets
/// of near-equal size. Leading buckets absorb the remainder; unbounded
/// inflations sort last.
pub fn group_by_inflation(
    report: &InflationReport,
    n_groups: usize,
) -> Result<BTreeMap<RelationId, usize>> {
    if n_groups == 0 {
        return Err(BiasError::NoGroups);
    }
    let mut order: Vec<&RelationInflation> = report.per_relation.iter().collect();
    order.sort_by(|a, b| {
        a.inflation
            .total_cmp(&b.inflation)
            .then(a.relation.cmp(&b.relation))
    });
    let n = order.len();
    let (base, rem) = (n / n_groups, n % n_groups);
    let mut out = BTreeMap::new();
    let mut it = order.into_iter();
    for g in 0..n_groups {
        let size = base + usize::from(g < rem);
        for row in it.by_ref().take(size) {
            out.insert(row.relation, g);
        }
    }
    Ok(out)
}

/// `(min inflation, max inflation, relation count)` per group index.
pub fn group_ranges(
    report: &InflationReport,
    groups: &BTreeMap<RelationId, usize>,
    n_groups: usize,
) -> Vec<(f64, f64, usize)> {
    let mut out = vec![(f64::INFINITY, f64::NEG_INFINITY, 0usize); n_groups];
    for row in &report.per_relation {
        if let Some(&g) = groups.get(&row.relation) {
            let slot = &mut out[g];
            slot.0 = slot.0.min(row.inflation);
            slot.1 = slot.1.max(row.inflation);
            slot.2 += 1;
        }
    }
    out
}

#[derive(Serialize)]
struct BiasRow {
    relation_id: u32,
    ha_freq: f64,
    ds_freq: f64,
    inflation: f64,
    group: usize,
}

/// Bias-report CSV: `relation_id, ha_freq, ds_freq, inflation, group`.
pub fn write_bias_csv<W: io::Write>(
    w: W,
    report: &InflationReport,
    groups: &BTreeMap<RelationId, usize>,
) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    for row in &report.per_relation {
        wr.serialize(BiasRow {
            relation_id: row.relation.0,
            ha_freq: row.ha_freq,
            ds_freq: row.ds_freq,
            inflation: row.inflation,
            group: groups.get(&row.relation).copied().unwrap_or(0),
        })?;
    }
    wr.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct FitRow {
    family: &'static str,
    params: String,
    #[serde(rename = "ks_D")]
    ks_d: f64,
    p_value: f64,
}

/// Fit-report CSV: `family, params, ks_D, p_value`, params joined by `;`.
pub fn write_fit_csv<W: io::Write>(w: W, ranking: &Ranking) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    for fit in &ranking.fits {
        let params = fit
            .params()
            .iter()
            .map(|p| p.to_string())
            .collect::<Vec<_>>()
            .join(";");
        wr.serialize(FitRow {
            family: fit.family.name(),
            params,
            ks_d: fit.ks_statistic,
            p_value: fit.p_value,
        })?;
    }
    wr.flush()?;
    Ok(())
}

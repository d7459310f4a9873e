//! Curator-side reconstruction of the input distribution from perturbed
//! observations: iterative Bayesian EM and constrained least squares.

use std::collections::{BTreeMap, HashMap};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::bitcodec::Word;
use crate::error::{Error, Result};
use crate::mechanism::{build_channel, channel_prob_raw, FailureProfile};

/// Ordered candidate values, all encodable on `width` bits.
#[derive(Clone, Debug)]
pub struct CandidateSet {
    width: u32,
    values: Vec<u32>,
    index: HashMap<u32, usize>,
}

impl PartialEq for CandidateSet {
    fn eq(&self, other: &Self) -> bool {
        self.width == other.width && self.values == other.values
    }
}

impl CandidateSet {
    pub fn new(values: Vec<u32>, width: u32) -> Result<CandidateSet> {
        if width == 0 || width > crate::bitcodec::MAX_WIDTH {
            return Err(Error::Width(width));
        }
        if values.is_empty() {
            return Err(Error::EmptyCandidates);
        }
        let mut index = HashMap::with_capacity(values.len());
        for (i, &v) in values.iter().enumerate() {
            if width < 32 && v >> width != 0 {
                return Err(Error::Range {
                    value: v as u64,
                    width,
                });
            }
            if index.insert(v, i).is_some() {
                return Err(Error::Candidates(format!("duplicate candidate {v}")));
            }
        }
        Ok(CandidateSet {
            width,
            values,
            index,
        })
    }

    /// Inclusive range `lo..=hi`.
    pub fn range(lo: u32, hi: u32, width: u32) -> Result<CandidateSet> {
        if lo > hi {
            return Err(Error::Candidates(format!("empty range {lo}:{hi}")));
        }
        CandidateSet::new((lo..=hi).collect(), width)
    }

    /// Every value of the width-`n` domain.
    pub fn full(width: u32) -> Result<CandidateSet> {
        if width == 0 || width > 24 {
            return Err(Error::Width(width));
        }
        CandidateSet::range(0, (1u32 << width) - 1, width)
    }

    /// Parses `lo:hi` (inclusive) or a comma-separated list.
    pub fn parse(spec: &str, width: u32) -> Result<CandidateSet> {
        let bad = |s: &str| Error::Candidates(format!("cannot parse candidate spec {s:?}"));
        if let Some((lo, hi)) = spec.split_once(':') {
            let lo = u32::from_str(lo.trim()).map_err(|_| bad(spec))?;
            let hi = u32::from_str(hi.trim()).map_err(|_| bad(spec))?;
            return CandidateSet::range(lo, hi, width);
        }
        let values = spec
            .split(',')
            .map(|s| u32::from_str(s.trim()).map_err(|_| bad(spec)))
            .collect::<Result<Vec<_>>>()?;
        CandidateSet::new(values, width)
    }

    pub fn width(&self) -> usize {
        self.width as usize
    }

    pub fn values(&self) -> &[u32] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn index_of(&self, value: u32) -> Option<usize> {
        self.index.get(&value).copied()
    }
}

/// Probability vector over a candidate set.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Distribution {
    probs: Vec<f64>,
}

impl Distribution {
    pub fn new(probs: Vec<f64>) -> Result<Distribution> {
        if probs.is_empty() {
            return Err(Error::EmptyCandidates);
        }
        if let Some(&bad) = probs.iter().find(|p| !(p.is_finite() && **p >= 0.0)) {
            return Err(Error::Probability(bad));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Parameter(format!("distribution sums to {total}")));
        }
        Ok(Distribution { probs })
    }

    pub fn uniform(m: usize) -> Result<Distribution> {
        if m == 0 {
            return Err(Error::EmptyCandidates);
        }
        Ok(Distribution {
            probs: vec![1.0 / m as f64; m],
        })
    }

    /// Normalized histogram of `values` over `omega`; values outside are dropped.
    pub fn empirical(values: &[u32], omega: &CandidateSet) -> Result<Distribution> {
        let counts = histogram(values, omega);
        let total: f64 = counts.iter().sum();
        if total == 0.0 {
            return Err(Error::NoObservations);
        }
        Ok(Distribution {
            probs: counts.into_iter().map(|c| c / total).collect(),
        })
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn mean(&self, omega: &CandidateSet) -> f64 {
        self.moment(omega, 1)
    }

    pub fn moment(&self, omega: &CandidateSet, order: u32) -> f64 {
        omega
            .values()
            .iter()
            .zip(&self.probs)
            .map(|(&x, &p)| (x as f64).powi(order as i32) * p)
            .sum()
    }
}

/// Raw counts of `values` per candidate.
pub fn histogram(values: &[u32], omega: &CandidateSet) -> Vec<f64> {
    let mut counts = vec![0.0; omega.len()];
    for &v in values {
        if let Some(i) = omega.index_of(v) {
            counts[i] += 1.0;
        }
    }
    counts
}

pub fn total_variation(a: &[f64], b: &[f64]) -> f64 {
    0.5 * a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>()
}

/// Mean squared error between true per-bin counts and `estimate` scaled to
/// the same total.
pub fn count_mse(true_counts: &[f64], estimate: &Distribution) -> f64 {
    let total: f64 = true_counts.iter().sum();
    let m = true_counts.len() as f64;
    true_counts
        .iter()
        .zip(estimate.probs())
        .map(|(c, p)| (p * total - c).powi(2))
        .sum::<f64>()
        / m
}

/// `E[X^order] = value` equalities.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MomentConstraints {
    items: Vec<(u32, f64)>,
}

impl MomentConstraints {
    pub fn new(items: Vec<(u32, f64)>) -> Result<MomentConstraints> {
        let mut seen = BTreeMap::new();
        for &(order, value) in &items {
            if order == 0 {
                return Err(Error::Parameter("moment orders must be positive".into()));
            }
            if !value.is_finite() {
                return Err(Error::Parameter(format!(
                    "moment value {value} is not finite"
                )));
            }
            if seen.insert(order, value).is_some() {
                return Err(Error::Parameter(format!(
                    "moment order {order} given twice"
                )));
            }
        }
        Ok(MomentConstraints { items })
    }

    pub fn none() -> MomentConstraints {
        MomentConstraints::default()
    }

    pub fn items(&self) -> &[(u32, f64)] {
        &self.items
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmConfig {
    pub delta: f64,
    pub max_iterations: usize,
}

impl EmConfig {
    pub fn new(delta: f64, max_iterations: usize) -> Result<EmConfig> {
        if delta.is_nan() || delta <= 0.0 {
            return Err(Error::Parameter(format!(
                "EM tolerance must be positive, got {delta}"
            )));
        }
        if max_iterations == 0 {
            return Err(Error::Parameter("EM needs at least one iteration".into()));
        }
        Ok(EmConfig {
            delta,
            max_iterations,
        })
    }
}

impl Default for EmConfig {
    fn default() -> Self {
        EmConfig {
            delta: 1e-3,
            max_iterations: 10_000,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EmOutcome {
    pub distribution: Distribution,
    pub iterations: usize,
    pub converged: bool,
    /// `max_X |P_t(X) - P_{t-1}(X)|` per iteration.
    pub max_changes: Vec<f64>,
    /// Observations with zero likelihood under every candidate, left out.
    pub dropped: usize,
}

/// One likelihood row per distinct (observation, channel) pair.
struct WeightedRow {
    weight: f64,
    likelihood: Vec<f64>,
}

fn check_observations(observations: &[Word], width: usize) -> Result<()> {
    if observations.is_empty() {
        return Err(Error::NoObservations);
    }
    if let Some(o) = observations.iter().find(|o| o.width() as usize != width) {
        return Err(Error::WidthMismatch {
            expected: width,
            got: o.width() as usize,
        });
    }
    Ok(())
}

fn likelihood_row(o: u32, omega: &CandidateSet, f: &FailureProfile) -> Vec<f64> {
    omega
        .values()
        .iter()
        .map(|&x| channel_prob_raw(x, o, f.as_slice()))
        .collect()
}

fn em_core(rows: Vec<WeightedRow>, m: usize, cfg: &EmConfig) -> Result<EmOutcome> {
    let (rows, dead): (Vec<_>, Vec<_>) = rows
        .into_iter()
        .partition(|r| r.likelihood.iter().any(|&l| l > 0.0));
    let dropped = dead.iter().map(|r| r.weight).sum::<f64>() as usize;
    let users: f64 = rows.iter().map(|r| r.weight).sum();
    if rows.is_empty() {
        return Err(Error::ZeroEvidence);
    }
    let mut prior = vec![1.0 / m as f64; m];
    let mut next = vec![0.0; m];
    let mut max_changes = Vec::new();
    let mut converged = false;
    for _ in 0..cfg.max_iterations {
        next.iter_mut().for_each(|v| *v = 0.0);
        for row in &rows {
            let evidence: f64 = prior.iter().zip(&row.likelihood).map(|(p, l)| p * l).sum();
            if evidence <= 0.0 {
                continue;
            }
            let scale = row.weight / evidence;
            for ((acc, p), l) in next.iter_mut().zip(&prior).zip(&row.likelihood) {
                *acc += scale * p * l;
            }
        }
        let mut change = 0.0f64;
        for (p, acc) in prior.iter_mut().zip(&next) {
            let updated = acc / users;
            change = change.max((updated - *p).abs());
            *p = updated;
        }
        max_changes.push(change);
        if change <= cfg.delta {
            converged = true;
            break;
        }
    }
    let total: f64 = prior.iter().sum();
    prior.iter_mut().for_each(|p| *p /= total);
    Ok(EmOutcome {
        distribution: Distribution { probs: prior },
        iterations: max_changes.len(),
        converged,
        max_changes,
        dropped,
    })
}

/// EM reconstruction: uniform start, Bayes posterior per observation, prior
/// replaced by the average posterior until the largest change is `≤ δ`.
pub fn em_recover(
    observations: &[Word],
    f: &FailureProfile,
    omega: &CandidateSet,
    cfg: &EmConfig,
) -> Result<EmOutcome> {
    check_observations(observations, f.width())?;
    if omega.width() != f.width() {
        return Err(Error::WidthMismatch {
            expected: f.width(),
            got: omega.width(),
        });
    }
    let mut counts: BTreeMap<u32, usize> = BTreeMap::new();
    for o in observations {
        *counts.entry(o.value()).or_default() += 1;
    }
    let rows = counts
        .into_iter()
        .map(|(o, c)| WeightedRow {
            weight: c as f64,
            likelihood: likelihood_row(o, omega, f),
        })
        .collect();
    em_core(rows, omega.len(), cfg)
}

/// A channel that applies `profile` with probability `weight`.
pub type MixtureChannel = Vec<(f64, FailureProfile)>;

/// EM where observation `i` went through channel `sources[assignment[i]]`.
pub fn em_recover_per_source(
    observations: &[Word],
    sources: &[MixtureChannel],
    assignment: &[usize],
    omega: &CandidateSet,
    cfg: &EmConfig,
) -> Result<EmOutcome> {
    let width = omega.width();
    check_observations(observations, width)?;
    if assignment.len() != observations.len() {
        return Err(Error::WidthMismatch {
            expected: observations.len(),
            got: assignment.len(),
        });
    }
    for source in sources {
        if source.is_empty() || source.iter().any(|(w, _)| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::Weights(
                "mixture weights must be finite and non-negative".into(),
            ));
        }
        if let Some((_, p)) = source.iter().find(|(_, p)| p.width() != width) {
            return Err(Error::WidthMismatch {
                expected: width,
                got: p.width(),
            });
        }
    }
    let mut counts: BTreeMap<(usize, u32), usize> = BTreeMap::new();
    for (o, &src) in observations.iter().zip(assignment) {
        if src >= sources.len() {
            return Err(Error::Parameter(format!(
                "source index {src} has no channel"
            )));
        }
        *counts.entry((src, o.value())).or_default() += 1;
    }
    let rows = counts
        .into_iter()
        .map(|((src, o), c)| {
            let mut likelihood = vec![0.0; omega.len()];
            for (w, profile) in &sources[src] {
                for (acc, l) in likelihood.iter_mut().zip(likelihood_row(o, omega, profile)) {
                    *acc += w * l;
                }
            }
            WeightedRow {
                weight: c as f64,
                likelihood,
            }
        })
        .collect();
    em_core(rows, omega.len(), cfg)
}

/// Euclidean projection onto the probability simplex.
pub fn project_simplex(v: &[f64]) -> Vec<f64> {
    let mut sorted = v.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cum = 0.0;
    let mut theta = 0.0;
    for (i, &s) in sorted.iter().enumerate() {
        cum += s;
        let t = (cum - 1.0) / (i + 1) as f64;
        if s - t > 0.0 {
            theta = t;
        }
    }
    v.iter().map(|&x| (x - theta).clamp(0.0, 1.0)).collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClrConfig {
    pub tolerance: f64,
    pub max_iterations: usize,
    pub moment_tolerance: f64,
}

impl Default for ClrConfig {
    fn default() -> Self {
        ClrConfig {
            tolerance: 1e-8,
            max_iterations: 100_000,
            moment_tolerance: 1e-6,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClrOutcome {
    pub distribution: Distribution,
    pub iterations: usize,
    pub converged: bool,
    pub moment_violation: f64,
}

struct LeastSquares<'a> {
    m: &'a [Vec<f64>],
    q: &'a [f64],
}

impl LeastSquares<'_> {
    fn residual(&self, p: &[f64]) -> Vec<f64> {
        let k = self.q.len();
        let mut r: Vec<f64> = self.q.iter().map(|q| -q).collect();
        for (pi, row) in p.iter().zip(self.m) {
            if *pi != 0.0 {
                for j in 0..k {
                    r[j] += pi * row[j];
                }
            }
        }
        r
    }

    fn gradient(&self, residual: &[f64]) -> Vec<f64> {
        self.m
            .iter()
            .map(|row| row.iter().zip(residual).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// Largest eigenvalue of `M Mᵀ` by power iteration.
    fn lipschitz(&self) -> f64 {
        let n = self.m.len();
        let mut v = vec![1.0 / (n as f64).sqrt(); n];
        let mut lambda = 0.0;
        for _ in 0..500 {
            let r: Vec<f64> = (0..self.q.len())
                .map(|j| v.iter().zip(self.m).map(|(vi, row)| vi * row[j]).sum())
                .collect();
            let w = self.gradient(&r);
            let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm == 0.0 {
                return 1.0;
            }
            let next_lambda = v.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>();
            v = w.into_iter().map(|x| x / norm).collect();
            if (next_lambda - lambda).abs() <= 1e-12 * next_lambda.abs() {
                lambda = next_lambda;
                break;
            }
            lambda = next_lambda;
        }
        lambda.max(1e-12) * 1.01
    }
}

struct ScaledMoment {
    coeffs: Vec<f64>,
    target: f64,
    scale: f64,
}

/// Accelerated projected gradient on the simplex for
/// `½‖PM − Q‖² + Σ_j (λ_j r_j + μ/2 r_j²)`.
fn solve_penalized(
    ls: &LeastSquares<'_>,
    moments: &[ScaledMoment],
    lambdas: &[f64],
    mu: f64,
    start: &[f64],
    cfg: &ClrConfig,
) -> (Vec<f64>, usize, bool) {
    let base_l = ls.lipschitz();
    let penalty_l: f64 = moments
        .iter()
        .map(|c| c.coeffs.iter().map(|a| a * a).sum::<f64>())
        .sum::<f64>()
        * mu;
    let step = 1.0 / (base_l + penalty_l);
    let grad = |p: &[f64]| -> Vec<f64> {
        let mut g = ls.gradient(&ls.residual(p));
        for (c, &lam) in moments.iter().zip(lambdas) {
            let r = c.coeffs.iter().zip(p).map(|(a, x)| a * x).sum::<f64>() - c.target;
            let w = lam + mu * r;
            for (gi, a) in g.iter_mut().zip(&c.coeffs) {
                *gi += w * a;
            }
        }
        g
    };
    let mut x = project_simplex(start);
    let mut y = x.clone();
    let mut t = 1.0f64;
    for it in 1..=cfg.max_iterations {
        let gy = grad(&y);
        let x_next = project_simplex(
            &y.iter()
                .zip(&gy)
                .map(|(a, g)| a - step * g)
                .collect::<Vec<_>>(),
        );
        // projected-gradient norm at the new iterate, checked every few steps
        if it % 10 == 0 || it == cfg.max_iterations {
            let gx = grad(&x_next);
            let probe = project_simplex(
                &x_next
                    .iter()
                    .zip(&gx)
                    .map(|(a, g)| a - step * g)
                    .collect::<Vec<_>>(),
            );
            let pg_norm = x_next
                .iter()
                .zip(&probe)
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                .sqrt()
                / step;
            if pg_norm < cfg.tolerance {
                return (x_next, it, true);
            }
        }
        // restart momentum when it points uphill
        let uphill: f64 = gy
            .iter()
            .zip(x_next.iter().zip(&x))
            .map(|(g, (a, b))| g * (a - b))
            .sum();
        let t_next = if uphill > 0.0 {
            1.0
        } else {
            (1.0 + (1.0 + 4.0 * t * t).sqrt()) / 2.0
        };
        let beta = if uphill > 0.0 {
            0.0
        } else {
            (t - 1.0) / t_next
        };
        y = x_next
            .iter()
            .zip(&x)
            .map(|(a, b)| a + beta * (a - b))
            .collect();
        x = x_next;
        t = t_next;
    }
    (x, cfg.max_iterations, false)
}

/// Constrained least-squares reconstruction: minimizes `½‖P̂M − Q̂‖²` over the
/// probability simplex, subject to optional moment equalities.
pub fn clr_recover(
    observations: &[Word],
    f: &FailureProfile,
    omega: &CandidateSet,
    constraints: &MomentConstraints,
) -> Result<ClrOutcome> {
    clr_recover_with(observations, f, omega, constraints, &ClrConfig::default())
}

pub fn clr_recover_with(
    observations: &[Word],
    f: &FailureProfile,
    omega: &CandidateSet,
    constraints: &MomentConstraints,
    cfg: &ClrConfig,
) -> Result<ClrOutcome> {
    check_observations(observations, f.width())?;
    let values: Vec<u32> = observations.iter().map(|o| o.value()).collect();
    let q = Distribution::empirical(&values, omega)?;
    let m = build_channel(omega, f)?.matrix()?;
    let ls = LeastSquares {
        m: &m,
        q: q.probs(),
    };

    let mut moments = Vec::new();
    for &(order, value) in constraints.items() {
        let raw: Vec<f64> = omega
            .values()
            .iter()
            .map(|&x| (x as f64).powi(order as i32))
            .collect();
        let lo = raw.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = raw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if value < lo - 1e-12 || value > hi + 1e-12 {
            return Err(Error::Infeasible(format!(
                "moment of order {order} = {value} outside [{lo}, {hi}]"
            )));
        }
        let scale = hi.abs().max(lo.abs()).max(1.0);
        moments.push(ScaledMoment {
            coeffs: raw.iter().map(|a| a / scale).collect(),
            target: value / scale,
            scale,
        });
    }

    let start = vec![1.0 / omega.len() as f64; omega.len()];
    if moments.is_empty() {
        let (p, iterations, converged) = solve_penalized(&ls, &[], &[], 0.0, &start, cfg);
        return Ok(ClrOutcome {
            distribution: Distribution { probs: p },
            iterations,
            converged,
            moment_violation: 0.0,
        });
    }

    let violation = |p: &[f64]| -> f64 {
        moments
            .iter()
            .map(|c| {
                ((c.coeffs.iter().zip(p).map(|(a, x)| a * x).sum::<f64>() - c.target) * c.scale)
                    .abs()
            })
            .fold(0.0, f64::max)
    };
    let mut lambdas = vec![0.0; moments.len()];
    let mut mu = 10.0;
    let mut p = start;
    let mut iterations = 0;
    let mut last_violation = f64::INFINITY;
    for _ in 0..40 {
        let (next, its, ok) = solve_penalized(&ls, &moments, &lambdas, mu, &p, cfg);
        iterations += its;
        p = next;
        let v = violation(&p);
        if v < cfg.moment_tolerance {
            return Ok(ClrOutcome {
                distribution: Distribution { probs: p },
                iterations,
                converged: ok,
                moment_violation: v,
            });
        }
        for (lam, c) in lambdas.iter_mut().zip(&moments) {
            let r = c.coeffs.iter().zip(&p).map(|(a, x)| a * x).sum::<f64>() - c.target;
            *lam += mu * r;
        }
        if v > 0.25 * last_violation {
            mu *= 10.0;
        }
        last_violation = v;
        if mu > 1e12 {
            break;
        }
    }
    Err(Error::Infeasible(format!(
        "moment constraints still violated by {:.3e} after penalty escalation",
        violation(&p)
    )))
}

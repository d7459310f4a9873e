//! Privacy analytics: worst-case ε of a failure profile, its inverse, the
//! drift (voltage droop / temperature) bound, and the MLE adversary used for
//! the in-accurateness (IA) meter.

use serde::Serialize;

use crate::bitcodec::{encode, Word};
use crate::error::{Error, Result};
use crate::mechanism::{channel_prob_raw, FailureProfile};
use crate::recovery::CandidateSet;

/// ε contributed by one bit with failure rate `f`: `ln((1 − f/2) / (f/2))`.
pub fn bit_epsilon(f: f64) -> f64 {
    ((1.0 - f / 2.0) / (f / 2.0)).ln()
}

/// Privacy loss of one bit position.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(untagged)]
pub enum BitEpsilon {
    Finite(f64),
    /// Position transmits its bit exactly.
    Unbounded(&'static str),
}

impl BitEpsilon {
    pub fn finite(&self) -> Option<f64> {
        match self {
            BitEpsilon::Finite(e) => Some(*e),
            BitEpsilon::Unbounded(_) => None,
        }
    }
}

/// Per-position ε; positions with `f = 0` are reported as unbounded.
pub fn per_bit_epsilon(f: &FailureProfile) -> Vec<BitEpsilon> {
    f.as_slice()
        .iter()
        .map(|&fi| {
            if fi > 0.0 {
                BitEpsilon::Finite(bit_epsilon(fi))
            } else {
                BitEpsilon::Unbounded("inf")
            }
        })
        .collect()
}

/// Worst-case ε summed over the failure-prone positions (`f_i > 0`).
pub fn epsilon_inf(f: &FailureProfile) -> f64 {
    f.as_slice()
        .iter()
        .filter(|&&fi| fi > 0.0)
        .map(|&fi| bit_epsilon(fi))
        .sum()
}

/// Worst-case ε over an explicit set of failure-prone positions; a zero rate
/// on any of them makes the loss unbounded.
pub fn epsilon_inf_over(f: &FailureProfile, prone: &[usize]) -> Result<f64> {
    let mut eps = 0.0;
    for &i in prone {
        let fi = *f.as_slice().get(i).ok_or(Error::WidthMismatch {
            expected: f.width(),
            got: i + 1,
        })?;
        if fi == 0.0 {
            return Err(Error::UnboundedEpsilon(i));
        }
        eps += bit_epsilon(fi);
    }
    Ok(eps)
}

/// Homogeneous failure rate giving `epsilon` over `z` failure-prone cells.
pub fn f_for_epsilon(epsilon: f64, z: usize) -> Result<f64> {
    if !epsilon.is_finite() || epsilon < 0.0 {
        return Err(Error::Parameter(format!(
            "ε must be finite and non-negative, got {epsilon}"
        )));
    }
    if z == 0 {
        return Err(Error::Parameter(
            "need at least one failure-prone cell".into(),
        ));
    }
    Ok(2.0 / (1.0 + (epsilon / z as f64).exp()))
}

/// `Σ |ln(2α_i − 1)|`: bound on the change of ε when each failure rate is
/// scaled by `α_i`.
pub fn droop_bound(alpha: &[f64]) -> Result<f64> {
    alpha.iter().try_fold(0.0, |acc, &a| {
        if !a.is_finite() || a <= 0.5 {
            return Err(Error::DriftFactor(a));
        }
        Ok(acc + (2.0 * a - 1.0).ln().abs())
    })
}

/// Profile after scaling each rate by `α_i`, clamped to [0, 1].
pub fn drift_profile(f: &FailureProfile, alpha: &[f64]) -> Result<FailureProfile> {
    if alpha.len() != f.width() {
        return Err(Error::WidthMismatch {
            expected: f.width(),
            got: alpha.len(),
        });
    }
    if let Some(&a) = alpha.iter().find(|a| !a.is_finite() || **a < 0.0) {
        return Err(Error::DriftFactor(a));
    }
    FailureProfile::new(
        f.as_slice()
            .iter()
            .zip(alpha)
            .map(|(fi, a)| (fi * a).clamp(0.0, 1.0))
            .collect(),
    )
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum PriorKind {
    K1,
    K2,
    Custom,
}

/// Adversary prior over a candidate set.
#[derive(Clone, Debug, PartialEq)]
pub struct AdversaryPrior {
    omega: CandidateSet,
    probs: Vec<f64>,
    kind: PriorKind,
}

impl AdversaryPrior {
    /// Normalizes non-negative `weights`.
    pub fn new(omega: CandidateSet, weights: Vec<f64>, kind: PriorKind) -> Result<AdversaryPrior> {
        if weights.len() != omega.len() {
            return Err(Error::WidthMismatch {
                expected: omega.len(),
                got: weights.len(),
            });
        }
        if let Some(&bad) = weights.iter().find(|w| !(w.is_finite() && **w >= 0.0)) {
            return Err(Error::Probability(bad));
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(Error::EmptySupport);
        }
        let probs = weights.into_iter().map(|w| w / total).collect();
        Ok(AdversaryPrior { omega, probs, kind })
    }

    pub fn omega(&self) -> &CandidateSet {
        &self.omega
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn kind(&self) -> PriorKind {
        self.kind
    }
}

/// The 2^z values agreeing with `o` on every position where `f_i = 0`.
pub fn indistinguishable_set(o: &Word, f: &FailureProfile) -> Result<CandidateSet> {
    crate::bitcodec::ensure_width(o, f.width())?;
    let n = f.width();
    let prone = f.failure_prone();
    let z = prone.len();
    if z > 24 {
        return Err(Error::SizeGuard {
            what: "2^z",
            size: z,
            limit: 24,
        });
    }
    let free_mask: u32 = prone.iter().fold(0, |m, &i| m | 1 << (n - 1 - i));
    let base = o.value() & !free_mask;
    let values = (0u32..1 << z)
        .map(|combo| {
            prone.iter().enumerate().fold(base, |v, (j, &i)| {
                // highest-order free bit takes the highest bit of `combo`
                let bit = (combo >> (z - 1 - j)) & 1;
                v | bit << (n - 1 - i)
            })
        })
        .collect();
    CandidateSet::new(values, n as u32)
}

/// Statistics an informed adversary knows about the data.
pub enum DatasetStats<'a> {
    /// Raw dataset values.
    Values(&'a [u32]),
    /// Any callable giving the relative frequency of a value.
    Density(&'a dyn Fn(u32) -> f64),
}

pub enum PriorSpec<'a> {
    K1,
    K2(DatasetStats<'a>),
}

/// K1: uniform over `omega`. K2: dataset frequencies restricted to `omega`
/// and renormalized.
pub fn build_prior(spec: PriorSpec<'_>, omega: &CandidateSet) -> Result<AdversaryPrior> {
    if omega.is_empty() {
        return Err(Error::EmptyCandidates);
    }
    match spec {
        PriorSpec::K1 => AdversaryPrior::new(omega.clone(), vec![1.0; omega.len()], PriorKind::K1),
        PriorSpec::K2(DatasetStats::Values(values)) => {
            let weights = crate::recovery::histogram(values, omega);
            AdversaryPrior::new(omega.clone(), weights, PriorKind::K2)
        }
        PriorSpec::K2(DatasetStats::Density(density)) => {
            let weights = omega
                .values()
                .iter()
                .map(|&v| density(v).max(0.0))
                .collect();
            AdversaryPrior::new(omega.clone(), weights, PriorKind::K2)
        }
    }
}

fn check_prior(o: &Word, prior: &AdversaryPrior, f: &FailureProfile) -> Result<()> {
    crate::bitcodec::ensure_width(o, f.width())?;
    if prior.omega.width() != f.width() {
        return Err(Error::WidthMismatch {
            expected: f.width(),
            got: prior.omega.width(),
        });
    }
    Ok(())
}

fn scores(o: &Word, prior: &AdversaryPrior, f: &FailureProfile) -> Vec<f64> {
    prior
        .omega
        .values()
        .iter()
        .zip(&prior.probs)
        .map(|(&x, &p)| {
            if p > 0.0 {
                p * channel_prob_raw(x, o.value(), f.as_slice())
            } else {
                0.0
            }
        })
        .collect()
}

/// MLE guess: maximizes `prior(X) · P(o | X)`, ties going to the smaller value.
pub fn mle_infer(o: &Word, prior: &AdversaryPrior, f: &FailureProfile) -> Result<Word> {
    check_prior(o, prior, f)?;
    let s = scores(o, prior, f);
    let values = prior.omega.values();
    let best = (0..s.len())
        .filter(|&i| s[i] > 0.0)
        .max_by(|&a, &b| s[a].total_cmp(&s[b]).then(values[b].cmp(&values[a])))
        .ok_or(Error::ZeroEvidence)?;
    encode(values[best] as u64, f.width() as u32)
}

/// In-accurateness `Σ_X P(X | o) · |x̂ − X|` of the MLE adversary.
pub fn ia_meter(o: &Word, prior: &AdversaryPrior, f: &FailureProfile) -> Result<f64> {
    let guess = mle_infer(o, prior, f)?.value() as f64;
    let s = scores(o, prior, f);
    let evidence: f64 = s.iter().sum();
    Ok(prior
        .omega
        .values()
        .iter()
        .zip(&s)
        .map(|(&x, &w)| w / evidence * (guess - x as f64).abs())
        .sum())
}

/// IA of observation `o` against a K1 adversary over its indistinguishable set.
pub fn ia_k1(o: &Word, f: &FailureProfile) -> Result<f64> {
    let omega = indistinguishable_set(o, f)?;
    ia_meter(o, &build_prior(PriorSpec::K1, &omega)?, f)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct IaStats {
    pub mean: f64,
    pub std: f64,
    pub per_observation: Vec<f64>,
}

impl IaStats {
    pub fn from_values(per_observation: Vec<f64>) -> IaStats {
        let (mean, std) = mean_std(&per_observation);
        IaStats {
            mean,
            std,
            per_observation,
        }
    }
}

pub(crate) fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DroopReport {
    pub alpha: Vec<f64>,
    pub bound: f64,
    pub drifted_epsilon: f64,
    pub delta_epsilon: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PrivacyReport {
    pub epsilon_inf: f64,
    pub per_bit: Vec<BitEpsilon>,
    /// Set when intact positions are accounted as unbounded.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epsilon_all_positions: Option<&'static str>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub droop: Option<DroopReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ia: Option<IaStats>,
}

/// Builds a report. With `strict_positions`, any intact position marks the
/// all-positions ε as unbounded. The droop section scales the failure-prone
/// positions by `alpha`.
pub fn privacy_report(
    f: &FailureProfile,
    alpha: Option<f64>,
    observations: Option<&[Word]>,
    strict_positions: bool,
) -> Result<PrivacyReport> {
    let epsilon_inf = epsilon_inf(f);
    let per_bit = per_bit_epsilon(f);
    let epsilon_all_positions = (strict_positions && f.as_slice().contains(&0.0)).then_some("inf");
    let droop = alpha
        .map(|a| -> Result<DroopReport> {
            let prone = f.failure_prone();
            let alpha_vec: Vec<f64> = (0..f.width())
                .map(|i| if prone.contains(&i) { a } else { 1.0 })
                .collect();
            let bound = droop_bound(&prone.iter().map(|_| a).collect::<Vec<_>>())?;
            let drifted = epsilon_inf_over(&drift_profile(f, &alpha_vec)?, &prone)?;
            Ok(DroopReport {
                alpha: alpha_vec,
                bound,
                drifted_epsilon: drifted,
                delta_epsilon: (drifted - epsilon_inf).abs(),
            })
        })
        .transpose()?;
    let ia = observations
        .map(|obs| {
            obs.iter()
                .map(|o| ia_k1(o, f))
                .collect::<Result<Vec<_>>>()
                .map(IaStats::from_values)
        })
        .transpose()?;
    Ok(PrivacyReport {
        epsilon_inf,
        per_bit,
        epsilon_all_positions,
        droop,
        ia,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn prof(f: &[f64]) -> FailureProfile {
        FailureProfile::new(f.to_vec()).unwrap()
    }

    fn w(s: &str) -> Word {
        s.parse().unwrap()
    }

    #[test]
    fn epsilon_examples() {
        assert!((epsilon_inf(&prof(&[0.8157; 4])) - 1.49).abs() < 0.01);
        assert!((epsilon_inf(&prof(&[0.5])) - 3f64.ln()).abs() < 1e-15);
        assert_eq!(epsilon_inf(&prof(&[1.0; 4])), 0.0);
        // intact positions are excluded
        assert_eq!(epsilon_inf(&prof(&[0.0, 0.5])), epsilon_inf(&prof(&[0.5])));
    }

    #[test]
    fn unbounded_epsilon_on_prone_zero() {
        let f = prof(&[0.0, 0.5]);
        assert_eq!(
            epsilon_inf_over(&f, &[0, 1]).unwrap_err(),
            Error::UnboundedEpsilon(0)
        );
        assert!((epsilon_inf_over(&f, &[1]).unwrap() - 3f64.ln()).abs() < 1e-15);
        assert_eq!(per_bit_epsilon(&f)[0], BitEpsilon::Unbounded("inf"));
    }

    #[test]
    fn f_for_epsilon_examples() {
        assert!((f_for_epsilon(3f64.ln(), 1).unwrap() - 0.5).abs() < 1e-15);
        assert!((f_for_epsilon(1.49, 4).unwrap() - 0.8158).abs() < 0.001);
        assert_eq!(f_for_epsilon(0.0, 3).unwrap(), 1.0);
        assert!(f_for_epsilon(-0.1, 3).is_err());
        assert!(f_for_epsilon(1.0, 0).is_err());
    }

    #[test]
    fn epsilon_round_trip() {
        for z in 1..=8 {
            for &eps in &[0.01, 0.5, 3f64.ln(), 2.0, 7.0] {
                let f = f_for_epsilon(eps, z).unwrap();
                let back = epsilon_inf(&FailureProfile::homogeneous(f, z).unwrap());
                assert!((back - eps).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn droop_examples() {
        assert_eq!(droop_bound(&[1.0; 4]).unwrap(), 0.0);
        let b = droop_bound(&[1.01; 4]).unwrap();
        assert!((b - 4.0 * 1.02f64.ln()).abs() < 1e-12);
        assert!(b <= 0.08);
        assert_eq!(
            droop_bound(&[1.0, 0.5]).unwrap_err(),
            Error::DriftFactor(0.5)
        );
    }

    #[test]
    fn indistinguishable_set_enumerates_free_bits() {
        let f = prof(&[0.0, 0.0, 0.3, 0.0, 0.3]);
        let set = indistinguishable_set(&w("10101"), &f).unwrap();
        assert_eq!(set.values(), &[0b10000, 0b10001, 0b10100, 0b10101]);
        let none = indistinguishable_set(&w("101"), &prof(&[0.0; 3])).unwrap();
        assert_eq!(none.values(), &[5]);
    }

    #[test]
    fn mle_examples() {
        let zero = prof(&[0.0; 4]);
        let omega = CandidateSet::full(4).unwrap();
        let k1 = build_prior(PriorSpec::K1, &omega).unwrap();
        assert_eq!(mle_infer(&w("1011"), &k1, &zero).unwrap(), w("1011"));

        let f = prof(&[0.0, 0.0, 0.6, 0.6]);
        let o = w("1001");
        let set = indistinguishable_set(&o, &f).unwrap();
        let k1 = build_prior(PriorSpec::K1, &set).unwrap();
        assert_eq!(mle_infer(&o, &k1, &f).unwrap(), o);

        let concentrated =
            AdversaryPrior::new(set.clone(), vec![0.0, 0.0, 0.0, 1.0], PriorKind::Custom).unwrap();
        assert_eq!(
            mle_infer(&o, &concentrated, &f).unwrap().value(),
            set.values()[3]
        );
    }

    #[test]
    fn mle_tie_breaks_to_smallest() {
        // f = 1 makes every completion equally likely
        let f = prof(&[0.0, 1.0, 1.0]);
        let o = w("111");
        let set = indistinguishable_set(&o, &f).unwrap();
        let k1 = build_prior(PriorSpec::K1, &set).unwrap();
        assert_eq!(mle_infer(&o, &k1, &f).unwrap(), w("100"));
    }

    #[test]
    fn ia_examples() {
        let f = prof(&[0.0; 4]);
        assert_eq!(ia_k1(&w("0110"), &f).unwrap(), 0.0);
        // one failed LSB at f = 0.5: posterior (0.75, 0.25), guess o, IA = 0.25
        let f = prof(&[0.0, 0.0, 0.0, 0.5]);
        for o in ["0110", "0111"] {
            assert!((ia_k1(&w(o), &f).unwrap() - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn ia_invariant_under_zero_mass_candidates() {
        let f = prof(&[0.0, 0.0, 0.5, 0.5]);
        let o = w("0110");
        let set = indistinguishable_set(&o, &f).unwrap();
        let base =
            AdversaryPrior::new(set.clone(), vec![0.1, 0.2, 0.3, 0.4], PriorKind::Custom).unwrap();
        let mut values = set.values().to_vec();
        values.extend([15, 0]);
        let wider = CandidateSet::new(values, 4).unwrap();
        let padded =
            AdversaryPrior::new(wider, vec![0.1, 0.2, 0.3, 0.4, 0.0, 0.0], PriorKind::Custom)
                .unwrap();
        assert_eq!(
            ia_meter(&o, &base, &f).unwrap(),
            ia_meter(&o, &padded, &f).unwrap()
        );
        assert_eq!(
            mle_infer(&o, &base, &f).unwrap(),
            mle_infer(&o, &padded, &f).unwrap()
        );
    }

    #[test]
    fn k1_prior_mass() {
        let f = prof(&[0.0, 0.0, 0.0, 0.0, 0.0, 0.5, 0.5, 0.5]);
        let set = indistinguishable_set(&w("10100110"), &f).unwrap();
        let k1 = build_prior(PriorSpec::K1, &set).unwrap();
        assert_eq!(k1.probs().len(), 8);
        assert!(k1.probs().iter().all(|&p| p == 1.0 / 8.0));
        assert_eq!(k1.kind(), PriorKind::K1);
    }

    #[test]
    fn k2_eliminates_unseen_prefixes() {
        let data: Vec<u32> = (100..=191).collect();
        // three failed MSBs: candidates are ***00110
        let f = prof(&[0.5, 0.5, 0.5, 0.0, 0.0, 0.0, 0.0, 0.0]);
        let set = indistinguishable_set(&w("10100110"), &f).unwrap();
        let k2 = build_prior(PriorSpec::K2(DatasetStats::Values(&data)), &set).unwrap();
        for (&v, &p) in set.values().iter().zip(k2.probs()) {
            if v >= 192 {
                assert_eq!(p, 0.0, "value {v}");
            }
        }
        let uniform: Vec<u32> = (0..256).collect();
        let k2u = build_prior(PriorSpec::K2(DatasetStats::Values(&uniform)), &set).unwrap();
        let k1 = build_prior(PriorSpec::K1, &set).unwrap();
        assert_eq!(k2u.probs(), k1.probs());
        let density = |v: u32| if v < 128 { 1.0 } else { 0.0 };
        let k2d = build_prior(PriorSpec::K2(DatasetStats::Density(&density)), &set).unwrap();
        assert_eq!(k2d.probs().iter().filter(|&&p| p > 0.0).count(), 4);
    }

    #[test]
    fn prior_errors() {
        let set = CandidateSet::full(2).unwrap();
        assert_eq!(
            AdversaryPrior::new(set.clone(), vec![0.0; 4], PriorKind::Custom).unwrap_err(),
            Error::EmptySupport
        );
        assert!(AdversaryPrior::new(set, vec![1.0; 3], PriorKind::Custom).is_err());
        let data = [200u32];
        let small = CandidateSet::new(vec![1, 2], 8).unwrap();
        assert_eq!(
            build_prior(PriorSpec::K2(DatasetStats::Values(&data)), &small).unwrap_err(),
            Error::EmptySupport
        );
    }

    #[test]
    fn report_contents() {
        let f = prof(&[0.0, 0.0, 0.0, 0.0, 0.8157, 0.8157, 0.8157, 0.8157]);
        let obs = vec![w("10100110"), w("01111000")];
        let r = privacy_report(&f, Some(1.01), Some(&obs), true).unwrap();
        assert!((r.epsilon_inf - 1.49).abs() < 0.01);
        let sum: f64 = r.per_bit.iter().filter_map(|b| b.finite()).sum();
        assert!((sum - r.epsilon_inf).abs() < 1e-12);
        let droop = r.droop.unwrap();
        assert!(droop.delta_epsilon <= droop.bound);
        assert_eq!(r.ia.unwrap().per_observation.len(), 2);
        assert_eq!(r.epsilon_all_positions, Some("inf"));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn argmax_invariant_to_prior_scaling(
                weights in proptest::collection::vec(0.01f64..1.0, 8),
                scale in 0.001f64..1000.0,
                o in 0u32..256,
            ) {
                let f = prof(&[0.0, 0.0, 0.0, 0.0, 0.0, 0.7, 0.7, 0.7]);
                let o = encode(o as u64, 8).unwrap();
                let set = indistinguishable_set(&o, &f).unwrap();
                let a = AdversaryPrior::new(set.clone(), weights.clone(), PriorKind::Custom).unwrap();
                let b = AdversaryPrior::new(set, weights.iter().map(|w| w * scale).collect(), PriorKind::Custom).unwrap();
                prop_assert_eq!(mle_infer(&o, &a, &f).unwrap(), mle_infer(&o, &b, &f).unwrap());
            }

            #[test]
            fn drift_within_bound(
                f in proptest::collection::vec(0.01f64..=1.0, 1..=8),
                u in proptest::collection::vec(0.0f64..=1.0, 8),
            ) {
                let alpha: Vec<f64> = f.iter().zip(&u).map(|(fi, ui)| 0.5 + 1e-9 + ui * (1.0 / fi - 0.5 - 1e-9)).collect();
                let profile = prof(&f);
                let drifted = drift_profile(&profile, &alpha).unwrap();
                let delta = (epsilon_inf(&drifted) - epsilon_inf(&profile)).abs();
                prop_assert!(delta <= droop_bound(&alpha).unwrap() + 1e-9);
            }
        }
    }
}

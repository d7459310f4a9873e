//! The four-step perturbation pipeline (shuffle, store, inject noise,
//! reshuffle), its exact per-bit channel, and the randomized-response
//! reference it is equivalent to.

use std::sync::Arc;

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::bitcodec::{
    apply_permutation, decode, encode, ensure_width, invert_permutation, PermSet, Word,
};
use crate::error::{Error, Result};
use crate::memmodel::{apply_fixed_output, drifted_failure_rate, CellSpec, ChipInstance, FaultMap};
use crate::recovery::CandidateSet;

/// Per-bit-position effective failure probabilities, MSB-first.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ProfileRepr", into = "ProfileRepr")]
pub struct FailureProfile {
    f: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum ProfileRepr {
    Object { f: Vec<f64> },
    Bare(Vec<f64>),
}

impl TryFrom<ProfileRepr> for FailureProfile {
    type Error = Error;
    fn try_from(r: ProfileRepr) -> Result<Self> {
        match r {
            ProfileRepr::Object { f } | ProfileRepr::Bare(f) => FailureProfile::new(f),
        }
    }
}

impl From<FailureProfile> for ProfileRepr {
    fn from(p: FailureProfile) -> Self {
        ProfileRepr::Object { f: p.f }
    }
}

impl FailureProfile {
    pub fn new(f: Vec<f64>) -> Result<FailureProfile> {
        if f.is_empty() || f.len() > crate::bitcodec::MAX_WIDTH as usize {
            return Err(Error::Width(f.len() as u32));
        }
        if let Some(&bad) = f.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::Probability(bad));
        }
        Ok(FailureProfile { f })
    }

    pub fn zeros(width: usize) -> Result<FailureProfile> {
        FailureProfile::new(vec![0.0; width])
    }

    pub fn homogeneous(f: f64, width: usize) -> Result<FailureProfile> {
        FailureProfile::new(vec![f; width])
    }

    pub fn width(&self) -> usize {
        self.f.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.f
    }

    /// Positions with a non-zero failure probability.
    pub fn failure_prone(&self) -> Vec<usize> {
        (0..self.f.len()).filter(|&i| self.f[i] > 0.0).collect()
    }

    /// Probabilities indexed from the LSB (index 0 = weight 2^0).
    pub fn lsb_first(&self) -> Vec<f64> {
        self.f.iter().rev().copied().collect()
    }
}

/// `f_i = Σ_k p(bit i → cell k) · cell_fail[k]`.
pub fn effective_f(permset: &PermSet, cell_fail: &[f64]) -> Result<FailureProfile> {
    if cell_fail.len() != permset.width() {
        return Err(Error::WidthMismatch {
            expected: permset.width(),
            got: cell_fail.len(),
        });
    }
    let f = permset
        .mapping_matrix()
        .iter()
        .map(|row| {
            row.iter()
                .zip(cell_fail)
                .map(|(p, c)| p * c)
                .sum::<f64>()
                .clamp(0.0, 1.0)
        })
        .collect();
    FailureProfile::new(f)
}

/// `P(O = o | X = x)`: each bit flips independently with probability `f_i / 2`.
pub fn channel_prob(x: &Word, o: &Word, f: &FailureProfile) -> Result<f64> {
    ensure_width(x, f.width())?;
    ensure_width(o, f.width())?;
    Ok(channel_prob_raw(x.value(), o.value(), f.as_slice()))
}

/// Unchecked variant over raw values; `f` is MSB-first.
pub(crate) fn channel_prob_raw(x: u32, o: u32, f: &[f64]) -> f64 {
    let n = f.len();
    let diff = x ^ o;
    f.iter().enumerate().fold(1.0, |acc, (i, &fi)| {
        let flipped = (diff >> (n - 1 - i)) & 1 == 1;
        acc * if flipped { fi / 2.0 } else { 1.0 - fi / 2.0 }
    })
}

pub const CHANNEL_LIMIT: usize = 1 << 16;

/// `P(O | X)` restricted to a candidate set.
#[derive(Clone, Debug)]
pub struct Channel {
    omega: CandidateSet,
    profile: FailureProfile,
}

impl Channel {
    pub fn new(omega: CandidateSet, profile: FailureProfile) -> Result<Channel> {
        if omega.width() != profile.width() {
            return Err(Error::WidthMismatch {
                expected: profile.width(),
                got: omega.width(),
            });
        }
        Ok(Channel { omega, profile })
    }

    pub fn omega(&self) -> &CandidateSet {
        &self.omega
    }

    pub fn profile(&self) -> &FailureProfile {
        &self.profile
    }

    /// Probability of observing raw value `o` from candidate index `x_idx`.
    pub fn prob(&self, x_idx: usize, o: u32) -> f64 {
        channel_prob_raw(self.omega.values()[x_idx], o, self.profile.as_slice())
    }

    /// Row-major `|Ω| × |Ω|` matrix `M[X][O]`.
    pub fn matrix(&self) -> Result<Vec<Vec<f64>>> {
        let m = self.omega.len();
        if m > CHANNEL_LIMIT {
            return Err(Error::SizeGuard {
                what: "|Ω|",
                size: m,
                limit: CHANNEL_LIMIT,
            });
        }
        let values = self.omega.values();
        Ok(values
            .iter()
            .map(|&x| {
                values
                    .iter()
                    .map(|&o| channel_prob_raw(x, o, self.profile.as_slice()))
                    .collect()
            })
            .collect())
    }
}

pub fn build_channel(omega: &CandidateSet, f: &FailureProfile) -> Result<Channel> {
    if omega.len() > CHANNEL_LIMIT {
        return Err(Error::SizeGuard {
            what: "|Ω|",
            size: omega.len(),
            limit: CHANNEL_LIMIT,
        });
    }
    Channel::new(omega.clone(), f.clone())
}

fn check_epsilon(epsilon: f64) -> Result<()> {
    if epsilon.is_nan() || epsilon <= 0.0 {
        return Err(Error::Parameter(format!(
            "ε must be positive, got {epsilon}"
        )));
    }
    Ok(())
}

/// Keep probability `e^ε / (1 + e^ε)` of binary randomized response.
pub fn rr_keep_probability(epsilon: f64) -> Result<f64> {
    check_epsilon(epsilon)?;
    // 1 / (1 + e^-ε) stays finite as ε grows
    Ok(1.0 / (1.0 + (-epsilon).exp()))
}

pub fn rr_reference<R: RngCore + ?Sized>(bit: bool, epsilon: f64, rng: &mut R) -> Result<bool> {
    let keep = rr_keep_probability(epsilon)?;
    Ok(if rng.random::<f64>() < keep {
        bit
    } else {
        !bit
    })
}

/// `[[p00, p01], [p10, p11]]` with `p00 = p11 = e^ε / (1 + e^ε)`.
pub fn rr_matrix(epsilon: f64) -> Result<[[f64; 2]; 2]> {
    let keep = rr_keep_probability(epsilon)?;
    Ok([[keep, 1.0 - keep], [1.0 - keep, keep]])
}

/// Failure rate whose 1-bit channel equals RR at `epsilon`.
pub fn rr_equivalent_f(epsilon: f64) -> f64 {
    2.0 / (1.0 + epsilon.exp())
}

/// Per-bit randomized response; positions with `None` are sent unchanged.
#[derive(Clone, Debug)]
pub struct BitwiseRr {
    keep: Vec<Option<f64>>,
}

impl BitwiseRr {
    pub fn new(epsilons: &[Option<f64>]) -> Result<BitwiseRr> {
        let keep = epsilons
            .iter()
            .map(|e| e.map(rr_keep_probability).transpose())
            .collect::<Result<_>>()?;
        Ok(BitwiseRr { keep })
    }

    /// RR at the per-bit ε matching each failure-prone position of `f`.
    pub fn matching(f: &FailureProfile) -> Result<BitwiseRr> {
        let eps: Vec<Option<f64>> = f
            .as_slice()
            .iter()
            .map(|&fi| (fi > 0.0).then(|| ((1.0 - fi / 2.0) / (fi / 2.0)).ln()))
            .collect();
        // f_i = 1 gives ε_i = 0, which is a coin flip rather than RR proper
        let keep = eps
            .iter()
            .map(|e| match e {
                Some(e) if *e == 0.0 => Ok(Some(0.5)),
                Some(e) => rr_keep_probability(*e).map(Some),
                None => Ok(None),
            })
            .collect::<Result<_>>()?;
        Ok(BitwiseRr { keep })
    }

    pub fn width(&self) -> usize {
        self.keep.len()
    }

    pub fn perturb<R: RngCore + ?Sized>(&self, x: &Word, rng: &mut R) -> Result<Word> {
        ensure_width(x, self.width())?;
        let mut out = *x;
        for (i, keep) in self.keep.iter().enumerate() {
            if let Some(keep) = keep {
                if rng.random::<f64>() >= *keep {
                    out = out.with_bit(i, !x.bit(i));
                }
            }
        }
        Ok(out)
    }
}

/// How per-cell failure probabilities are obtained.
#[derive(Clone, Debug, PartialEq)]
pub enum CellModel {
    /// Calibrated cells at an operating voltage, with a multiplicative drift factor.
    Calibrated {
        cells: Vec<CellSpec>,
        voltage: f64,
        drift: f64,
    },
    /// Explicit per-cell failure probabilities.
    Direct(Vec<f64>),
}

#[derive(Clone, Debug, PartialEq)]
pub enum FailureMode {
    /// Every cell fails independently on every access.
    Stochastic,
    /// Static per-word fault maps of a sampled chip; record `m` uses word `m mod words`.
    Chip(Arc<ChipInstance>),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseSource {
    #[default]
    System,
    Lfsr,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MechanismConfig {
    pub width: usize,
    pub cells: CellModel,
    pub permset: PermSet,
    pub mode: FailureMode,
    pub noise: NoiseSource,
    pub fixed_output: bool,
}

impl MechanismConfig {
    /// The reference 8-bit layout: reliable cells on the four MSBs, 6T cells
    /// on the four LSBs, π1–π4 uniform.
    pub fn default_8bit(voltage: f64) -> MechanismConfig {
        let mut cells = vec![CellSpec::reliable(); 4];
        cells.extend(vec![CellSpec::six_t(); 4]);
        MechanismConfig {
            width: 8,
            cells: CellModel::Calibrated {
                cells,
                voltage,
                drift: 1.0,
            },
            permset: PermSet::default_8bit(),
            mode: FailureMode::Stochastic,
            noise: NoiseSource::System,
            fixed_output: true,
        }
    }

    /// Identity shuffle with the given per-position failure probabilities.
    pub fn direct(profile: &FailureProfile) -> MechanismConfig {
        let width = profile.width();
        MechanismConfig {
            width,
            cells: CellModel::Direct(profile.as_slice().to_vec()),
            permset: PermSet::identity(width).expect("valid width"),
            mode: FailureMode::Stochastic,
            noise: NoiseSource::System,
            fixed_output: true,
        }
    }
}

/// Independent random streams for the three stochastic stages.
pub trait Entropy {
    fn selector(&mut self) -> &mut dyn RngCore;
    fn failures(&mut self) -> &mut dyn RngCore;
    fn noise(&mut self) -> &mut dyn RngCore;
}

/// All stages drawn from one generator.
pub struct SharedStream<'a, R: RngCore + ?Sized>(pub &'a mut R);

impl<R: RngCore> Entropy for SharedStream<'_, R> {
    fn selector(&mut self) -> &mut dyn RngCore {
        self.0
    }
    fn failures(&mut self) -> &mut dyn RngCore {
        self.0
    }
    fn noise(&mut self) -> &mut dyn RngCore {
        self.0
    }
}

pub struct StageStreams<S, F, N> {
    pub selector: S,
    pub failures: F,
    pub noise: N,
}

impl<S: RngCore, F: RngCore, N: RngCore> Entropy for StageStreams<S, F, N> {
    fn selector(&mut self) -> &mut dyn RngCore {
        &mut self.selector
    }
    fn failures(&mut self) -> &mut dyn RngCore {
        &mut self.failures
    }
    fn noise(&mut self) -> &mut dyn RngCore {
        &mut self.noise
    }
}

/// Intermediate values of one write/read cycle.
#[derive(Clone, Debug, PartialEq)]
pub struct Trace {
    pub pattern_index: usize,
    pub shuffled: Word,
    pub faults: FaultMap,
    /// Readout before noise injection: failed cells show the fixed output.
    pub raw: Word,
    pub noised: Word,
    pub output: Word,
}

/// A validated mechanism instance.
#[derive(Clone, Debug)]
pub struct Mechanism {
    config: MechanismConfig,
    cell_fail: Vec<f64>,
    profile: FailureProfile,
}

impl Mechanism {
    pub fn new(config: MechanismConfig) -> Result<Mechanism> {
        let n = config.width;
        if n == 0 || n > crate::bitcodec::MAX_WIDTH as usize {
            return Err(Error::Width(n as u32));
        }
        if config.permset.width() != n {
            return Err(Error::WidthMismatch {
                expected: n,
                got: config.permset.width(),
            });
        }
        let cell_fail = match &config.cells {
            CellModel::Calibrated {
                cells,
                voltage,
                drift,
            } => {
                if cells.len() != n {
                    return Err(Error::WidthMismatch {
                        expected: n,
                        got: cells.len(),
                    });
                }
                cells
                    .iter()
                    .map(|c| drifted_failure_rate(c, *voltage, *drift))
                    .collect::<Result<Vec<_>>>()?
            }
            CellModel::Direct(p) => {
                if p.len() != n {
                    return Err(Error::WidthMismatch {
                        expected: n,
                        got: p.len(),
                    });
                }
                if let Some(&bad) = p.iter().find(|v| !(0.0..=1.0).contains(*v)) {
                    return Err(Error::Probability(bad));
                }
                p.clone()
            }
        };
        if let FailureMode::Chip(chip) = &config.mode {
            if chip.width() != n {
                return Err(Error::WidthMismatch {
                    expected: n,
                    got: chip.width(),
                });
            }
            if let CellModel::Calibrated { cells, .. } = &config.cells {
                if chip.specs() != cells.as_slice() {
                    return Err(Error::Parameter(
                        "chip cell specs differ from the configured cells".into(),
                    ));
                }
            }
        }
        let profile = effective_f(&config.permset, &cell_fail)?;
        Ok(Mechanism {
            config,
            cell_fail,
            profile,
        })
    }

    pub fn config(&self) -> &MechanismConfig {
        &self.config
    }

    pub fn width(&self) -> usize {
        self.config.width
    }

    /// Per-cell failure probabilities at the operating point.
    pub fn cell_failure(&self) -> &[f64] {
        &self.cell_fail
    }

    /// Effective per-bit failure profile (expected over pattern choice).
    pub fn profile(&self) -> &FailureProfile {
        &self.profile
    }

    /// Fault map used for record slot `slot`.
    fn faults(&self, slot: usize, failures: &mut dyn RngCore) -> Result<FaultMap> {
        match &self.config.mode {
            FailureMode::Stochastic => Ok(FaultMap::new(
                self.cell_fail
                    .iter()
                    .map(|&p| p >= 1.0 || (p > 0.0 && failures.random::<f64>() < p))
                    .collect(),
            )),
            FailureMode::Chip(chip) => {
                let word = slot % chip.words();
                match &self.config.cells {
                    CellModel::Calibrated { voltage, drift, .. } if *drift == 1.0 => {
                        chip.fault_map(word, *voltage)
                    }
                    CellModel::Calibrated { voltage, drift, .. } => {
                        chip.fault_map_drifted(word, *voltage, *drift)
                    }
                    CellModel::Direct(p) => chip.fault_map_at_probs(word, p),
                }
            }
        }
    }

    /// Full write/read cycle for record slot `slot`, exposing every stage.
    pub fn perturb_traced(
        &self,
        x: &Word,
        slot: usize,
        entropy: &mut dyn Entropy,
    ) -> Result<Trace> {
        ensure_width(x, self.width())?;
        let pattern_index = self.config.permset.select(entropy.selector());
        let pattern = &self.config.permset.patterns()[pattern_index];
        let shuffled = apply_permutation(x, pattern)?;
        let faults = self.faults(slot, entropy.failures())?;
        let raw = apply_fixed_output(&shuffled, &faults, self.config.fixed_output);
        let noise = entropy.noise();
        let mut noised = raw;
        for (k, _) in faults.failed().iter().enumerate().filter(|(_, &f)| f) {
            noised = noised.with_bit(k, noise.next_u32() & 1 == 1);
        }
        let output = invert_permutation(&noised, pattern)?;
        Ok(Trace {
            pattern_index,
            shuffled,
            faults,
            raw,
            noised,
            output,
        })
    }

    /// Perturbed output of `x`, drawing all randomness from `rng`.
    pub fn perturb<R: RngCore>(&self, x: &Word, rng: &mut R) -> Result<Word> {
        Ok(self.perturb_traced(x, 0, &mut SharedStream(rng))?.output)
    }

    pub fn perturb_value<R: RngCore>(&self, value: u64, rng: &mut R) -> Result<u64> {
        let x = encode(value, self.width() as u32)?;
        Ok(decode(&self.perturb(&x, rng)?))
    }
}

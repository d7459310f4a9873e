//! Experiment driver: synthetic datasets, named failure patterns, seeded
//! end-to-end runs and the artifacts they emit.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution as _, Normal};
use serde::{Deserialize, Serialize};

use crate::bitcodec::{decode, encode, LfsrRng, PermSet, Word};
use crate::error::{Error, Result};
use crate::mechanism::{
    effective_f, BitwiseRr, CellModel, FailureMode, FailureProfile, Mechanism, MechanismConfig,
    NoiseSource, StageStreams,
};
use crate::memmodel::{sample_chip, CellSpec};
use crate::privacy::{epsilon_inf, f_for_epsilon, ia_k1, mean_std};
use crate::recovery::{
    clr_recover, count_mse, em_recover, em_recover_per_source, histogram, total_variation,
    CandidateSet, Distribution, EmConfig, MixtureChannel, MomentConstraints,
};
use crate::utility::ul_meter;

/// Privacy budget that also parses `ln3`, `ln(3)` or a plain number.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "EpsilonRepr", into = "f64")]
pub struct Epsilon(pub f64);

#[derive(Deserialize)]
#[serde(untagged)]
enum EpsilonRepr {
    Number(f64),
    Text(String),
}

impl TryFrom<EpsilonRepr> for Epsilon {
    type Error = Error;
    fn try_from(r: EpsilonRepr) -> Result<Self> {
        match r {
            EpsilonRepr::Number(v) => Ok(Epsilon(v)),
            EpsilonRepr::Text(s) => s.parse(),
        }
    }
}

impl From<Epsilon> for f64 {
    fn from(e: Epsilon) -> f64 {
        e.0
    }
}

impl FromStr for Epsilon {
    type Err = Error;
    fn from_str(s: &str) -> Result<Epsilon> {
        let s = s.trim();
        let bad = || Error::Parameter(format!("cannot parse ε from {s:?}"));
        let value = if let Some(rest) = s.strip_prefix("ln") {
            let arg = rest.trim().trim_start_matches('(').trim_end_matches(')');
            arg.parse::<f64>().map_err(|_| bad())?.ln()
        } else {
            s.parse::<f64>().map_err(|_| bad())?
        };
        if !value.is_finite() || value < 0.0 {
            return Err(bad());
        }
        Ok(Epsilon(value))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum PatternName {
    F1,
    F2,
    F3,
}

impl FromStr for PatternName {
    type Err = Error;
    fn from_str(s: &str) -> Result<PatternName> {
        match s.trim().to_ascii_uppercase().as_str() {
            "F1" => Ok(PatternName::F1),
            "F2" => Ok(PatternName::F2),
            "F3" => Ok(PatternName::F3),
            _ => Err(Error::UnknownPattern(s.to_string())),
        }
    }
}

impl fmt::Display for PatternName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

/// Three failed cells on an 8-bit word (MSB-first): F1 at the LSBs, F2 in
/// the middle, F3 at the MSBs, each at the rate giving `epsilon` over z = 3.
pub fn named_pattern(name: PatternName, epsilon: f64) -> Result<FailureProfile> {
    let f = f_for_epsilon(epsilon, 3)?;
    let positions = match name {
        PatternName::F1 => [5, 6, 7],
        PatternName::F2 => [2, 3, 4],
        PatternName::F3 => [0, 1, 2],
    };
    let mut v = vec![0.0; 8];
    for p in positions {
        v[p] = f;
    }
    FailureProfile::new(v)
}

/// Rounded, clipped Gaussian samples.
pub fn gen_gaussian(
    mean: f64,
    std: f64,
    count: usize,
    width: u32,
    clip: (u32, u32),
    seed: u64,
) -> Result<Vec<u32>> {
    let max = if width >= 32 {
        u32::MAX as u64
    } else {
        (1u64 << width) - 1
    };
    if clip.0 > clip.1 || clip.1 as u64 > max {
        return Err(Error::Parameter(format!(
            "clip range {clip:?} not within [0, {max}]"
        )));
    }
    let normal = Normal::new(mean, std)
        .map_err(|e| Error::Parameter(format!("bad Gaussian parameters: {e}")))?;
    let mut rng = stage_rng(seed, Stage::Data);
    Ok((0..count)
        .map(|_| {
            normal
                .sample(&mut rng)
                .round()
                .clamp(clip.0 as f64, clip.1 as f64) as u32
        })
        .collect())
}

/// Check-in coordinates on a 256 × 256 grid split into 64 × 64 areas of
/// interest with Zipf-like popularity. Returns `(x, y)` pairs.
pub fn gen_grid(count: usize, seed: u64) -> Vec<(u32, u32)> {
    const AOIS_PER_AXIS: u32 = 64;
    const CELL: u32 = 256 / AOIS_PER_AXIS;
    let mut rng = stage_rng(seed, Stage::Data);
    let n_aoi = (AOIS_PER_AXIS * AOIS_PER_AXIS) as usize;
    // popularity ∝ 1/rank; ranks assigned by a seeded shuffle of AOIs
    let mut order: Vec<usize> = (0..n_aoi).collect();
    for i in (1..n_aoi).rev() {
        order.swap(i, rng.random_range(0..=i));
    }
    let cumulative: Vec<f64> = (1..=n_aoi)
        .scan(0.0, |acc, r| {
            *acc += 1.0 / r as f64;
            Some(*acc)
        })
        .collect();
    let total = cumulative[n_aoi - 1];
    (0..count)
        .map(|_| {
            let u = rng.random::<f64>() * total;
            let rank = cumulative.partition_point(|&c| c <= u).min(n_aoi - 1);
            let aoi = order[rank] as u32;
            let (ax, ay) = (aoi % AOIS_PER_AXIS, aoi / AOIS_PER_AXIS);
            (
                ax * CELL + rng.random_range(0..CELL),
                ay * CELL + rng.random_range(0..CELL),
            )
        })
        .collect()
}

/// Independent stream per pipeline stage, derived from one master seed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Data = 0,
    Selector = 1,
    Failures = 2,
    Noise = 3,
    Chip = 4,
    Rr = 5,
}

pub fn stage_rng(master: u64, stage: Stage) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(stage as u64);
    rng
}

pub fn stage_seed(master: u64, stage: Stage) -> u64 {
    stage_rng(master, stage).next_u64()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DatasetSpec {
    Gaussian {
        mean: f64,
        std: f64,
        count: usize,
        #[serde(default)]
        clip: Option<(u32, u32)>,
    },
    /// Both coordinates of synthetic grid check-ins, as separate 8-bit records.
    Grid {
        count: usize,
    },
    File {
        path: PathBuf,
    },
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec::Gaussian {
            mean: 125.0,
            std: 20.0,
            count: 1000,
            clip: None,
        }
    }
}

/// Exactly one of: named pattern at ε, explicit profile, or calibrated cells at a voltage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged, deny_unknown_fields)]
pub enum FailureSpec {
    Pattern {
        pattern: PatternName,
        epsilon: Epsilon,
    },
    Profile {
        f: Vec<f64>,
    },
    Voltage {
        voltage: f64,
        /// Cell positions (MSB-first) built from 6T cells; the rest are reliable.
        #[serde(default)]
        failure_prone: Option<Vec<usize>>,
        #[serde(default)]
        cell: Option<CellSpec>,
        #[serde(default)]
        permset: Option<PermSet>,
        #[serde(default = "one")]
        drift: f64,
    },
}

fn one() -> f64 {
    1.0
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModeSpec {
    #[default]
    Stochastic,
    Chip,
}

/// Which failure profile the curator feeds to recovery in chip mode.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ChipRecovery {
    /// Realized failure fraction averaged over all words.
    #[default]
    Average,
    /// Each word's own fault map.
    PerWord,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algo {
    Em,
    Clr,
}

fn default_width() -> u32 {
    8
}
fn default_words() -> usize {
    DEFAULT_CHIP_WORDS
}
fn default_algos() -> Vec<Algo> {
    vec![Algo::Em]
}

/// Wordlines in the simulated chip.
pub const DEFAULT_CHIP_WORDS: usize = 1000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub dataset: DatasetSpec,
    #[serde(default = "default_width")]
    pub width: u32,
    pub failure: FailureSpec,
    #[serde(default)]
    pub mode: ModeSpec,
    #[serde(default = "default_words")]
    pub chip_words: usize,
    #[serde(default)]
    pub chip_recovery: ChipRecovery,
    #[serde(default = "default_algos")]
    pub recovery: Vec<Algo>,
    #[serde(default)]
    pub em: EmConfig,
    #[serde(default)]
    pub noise: NoiseSource,
    #[serde(default)]
    pub seed: u64,
    /// Fixed readout of failed cells before noise injection.
    #[serde(default = "default_fixed_output")]
    pub fixed_output: u8,
}

fn default_fixed_output() -> u8 {
    1
}

impl ExperimentConfig {
    pub fn new(failure: FailureSpec) -> ExperimentConfig {
        ExperimentConfig {
            dataset: DatasetSpec::default(),
            width: 8,
            failure,
            mode: ModeSpec::Stochastic,
            chip_words: DEFAULT_CHIP_WORDS,
            chip_recovery: ChipRecovery::Average,
            recovery: default_algos(),
            em: EmConfig::default(),
            noise: NoiseSource::System,
            seed: 0,
            fixed_output: 1,
        }
    }

    /// Dataset values for this configuration.
    pub fn load_dataset(&self) -> Result<Vec<u32>> {
        let max = (1u64 << self.width) - 1;
        let values = match &self.dataset {
            DatasetSpec::Gaussian {
                mean,
                std,
                count,
                clip,
            } => gen_gaussian(
                *mean,
                *std,
                *count,
                self.width,
                clip.unwrap_or((0, max as u32)),
                self.seed,
            )?,
            DatasetSpec::Grid { count } => {
                if self.width != 8 {
                    return Err(Error::Parameter("grid datasets are 8 bits per axis".into()));
                }
                gen_grid(*count, self.seed)
                    .into_iter()
                    .flat_map(|(x, y)| [x, y])
                    .collect()
            }
            DatasetSpec::File { path } => read_values(path)?,
        };
        if let Some(&v) = values.iter().find(|&&v| v as u64 > max) {
            return Err(Error::Range {
                value: v as u64,
                width: self.width,
            });
        }
        if values.is_empty() {
            return Err(Error::NoObservations);
        }
        Ok(values)
    }

    /// Mechanism for this configuration.
    pub fn mechanism(&self) -> Result<Mechanism> {
        let n = self.width as usize;
        let mut config = match &self.failure {
            FailureSpec::Pattern { pattern, epsilon } => {
                if n != 8 {
                    return Err(Error::Parameter(
                        "named patterns are defined for 8-bit words".into(),
                    ));
                }
                MechanismConfig::direct(&named_pattern(*pattern, epsilon.0)?)
            }
            FailureSpec::Profile { f } => {
                if f.len() != n {
                    return Err(Error::WidthMismatch {
                        expected: n,
                        got: f.len(),
                    });
                }
                MechanismConfig::direct(&FailureProfile::new(f.clone())?)
            }
            FailureSpec::Voltage {
                voltage,
                failure_prone,
                cell,
                permset,
                drift,
            } => {
                let prone = failure_prone
                    .clone()
                    .unwrap_or_else(|| (n.saturating_sub(4)..n).collect());
                if let Some(&bad) = prone.iter().find(|&&p| p >= n) {
                    return Err(Error::Parameter(format!(
                        "failure-prone position {bad} outside width {n}"
                    )));
                }
                let six_t = cell.clone().unwrap_or_else(CellSpec::six_t);
                let cells = (0..n)
                    .map(|k| {
                        if prone.contains(&k) {
                            six_t.clone()
                        } else {
                            CellSpec::reliable()
                        }
                    })
                    .collect();
                let permset = match permset {
                    Some(p) => p.clone(),
                    None if n == 8 => PermSet::default_8bit(),
                    None => PermSet::identity(n)?,
                };
                MechanismConfig {
                    width: n,
                    cells: CellModel::Calibrated {
                        cells,
                        voltage: *voltage,
                        drift: *drift,
                    },
                    permset,
                    mode: FailureMode::Stochastic,
                    noise: NoiseSource::System,
                    fixed_output: true,
                }
            }
        };
        config.noise = self.noise;
        config.fixed_output = match self.fixed_output {
            0 => false,
            1 => true,
            other => {
                return Err(Error::Parameter(format!(
                    "fixed output must be 0 or 1, got {other}"
                )))
            }
        };
        if self.mode == ModeSpec::Chip {
            if self.chip_words == 0 {
                return Err(Error::Parameter("chip needs at least one word".into()));
            }
            let specs = match &config.cells {
                CellModel::Calibrated { cells, .. } => cells.clone(),
                CellModel::Direct(_) => vec![CellSpec::reliable(); n],
            };
            let chip = sample_chip(&specs, self.chip_words, stage_seed(self.seed, Stage::Chip))?;
            config.mode = FailureMode::Chip(Arc::new(chip));
        }
        Mechanism::new(config)
    }
}

/// Streams used to perturb records, honouring the configured noise source.
pub fn perturb_streams(
    seed: u64,
    noise: NoiseSource,
) -> StageStreams<Box<dyn RngCore>, ChaCha8Rng, Box<dyn RngCore>> {
    let (selector, noise): (Box<dyn RngCore>, Box<dyn RngCore>) = match noise {
        NoiseSource::System => (
            Box::new(stage_rng(seed, Stage::Selector)),
            Box::new(stage_rng(seed, Stage::Noise)),
        ),
        NoiseSource::Lfsr => (
            Box::new(LfsrRng::from_seed_u64(stage_seed(seed, Stage::Selector))),
            Box::new(LfsrRng::from_seed_u64(stage_seed(seed, Stage::Noise))),
        ),
    };
    StageStreams {
        selector,
        failures: stage_rng(seed, Stage::Failures),
        noise,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PerturbedRecord {
    pub input: u32,
    pub output: u32,
    pub pattern_index: usize,
    pub word: usize,
}

/// Perturbs every value; record `m` is stored in slot `m`.
pub fn perturb_dataset(
    mech: &Mechanism,
    values: &[u32],
    seed: u64,
) -> Result<Vec<PerturbedRecord>> {
    let mut streams = perturb_streams(seed, mech.config().noise);
    let width = mech.width() as u32;
    let words = match &mech.config().mode {
        FailureMode::Chip(chip) => chip.words(),
        FailureMode::Stochastic => usize::MAX,
    };
    values
        .iter()
        .enumerate()
        .map(|(slot, &v)| {
            let t = mech.perturb_traced(&encode(v as u64, width)?, slot, &mut streams)?;
            Ok(PerturbedRecord {
                input: v,
                output: decode(&t.output) as u32,
                pattern_index: t.pattern_index,
                word: if words == usize::MAX {
                    slot
                } else {
                    slot % words
                },
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RecoveryMetrics {
    pub count_mse: f64,
    pub tv: f64,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ResultRecord {
    pub epsilon: f64,
    pub z: usize,
    pub ia_mean: f64,
    pub ia_std: f64,
    pub ul_mean: f64,
    pub ul_std: f64,
    /// Mean of the realized `|O − X|`.
    pub realized_l1: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub em: Option<RecoveryMetrics>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub clr: Option<RecoveryMetrics>,
    pub seed: u64,
    /// Wall-clock seconds; kept out of the JSON so reruns are byte-identical.
    #[serde(skip)]
    pub runtime_secs: f64,
}

/// Everything one run produces, before it is written to disk.
#[derive(Clone, Debug)]
pub struct RunOutput {
    pub record: ResultRecord,
    pub records: Vec<PerturbedRecord>,
    pub ia: Vec<f64>,
    pub ul: Vec<f64>,
    pub omega: CandidateSet,
    pub original_counts: Vec<f64>,
    pub perturbed_counts: Vec<f64>,
    pub em: Option<Distribution>,
    pub clr: Option<Distribution>,
    /// Profile given to the recovery algorithms.
    pub recovery_profile: FailureProfile,
}

/// Exact channel of one word: a mixture over shuffle patterns, each failing
/// exactly the bits that land on failed cells.
pub fn word_channel(permset: &PermSet, failed: &[bool]) -> Result<MixtureChannel> {
    permset
        .patterns()
        .iter()
        .zip(permset.weights())
        .map(|(pattern, &w)| {
            let f = (0..failed.len())
                .map(|i| failed[pattern.destination_of(i)] as u8 as f64)
                .collect();
            Ok((w, FailureProfile::new(f)?))
        })
        .collect()
}

fn recovery_profiles(
    mech: &Mechanism,
    cfg: &ExperimentConfig,
) -> Result<(FailureProfile, Option<Vec<MixtureChannel>>)> {
    let FailureMode::Chip(chip) = &mech.config().mode else {
        return Ok((mech.profile().clone(), None));
    };
    let permset = &mech.config().permset;
    let maps = (0..chip.words())
        .map(|w| match &mech.config().cells {
            CellModel::Calibrated { voltage, drift, .. } if *drift == 1.0 => {
                chip.fault_map(w, *voltage)
            }
            CellModel::Calibrated { voltage, drift, .. } => {
                chip.fault_map_drifted(w, *voltage, *drift)
            }
            CellModel::Direct(p) => chip.fault_map_at_probs(w, p),
        })
        .collect::<Result<Vec<_>>>()?;
    let n = mech.width();
    let mut fraction = vec![0.0; n];
    for map in &maps {
        for (acc, &f) in fraction.iter_mut().zip(map.failed()) {
            *acc += f as u8 as f64;
        }
    }
    fraction.iter_mut().for_each(|v| *v /= maps.len() as f64);
    let average = effective_f(permset, &fraction)?;
    let per_word = match cfg.chip_recovery {
        ChipRecovery::Average => None,
        ChipRecovery::PerWord => Some(
            maps.iter()
                .map(|m| word_channel(permset, m.failed()))
                .collect::<Result<Vec<_>>>()?,
        ),
    };
    Ok((average, per_word))
}

fn summarize(
    values: &[u32],
    records: Vec<PerturbedRecord>,
    true_profile: &FailureProfile,
    recovery_profile: FailureProfile,
    per_word: Option<Vec<MixtureChannel>>,
    cfg: &ExperimentConfig,
    started: Instant,
) -> Result<RunOutput> {
    let width = cfg.width;
    let omega = CandidateSet::full(width)?;
    let observations: Vec<Word> = records
        .iter()
        .map(|r| encode(r.output as u64, width))
        .collect::<Result<_>>()?;
    let ia = observations
        .iter()
        .map(|o| ia_k1(o, &recovery_profile))
        .collect::<Result<Vec<_>>>()?;
    let ul = values
        .iter()
        .map(|&v| ul_meter(&encode(v as u64, width)?, true_profile))
        .collect::<Result<Vec<_>>>()?;
    let original_counts = histogram(values, &omega);
    let perturbed_counts = histogram(
        &records.iter().map(|r| r.output).collect::<Vec<_>>(),
        &omega,
    );
    let truth = Distribution::empirical(values, &omega)?;
    let metrics = |d: &Distribution, iterations, converged| RecoveryMetrics {
        count_mse: count_mse(&original_counts, d),
        tv: total_variation(d.probs(), truth.probs()),
        iterations,
        converged,
    };

    let (mut em, mut em_metrics, mut clr, mut clr_metrics) = (None, None, None, None);
    if cfg.recovery.contains(&Algo::Em) {
        let out = match &per_word {
            Some(profiles) => {
                let assignment: Vec<usize> = records.iter().map(|r| r.word).collect();
                em_recover_per_source(&observations, profiles, &assignment, &omega, &cfg.em)?
            }
            None => em_recover(&observations, &recovery_profile, &omega, &cfg.em)?,
        };
        em_metrics = Some(metrics(&out.distribution, out.iterations, out.converged));
        em = Some(out.distribution);
    }
    if cfg.recovery.contains(&Algo::Clr) {
        let out = clr_recover(
            &observations,
            &recovery_profile,
            &omega,
            &MomentConstraints::none(),
        )?;
        clr_metrics = Some(metrics(&out.distribution, out.iterations, out.converged));
        clr = Some(out.distribution);
    }

    let (ia_mean, ia_std) = mean_std(&ia);
    let (ul_mean, ul_std) = mean_std(&ul);
    let realized: Vec<f64> = records
        .iter()
        .map(|r| (r.output as f64 - r.input as f64).abs())
        .collect();
    let record = ResultRecord {
        epsilon: epsilon_inf(true_profile),
        z: true_profile.failure_prone().len(),
        ia_mean,
        ia_std,
        ul_mean,
        ul_std,
        realized_l1: mean_std(&realized).0,
        em: em_metrics,
        clr: clr_metrics,
        seed: cfg.seed,
        runtime_secs: started.elapsed().as_secs_f64(),
    };
    Ok(RunOutput {
        record,
        records,
        ia,
        ul,
        omega,
        original_counts,
        perturbed_counts,
        em,
        clr,
        recovery_profile,
    })
}

/// Generate or load data, perturb it, measure IA/UL and reconstruct.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunOutput> {
    let started = Instant::now();
    let values = cfg.load_dataset()?;
    let mech = cfg.mechanism()?;
    let records = perturb_dataset(&mech, &values, cfg.seed)?;
    let (recovery_profile, per_word) = recovery_profiles(&mech, cfg)?;
    summarize(
        &values,
        records,
        mech.profile(),
        recovery_profile,
        per_word,
        cfg,
        started,
    )
}

#[derive(Clone, Debug)]
pub struct CompareOutput {
    pub sram: RunOutput,
    pub rr: RunOutput,
    /// TV distance between the two arms' output histograms.
    pub output_tv: f64,
    /// Largest TV distance between the arms' per-bit output marginals.
    pub bit_tv: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CompareReport {
    pub sram_dp: ResultRecord,
    pub rr: ResultRecord,
    pub output_tv: f64,
    pub bit_tv: f64,
}

/// Runs the configured mechanism and per-bit RR at matching per-bit ε on the
/// same data; RR is recovered with its exact profile.
pub fn compare_rr(cfg: &ExperimentConfig) -> Result<CompareOutput> {
    let sram = run_experiment(cfg)?;
    let started = Instant::now();
    let values = cfg.load_dataset()?;
    let mech = cfg.mechanism()?;
    let profile = mech.profile().clone();
    let rr = BitwiseRr::matching(&profile)?;
    let mut rng = stage_rng(cfg.seed, Stage::Rr);
    let records = values
        .iter()
        .enumerate()
        .map(|(slot, &v)| {
            let o = rr.perturb(&encode(v as u64, cfg.width)?, &mut rng)?;
            Ok(PerturbedRecord {
                input: v,
                output: o.value(),
                pattern_index: 0,
                word: slot,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut rr_cfg = cfg.clone();
    rr_cfg.chip_recovery = ChipRecovery::Average;
    let rr = summarize(
        &values,
        records,
        &profile,
        profile.clone(),
        None,
        &rr_cfg,
        started,
    )?;
    let total: f64 = values.len() as f64;
    let a: Vec<f64> = sram.perturbed_counts.iter().map(|c| c / total).collect();
    let b: Vec<f64> = rr.perturbed_counts.iter().map(|c| c / total).collect();
    let output_tv = total_variation(&a, &b);
    let bit_tv = (0..cfg.width)
        .map(|k| {
            let ones = |run: &RunOutput| {
                run.records
                    .iter()
                    .filter(|r| r.output >> (cfg.width - 1 - k) & 1 == 1)
                    .count() as f64
                    / total
            };
            (ones(&sram) - ones(&rr)).abs()
        })
        .fold(0.0, f64::max);
    Ok(CompareOutput {
        sram,
        rr,
        output_tv,
        bit_tv,
    })
}

impl CompareOutput {
    pub fn report(&self) -> CompareReport {
        CompareReport {
            sram_dp: self.sram.record.clone(),
            rr: self.rr.record.clone(),
            output_tv: self.output_tv,
            bit_tv: self.bit_tv,
        }
    }
}

/// Reads one non-negative integer per line (first column of a CSV; a
/// non-numeric header line is skipped).
pub fn read_values(path: &Path) -> Result<Vec<u32>> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Parameter(format!("{}: {e}", path.display())))?;
    parse_values(&text, None)
}

/// Parses integers from CSV text, taking column `column` by header name or
/// the first column.
pub fn parse_values(text: &str, column: Option<&str>) -> Result<Vec<u32>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(text.as_bytes());
    let mut out = Vec::new();
    let mut col = 0usize;
    for (line, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| Error::Parameter(format!("CSV: {e}")))?;
        if rec.iter().all(|f| f.trim().is_empty()) {
            continue;
        }
        if line == 0 && rec.get(0).is_some_and(|f| f.trim().parse::<u32>().is_err()) {
            if let Some(name) = column {
                col = rec.iter().position(|h| h.trim() == name).ok_or_else(|| {
                    Error::Parameter(format!("CSV header has no column {name:?}"))
                })?;
            }
            continue;
        }
        let field = rec.get(col).unwrap_or("").trim();
        out.push(field.parse().map_err(|_| {
            Error::Parameter(format!("line {}: not an integer: {field:?}", line + 1))
        })?);
    }
    Ok(out)
}

pub fn records_csv(records: &[PerturbedRecord]) -> String {
    let mut s = String::from("input,output,pattern_index\n");
    for r in records {
        s.push_str(&format!("{},{},{}\n", r.input, r.output, r.pattern_index));
    }
    s
}

fn fmt_prob(p: Option<&Distribution>, i: usize) -> String {
    p.map(|d| format!("{:.12}", d.probs()[i]))
        .unwrap_or_default()
}

impl RunOutput {
    /// Per-record metrics: `index,input,output,pattern_index,word,ia,ul`.
    pub fn detail_csv(&self) -> String {
        let mut s = String::from("index,input,output,pattern_index,word,ia,ul\n");
        for (i, r) in self.records.iter().enumerate() {
            s.push_str(&format!(
                "{},{},{},{},{},{:.12},{:.12}\n",
                i, r.input, r.output, r.pattern_index, r.word, self.ia[i], self.ul[i]
            ));
        }
        s
    }

    /// Counts for original and perturbed data; recovered estimates as
    /// probabilities.
    pub fn histogram_csv(&self) -> String {
        let mut s = String::from("value,original,perturbed,em,clr\n");
        for (i, v) in self.omega.values().iter().enumerate() {
            s.push_str(&format!(
                "{},{},{},{},{}\n",
                v,
                self.original_counts[i],
                self.perturbed_counts[i],
                fmt_prob(self.em.as_ref(), i),
                fmt_prob(self.clr.as_ref(), i)
            ));
        }
        s
    }

    pub fn write_artifacts(&self, dir: &Path, prefix: &str) -> std::io::Result<Vec<PathBuf>> {
        let json = serde_json::to_string_pretty(&self.record).expect("serializable record") + "\n";
        write_all_or_nothing(
            dir,
            &[
                (format!("{prefix}records.csv"), self.detail_csv()),
                (format!("{prefix}histogram.csv"), self.histogram_csv()),
                (format!("{prefix}result.json"), json),
            ],
        )
    }
}

/// Writes every file or, on the first failure, removes those already written.
pub fn write_all_or_nothing(
    dir: &Path,
    files: &[(String, String)],
) -> std::io::Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    for (name, content) in files {
        let path = dir.join(name);
        if let Err(e) = fs::write(&path, content) {
            for p in &written {
                let _ = fs::remove_file(p);
            }
            return Err(e);
        }
        written.push(path);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn epsilon_parsing() {
        assert!(("ln3".parse::<Epsilon>().unwrap().0 - 3f64.ln()).abs() < 1e-15);
        assert!(("ln(3)".parse::<Epsilon>().unwrap().0 - 3f64.ln()).abs() < 1e-15);
        assert_eq!("1.49".parse::<Epsilon>().unwrap().0, 1.49);
        assert!("-1".parse::<Epsilon>().is_err());
        assert!("lnx".parse::<Epsilon>().is_err());
        let e: Epsilon = serde_json::from_str("\"ln3\"").unwrap();
        assert!((e.0 - 3f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn gaussian_dataset() {
        let a = gen_gaussian(125.0, 20.0, 1000, 8, (0, 255), 1).unwrap();
        assert_eq!(a.len(), 1000);
        let mean = a.iter().map(|&v| v as f64).sum::<f64>() / 1000.0;
        assert!((mean - 125.0).abs() < 2.0, "{mean}");
        assert_eq!(a, gen_gaussian(125.0, 20.0, 1000, 8, (0, 255), 1).unwrap());
        assert!(gen_gaussian(125.0, 0.0, 50, 8, (0, 255), 1)
            .unwrap()
            .iter()
            .all(|&v| v == 125));
        assert!(gen_gaussian(125.0, 20.0, 10, 8, (0, 256), 1).is_err());
        assert!(gen_gaussian(125.0, 20.0, 10, 8, (10, 5), 1).is_err());
        let clipped = gen_gaussian(0.0, 50.0, 500, 8, (10, 20), 3).unwrap();
        assert!(clipped.iter().all(|&v| (10..=20).contains(&v)));
    }

    #[test]
    fn grid_dataset() {
        let pts = gen_grid(500, 4);
        assert_eq!(pts.len(), 500);
        assert!(pts.iter().all(|&(x, y)| x < 256 && y < 256));
        assert_eq!(pts, gen_grid(500, 4));
    }

    #[test]
    fn named_patterns() {
        let eps = 3f64.ln();
        let f1 = named_pattern(PatternName::F1, eps).unwrap();
        let f = f_for_epsilon(eps, 3).unwrap();
        assert!((f - 0.82).abs() < 0.005);
        assert_eq!(f1.as_slice(), &[0.0, 0.0, 0.0, 0.0, 0.0, f, f, f]);
        let f3 = named_pattern(PatternName::F3, eps).unwrap();
        let mut mirrored = f1.as_slice().to_vec();
        mirrored.reverse();
        assert_eq!(f3.as_slice(), mirrored.as_slice());
        assert_eq!(
            named_pattern(PatternName::F2, eps).unwrap().as_slice(),
            &[0.0, 0.0, f, f, f, 0.0, 0.0, 0.0]
        );
        assert!((epsilon_inf(&f1) - epsilon_inf(&f3)).abs() < 1e-15);
        assert!((epsilon_inf(&f1) - eps).abs() < 1e-12);
        assert!(matches!(
            "F4".parse::<PatternName>(),
            Err(Error::UnknownPattern(_))
        ));
    }

    #[test]
    fn stage_streams_differ() {
        let a = stage_seed(7, Stage::Selector);
        let b = stage_seed(7, Stage::Noise);
        assert_ne!(a, b);
        assert_eq!(a, stage_seed(7, Stage::Selector));
    }

    #[test]
    fn failure_spec_json_forms() {
        let p: FailureSpec = serde_json::from_str(r#"{"pattern":"F1","epsilon":"ln3"}"#).unwrap();
        assert!(matches!(
            p,
            FailureSpec::Pattern {
                pattern: PatternName::F1,
                ..
            }
        ));
        let f: FailureSpec = serde_json::from_str(r#"{"f":[0,0,0,0,0,0.5,0.5,0.5]}"#).unwrap();
        assert!(matches!(f, FailureSpec::Profile { .. }));
        let v: FailureSpec = serde_json::from_str(r#"{"voltage":0.5}"#).unwrap();
        assert!(matches!(v, FailureSpec::Voltage { drift, .. } if drift == 1.0));
        assert!(serde_json::from_str::<FailureSpec>(r#"{"f":[0.5],"voltage":0.5}"#).is_err());
    }

    #[test]
    fn zero_failure_run_is_lossless() {
        let mut cfg = ExperimentConfig::new(FailureSpec::Profile { f: vec![0.0; 8] });
        cfg.recovery = vec![Algo::Em, Algo::Clr];
        cfg.dataset = DatasetSpec::Gaussian {
            mean: 125.0,
            std: 20.0,
            count: 300,
            clip: None,
        };
        let out = run_experiment(&cfg).unwrap();
        assert_eq!(out.record.ia_mean, 0.0);
        assert_eq!(out.record.ul_mean, 0.0);
        assert!(out.record.em.as_ref().unwrap().count_mse < 1e-20);
        assert!(out.record.clr.as_ref().unwrap().count_mse < 1e-6);
        assert!(out.records.iter().all(|r| r.input == r.output));
    }

    #[test]
    fn runs_are_deterministic() {
        let mut cfg = ExperimentConfig::new(FailureSpec::Voltage {
            voltage: 0.5,
            failure_prone: None,
            cell: None,
            permset: None,
            drift: 1.0,
        });
        cfg.seed = 42;
        cfg.dataset = DatasetSpec::Gaussian {
            mean: 125.0,
            std: 20.0,
            count: 200,
            clip: None,
        };
        for mode in [ModeSpec::Stochastic, ModeSpec::Chip] {
            cfg.mode = mode;
            let a = run_experiment(&cfg).unwrap();
            let b = run_experiment(&cfg).unwrap();
            assert_eq!(a.detail_csv(), b.detail_csv());
            assert_eq!(a.histogram_csv(), b.histogram_csv());
            assert_eq!(
                serde_json::to_string(&a.record).unwrap(),
                serde_json::to_string(&b.record).unwrap()
            );
        }
    }

    #[test]
    fn lfsr_noise_source_runs() {
        let mut cfg = ExperimentConfig::new(FailureSpec::Voltage {
            voltage: 0.5,
            failure_prone: None,
            cell: None,
            permset: None,
            drift: 1.0,
        });
        cfg.noise = NoiseSource::Lfsr;
        cfg.dataset = DatasetSpec::Gaussian {
            mean: 125.0,
            std: 20.0,
            count: 2000,
            clip: None,
        };
        let out = run_experiment(&cfg).unwrap();
        let counts = out.records.iter().fold([0usize; 4], |mut acc, r| {
            acc[r.pattern_index] += 1;
            acc
        });
        assert!(counts.iter().all(|&c| c > 400), "{counts:?}");
    }

    #[test]
    fn histograms_sum_to_count() {
        let mut cfg = ExperimentConfig::new(FailureSpec::Pattern {
            pattern: PatternName::F2,
            epsilon: Epsilon(3f64.ln()),
        });
        cfg.recovery = vec![Algo::Em, Algo::Clr];
        let out = run_experiment(&cfg).unwrap();
        assert_eq!(out.original_counts.iter().sum::<f64>(), 1000.0);
        assert_eq!(out.perturbed_counts.iter().sum::<f64>(), 1000.0);
        for d in [out.em.as_ref().unwrap(), out.clr.as_ref().unwrap()] {
            assert!((d.probs().iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn compare_with_zero_failures() {
        let mut cfg = ExperimentConfig::new(FailureSpec::Profile { f: vec![0.0; 8] });
        cfg.dataset = DatasetSpec::Gaussian {
            mean: 125.0,
            std: 20.0,
            count: 200,
            clip: None,
        };
        let out = compare_rr(&cfg).unwrap();
        for r in [&out.sram.record, &out.rr.record] {
            assert_eq!(r.ul_mean, 0.0);
            assert_eq!(r.realized_l1, 0.0);
            assert!(r.em.as_ref().unwrap().count_mse < 1e-20);
        }
        assert_eq!(out.output_tv, 0.0);
        assert_eq!(out.bit_tv, 0.0);
    }

    #[test]
    fn value_parsing() {
        assert_eq!(
            parse_values("value\n1\n2\n\n3\n", None).unwrap(),
            vec![1, 2, 3]
        );
        assert_eq!(
            parse_values("input,output,pattern_index\n1,5,0\n2,6,3\n", Some("output")).unwrap(),
            vec![5, 6]
        );
        assert!(parse_values("1\nx\n", None).is_err());
        assert!(parse_values("a,b\n1,2\n", Some("c")).is_err());
    }

    #[test]
    fn artifacts_written_together() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = ExperimentConfig::new(FailureSpec::Pattern {
            pattern: PatternName::F1,
            epsilon: Epsilon(1.0),
        });
        let out = run_experiment(&cfg).unwrap();
        let files = out.write_artifacts(dir.path(), "").unwrap();
        assert_eq!(files.len(), 3);
        let json: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(&files[2]).unwrap()).unwrap();
        assert!(json.get("runtime_secs").is_none());
        assert_eq!(json["z"], 3);
    }
}

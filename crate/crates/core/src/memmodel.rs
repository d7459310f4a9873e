//! Voltage-dependent SRAM cell failure models.
//!
//! A [`CellSpec`] carries tabulated (voltage, failure probability) points and
//! is interpolated piecewise-linearly. A [`ChipInstance`] fixes a critical
//! voltage per cell so that a cell fails at `V` iff `V < V_crit`, which gives
//! fault inclusion for free.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bitcodec::{ensure_width, Word};
use crate::error::{Error, Result};

pub const RELIABLE_KIND: &str = "reliable";

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalPoint {
    pub voltage: f64,
    pub failure: f64,
}

/// Transistor sizing metadata: width and length in µm, mismatch constant A_VT in V·µm.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sizing {
    pub w: f64,
    pub l: f64,
    pub a_vt: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CellSpecRepr")]
pub struct CellSpec {
    kind: String,
    calibration: Vec<CalPoint>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    sizing: Option<Sizing>,
}

#[derive(Deserialize)]
struct CellSpecRepr {
    kind: String,
    #[serde(default)]
    calibration: Vec<CalPoint>,
    #[serde(default)]
    sizing: Option<Sizing>,
}

impl TryFrom<CellSpecRepr> for CellSpec {
    type Error = Error;
    fn try_from(r: CellSpecRepr) -> Result<Self> {
        let mut spec = CellSpec::new(r.kind, r.calibration)?;
        spec.sizing = r.sizing;
        Ok(spec)
    }
}

/// 45 nm 6T cell, failure probability at 0.50..0.60 V.
const SIX_T_TABLE: [(f64, f64); 7] = [
    (0.50, 0.8157),
    (0.55, 0.7057),
    (0.56, 0.6831),
    (0.57, 0.6615),
    (0.58, 0.6409),
    (0.59, 0.6203),
    (0.60, 0.6026),
];

impl CellSpec {
    /// Points are sorted by voltage. Failure probabilities must strictly
    /// decrease with voltage, except for the `reliable` kind which is zero
    /// everywhere and may omit calibration entirely.
    pub fn new(kind: impl Into<String>, mut calibration: Vec<CalPoint>) -> Result<CellSpec> {
        let kind = kind.into();
        for p in &calibration {
            if !(p.voltage.is_finite() && p.voltage > 0.0) {
                return Err(Error::Calibration(format!(
                    "non-positive voltage {}",
                    p.voltage
                )));
            }
            if !(0.0..=1.0).contains(&p.failure) {
                return Err(Error::Calibration(format!(
                    "failure probability {} outside [0, 1]",
                    p.failure
                )));
            }
        }
        calibration.sort_by(|a, b| a.voltage.total_cmp(&b.voltage));
        if kind == RELIABLE_KIND {
            if calibration.iter().any(|p| p.failure != 0.0) {
                return Err(Error::Calibration(
                    "reliable cells must have zero failure probability".into(),
                ));
            }
        } else {
            if calibration.is_empty() {
                return Err(Error::Calibration(format!(
                    "cell kind {kind:?} has no calibration points"
                )));
            }
            for pair in calibration.windows(2) {
                if pair[0].voltage == pair[1].voltage {
                    return Err(Error::Calibration(format!(
                        "duplicate voltage {}",
                        pair[0].voltage
                    )));
                }
                if pair[1].failure >= pair[0].failure {
                    return Err(Error::Calibration(format!(
                        "failure probability must decrease with voltage ({} V: {}, {} V: {})",
                        pair[0].voltage, pair[0].failure, pair[1].voltage, pair[1].failure
                    )));
                }
            }
        }
        Ok(CellSpec {
            kind,
            calibration,
            sizing: None,
        })
    }

    pub fn six_t() -> CellSpec {
        let points = SIX_T_TABLE
            .iter()
            .map(|&(voltage, failure)| CalPoint { voltage, failure })
            .collect();
        CellSpec::new("6T-C61", points).expect("valid table")
    }

    /// Cell that never fails at any voltage.
    pub fn reliable() -> CellSpec {
        CellSpec {
            kind: RELIABLE_KIND.into(),
            calibration: Vec::new(),
            sizing: None,
        }
    }

    pub fn with_sizing(mut self, sizing: Sizing) -> CellSpec {
        self.sizing = Some(sizing);
        self
    }

    pub fn kind(&self) -> &str {
        &self.kind
    }

    pub fn calibration(&self) -> &[CalPoint] {
        &self.calibration
    }

    pub fn sizing(&self) -> Option<Sizing> {
        self.sizing
    }

    pub fn is_reliable(&self) -> bool {
        self.kind == RELIABLE_KIND
    }

    /// Calibrated voltage range; `None` for reliable cells (any voltage).
    pub fn voltage_range(&self) -> Option<(f64, f64)> {
        if self.is_reliable() {
            return None;
        }
        Some((
            self.calibration[0].voltage,
            self.calibration[self.calibration.len() - 1].voltage,
        ))
    }

    pub fn supports(&self, voltage: f64) -> bool {
        match self.voltage_range() {
            None => voltage > 0.0,
            Some((lo, hi)) => (lo..=hi).contains(&voltage),
        }
    }

    /// Survival function of V_crit: below the table the lowest-voltage value
    /// is held, above it the last segment's slope is continued down to zero.
    fn survival(&self, voltage: f64) -> f64 {
        if self.is_reliable() {
            return 0.0;
        }
        let pts = &self.calibration;
        let first = pts[0];
        let last = pts[pts.len() - 1];
        if voltage <= first.voltage {
            return first.failure;
        }
        if voltage >= last.voltage {
            if pts.len() < 2 {
                return last.failure;
            }
            let prev = pts[pts.len() - 2];
            let slope = (prev.failure - last.failure) / (last.voltage - prev.voltage);
            return (last.failure - slope * (voltage - last.voltage)).max(0.0);
        }
        let i = pts.partition_point(|p| p.voltage <= voltage);
        let (a, b) = (pts[i - 1], pts[i]);
        if voltage == a.voltage {
            return a.failure;
        }
        let t = (voltage - a.voltage) / (b.voltage - a.voltage);
        a.failure + t * (b.failure - a.failure)
    }

    /// Critical voltage for the cell whose failure quantile is `u`: the cell
    /// fails exactly at voltages below the returned value.
    fn critical_voltage(&self, u: f64) -> f64 {
        if self.is_reliable() {
            return 0.0;
        }
        let pts = &self.calibration;
        let first = pts[0];
        let last = pts[pts.len() - 1];
        if u >= first.failure {
            return 0.0;
        }
        if u < last.failure {
            if pts.len() < 2 {
                return f64::INFINITY;
            }
            let prev = pts[pts.len() - 2];
            let slope = (prev.failure - last.failure) / (last.voltage - prev.voltage);
            return last.voltage + (last.failure - u) / slope;
        }
        // first.failure > u >= last.failure
        let i = pts.partition_point(|p| p.failure > u);
        let (a, b) = (pts[i - 1], pts[i]);
        if u == b.failure {
            return b.voltage;
        }
        a.voltage + (a.failure - u) / (a.failure - b.failure) * (b.voltage - a.voltage)
    }
}

/// Failure probability at `voltage`: exact at calibration points, linear in
/// between, refused outside the calibrated range.
pub fn failure_rate_at(spec: &CellSpec, voltage: f64) -> Result<f64> {
    if let Some((min, max)) = spec.voltage_range() {
        if !(min..=max).contains(&voltage) {
            return Err(Error::Voltage { voltage, min, max });
        }
    } else if !(voltage > 0.0 && voltage.is_finite()) {
        return Err(Error::Voltage {
            voltage,
            min: 0.0,
            max: f64::INFINITY,
        });
    }
    Ok(spec.survival(voltage))
}

/// Failure probability with a multiplicative drift factor, clamped to [0, 1].
pub fn drifted_failure_rate(spec: &CellSpec, voltage: f64, alpha: f64) -> Result<f64> {
    check_alpha(alpha)?;
    Ok((alpha * failure_rate_at(spec, voltage)?).clamp(0.0, 1.0))
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha.is_finite() && alpha > 0.0) {
        return Err(Error::Parameter(format!(
            "drift factor {alpha} must be positive"
        )));
    }
    Ok(())
}

/// Voltage in the calibrated range whose failure probability is closest to `f`.
pub fn voltage_for_failure(spec: &CellSpec, f: f64) -> Option<f64> {
    let (lo, hi) = spec.voltage_range()?;
    let f_lo = spec.survival(lo);
    let f_hi = spec.survival(hi);
    if f >= f_lo {
        Some(lo)
    } else if f <= f_hi {
        Some(hi)
    } else {
        Some(spec.critical_voltage(f))
    }
}

/// Threshold-voltage standard deviation from device area (Pelgrom scaling).
pub fn sigma_vth(a_vt: f64, w: f64, l: f64) -> Result<f64> {
    if !(a_vt > 0.0 && w > 0.0 && l > 0.0) {
        return Err(Error::Parameter(format!(
            "A_VT, W and L must be positive (got {a_vt}, {w}, {l})"
        )));
    }
    Ok(a_vt / (w * l).sqrt())
}

/// Failed cells of one word.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct FaultMap {
    failed: Vec<bool>,
    z: usize,
}

impl FaultMap {
    pub fn new(failed: Vec<bool>) -> FaultMap {
        let z = failed.iter().filter(|&&f| f).count();
        FaultMap { failed, z }
    }

    pub fn failed(&self) -> &[bool] {
        &self.failed
    }

    pub fn z(&self) -> usize {
        self.z
    }

    pub fn is_subset_of(&self, other: &FaultMap) -> bool {
        self.failed.len() == other.failed.len()
            && self
                .failed
                .iter()
                .zip(&other.failed)
                .all(|(&a, &b)| !a || b)
    }
}

/// A fabricated chip: one critical voltage per cell, fixed at sampling time.
#[derive(Clone, Debug, PartialEq)]
pub struct ChipInstance {
    words: usize,
    specs: Vec<CellSpec>,
    quantiles: Vec<f64>,
    v_crit: Vec<f64>,
    seed: u64,
}

/// Draw a chip. Each cell gets a uniform quantile `u` and
/// `V_crit = S⁻¹(u)`, so `P(V_crit > V) = failure_rate_at(spec, V)`.
pub fn sample_chip(specs: &[CellSpec], words: usize, seed: u64) -> Result<ChipInstance> {
    if words == 0 || specs.is_empty() {
        return Err(Error::Parameter("chip geometry must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = specs.len();
    let quantiles: Vec<f64> = (0..words * n).map(|_| rng.random::<f64>()).collect();
    let v_crit = quantiles
        .iter()
        .enumerate()
        .map(|(c, &u)| specs[c % n].critical_voltage(u))
        .collect();
    Ok(ChipInstance {
        words,
        specs: specs.to_vec(),
        quantiles,
        v_crit,
        seed,
    })
}

impl ChipInstance {
    pub fn words(&self) -> usize {
        self.words
    }

    pub fn width(&self) -> usize {
        self.specs.len()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn specs(&self) -> &[CellSpec] {
        &self.specs
    }

    pub fn v_crit(&self, word: usize, cell: usize) -> f64 {
        self.v_crit[word * self.width() + cell]
    }

    fn check(&self, word: usize, voltage: f64) -> Result<()> {
        if word >= self.words {
            return Err(Error::WordIndex {
                index: word,
                words: self.words,
            });
        }
        for spec in &self.specs {
            failure_rate_at(spec, voltage)?;
        }
        Ok(())
    }

    /// Cells of `word` that fail at `voltage`.
    pub fn fault_map(&self, word: usize, voltage: f64) -> Result<FaultMap> {
        self.check(word, voltage)?;
        let n = self.width();
        Ok(FaultMap::new(
            (0..n)
                .map(|k| voltage < self.v_crit[word * n + k])
                .collect(),
        ))
    }

    /// Fault map when every cell's failure probability is scaled by `alpha`
    /// (clamped to 1). Cells keep their quantile, so inclusion across
    /// voltages still holds.
    pub fn fault_map_drifted(&self, word: usize, voltage: f64, alpha: f64) -> Result<FaultMap> {
        self.check(word, voltage)?;
        check_alpha(alpha)?;
        let n = self.width();
        Ok(FaultMap::new(
            (0..n)
                .map(|k| {
                    let p = (alpha * self.specs[k].survival(voltage)).min(1.0);
                    self.quantiles[word * n + k] < p
                })
                .collect(),
        ))
    }

    /// Fault map against explicit per-cell failure probabilities, ignoring
    /// the calibration curves.
    pub fn fault_map_at_probs(&self, word: usize, probs: &[f64]) -> Result<FaultMap> {
        if word >= self.words {
            return Err(Error::WordIndex {
                index: word,
                words: self.words,
            });
        }
        let n = self.width();
        if probs.len() != n {
            return Err(Error::WidthMismatch {
                expected: n,
                got: probs.len(),
            });
        }
        Ok(FaultMap::new(
            (0..n)
                .map(|k| self.quantiles[word * n + k] < probs[k])
                .collect(),
        ))
    }

    /// Realized fraction of failing words per cell position at `voltage`.
    pub fn failure_fraction(&self, voltage: f64) -> Result<Vec<f64>> {
        let n = self.width();
        let mut counts = vec![0usize; n];
        for word in 0..self.words {
            for (c, &f) in counts
                .iter_mut()
                .zip(self.fault_map(word, voltage)?.failed())
            {
                *c += f as usize;
            }
        }
        Ok(counts
            .into_iter()
            .map(|c| c as f64 / self.words as f64)
            .collect())
    }

    pub fn dump(&self, voltage: f64) -> Result<FaultMapDump> {
        let words = (0..self.words)
            .map(|w| {
                Ok(self
                    .fault_map(w, voltage)?
                    .failed()
                    .iter()
                    .map(|&f| f as u8)
                    .collect())
            })
            .collect::<Result<_>>()?;
        Ok(FaultMapDump { voltage, words })
    }
}

/// Raw readout without noise injection: failed cells return `fixed_output`.
pub fn read_raw(
    chip: &ChipInstance,
    word: usize,
    stored: &Word,
    voltage: f64,
    fixed_output: bool,
) -> Result<Word> {
    ensure_width(stored, chip.width())?;
    let map = chip.fault_map(word, voltage)?;
    Ok(apply_fixed_output(stored, &map, fixed_output))
}

pub(crate) fn apply_fixed_output(stored: &Word, map: &FaultMap, fixed_output: bool) -> Word {
    map.failed()
        .iter()
        .enumerate()
        .filter(|(_, &f)| f)
        .fold(*stored, |w, (k, _)| w.with_bit(k, fixed_output))
}

/// Serialized fault maps of a whole chip at one voltage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FaultMapDump {
    pub voltage: f64,
    pub words: Vec<Vec<u8>>,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lsb_chip_specs() -> Vec<CellSpec> {
        let mut specs = vec![CellSpec::reliable(); 4];
        specs.extend(vec![CellSpec::six_t(); 4]);
        specs
    }

    #[test]
    fn table_values_exact() {
        let six_t = CellSpec::six_t();
        assert_eq!(failure_rate_at(&six_t, 0.50).unwrap(), 0.8157);
        assert_eq!(failure_rate_at(&six_t, 0.60).unwrap(), 0.6026);
        for &(v, f) in &SIX_T_TABLE {
            assert_eq!(failure_rate_at(&six_t, v).unwrap(), f);
        }
        assert_eq!(failure_rate_at(&CellSpec::reliable(), 0.50).unwrap(), 0.0);
    }

    #[test]
    fn interpolation_between_points() {
        let six_t = CellSpec::six_t();
        let mid = failure_rate_at(&six_t, 0.525).unwrap();
        assert!((mid - (0.8157 + 0.7057) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn out_of_range_voltage_refused() {
        let six_t = CellSpec::six_t();
        assert!(matches!(
            failure_rate_at(&six_t, 0.49),
            Err(Error::Voltage { .. })
        ));
        assert!(matches!(
            failure_rate_at(&six_t, 1.0),
            Err(Error::Voltage { .. })
        ));
        assert!(failure_rate_at(&CellSpec::reliable(), 1.0).is_ok());
    }

    #[test]
    fn calibration_validation() {
        let pts = |v: &[(f64, f64)]| {
            v.iter()
                .map(|&(voltage, failure)| CalPoint { voltage, failure })
                .collect()
        };
        assert!(CellSpec::new("x", pts(&[(0.5, 0.5), (0.6, 0.6)])).is_err());
        assert!(CellSpec::new("x", pts(&[(0.5, 0.5), (0.6, 0.5)])).is_err());
        assert!(CellSpec::new("x", pts(&[(0.5, 1.5)])).is_err());
        assert!(CellSpec::new("x", pts(&[(-0.5, 0.5)])).is_err());
        assert!(CellSpec::new("x", vec![]).is_err());
        assert!(CellSpec::new(RELIABLE_KIND, pts(&[(0.5, 0.1)])).is_err());
        // unsorted input is accepted and sorted
        let s = CellSpec::new("x", pts(&[(0.6, 0.2), (0.5, 0.4)])).unwrap();
        assert_eq!(s.calibration()[0].voltage, 0.5);
    }

    #[test]
    fn cell_spec_json() {
        let json = r#"{"kind":"6T-C61","calibration":[{"voltage":0.5,"failure":0.8},{"voltage":0.6,"failure":0.6}],
                      "sizing":{"w":0.1,"l":0.05,"a_vt":0.002}}"#;
        let spec: CellSpec = serde_json::from_str(json).unwrap();
        assert_eq!(spec.calibration().len(), 2);
        assert!(spec.sizing().is_some());
        let bad = r#"{"kind":"x","calibration":[{"voltage":0.5,"failure":0.5},{"voltage":0.6,"failure":0.7}]}"#;
        assert!(serde_json::from_str::<CellSpec>(bad).is_err());
        let reliable: CellSpec = serde_json::from_str(r#"{"kind":"reliable"}"#).unwrap();
        assert!(reliable.is_reliable());
    }

    #[test]
    fn sigma_vth_scaling() {
        let a = 0.0025;
        assert_eq!(sigma_vth(a, 1.0, 1.0).unwrap(), a);
        let base = sigma_vth(a, 0.2, 0.1).unwrap();
        assert!((sigma_vth(a, 0.4, 0.2).unwrap() - base / 2.0).abs() < 1e-15);
        assert!((sigma_vth(a, 0.8, 0.1).unwrap() - base / 2.0).abs() < 1e-15);
        assert!(sigma_vth(0.0, 1.0, 1.0).is_err());
        assert!(sigma_vth(a, -1.0, 1.0).is_err());
    }

    #[test]
    fn critical_voltage_inverts_survival() {
        let six_t = CellSpec::six_t();
        for i in 1..100 {
            let u = 0.6026 + (0.8157 - 0.6026) * i as f64 / 100.0;
            let v = six_t.critical_voltage(u);
            assert!((six_t.survival(v) - u).abs() < 1e-12, "u={u}");
        }
        assert_eq!(six_t.critical_voltage(0.9), 0.0);
        assert!(six_t.critical_voltage(0.1) > 0.60);
        assert!(six_t.critical_voltage(0.0) < 1.0);
    }

    #[test]
    fn reliable_cells_never_fail() {
        let chip = sample_chip(&lsb_chip_specs(), 200, 3).unwrap();
        for w in 0..200 {
            for k in 0..4 {
                assert!(chip.v_crit(w, k) < 0.5);
            }
            let map = chip.fault_map(w, 0.5).unwrap();
            assert!(map.failed()[..4].iter().all(|&f| !f));
        }
    }

    #[test]
    fn chip_failure_fraction_matches_table() {
        let chip = sample_chip(&[CellSpec::six_t()], 10_000, 11).unwrap();
        let frac = chip.failure_fraction(0.50).unwrap()[0];
        assert!((frac - 0.8157).abs() < 0.02, "{frac}");
    }

    #[test]
    fn chip_sampling_is_deterministic() {
        let a = sample_chip(&lsb_chip_specs(), 64, 9).unwrap();
        let b = sample_chip(&lsb_chip_specs(), 64, 9).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, sample_chip(&lsb_chip_specs(), 64, 10).unwrap());
    }

    #[test]
    fn fault_map_errors_and_edges() {
        let chip = sample_chip(&lsb_chip_specs(), 8, 1).unwrap();
        assert!(matches!(
            chip.fault_map(8, 0.5),
            Err(Error::WordIndex { .. })
        ));
        assert!(matches!(
            chip.fault_map(0, 0.45),
            Err(Error::Voltage { .. })
        ));
        let rel = sample_chip(&vec![CellSpec::reliable(); 3], 4, 1).unwrap();
        assert_eq!(rel.fault_map(0, 0.9).unwrap().z(), 0);
    }

    #[test]
    fn fault_map_z_counts_failures() {
        let chip = sample_chip(&lsb_chip_specs(), 32, 5).unwrap();
        for w in 0..32 {
            let m = chip.fault_map(w, 0.5).unwrap();
            assert_eq!(m.z(), m.failed().iter().filter(|&&f| f).count());
        }
    }

    #[test]
    fn read_raw_fixed_output() {
        let chip = sample_chip(&lsb_chip_specs(), 16, 2).unwrap();
        let stored: Word = "10100000".parse().unwrap();
        for w in 0..16 {
            let map = chip.fault_map(w, 0.5).unwrap();
            let out = read_raw(&chip, w, &stored, 0.5, true).unwrap();
            for k in 0..8 {
                if map.failed()[k] {
                    assert!(out.bit(k));
                } else {
                    assert_eq!(out.bit(k), stored.bit(k));
                }
            }
            let zeros = read_raw(&chip, w, &"11111111".parse().unwrap(), 0.5, false).unwrap();
            assert_eq!(zeros.value().count_ones() as usize, 8 - map.z());
        }
        let all_fail = sample_chip(&vec![CellSpec::six_t(); 4], 1, 0).unwrap();
        let map = all_fail.fault_map_at_probs(0, &[1.0; 4]).unwrap();
        assert_eq!(
            apply_fixed_output(&"0000".parse().unwrap(), &map, true).to_string(),
            "1111"
        );
        let none_fail = sample_chip(&vec![CellSpec::reliable(); 8], 1, 0).unwrap();
        assert_eq!(read_raw(&none_fail, 0, &stored, 0.5, true).unwrap(), stored);
    }

    #[test]
    fn dump_has_shape() {
        let chip = sample_chip(&lsb_chip_specs(), 5, 2).unwrap();
        let dump = chip.dump(0.55).unwrap();
        assert_eq!(dump.words.len(), 5);
        assert!(dump.words.iter().all(|w| w.len() == 8));
        let json = serde_json::to_string(&dump).unwrap();
        assert!(json.starts_with("{\"voltage\":0.55,\"words\":[["));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]

            #[test]
            fn fault_inclusion(seed in any::<u64>(), a in 0.50f64..=0.60, b in 0.50f64..=0.60) {
                let chip = sample_chip(&lsb_chip_specs(), 16, seed).unwrap();
                let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
                for w in 0..16 {
                    let at_hi = chip.fault_map(w, hi).unwrap();
                    let at_lo = chip.fault_map(w, lo).unwrap();
                    prop_assert!(at_hi.is_subset_of(&at_lo));
                }
            }

            #[test]
            fn fault_inclusion_under_drift(seed in any::<u64>(), a in 0.50f64..=0.60, b in 0.50f64..=0.60, alpha in 0.5f64..2.0) {
                let chip = sample_chip(&lsb_chip_specs(), 16, seed).unwrap();
                let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
                for w in 0..16 {
                    let at_hi = chip.fault_map_drifted(w, hi, alpha).unwrap();
                    let at_lo = chip.fault_map_drifted(w, lo, alpha).unwrap();
                    prop_assert!(at_hi.is_subset_of(&at_lo));
                }
            }

            #[test]
            fn failure_rate_monotone(a in 0.50f64..=0.60, b in 0.50f64..=0.60) {
                let six_t = CellSpec::six_t();
                let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
                prop_assert!(failure_rate_at(&six_t, hi).unwrap() <= failure_rate_at(&six_t, lo).unwrap());
            }

            #[test]
            fn drift_stays_in_unit_interval(v in 0.50f64..=0.60, alpha in 0.01f64..5.0) {
                let p = drifted_failure_rate(&CellSpec::six_t(), v, alpha).unwrap();
                prop_assert!((0.0..=1.0).contains(&p));
            }
        }
    }
}

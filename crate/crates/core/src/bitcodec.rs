//! Fixed-width bit strings, bit-shuffle patterns and the LFSR selector.
//!
//! Bit positions are always counted MSB-first: position 0 is the most
//! significant bit of a word and position `width - 1` the least significant.

use std::fmt;
use std::str::FromStr;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAX_WIDTH: u32 = 32;

/// A fixed-width unsigned bit string.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Word {
    width: u32,
    value: u32,
}

fn check_width(width: u32) -> Result<()> {
    if width == 0 || width > MAX_WIDTH {
        return Err(Error::Width(width));
    }
    Ok(())
}

fn mask(width: u32) -> u64 {
    (1u64 << width) - 1
}

impl Word {
    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn value(&self) -> u32 {
        self.value
    }

    /// Bit at MSB-first `position`.
    pub fn bit(&self, position: usize) -> bool {
        debug_assert!(position < self.width as usize);
        (self.value >> (self.width as usize - 1 - position)) & 1 == 1
    }

    /// Bits in MSB-first order.
    pub fn bits(&self) -> Vec<bool> {
        (0..self.width as usize).map(|i| self.bit(i)).collect()
    }

    pub fn from_bits(bits: &[bool]) -> Result<Word> {
        check_width(bits.len() as u32)?;
        let value = bits.iter().fold(0u32, |acc, &b| (acc << 1) | b as u32);
        Ok(Word {
            width: bits.len() as u32,
            value,
        })
    }

    pub fn with_bit(self, position: usize, bit: bool) -> Word {
        let shift = self.width as usize - 1 - position;
        let value = (self.value & !(1 << shift)) | ((bit as u32) << shift);
        Word { value, ..self }
    }

    /// Positions (MSB-first) where the two words differ.
    pub fn xor(&self, other: &Word) -> Result<u32> {
        ensure_width(self, other.width as usize)?;
        Ok(self.value ^ other.value)
    }
}

pub(crate) fn ensure_width(word: &Word, expected: usize) -> Result<()> {
    if word.width as usize != expected {
        return Err(Error::WidthMismatch {
            expected,
            got: word.width as usize,
        });
    }
    Ok(())
}

impl fmt::Display for Word {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for b in self.bits() {
            f.write_str(if b { "1" } else { "0" })?;
        }
        Ok(())
    }
}

impl FromStr for Word {
    type Err = Error;

    fn from_str(s: &str) -> Result<Word> {
        let bits = s
            .chars()
            .map(|c| match c {
                '0' => Ok(false),
                '1' => Ok(true),
                other => Err(Error::Parameter(format!("invalid bit character {other:?}"))),
            })
            .collect::<Result<Vec<_>>>()?;
        Word::from_bits(&bits)
    }
}

/// MSB-first binary representation of `value` on `width` bits.
pub fn encode(value: u64, width: u32) -> Result<Word> {
    check_width(width)?;
    if value > mask(width) {
        return Err(Error::Range { value, width });
    }
    Ok(Word {
        width,
        value: value as u32,
    })
}

pub fn decode(word: &Word) -> u64 {
    word.value as u64
}

/// A bit-shuffle pattern. `map()[d]` is the source position whose bit is
/// placed at destination position `d`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct PermPattern {
    map: Vec<usize>,
}

impl PermPattern {
    pub fn new(map: Vec<usize>) -> Result<PermPattern> {
        let n = map.len();
        check_width(n as u32).map_err(|_| Error::Pattern(format!("length {n} not in 1..=32")))?;
        let mut seen = vec![false; n];
        for &src in &map {
            if src >= n || seen[src] {
                return Err(Error::Pattern(format!(
                    "{map:?} is not a permutation of 0..{n}"
                )));
            }
            seen[src] = true;
        }
        Ok(PermPattern { map })
    }

    pub fn identity(width: usize) -> Result<PermPattern> {
        PermPattern::new((0..width).collect())
    }

    pub fn width(&self) -> usize {
        self.map.len()
    }

    pub fn map(&self) -> &[usize] {
        &self.map
    }

    /// Destination position of the bit at source position `src`.
    pub fn destination_of(&self, src: usize) -> usize {
        self.map
            .iter()
            .position(|&s| s == src)
            .expect("bijective map")
    }
}

impl TryFrom<Vec<usize>> for PermPattern {
    type Error = Error;
    fn try_from(map: Vec<usize>) -> Result<Self> {
        PermPattern::new(map)
    }
}

impl From<PermPattern> for Vec<usize> {
    fn from(p: PermPattern) -> Vec<usize> {
        p.map
    }
}

/// Shuffle: output bit at `d` is the input bit at `pattern.map()[d]`.
pub fn apply_permutation(word: &Word, pattern: &PermPattern) -> Result<Word> {
    ensure_width(word, pattern.width())?;
    let mut out = *word;
    for (d, &src) in pattern.map.iter().enumerate() {
        out = out.with_bit(d, word.bit(src));
    }
    Ok(out)
}

/// Reshuffle: undoes [`apply_permutation`] for the same pattern.
pub fn invert_permutation(word: &Word, pattern: &PermPattern) -> Result<Word> {
    ensure_width(word, pattern.width())?;
    let mut out = *word;
    for (d, &src) in pattern.map.iter().enumerate() {
        out = out.with_bit(src, word.bit(d));
    }
    Ok(out)
}

/// The four shuffle patterns of the reference 8-bit design. All of them keep
/// the four MSBs in place and permute the four LSBs among the failure-prone
/// cells.
pub fn default_patterns() -> [PermPattern; 4] {
    [
        PermPattern {
            map: vec![0, 1, 2, 3, 4, 5, 6, 7],
        },
        PermPattern {
            map: vec![0, 1, 2, 3, 5, 4, 7, 6],
        },
        PermPattern {
            map: vec![0, 1, 2, 3, 6, 7, 4, 5],
        },
        PermPattern {
            map: vec![0, 1, 2, 3, 7, 6, 5, 4],
        },
    ]
}

#[derive(Serialize, Deserialize)]
struct PermSetRepr {
    width: usize,
    patterns: Vec<PermPattern>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    weights: Option<Vec<f64>>,
}

/// A weighted set of shuffle patterns of a common width.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PermSetRepr", into = "PermSetRepr")]
pub struct PermSet {
    width: usize,
    patterns: Vec<PermPattern>,
    weights: Vec<f64>,
}

impl PermSet {
    pub fn new(patterns: Vec<PermPattern>, weights: Vec<f64>) -> Result<PermSet> {
        let width = patterns
            .first()
            .ok_or_else(|| Error::Pattern("empty pattern set".into()))?
            .width();
        if let Some(p) = patterns.iter().find(|p| p.width() != width) {
            return Err(Error::WidthMismatch {
                expected: width,
                got: p.width(),
            });
        }
        if weights.len() != patterns.len() {
            return Err(Error::Weights(format!(
                "{} weights for {} patterns",
                weights.len(),
                patterns.len()
            )));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::Weights(
                "weights must be finite and non-negative".into(),
            ));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::Weights(format!("weights sum to {total}, not 1")));
        }
        Ok(PermSet {
            width,
            patterns,
            weights,
        })
    }

    pub fn uniform(patterns: Vec<PermPattern>) -> Result<PermSet> {
        let m = patterns.len().max(1);
        PermSet::new(patterns, vec![1.0 / m as f64; m])
    }

    /// Identity-only set: bit `i` is always stored in cell `i`.
    pub fn identity(width: usize) -> Result<PermSet> {
        PermSet::uniform(vec![PermPattern::identity(width)?])
    }

    /// π1..π4 selected uniformly, as driven by a 2-bit selector.
    pub fn default_8bit() -> PermSet {
        PermSet::uniform(default_patterns().to_vec()).expect("valid default set")
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn patterns(&self) -> &[PermPattern] {
        &self.patterns
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// `m[i][k]`: probability that the bit at source position `i` is stored in cell `k`.
    pub fn mapping_matrix(&self) -> Vec<Vec<f64>> {
        let n = self.width;
        let mut m = vec![vec![0.0; n]; n];
        for (pattern, &w) in self.patterns.iter().zip(&self.weights) {
            for (cell, &src) in pattern.map.iter().enumerate() {
                m[src][cell] += w;
            }
        }
        m
    }

    /// Draw a pattern index. A uniform set with a power-of-two size consumes
    /// exactly `log2(m)` raw bits, mirroring a hardware selector.
    pub fn select<R: RngCore + ?Sized>(&self, rng: &mut R) -> usize {
        let m = self.patterns.len();
        if m == 1 {
            return 0;
        }
        let uniform = self.weights.iter().all(|&w| w == self.weights[0]);
        if uniform && m.is_power_of_two() {
            return (rng.next_u32() as usize) & (m - 1);
        }
        let u = (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64;
        let mut acc = 0.0;
        for (j, &w) in self.weights.iter().enumerate() {
            acc += w;
            if u < acc {
                return j;
            }
        }
        self.weights.iter().rposition(|&w| w > 0.0).unwrap_or(m - 1)
    }
}

impl TryFrom<PermSetRepr> for PermSet {
    type Error = Error;
    fn try_from(r: PermSetRepr) -> Result<Self> {
        let set = match r.weights {
            Some(w) => PermSet::new(r.patterns, w)?,
            None => PermSet::uniform(r.patterns)?,
        };
        if set.width != r.width {
            return Err(Error::WidthMismatch {
                expected: r.width,
                got: set.width,
            });
        }
        Ok(set)
    }
}

impl From<PermSet> for PermSetRepr {
    fn from(s: PermSet) -> Self {
        PermSetRepr {
            width: s.width,
            patterns: s.patterns,
            weights: Some(s.weights),
        }
    }
}

/// Galois feedback masks giving maximal period `2^w - 1`, indexed by width.
const MAXIMAL_TAPS: [u32; 31] = [
    0x3, 0x6, 0xC, 0x14, 0x30, 0x60, 0xB8, 0x110, 0x240, 0x500, 0x829, 0x100D, 0x2015, 0x6000,
    0xD008, 0x12000, 0x20400, 0x40023, 0x90000, 0x140000, 0x300000, 0x420000, 0xE10000, 0x1200000,
    0x2000023, 0x4000013, 0x9000000, 0x14000000, 0x20000029, 0x48000000, 0x80200003,
];

pub fn maximal_taps(width: u32) -> Result<u32> {
    if !(2..=32).contains(&width) {
        return Err(Error::LfsrWidth(width));
    }
    Ok(MAXIMAL_TAPS[width as usize - 2])
}

/// Galois LFSR state. Advancing returns a new state.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LfsrState {
    register: u32,
    width: u32,
    taps: u32,
}

impl LfsrState {
    pub fn new(width: u32, seed: u32) -> Result<LfsrState> {
        let taps = maximal_taps(width)?;
        LfsrState::with_taps(width, taps, seed)
    }

    pub fn with_taps(width: u32, taps: u32, seed: u32) -> Result<LfsrState> {
        if !(2..=32).contains(&width) {
            return Err(Error::LfsrWidth(width));
        }
        let register = (seed as u64 & mask(width)) as u32;
        if register == 0 {
            return Err(Error::ZeroSeed);
        }
        Ok(LfsrState {
            register,
            width,
            taps,
        })
    }

    pub fn register(&self) -> u32 {
        self.register
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn period_bound(&self) -> u64 {
        mask(self.width)
    }

    fn step(&mut self) -> bool {
        let out = self.register & 1 == 1;
        self.register >>= 1;
        if out {
            self.register ^= self.taps;
        }
        out
    }
}

/// Next `nbits` output bits (first output at the MSB of the returned word).
pub fn lfsr_next(state: &LfsrState, nbits: u32) -> Result<(Word, LfsrState)> {
    check_width(nbits)?;
    let mut next = *state;
    let bits: Vec<bool> = (0..nbits).map(|_| next.step()).collect();
    Ok((Word::from_bits(&bits)?, next))
}

/// An LFSR wrapped as a random source, for driving pattern selection and
/// noise injection the way the hardware generator does.
#[derive(Clone, Debug)]
pub struct LfsrRng {
    state: LfsrState,
}

impl LfsrRng {
    pub fn new(state: LfsrState) -> LfsrRng {
        LfsrRng { state }
    }

    /// 32-bit register seeded from an arbitrary value; zero maps to 1.
    pub fn from_seed_u64(seed: u64) -> LfsrRng {
        let folded = (seed ^ (seed >> 32)) as u32;
        let state =
            LfsrState::new(32, if folded == 0 { 1 } else { folded }).expect("non-zero seed");
        LfsrRng { state }
    }

    pub fn state(&self) -> LfsrState {
        self.state
    }
}

impl RngCore for LfsrRng {
    fn next_u32(&mut self) -> u32 {
        (0..32).fold(0u32, |acc, _| (acc << 1) | self.state.step() as u32)
    }

    fn next_u64(&mut self) -> u64 {
        ((self.next_u32() as u64) << 32) | self.next_u32() as u64
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        for b in dst {
            *b = (0..8).fold(0u8, |acc, _| (acc << 1) | self.state.step() as u8);
        }
    }
}

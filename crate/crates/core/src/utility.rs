//! Utility analytics: the exact distribution of `ΔA = O − X`, the expected
//! l1 loss, its homogeneous closed-form bound, and the UL meter.

use crate::bitcodec::{ensure_width, Word};
use crate::error::{Error, Result};
use crate::mechanism::{channel_prob_raw, FailureProfile};

pub const PMF_MAX_WIDTH: usize = 20;
pub const BRUTE_FORCE_MAX_WIDTH: usize = 12;
pub const UL_MAX_WIDTH: usize = 16;

/// PMF of `ΔA` on `{−2^n + 1, …, 2^n − 1}`.
#[derive(Clone, Debug, PartialEq)]
pub struct DeltaPmf {
    width: usize,
    probs: Vec<f64>,
}

impl DeltaPmf {
    pub fn width(&self) -> usize {
        self.width
    }

    fn offset(&self) -> i64 {
        (1i64 << self.width) - 1
    }

    pub fn min_delta(&self) -> i64 {
        -self.offset()
    }

    pub fn max_delta(&self) -> i64 {
        self.offset()
    }

    pub fn prob(&self, a: i64) -> f64 {
        let idx = a + self.offset();
        if idx < 0 || idx as usize >= self.probs.len() {
            return 0.0;
        }
        self.probs[idx as usize]
    }

    /// `(a, P(ΔA = a))` in increasing `a`.
    pub fn iter(&self) -> impl Iterator<Item = (i64, f64)> + '_ {
        let off = self.offset();
        self.probs
            .iter()
            .enumerate()
            .map(move |(i, &p)| (i as i64 - off, p))
    }

    pub fn total(&self) -> f64 {
        self.probs.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.iter().map(|(a, p)| a as f64 * p).sum()
    }

    pub fn expected_abs(&self) -> f64 {
        self.iter().map(|(a, p)| a.unsigned_abs() as f64 * p).sum()
    }

    pub fn total_variation(&self, other: &DeltaPmf) -> f64 {
        0.5 * self
            .probs
            .iter()
            .zip(&other.probs)
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
    }
}

fn guard(f: &FailureProfile, limit: usize) -> Result<()> {
    if f.width() > limit {
        return Err(Error::SizeGuard {
            what: "width",
            size: f.width(),
            limit,
        });
    }
    Ok(())
}

/// Exact PMF by the three-term recursion over bit positions, starting at the
/// LSB: bit `k` contributes `±2^k` with probability `f_k / 4` each.
pub fn delta_pmf(f: &FailureProfile) -> Result<DeltaPmf> {
    guard(f, PMF_MAX_WIDTH)?;
    let n = f.width();
    let size = (1usize << (n + 1)) - 1;
    let center = (1usize << n) - 1;
    let mut cur = vec![0.0; size];
    cur[center] = 1.0;
    // Gathering both neighbours in one commutative sum keeps S(a) and S(-a)
    // bitwise equal. The support after k+1 steps is |a| <= 2^(k+1) - 1.
    for (k, &fk) in f.lsb_first().iter().enumerate() {
        let step = 1usize << k;
        let reach = (step << 1) - 1;
        let (side, stay) = (fk / 4.0, 1.0 - fk / 2.0);
        let at = |i: isize| {
            if i >= 0 && (i as usize) < size {
                cur[i as usize]
            } else {
                0.0
            }
        };
        let mut next = vec![0.0; size];
        for a in (center - reach)..=(center + reach) {
            let ai = a as isize;
            next[a] = stay * cur[a] + side * (at(ai - step as isize) + at(ai + step as isize));
        }
        cur = next;
    }
    Ok(DeltaPmf {
        width: n,
        probs: cur,
    })
}

/// Enumerates every `(Δa_{n−1}, …, Δa_0) ∈ {−1, 0, 1}^n`.
pub fn delta_pmf_bruteforce(f: &FailureProfile) -> Result<DeltaPmf> {
    guard(f, BRUTE_FORCE_MAX_WIDTH)?;
    let n = f.width();
    let lsb = f.lsb_first();
    let center = (1i64 << n) - 1;
    let mut probs = vec![0.0; (1usize << (n + 1)) - 1];
    let total = 3usize.pow(n as u32);
    for mut code in 0..total {
        let mut delta = 0i64;
        let mut p = 1.0;
        for (i, &fi) in lsb.iter().enumerate() {
            let digit = code % 3;
            code /= 3;
            let (d, q) = match digit {
                0 => (0, 1.0 - fi / 2.0),
                1 => (1, fi / 4.0),
                _ => (-1, fi / 4.0),
            };
            delta += d << i;
            p *= q;
        }
        probs[(delta + center) as usize] += p;
    }
    Ok(DeltaPmf { width: n, probs })
}

/// `E|O − X|` for uniformly distributed input bits.
pub fn expected_l1(f: &FailureProfile) -> Result<f64> {
    Ok(delta_pmf(f)?.expected_abs())
}

/// `(4^n − 2^n) · ((1 − f/2)^{n+1} − (f/4)^{n+1}) / (1 − 3f/4)`.
pub fn l1_bound_homogeneous(f: f64, n: usize) -> Result<f64> {
    if !(0.0..=1.0).contains(&f) {
        return Err(Error::Probability(f));
    }
    if n == 0 || n > 60 {
        return Err(Error::Width(n as u32));
    }
    let n_i = n as i32;
    let lead = 4f64.powi(n_i) - 2f64.powi(n_i);
    let tail = (1.0 - f / 2.0).powi(n_i + 1) - (f / 4.0).powi(n_i + 1);
    Ok(lead * tail / (1.0 - 0.75 * f))
}

/// `Σ_O P(O | x) · |O − x|`, summed exactly over the reachable outputs.
pub fn ul_meter(x: &Word, f: &FailureProfile) -> Result<f64> {
    ensure_width(x, f.width())?;
    guard(f, UL_MAX_WIDTH)?;
    let n = f.width();
    let prone = f.failure_prone();
    let xv = x.value();
    let mut ul = 0.0;
    for combo in 0u32..1 << prone.len() {
        let flip = prone
            .iter()
            .enumerate()
            .filter(|(j, _)| combo >> j & 1 == 1)
            .fold(0u32, |m, (_, &i)| m | 1 << (n - 1 - i));
        let o = xv ^ flip;
        ul += channel_prob_raw(xv, o, f.as_slice()) * (o as f64 - xv as f64).abs();
    }
    Ok(ul)
}

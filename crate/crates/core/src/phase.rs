//! Discrete reflection-coefficient alphabets and projections onto them.
//!
//! With Q phase bits the alphabet is F = { e^{j 2 pi z / Z} : z = 0..Z-1 },
//! Z = 2^Q. Alphabet members are materialized once and selected by index, so
//! "discrete" vectors are bitwise members of the table (axis-aligned entries
//! are snapped to exact 0 / +-1 components).

use crate::error::{Error, Result};
use crate::{C64, CVec};

/// Hard cap on enumeration work, Z^N <= 2^20 by default.
pub const DEFAULT_ENUMERATION_BUDGET: u64 = 1 << 20;

/// How the entries of a reflection vector are constrained.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PhaseMode {
    /// Entries from the 2^q-point alphabet.
    Discrete { q_bits: u32 },
    /// Entries anywhere in the closed unit disc (used while relaxing).
    Relaxed,
}

/// A reflection-coefficient vector tagged with its constraint mode.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseVector {
    pub v: CVec,
    pub mode: PhaseMode,
}

impl PhaseVector {
    pub fn discrete(v: CVec, q_bits: u32) -> Result<Self> {
        let table = alphabet(q_bits)?;
        for (i, z) in v.iter().enumerate() {
            if !table.iter().any(|a| a == z) {
                return Err(Error::InvalidParameter(format!(
                    "entry {i} = {z} is not an alphabet member for q = {q_bits}"
                )));
            }
        }
        Ok(Self {
            v,
            mode: PhaseMode::Discrete { q_bits },
        })
    }

    #[must_use]
    pub fn relaxed(v: CVec) -> Self {
        Self {
            v,
            mode: PhaseMode::Relaxed,
        }
    }

    /// [1; v], the augmented vector applied to composite channels.
    #[must_use]
    pub fn augmented(&self) -> CVec {
        let mut t = CVec::zeros(self.v.len() + 1);
        t[0] = C64::new(1.0, 0.0);
        t.rows_mut(1, self.v.len()).copy_from(&self.v);
        t
    }
}

/// The Z = 2^q alphabet, index z holding e^{j 2 pi z / Z}.
pub fn alphabet(q_bits: u32) -> Result<Vec<C64>> {
    if q_bits == 0 || q_bits > 20 {
        return Err(Error::InvalidParameter(format!(
            "phase bits must be in 1..=20, got {q_bits}"
        )));
    }
    let z_count = 1u64 << q_bits;
    let mut table = Vec::with_capacity(z_count as usize);
    for z in 0..z_count {
        let ang = std::f64::consts::TAU * z as f64 / z_count as f64;
        let (mut re, mut im) = (ang.cos(), ang.sin());
        // snap axis-aligned members so Q=1 really is {1, -1}
        for v in [&mut re, &mut im] {
            if v.abs() < 1e-15 {
                *v = 0.0;
            } else if (v.abs() - 1.0).abs() < 1e-15 {
                *v = v.signum();
            }
        }
        table.push(C64::new(re, im));
    }
    Ok(table)
}

/// Index of the alphabet member nearest to `x` in Euclidean distance.
/// Exact ties resolve to the lower phase index.
#[must_use]
pub fn nearest_index(x: C64, table: &[C64]) -> usize {
    let mut best = 0usize;
    let mut best_score = f64::NEG_INFINITY;
    for (z, a) in table.iter().enumerate() {
        // |x - a|^2 = |x|^2 + 1 - 2 Re{x a^*}; maximizing the inner product
        // minimizes the distance
        let score = (x * a.conj()).re;
        if score > best_score {
            best_score = score;
            best = z;
        }
    }
    best
}

/// Projects every entry of `x` onto the alphabet.
pub fn project_to_alphabet(x: &CVec, q_bits: u32) -> Result<CVec> {
    let table = alphabet(q_bits)?;
    Ok(CVec::from_fn(x.len(), |i, _| table[nearest_index(x[i], &table)]))
}

/// Checks an enumeration request Z^N against `budget`, returning the count.
pub fn enumeration_count(q_bits: u32, n: usize, budget: u64) -> Result<u64> {
    let z = 1u64 << q_bits;
    let mut total: u64 = 1;
    for _ in 0..n {
        total = total
            .checked_mul(z)
            .filter(|&t| t <= budget)
            .ok_or_else(|| {
                Error::BudgetExceeded(format!(
                    "Z^N = {z}^{n} exceeds the enumeration budget {budget}"
                ))
            })?;
    }
    Ok(total)
}

/// Writes the `idx`-th configuration (base-Z digits, element 0 least
/// significant) into `out`.
pub fn configuration(idx: u64, table: &[C64], out: &mut [C64]) {
    let z = table.len() as u64;
    let mut rem = idx;
    for slot in out.iter_mut() {
        *slot = table[(rem % z) as usize];
        rem /= z;
    }
}

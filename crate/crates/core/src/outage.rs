//! Outage analytics for the estimated downlink.
//!
//! With maximum-ratio transmission at power p over an estimated composite
//! channel H_bar whose estimation error is zero-mean Gaussian with
//! quadratic-form matrix V_bar, the received signal power is a scaled
//! noncentral chi-square variable with 2 degrees of freedom. Everything the
//! outage probability depends on collapses into two scalars,
//!
//!   s1 = v~^H V_bar v~   (error variance along the reflection pattern),
//!   s2 = ||H_bar^H v~||^2 (mean signal power),
//!
//! and the outage at SINR target eta and noise sigma2 is
//!
//!   C(p) = P( 2 eta sigma2 / (p s1) | 2 dof, noncentrality 2 s2 / s1 ).
//!
//! This module provides the Marcum Q / noncentral chi-square machinery, the
//! closed form, the minimum-power bisection on it, a Monte-Carlo outage
//! estimator for arbitrary multiuser precoders, and the (s1, s2) region
//! sweep over the discrete pattern alphabet.

use rayon::prelude::*;
use statrs::function::erf::erfc;
use statrs::function::gamma::{gamma_ur, ln_gamma};

use crate::error::{Error, Result};
use crate::phase::{self, PhaseVector};
use crate::rng::{derive_seed, sample_cn01, stream};
use crate::training::ErrorModel;
use crate::{C64, CMat, CVec};

/// Per-user quality-of-service targets, all in linear units.
#[derive(Debug, Clone, Copy)]
pub struct OutageSpec {
    /// SINR target (linear).
    pub eta: f64,
    /// Outage probability target, in (0, 1).
    pub epsilon: f64,
    /// Receiver noise power (Watts).
    pub sigma2: f64,
}

impl OutageSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0) {
            return Err(Error::InvalidParameter("eta must be positive".into()));
        }
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(Error::InvalidParameter(
                "epsilon must lie strictly between 0 and 1".into(),
            ));
        }
        if !(self.sigma2 > 0.0) {
            return Err(Error::InvalidParameter("sigma2 must be positive".into()));
        }
        Ok(())
    }
}

/// Above this the series start index overflows sensible windows; the normal
/// approximation is accurate to ~1.6e-4 absolute, far below the outage
/// tolerances used at such arguments.
const MARCUM_NORMAL_SWITCH: f64 = 2e7;

/// First-order Marcum Q function, absolute accuracy better than 1e-10 for
/// a, b <= 50.
///
/// Evaluated as a Poisson mixture of upper regularized gamma functions,
/// summed over a window around the Poisson mode so that no term under- or
/// overflows: Q1(a,b) = sum_j pmf(j; a^2/2) * Q(j+1, b^2/2).
pub fn marcum_q1(a: f64, b: f64) -> Result<f64> {
    if !(a >= 0.0) || !(b >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "marcum_q1 needs nonnegative arguments, got ({a}, {b})"
        )));
    }
    if b == 0.0 {
        return Ok(1.0);
    }
    let x = 0.5 * a * a;
    let y = 0.5 * b * b;
    if a == 0.0 {
        return Ok((-y).exp());
    }
    if x > MARCUM_NORMAL_SWITCH {
        return Ok(0.5 * erfc((b - a) / std::f64::consts::SQRT_2));
    }
    let j0 = x.floor();
    let window = (10.0 * x.sqrt()).ceil() + 30.0;
    let lo = (j0 - window).max(0.0) as u64;
    let hi = (j0 + window) as u64;
    let j0 = j0 as u64;
    // Poisson pmf at the mode, in log space to survive large x
    let ln_pi0 = j0 as f64 * x.ln() - x - ln_gamma(j0 as f64 + 1.0);
    let pi0 = ln_pi0.exp();
    let mut sum = pi0 * gamma_ur(j0 as f64 + 1.0, y);
    let mut pi = pi0;
    for j in (j0 + 1)..=hi {
        pi *= x / j as f64;
        if pi < 1e-18 {
            break;
        }
        sum += pi * gamma_ur(j as f64 + 1.0, y);
    }
    pi = pi0;
    for j in (lo..j0).rev() {
        pi *= (j + 1) as f64 / x;
        if pi < 1e-18 {
            break;
        }
        sum += pi * gamma_ur(j as f64 + 1.0, y);
    }
    Ok(sum.clamp(0.0, 1.0))
}

/// CDF of the noncentral chi-square distribution with 2 degrees of freedom,
/// P(x | 2, lambda) = 1 - Q1(sqrt(lambda), sqrt(x)).
pub fn noncentral_chi2_cdf_2dof(x: f64, lambda: f64) -> Result<f64> {
    if !(x >= 0.0) || !(lambda >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "noncentral chi-square needs nonnegative arguments, got ({x}, {lambda})"
        )));
    }
    Ok(1.0 - marcum_q1(lambda.sqrt(), x.sqrt())?)
}

/// The two scalars the closed-form outage depends on, plus the power they
/// were evaluated at.
#[derive(Debug, Clone, Copy)]
pub struct SignalStats {
    /// Mean signal power term s2 = ||H_bar^H v~||^2.
    pub msp: f64,
    /// Error variance term s1 = v~^H V_bar v~.
    pub variance_term: f64,
    /// Transmit power (Watts).
    pub p: f64,
}

/// Computes signal statistics for an augmented reflection vector [1; v].
pub fn signal_stats_aug(
    v_aug: &CVec,
    h_bar: &CMat,
    em: &ErrorModel,
    p: f64,
) -> Result<SignalStats> {
    if v_aug.len() != h_bar.nrows() || v_aug.len() != em.v_bar.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "augmented vector length {} vs channel rows {} vs error model {}",
            v_aug.len(),
            h_bar.nrows(),
            em.v_bar.nrows()
        )));
    }
    for (i, z) in v_aug.iter().enumerate() {
        if z.norm() > 1.0 + 1e-9 {
            return Err(Error::InvalidParameter(format!(
                "reflection amplitude {} at entry {i} exceeds 1",
                z.norm()
            )));
        }
    }
    Ok(SignalStats {
        msp: (h_bar.adjoint() * v_aug).norm_squared(),
        variance_term: em.quad_form(v_aug),
        p,
    })
}

/// Computes signal statistics for a phase vector.
pub fn signal_stats(v: &PhaseVector, h_bar: &CMat, em: &ErrorModel, p: f64) -> Result<SignalStats> {
    signal_stats_aug(&v.augmented(), h_bar, em, p)
}

/// Variance ratios below 1e-14 are treated as a deterministic channel.
const DEGENERATE_VARIANCE_RATIO: f64 = 1e14;

fn is_degenerate(s1: f64, s2: f64) -> bool {
    s1 <= 0.0 || s1 * DEGENERATE_VARIANCE_RATIO <= s2
}

/// Closed-form outage probability from precomputed scalars.
pub fn outage_from_stats(s1: f64, s2: f64, p: f64, spec: &OutageSpec) -> Result<f64> {
    spec.validate()?;
    if !(p > 0.0) {
        return Err(Error::InvalidParameter("power must be positive".into()));
    }
    if !(s1 >= 0.0) || !(s2 >= 0.0) {
        return Err(Error::InvalidParameter(
            "signal statistics must be nonnegative".into(),
        ));
    }
    let threshold = spec.eta * spec.sigma2;
    if is_degenerate(s1, s2) {
        // deterministic received power p*s2 against the threshold
        return Ok(if p * s2 < threshold { 1.0 } else { 0.0 });
    }
    noncentral_chi2_cdf_2dof(2.0 * threshold / (p * s1), 2.0 * s2 / s1)
}

/// Closed-form single-user outage under maximum-ratio transmission at
/// power p.
pub fn single_user_outage(
    v: &PhaseVector,
    h_bar: &CMat,
    em: &ErrorModel,
    p: f64,
    spec: &OutageSpec,
) -> Result<f64> {
    let stats = signal_stats(v, h_bar, em, p)?;
    outage_from_stats(stats.variance_term, stats.msp, p, spec)
}

/// Outage of an arbitrary fixed single-user precoder w (no MRT assumption):
/// the received amplitude is CN(v~^H H_bar w, s1 ||w||^2).
pub fn fixed_precoder_outage(
    v_aug: &CVec,
    h_bar: &CMat,
    em: &ErrorModel,
    w: &CVec,
    spec: &OutageSpec,
) -> Result<f64> {
    let s1 = em.quad_form(v_aug);
    let mean = (h_bar.adjoint() * v_aug).dotc(w);
    let scale = s1 * w.norm_squared();
    let threshold = spec.eta * spec.sigma2;
    if is_degenerate(scale, mean.norm_sqr()) {
        return Ok(if mean.norm_sqr() < threshold { 1.0 } else { 0.0 });
    }
    noncentral_chi2_cdf_2dof(2.0 * threshold / scale, 2.0 * mean.norm_sqr() / scale)
}

/// Maximum-ratio transmission precoder at power p for the estimated channel
/// seen through v~.
pub fn mrt_precoder(h_bar: &CMat, v_aug: &CVec, p: f64) -> Result<CVec> {
    if !(p > 0.0) {
        return Err(Error::InvalidParameter("power must be positive".into()));
    }
    let h_eff = h_bar.adjoint() * v_aug;
    let norm = h_eff.norm();
    if norm == 0.0 {
        return Err(Error::Numerical(
            "effective channel is zero; MRT direction undefined".into(),
        ));
    }
    Ok(h_eff.scale(p.sqrt() / norm))
}

/// Bisection controls for minimum-power searches on the closed form.
#[derive(Debug, Clone, Copy)]
pub struct PowerBisection {
    /// Relative width of the final power bracket.
    pub p_delta: f64,
    /// How close the achieved outage must come to epsilon.
    pub eps_delta: f64,
    /// Upper-bracket growth factor.
    pub growth: f64,
    /// Growth attempts before declaring the target unreachable.
    pub max_growth: u32,
    /// Bisection iteration cap.
    pub max_iters: u32,
}

impl Default for PowerBisection {
    fn default() -> Self {
        Self {
            p_delta: 1e-4,
            eps_delta: 1e-3,
            growth: 10.0,
            max_growth: 60,
            max_iters: 200,
        }
    }
}

/// Result of a minimum-power search.
#[derive(Debug, Clone, Copy)]
pub struct PowerSearch {
    /// Smallest power found meeting the outage target (feasible side).
    pub p: f64,
    /// Whether both bracket-width and outage-proximity tolerances were met.
    pub converged: bool,
    pub iterations: u32,
}

/// Minimum transmit power so that the closed-form outage drops to epsilon,
/// as a function of the two signal scalars alone.
pub fn min_power_for_stats(
    s1: f64,
    s2: f64,
    spec: &OutageSpec,
    cfg: &PowerBisection,
) -> Result<PowerSearch> {
    spec.validate()?;
    if !(s1 >= 0.0) || !(s2 >= 0.0) {
        return Err(Error::InvalidParameter(
            "signal statistics must be nonnegative".into(),
        ));
    }
    let threshold = spec.eta * spec.sigma2;
    if s2 <= 0.0 {
        if s1 <= 0.0 {
            return Err(Error::InfeasibleTargets(
                "zero signal and zero variance: outage is 1 at any power".into(),
            ));
        }
        // central case solves in closed form: 1 - exp(-threshold/(p*s1)) <= eps
        let p = threshold / (s1 * (-(1.0 - spec.epsilon).ln()));
        return Ok(PowerSearch {
            p,
            converged: true,
            iterations: 0,
        });
    }
    if is_degenerate(s1, s2) {
        return Ok(PowerSearch {
            p: threshold / s2,
            converged: true,
            iterations: 0,
        });
    }
    let mut p_hi = threshold / s2;
    let mut grown = 0;
    while outage_from_stats(s1, s2, p_hi, spec)? > spec.epsilon {
        p_hi *= cfg.growth;
        grown += 1;
        if grown > cfg.max_growth {
            return Err(Error::InfeasibleTargets(format!(
                "outage stays above {} after {} power growths",
                spec.epsilon, cfg.max_growth
            )));
        }
    }
    let mut p_lo = 0.0;
    let mut iterations = 0;
    let mut converged = false;
    while iterations < cfg.max_iters {
        let width_ok = p_hi - p_lo <= cfg.p_delta * p_hi;
        let outage_ok =
            (outage_from_stats(s1, s2, p_hi, spec)? - spec.epsilon).abs() <= cfg.eps_delta;
        if width_ok && outage_ok {
            converged = true;
            break;
        }
        let mid = 0.5 * (p_lo + p_hi);
        if mid <= p_lo || mid >= p_hi {
            // bracket exhausted at floating-point resolution
            converged = width_ok && outage_ok;
            break;
        }
        if outage_from_stats(s1, s2, mid, spec)? <= spec.epsilon {
            p_hi = mid;
        } else {
            p_lo = mid;
        }
        iterations += 1;
    }
    Ok(PowerSearch {
        p: p_hi,
        converged,
        iterations,
    })
}

/// Monte-Carlo samples are drawn in fixed-size shards so results do not
/// depend on thread count.
const MC_SHARD: usize = 4096;

/// Per-user Monte-Carlo outage estimate with binomial standard error.
///
/// For each sample the true channels are reconstructed as
/// H~_k = H_bar_k - dH_k with dH_k drawn from the error model, and user k is
/// in outage when its SINR under the fixed precoders falls below eta_k.
pub fn mc_outage(
    precoders: &[CVec],
    v_aug: &CVec,
    h_bars: &[CMat],
    em: &ErrorModel,
    specs: &[OutageSpec],
    n_samples: usize,
    seed: u64,
) -> Result<Vec<(f64, f64)>> {
    let k = precoders.len();
    if k == 0 || h_bars.len() != k || specs.len() != k {
        return Err(Error::DimensionMismatch(
            "precoders, channels and specs must agree on the user count".into(),
        ));
    }
    if n_samples < 1000 {
        return Err(Error::InvalidParameter(
            "need at least 1000 Monte-Carlo samples".into(),
        ));
    }
    for spec in specs {
        spec.validate()?;
    }
    let n1 = v_aug.len();
    let m = precoders[0].len();
    for (h, w) in h_bars.iter().zip(precoders) {
        if h.nrows() != n1 || h.ncols() != m || w.len() != m {
            return Err(Error::DimensionMismatch(
                "channel or precoder shape mismatch".into(),
            ));
        }
    }
    if em.v_bar.nrows() != n1 {
        return Err(Error::DimensionMismatch(
            "error model does not match the augmented vector".into(),
        ));
    }
    let n_r = em.sampler.ncols();
    let noise_scale = em.eps2.sqrt() / em.p_u.sqrt();
    let n_shards = n_samples.div_ceil(MC_SHARD);
    let counts: Vec<Vec<u64>> = (0..n_shards)
        .into_par_iter()
        .map(|shard| {
            let mut rng = stream(derive_seed(seed, &[shard as u64]));
            let lo = shard * MC_SHARD;
            let hi = ((shard + 1) * MC_SHARD).min(n_samples);
            let mut exceed = vec![0u64; k];
            let mut noise = CMat::zeros(n_r, m);
            let mut powers = vec![vec![0.0f64; k]; k];
            for _ in lo..hi {
                for (uk, row) in powers.iter_mut().enumerate() {
                    for c in 0..m {
                        for r in 0..n_r {
                            noise[(r, c)] = sample_cn01(&mut rng) * noise_scale;
                        }
                    }
                    let h_tilde = &h_bars[uk] - &em.sampler * &noise;
                    let t = h_tilde.adjoint() * v_aug;
                    for (j, w) in precoders.iter().enumerate() {
                        row[j] = t.dotc(w).norm_sqr();
                    }
                }
                for uk in 0..k {
                    let interference: f64 = (0..k)
                        .filter(|&j| j != uk)
                        .map(|j| powers[uk][j])
                        .sum();
                    let sinr = powers[uk][uk] / (interference + specs[uk].sigma2);
                    if sinr < specs[uk].eta {
                        exceed[uk] += 1;
                    }
                }
            }
            exceed
        })
        .collect();
    let mut totals = vec![0u64; k];
    for shard in &counts {
        for (t, c) in totals.iter_mut().zip(shard) {
            *t += c;
        }
    }
    Ok(totals
        .into_iter()
        .map(|c| {
            let p_hat = c as f64 / n_samples as f64;
            let stderr = (p_hat * (1.0 - p_hat) / n_samples as f64).sqrt();
            (p_hat, stderr)
        })
        .collect())
}

/// One point of the (s1, s2) region sweep.
#[derive(Debug, Clone, Copy)]
pub struct RegionPoint {
    pub s1: f64,
    pub s2: f64,
    /// Minimum power meeting the outage target with this pattern.
    pub p_min: f64,
    pub converged: bool,
}

/// Enumerates every discrete reflection pattern and records its signal
/// scalars together with the minimum power meeting the outage target.
pub fn sweep_msp_variance_region(
    h_bar: &CMat,
    em: &ErrorModel,
    q_bits: u32,
    spec: &OutageSpec,
    cfg: &PowerBisection,
    budget: u64,
) -> Result<Vec<RegionPoint>> {
    let n = h_bar.nrows() - 1;
    let total = phase::enumeration_count(q_bits, n, budget)?;
    let table = phase::alphabet(q_bits)?;
    (0..total)
        .into_par_iter()
        .map(|idx| {
            let mut v = CVec::from_element(n + 1, C64::new(1.0, 0.0));
            phase::configuration(idx, &table, &mut v.as_mut_slice()[1..]);
            let s2 = (h_bar.adjoint() * &v).norm_squared();
            let s1 = em.quad_form(&v);
            let search = min_power_for_stats(s1, s2, spec, cfg)?;
            Ok(RegionPoint {
                s1,
                s2,
                p_min: search.p,
                converged: search.converged,
            })
        })
        .collect()
}

//! Uplink training patterns and channel estimation.
//!
//! During training the surface plays N_r reflection patterns v~_n = [1; v_n]
//! (columns of V, first entry pinned to 1) while each user sends pilots at
//! power p_u. Least squares inverts the pattern matrix, which makes the
//! estimation error
//!
//!   dH~ = (1 / sqrt(p_u)) (V^+)^H N_u^H,
//!
//! zero-mean complex Gaussian with per-column covariance
//! V_bar = (eps2 / p_u) (V^+)^H V^+ = (eps2 / p_u) (V V^H)^+. Correlation
//! across the composite channel's rows is entirely a property of the pattern:
//! orthogonal patterns decorrelate rows, quantized or truncated ones do not.
//! V_bar is what the downlink outage analytics consume.

use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg::{hermitian_part, pseudo_inverse, solve_hpd};
use crate::rng::{sample_cn01, stream};
use crate::scenario::{synthesize_scenario, PropagationParams, ScenarioGeometry};
use crate::{phase, C64, CMat, CVec};

/// Families of training patterns.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PatternKind {
    /// DFT columns with every entry projected onto the 2^q phase alphabet.
    QuantizedDft { q_bits: u32 },
    /// Exact DFT columns (continuous phases).
    ContinuousDft,
    /// Columns of a Sylvester-Hadamard matrix; needs N+1 a power of two.
    TruncatedHadamard,
    /// Caller-supplied matrix.
    Custom,
}

/// The pattern matrix V, (N+1) x N_r, columns v~_n with first entry 1.
#[derive(Debug, Clone)]
pub struct TrainingPattern {
    pub v: CMat,
    pub kind: PatternKind,
}

impl TrainingPattern {
    #[must_use]
    pub fn n_elements(&self) -> usize {
        self.v.nrows() - 1
    }

    #[must_use]
    pub fn n_patterns(&self) -> usize {
        self.v.ncols()
    }

    /// Whether the composite channel is identifiable from this pattern,
    /// i.e. rank(V) = N+1.
    #[must_use]
    pub fn is_identifiable(&self) -> bool {
        let sv = self.v.clone().svd(false, false).singular_values;
        let smax = sv.max();
        sv.len() == self.v.nrows() && sv.iter().all(|&s| s > 1e-12 * smax)
            && self.v.ncols() >= self.v.nrows()
    }

    /// Wraps a caller-supplied matrix, enforcing the unit first row and
    /// unit-modulus entries.
    pub fn custom(v: CMat) -> Result<Self> {
        if v.nrows() < 2 || v.ncols() == 0 {
            return Err(Error::DimensionMismatch(
                "pattern matrix needs at least 2 rows and 1 column".into(),
            ));
        }
        for c in 0..v.ncols() {
            if (v[(0, c)] - C64::new(1.0, 0.0)).norm() > 1e-12 {
                return Err(Error::InvalidParameter(format!(
                    "pattern column {c} does not start with 1"
                )));
            }
            for r in 1..v.nrows() {
                if (v[(r, c)].norm() - 1.0).abs() > 1e-12 {
                    return Err(Error::InvalidParameter(format!(
                        "pattern entry ({r},{c}) is not unit modulus"
                    )));
                }
            }
        }
        Ok(Self {
            v,
            kind: PatternKind::Custom,
        })
    }

    /// CSV dump (row,col,re,im) with lossless float formatting.
    #[must_use]
    pub fn to_csv(&self) -> String {
        let mut out = String::from("row,col,re,im\n");
        for c in 0..self.v.ncols() {
            for r in 0..self.v.nrows() {
                let z = self.v[(r, c)];
                out.push_str(&format!("{r},{c},{:e},{:e}\n", z.re, z.im));
            }
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        let mut max_r = 0usize;
        let mut max_c = 0usize;
        for (ln, line) in text.lines().enumerate().skip(1) {
            if line.trim().is_empty() {
                continue;
            }
            let parts: Vec<&str> = line.split(',').collect();
            if parts.len() != 4 {
                return Err(Error::InvalidParameter(format!(
                    "pattern CSV line {ln} malformed"
                )));
            }
            let parse = |s: &str| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::InvalidParameter(format!("line {ln}: {e}")))
            };
            let r = parse(parts[0])? as usize;
            let c = parse(parts[1])? as usize;
            max_r = max_r.max(r);
            max_c = max_c.max(c);
            entries.push((r, c, C64::new(parse(parts[2])?, parse(parts[3])?)));
        }
        let mut v = CMat::zeros(max_r + 1, max_c + 1);
        for (r, c, z) in entries {
            v[(r, c)] = z;
        }
        Self::custom(v)
    }
}

fn dft_matrix(order: usize) -> CMat {
    CMat::from_fn(order, order, |r, c| {
        C64::from_polar(
            1.0,
            -std::f64::consts::TAU * (r * c % order) as f64 / order as f64,
        )
    })
}

fn hadamard_sylvester(order: usize) -> Option<CMat> {
    if order == 0 || !order.is_power_of_two() {
        return None;
    }
    let mut h = CMat::from_element(1, 1, C64::new(1.0, 0.0));
    while h.nrows() < order {
        let n = h.nrows();
        let mut next = CMat::zeros(2 * n, 2 * n);
        next.view_mut((0, 0), (n, n)).copy_from(&h);
        next.view_mut((0, n), (n, n)).copy_from(&h);
        next.view_mut((n, 0), (n, n)).copy_from(&h);
        next.view_mut((n, n), (n, n)).copy_from(&(-&h));
        h = next;
    }
    Some(h)
}

/// Builds the pattern matrix for N elements and N_r pattern slots. When
/// N_r exceeds the number of distinct base columns (N+1), columns repeat
/// cyclically; when it is smaller, the first N_r columns are used.
pub fn build_training_pattern(n: usize, n_r: usize, kind: PatternKind) -> Result<TrainingPattern> {
    if n == 0 || n_r == 0 {
        return Err(Error::InvalidParameter(
            "need at least one element and one pattern".into(),
        ));
    }
    let order = n + 1;
    let base = match kind {
        PatternKind::ContinuousDft => dft_matrix(order),
        PatternKind::QuantizedDft { q_bits } => {
            let table = phase::alphabet(q_bits)?;
            dft_matrix(order).map(|z| table[phase::nearest_index(z, &table)])
        }
        PatternKind::TruncatedHadamard => hadamard_sylvester(order).ok_or_else(|| {
            Error::UnsupportedPattern(format!(
                "no Sylvester-Hadamard matrix of order {order}; N+1 must be a power of two"
            ))
        })?,
        PatternKind::Custom => {
            return Err(Error::UnsupportedPattern(
                "custom patterns are built with TrainingPattern::custom".into(),
            ))
        }
    };
    let v = CMat::from_fn(order, n_r, |r, c| base[(r, c % order)]);
    Ok(TrainingPattern { v, kind })
}

/// The correlated estimation-error model induced by a training pattern.
///
/// `v_bar` is the quadratic-form matrix (eps2/p_u)(V^+)^H V^+, partitioned as
/// [head cross^H; cross tail] to match how the downlink analytics consume it.
/// `sampler` is (V^+)^H, the transform that turns white pilot noise into
/// correlated estimation errors.
#[derive(Debug, Clone)]
pub struct ErrorModel {
    pub v_bar: CMat,
    pub head: f64,
    pub cross: CVec,
    pub tail: CMat,
    pub sampler: CMat,
    pub p_u: f64,
    pub eps2: f64,
}

impl ErrorModel {
    #[must_use]
    pub fn n_elements(&self) -> usize {
        self.v_bar.nrows() - 1
    }

    /// Quadratic form v~^H V_bar v~ (real, nonnegative).
    #[must_use]
    pub fn quad_form(&self, v_aug: &CVec) -> f64 {
        crate::linalg::quad_form(&self.v_bar, v_aug)
    }

    /// CSV dump of V_bar (row,col,re,im).
    #[must_use]
    pub fn to_csv(&self) -> String {
        let mut out = String::from("row,col,re,im\n");
        for c in 0..self.v_bar.ncols() {
            for r in 0..self.v_bar.nrows() {
                let z = self.v_bar[(r, c)];
                out.push_str(&format!("{r},{c},{:e},{:e}\n", z.re, z.im));
            }
        }
        out
    }

    /// Draws `count` estimation-error matrices (N+1) x m. Column j of each
    /// draw is CN(0, V_bar * eps2-normalization); across draws and columns
    /// the errors are independent.
    pub fn sample_csi_errors(&self, m: usize, count: usize, seed: u64) -> Vec<CMat> {
        let mut rng = stream(seed);
        self.sample_csi_errors_with(m, count, &mut rng)
    }

    pub fn sample_csi_errors_with<R: Rng + ?Sized>(
        &self,
        m: usize,
        count: usize,
        rng: &mut R,
    ) -> Vec<CMat> {
        let n_r = self.sampler.ncols();
        let scale = self.eps2.sqrt() / self.p_u.sqrt();
        let mut out = Vec::with_capacity(count);
        for _ in 0..count {
            let mut noise = CMat::zeros(n_r, m);
            for c in 0..m {
                for r in 0..n_r {
                    noise[(r, c)] = sample_cn01(rng) * scale;
                }
            }
            out.push(&self.sampler * noise);
        }
        out
    }
}

/// Builds the error model for a pattern at pilot power `p_u` and pilot noise
/// variance `eps2`.
pub fn error_covariance(pattern: &TrainingPattern, p_u: f64, eps2: f64) -> Result<ErrorModel> {
    if !(p_u > 0.0) || !(eps2 >= 0.0) {
        return Err(Error::InvalidParameter(
            "p_u must be positive and eps2 nonnegative".into(),
        ));
    }
    let pinv = pseudo_inverse(&pattern.v);
    let sampler = pinv.adjoint();
    let v_bar = hermitian_part(&(&sampler * &pinv).scale(eps2 / p_u));
    let n = pattern.n_elements();
    let head = v_bar[(0, 0)].re;
    let cross = CVec::from_fn(n, |i, _| v_bar[(i + 1, 0)]);
    let tail = v_bar.view((1, 1), (n, n)).into_owned();
    Ok(ErrorModel {
        v_bar,
        head,
        cross,
        tail,
        sampler,
        p_u,
        eps2,
    })
}

/// One user's estimated composite channel.
#[derive(Debug, Clone)]
pub struct ChannelEstimate {
    /// H_bar, (N+1) x M.
    pub h_bar: CMat,
}

impl ChannelEstimate {
    /// Estimated direct channel (column vector, adjoint of the first row).
    #[must_use]
    pub fn h_d_hat(&self) -> CVec {
        self.h_bar.row(0).adjoint()
    }

    /// Estimated cascaded channel, N x M.
    #[must_use]
    pub fn h_hat(&self) -> CMat {
        self.h_bar
            .rows(1, self.h_bar.nrows() - 1)
            .into_owned()
    }
}

/// Simulated uplink observations Y_k = sqrt(p_u) H~_k^H V + N_u, one per user.
fn observe(
    composites: &[CMat],
    pattern: &TrainingPattern,
    p_u: f64,
    eps2: f64,
    seed: u64,
) -> Result<Vec<CMat>> {
    if !(p_u > 0.0) || !(eps2 >= 0.0) {
        return Err(Error::InvalidParameter(
            "p_u must be positive and eps2 nonnegative".into(),
        ));
    }
    let mut rng = stream(seed);
    let mut out = Vec::with_capacity(composites.len());
    for comp in composites {
        if comp.nrows() != pattern.v.nrows() {
            return Err(Error::DimensionMismatch(format!(
                "composite has {} rows, pattern {}",
                comp.nrows(),
                pattern.v.nrows()
            )));
        }
        let m = comp.ncols();
        let n_r = pattern.n_patterns();
        let mut noise = CMat::zeros(m, n_r);
        for c in 0..n_r {
            for r in 0..m {
                noise[(r, c)] = sample_cn01(&mut rng) * eps2.sqrt();
            }
        }
        out.push((comp.adjoint() * &pattern.v).scale(p_u.sqrt()) + noise);
    }
    Ok(out)
}

/// Least-squares estimates for every user of a channel set.
///
/// With an identifiable pattern this is H~ + (1/sqrt(p_u)) (V^+)^H N_u^H; with
/// a rank-deficient pattern the estimate lives in the pattern's range space
/// (check [`TrainingPattern::is_identifiable`]).
pub fn ls_estimate(
    composites: &[CMat],
    pattern: &TrainingPattern,
    p_u: f64,
    eps2: f64,
    seed: u64,
) -> Result<Vec<ChannelEstimate>> {
    let pinv = pseudo_inverse(&pattern.v);
    let ys = observe(composites, pattern, p_u, eps2, seed)?;
    Ok(ys
        .into_iter()
        .map(|y| ChannelEstimate {
            h_bar: (&pinv.adjoint() * y.adjoint()).unscale(p_u.sqrt()),
        })
        .collect())
}

/// First and second moments of the composite channel, estimated by sample
/// averaging over fresh scenario draws (all users pooled). The covariance is
/// the full-matrix convention E{(H - mu)(H - mu)^H}, i.e. columns summed.
pub fn channel_moments(
    geometry: &ScenarioGeometry,
    params: &PropagationParams,
    draws: usize,
    seed: u64,
) -> Result<(CMat, CMat)> {
    if draws < 2 {
        return Err(Error::InvalidParameter("need at least 2 draws".into()));
    }
    let n1 = geometry.n_elements() + 1;
    let m = geometry.m_antennas;
    let mut mean = CMat::zeros(n1, m);
    let mut count = 0.0;
    let mut sets = Vec::with_capacity(draws);
    for d in 0..draws {
        let ch = synthesize_scenario(geometry, params, crate::rng::derive_seed(seed, &[d as u64]))?;
        for comp in &ch.composite {
            mean += comp;
            count += 1.0;
        }
        sets.push(ch);
    }
    mean.unscale_mut(count);
    let mut cov = CMat::zeros(n1, n1);
    for ch in &sets {
        for comp in &ch.composite {
            let d = comp - &mean;
            cov += &d * d.adjoint();
        }
    }
    cov.unscale_mut(count);
    Ok((mean, hermitian_part(&cov)))
}

/// Linear MMSE estimates given prior channel moments.
pub fn lmmse_estimate(
    composites: &[CMat],
    pattern: &TrainingPattern,
    p_u: f64,
    eps2: f64,
    mean: &CMat,
    cov: &CMat,
    seed: u64,
) -> Result<Vec<ChannelEstimate>> {
    let m = composites
        .first()
        .map(|c| c.ncols())
        .ok_or_else(|| Error::InvalidParameter("no users".into()))?;
    let v = &pattern.v;
    let gram = (v.adjoint() * cov * v).scale(p_u)
        + CMat::identity(v.ncols(), v.ncols()).scale(m as f64 * eps2);
    let ys = observe(composites, pattern, p_u, eps2, seed)?;
    let ey = (mean.adjoint() * v).scale(p_u.sqrt());
    let cv = cov.adjoint() * v;
    let mut out = Vec::with_capacity(ys.len());
    for y in ys {
        let rhs = (y - &ey).adjoint();
        let sol = solve_hpd(&gram, &rhs)
            .ok_or_else(|| Error::Numerical("LMMSE normal equations not positive definite".into()))?;
        out.push(ChannelEstimate {
            h_bar: (&cv * sol).scale(p_u.sqrt()) + mean,
        });
    }
    Ok(out)
}

/// Error covariance of the LMMSE estimator (same full-matrix convention as
/// the prior covariance).
pub fn lmmse_error_covariance(
    pattern: &TrainingPattern,
    p_u: f64,
    eps2: f64,
    m: usize,
    cov: &CMat,
) -> Result<CMat> {
    if !(p_u > 0.0) || !(eps2 >= 0.0) {
        return Err(Error::InvalidParameter(
            "p_u must be positive and eps2 nonnegative".into(),
        ));
    }
    let v = &pattern.v;
    let gram = (v.adjoint() * cov * v).scale(p_u)
        + CMat::identity(v.ncols(), v.ncols()).scale(m as f64 * eps2);
    let cv = cov * v;
    let sol = solve_hpd(&gram, &cv.adjoint())
        .ok_or_else(|| Error::Numerical("LMMSE normal equations not positive definite".into()))?;
    Ok(hermitian_part(&(cov - (&cv * sol).scale(p_u))))
}

/// Normalized mean square error sum ||est - truth||^2 / sum ||truth||^2.
pub fn nmse(estimates: &[CMat], truths: &[CMat]) -> Result<f64> {
    if estimates.len() != truths.len() || estimates.is_empty() {
        return Err(Error::DimensionMismatch(
            "need matching, nonempty estimate/truth lists".into(),
        ));
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for (e, t) in estimates.iter().zip(truths) {
        if e.shape() != t.shape() {
            return Err(Error::DimensionMismatch("estimate/truth shape".into()));
        }
        num += (e - t).norm_squared();
        den += t.norm_squared();
    }
    if den == 0.0 {
        return Err(Error::InvalidParameter("all-zero truth".into()));
    }
    Ok(num / den)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    #[test]
    fn continuous_dft_is_orthogonal() {
        let p = build_training_pattern(7, 8, PatternKind::ContinuousDft).unwrap();
        let gram = &p.v * p.v.adjoint();
        let expect = CMat::identity(8, 8).scale(8.0);
        assert!((gram - expect).norm() < 1e-10);
        for c in 0..8 {
            assert!((p.v[(0, c)] - C64::new(1.0, 0.0)).norm() < 1e-15);
        }
        assert!(p.is_identifiable());
    }

    #[test]
    fn hadamard_orders() {
        let p = build_training_pattern(3, 4, PatternKind::TruncatedHadamard).unwrap();
        for z in p.v.iter() {
            assert!(*z == C64::new(1.0, 0.0) || *z == C64::new(-1.0, 0.0));
        }
        let gram = &p.v * p.v.adjoint();
        assert!((gram - CMat::identity(4, 4).scale(4.0)).norm() < 1e-12);
        assert!(build_training_pattern(4, 5, PatternKind::TruncatedHadamard).is_err());
    }

    #[test]
    fn quantized_dft_correlates_rows() {
        let p = build_training_pattern(4, 5, PatternKind::QuantizedDft { q_bits: 1 }).unwrap();
        for z in p.v.iter() {
            assert!(*z == C64::new(1.0, 0.0) || *z == C64::new(-1.0, 0.0));
        }
        let gram = &p.v * p.v.adjoint();
        let mut off = 0.0f64;
        for r in 0..5 {
            for c in 0..5 {
                if r != c {
                    off = off.max(gram[(r, c)].norm());
                }
            }
        }
        assert!(off > 0.5, "expected quantization to break orthogonality");
    }

    #[test]
    fn column_cycling_beyond_base_order() {
        let p = build_training_pattern(2, 5, PatternKind::ContinuousDft).unwrap();
        assert_eq!(p.v.column(3), p.v.column(0));
        assert_eq!(p.v.column(4), p.v.column(1));
    }

    #[test]
    fn custom_pattern_validation() {
        let mut v = CMat::from_element(3, 2, C64::new(1.0, 0.0));
        v[(1, 0)] = C64::new(0.5, 0.0);
        assert!(TrainingPattern::custom(v).is_err());
        let mut v = CMat::from_element(3, 2, C64::new(1.0, 0.0));
        v[(0, 1)] = C64::new(-1.0, 0.0);
        assert!(TrainingPattern::custom(v).is_err());
    }

    #[test]
    fn pattern_csv_round_trip() {
        let p = build_training_pattern(3, 4, PatternKind::QuantizedDft { q_bits: 2 }).unwrap();
        let q = TrainingPattern::from_csv(&p.to_csv()).unwrap();
        assert_eq!(p.v, q.v);
    }

    #[test]
    fn orthogonal_error_covariance_is_scaled_identity() {
        let p = build_training_pattern(7, 8, PatternKind::ContinuousDft).unwrap();
        let em = error_covariance(&p, 4e-3, 1e-11).unwrap();
        let c = 1e-11 / (8.0 * 4e-3);
        assert!((&em.v_bar - CMat::identity(8, 8).scale(c)).norm() < 1e-12 * c * 8.0);
        assert!(em.head > 0.0);
        assert!(em.cross.norm() < 1e-15 * c);
    }

    #[test]
    fn error_covariance_scales_inversely_with_pilot_power() {
        let p = build_training_pattern(4, 5, PatternKind::QuantizedDft { q_bits: 1 }).unwrap();
        let a = error_covariance(&p, 1e-3, 1e-11).unwrap();
        let b = error_covariance(&p, 2e-3, 1e-11).unwrap();
        assert!((&a.v_bar - b.v_bar.scale(2.0)).norm() < 1e-14 * a.v_bar.norm());
    }

    #[test]
    fn quadratic_form_matrix_equals_gram_pseudo_inverse() {
        // rank-deficient on purpose: N_r < N+1
        let p = build_training_pattern(5, 4, PatternKind::ContinuousDft).unwrap();
        assert!(!p.is_identifiable());
        let em = error_covariance(&p, 1.0, 1.0).unwrap();
        let gram_pinv = pseudo_inverse(&(&p.v * p.v.adjoint()));
        assert!((&em.v_bar - gram_pinv).norm() < 1e-10 * em.v_bar.norm());
    }

    #[test]
    fn v_bar_is_psd_for_random_augmented_vectors() {
        let p = build_training_pattern(6, 7, PatternKind::QuantizedDft { q_bits: 2 }).unwrap();
        let em = error_covariance(&p, 2e-3, 1e-11).unwrap();
        let mut rng = stream(31);
        for _ in 0..200 {
            let v = CVec::from_fn(7, |_, _| crate::rng::sample_cn01(&mut rng));
            assert!(em.quad_form(&v) >= -1e-18);
        }
    }

    fn desk_channels(seed: u64) -> Vec<CMat> {
        let g = ScenarioGeometry::reference_layout(2, 2, 2, 1);
        let p = PropagationParams::defaults();
        synthesize_scenario(&g, &p, seed).unwrap().composite
    }

    #[test]
    fn ls_recovers_exactly_without_noise() {
        let g = ScenarioGeometry::reference_layout(2, 3, 1, 1);
        let pr = PropagationParams::defaults();
        let comps = synthesize_scenario(&g, &pr, 11).unwrap().composite;
        let p = build_training_pattern(3, 4, PatternKind::TruncatedHadamard).unwrap();
        let est = ls_estimate(&comps, &p, 1e-3, 0.0, 99).unwrap();
        assert!((&est[0].h_bar - &comps[0]).norm() < 1e-10 * comps[0].norm());
    }

    #[test]
    fn one_bit_dft_loses_rank_and_ls_projects() {
        // sign(cos) makes rows r and N+1-r of the 1-bit pattern identical,
        // so LS can only recover the range-space component
        let comps = desk_channels(11);
        let p = build_training_pattern(4, 5, PatternKind::QuantizedDft { q_bits: 1 }).unwrap();
        assert!(!p.is_identifiable());
        let est = ls_estimate(&comps, &p, 1e-3, 0.0, 99).unwrap();
        let proj = &p.v * pseudo_inverse(&p.v);
        let expect = &proj * &comps[0];
        assert!((&est[0].h_bar - &expect).norm() < 1e-10 * comps[0].norm());
        assert!((&est[0].h_bar - &comps[0]).norm() > 1e-3 * comps[0].norm());
    }

    #[test]
    fn sampled_errors_match_their_covariance() {
        let p = build_training_pattern(4, 5, PatternKind::QuantizedDft { q_bits: 1 }).unwrap();
        let em = error_covariance(&p, 4e-3, 1e-11).unwrap();
        let m = 2;
        let draws = 100_000;
        let errs = em.sample_csi_errors(m, draws, 7);
        let mut acc = CMat::zeros(5, 5);
        for e in &errs {
            acc += e * e.adjoint();
        }
        acc.unscale_mut((draws * m) as f64);
        let rel = (&acc - &em.v_bar).norm() / em.v_bar.norm();
        assert!(rel < 0.03, "relative covariance error {rel}");
    }

    #[test]
    fn ls_errors_share_the_model_distribution() {
        let comps = desk_channels(12);
        let p = build_training_pattern(4, 5, PatternKind::QuantizedDft { q_bits: 2 }).unwrap();
        assert!(p.is_identifiable());
        let p_u = 4e-3;
        let eps2 = 1e-11;
        let em = error_covariance(&p, p_u, eps2).unwrap();
        let mut acc = CMat::zeros(5, 5);
        let draws = 50_000;
        for s in 0..draws {
            let est = ls_estimate(&comps, &p, p_u, eps2, 1000 + s).unwrap();
            let d = &est[0].h_bar - &comps[0];
            acc += &d * d.adjoint();
        }
        acc.unscale_mut((draws * 2) as f64);
        let rel = (&acc - &em.v_bar).norm() / em.v_bar.norm();
        assert!(rel < 0.05, "relative covariance error {rel}");
    }

    #[test]
    fn orthogonal_training_decorrelates_rows() {
        let p = build_training_pattern(3, 4, PatternKind::ContinuousDft).unwrap();
        let em = error_covariance(&p, 1e-3, 1e-11).unwrap();
        let m = 2;
        let draws = 50_000;
        let errs = em.sample_csi_errors(m, draws, 8);
        let mut acc = CMat::zeros(4, 4);
        for e in &errs {
            acc += e * e.adjoint();
        }
        acc.unscale_mut((draws * m) as f64);
        let sigma = em.v_bar[(0, 0)].re;
        let stderr = sigma / ((draws * m) as f64).sqrt();
        for r in 0..4 {
            for c in 0..4 {
                if r != c {
                    assert!(
                        acc[(r, c)].norm() < 3.5 * stderr,
                        "rows {r},{c} correlated: {} vs stderr {stderr}",
                        acc[(r, c)].norm()
                    );
                }
            }
        }
    }

    #[test]
    fn lmmse_matches_truth_in_the_noiseless_limit() {
        let g = ScenarioGeometry::reference_layout(2, 2, 2, 1);
        let pr = PropagationParams::defaults();
        let (mean, cov) = channel_moments(&g, &pr, 400, 5).unwrap();
        let comps = desk_channels(21);
        let p = build_training_pattern(4, 5, PatternKind::ContinuousDft).unwrap();
        let est = lmmse_estimate(&comps, &p, 1.0, 1e-24, &mean, &cov, 77).unwrap();
        let rel = (&est[0].h_bar - &comps[0]).norm() / comps[0].norm();
        assert!(rel < 1e-6, "relative recovery error {rel}");
    }

    #[test]
    fn lmmse_with_uninformative_prior_matches_ls() {
        // a prior covariance dwarfing the channel scale removes the shrinkage
        let comps = desk_channels(23);
        let p = build_training_pattern(4, 5, PatternKind::QuantizedDft { q_bits: 2 }).unwrap();
        let mean = CMat::zeros(5, 2);
        let cov = CMat::identity(5, 5);
        let p_u = 1e-3;
        let eps2 = 1e-11;
        let seed = 404;
        let lm = lmmse_estimate(&comps, &p, p_u, eps2, &mean, &cov, seed).unwrap();
        let ls = ls_estimate(&comps, &p, p_u, eps2, seed).unwrap();
        let rel = (&lm[0].h_bar - &ls[0].h_bar).norm() / ls[0].h_bar.norm();
        assert!(rel < 0.01, "relative LMMSE/LS gap {rel}");
    }

    #[test]
    fn lmmse_beats_ls_at_low_pilot_power() {
        let g = ScenarioGeometry::reference_layout(2, 2, 2, 1);
        let pr = PropagationParams::defaults();
        let (mean, cov) = channel_moments(&g, &pr, 2000, 6).unwrap();
        let pat = build_training_pattern(4, 5, PatternKind::QuantizedDft { q_bits: 1 }).unwrap();
        let p_u = 1e-6;
        let eps2 = 1e-11;
        let mut ls_est = Vec::new();
        let mut lm_est = Vec::new();
        let mut truths = Vec::new();
        for d in 0..200u64 {
            let comps = desk_channels(3000 + d);
            let noise_seed = 4000 + d;
            ls_est.push(
                ls_estimate(&comps, &pat, p_u, eps2, noise_seed).unwrap()[0]
                    .h_bar
                    .clone(),
            );
            lm_est.push(
                lmmse_estimate(&comps, &pat, p_u, eps2, &mean, &cov, noise_seed).unwrap()[0]
                    .h_bar
                    .clone(),
            );
            truths.push(comps[0].clone());
        }
        let nmse_ls = nmse(&ls_est, &truths).unwrap();
        let nmse_lm = nmse(&lm_est, &truths).unwrap();
        assert!(
            nmse_lm < nmse_ls,
            "LMMSE {nmse_lm} should beat LS {nmse_ls} at low pilot power"
        );
    }

    #[test]
    fn lmmse_error_covariance_shrinks_with_power() {
        let g = ScenarioGeometry::reference_layout(2, 2, 2, 1);
        let pr = PropagationParams::defaults();
        let (_, cov) = channel_moments(&g, &pr, 400, 9).unwrap();
        let pat = build_training_pattern(4, 5, PatternKind::ContinuousDft).unwrap();
        let lo = lmmse_error_covariance(&pat, 1e-6, 1e-11, 2, &cov).unwrap();
        let hi = lmmse_error_covariance(&pat, 1e-2, 1e-11, 2, &cov).unwrap();
        assert!(hi.trace().re < lo.trace().re);
        assert!(lo.trace().re <= cov.trace().re + 1e-12 * cov.trace().re);
    }

    #[test]
    fn nmse_basics() {
        let t = vec![CMat::from_element(2, 2, C64::new(1.0, 0.0))];
        assert_eq!(nmse(&t, &t).unwrap(), 0.0);
        let e1 = vec![CMat::from_element(2, 2, C64::new(1.1, 0.0))];
        let e2 = vec![CMat::from_element(2, 2, C64::new(1.2, 0.0))];
        let a = nmse(&e1, &t).unwrap();
        let b = nmse(&e2, &t).unwrap();
        assert!((b / a - 4.0).abs() < 1e-10);
        assert!(nmse(&[], &[]).is_err());
    }

    #[test]
    fn sampling_is_seed_deterministic() {
        let p = build_training_pattern(4, 5, PatternKind::QuantizedDft { q_bits: 1 }).unwrap();
        let em = error_covariance(&p, 1e-3, 1e-11).unwrap();
        let a = em.sample_csi_errors(3, 4, 55);
        let b = em.sample_csi_errors(3, 4, 55);
        let c = em.sample_csi_errors(3, 4, 56);
        assert_eq!(a[3], b[3]);
        assert_ne!(a[0], c[0]);
    }
}

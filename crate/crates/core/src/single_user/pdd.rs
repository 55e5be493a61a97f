//! Penalty dual decomposition for quadratic maximization over discrete
//! phases.
//!
//! The inner problem is max_v v^H A v + 2 Re{v^H b} subject to v in F_d^N,
//! handled by splitting v from an auxiliary copy u that carries the discrete
//! constraint. An augmented Lagrangian couples the two, the inner loop
//! alternates a norm-ball-constrained v-step (convex part of A linearized at
//! the current iterate, so each step has a closed form in A's eigenbasis)
//! with an elementwise projection u-step, and the outer loop either updates
//! the dual variable or tightens the penalty depending on how fast the
//! consensus violation is falling.

use crate::error::{Error, Result};
use crate::linalg::hermitian_eigen;
use crate::phase::{self, PhaseVector};
use crate::rng::{derive_seed, stream};
use crate::training::ErrorModel;
use crate::{C64, CMat, CVec};

use rand::Rng;

/// A quadratic form over the reflection vector: v^H a v + 2 Re{v^H b} +
/// constant. The constant carries the [1; v]-expansion terms so `eval`
/// reports the full augmented quadratic value.
#[derive(Debug, Clone)]
pub struct QuadraticObjective {
    pub a: CMat,
    pub b: CVec,
    pub constant: f64,
}

impl QuadraticObjective {
    /// Weighted combination s2 + omega * s1 of mean signal power and error
    /// variance, expanded over v from the augmented quadratic forms.
    #[must_use]
    pub fn weighted(h_bar: &CMat, em: &ErrorModel, omega: f64) -> Self {
        let n = h_bar.nrows() - 1;
        let h_hat = h_bar.rows(1, n);
        let h_d = h_bar.row(0).adjoint();
        let a = &h_hat * h_hat.adjoint() + em.tail.scale(omega);
        let b = &h_hat * &h_d + em.cross.scale(omega);
        let constant = h_d.norm_squared() + omega * em.head;
        Self { a, b, constant }
    }

    /// Sum of mean signal powers over several users' composite channels.
    #[must_use]
    pub fn sum_composites(h_bars: &[&CMat]) -> Self {
        let n = h_bars[0].nrows() - 1;
        let mut a = CMat::zeros(n, n);
        let mut b = CVec::zeros(n);
        let mut constant = 0.0;
        for h_bar in h_bars {
            let h_hat = h_bar.rows(1, n);
            let h_d = h_bar.row(0).adjoint();
            a += &h_hat * h_hat.adjoint();
            b += &h_hat * &h_d;
            constant += h_d.norm_squared();
        }
        Self { a, b, constant }
    }

    #[must_use]
    pub fn n(&self) -> usize {
        self.b.len()
    }

    #[must_use]
    pub fn eval(&self, v: &CVec) -> f64 {
        (v.dotc(&(&self.a * v)) + 2.0 * v.dotc(&self.b)).re + self.constant
    }
}

/// Penalty loop controls.
#[derive(Debug, Clone, Copy)]
pub struct PddConfig {
    pub rho0: f64,
    pub rho_shrink: f64,
    pub outer_iters: u32,
    pub inner_iters: u32,
    pub violation_tol: f64,
    /// Violation must fall by this factor for a dual step; otherwise the
    /// penalty shrinks.
    pub improvement_factor: f64,
    /// Tolerance on | ||v||^2 - N | in the v-step bisection.
    pub norm_tol: f64,
    /// Independent random starts; the best discrete iterate wins.
    pub restarts: u32,
}

impl Default for PddConfig {
    fn default() -> Self {
        Self {
            rho0: 10.0,
            rho_shrink: 0.8,
            outer_iters: 50,
            inner_iters: 30,
            violation_tol: 1e-6,
            improvement_factor: 0.9,
            norm_tol: 1e-8,
            restarts: 8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PddOutcome {
    /// Discrete solution (every entry an alphabet member).
    pub v: PhaseVector,
    /// Objective value at the discrete solution.
    pub objective: f64,
    pub converged: bool,
    pub outer_iterations: u32,
}

/// Eigen-space data reused across every v-step for one objective.
struct EigenSplit {
    u: CMat,
    /// min(sigma_i, 0), the concave directions kept exact in the surrogate.
    sigma_neg: Vec<f64>,
    has_negative: bool,
}

fn eigen_split(a: &CMat) -> EigenSplit {
    let (vals, u) = hermitian_eigen(a);
    let sigma_neg: Vec<f64> = vals.iter().map(|&s| s.min(0.0)).collect();
    let has_negative = sigma_neg.iter().any(|&s| s < -1e-12);
    EigenSplit {
        u,
        sigma_neg,
        has_negative,
    }
}

/// Positive part of A applied to x, via A x minus the negative eigenspace
/// contribution.
fn apply_positive(a: &CMat, split: &EigenSplit, x: &CVec) -> CVec {
    let mut c = split.u.adjoint() * x;
    for (ci, &s) in c.iter_mut().zip(&split.sigma_neg) {
        *ci *= C64::new(s, 0.0);
    }
    a * x - &split.u * c
}

fn v_from_mu(split: &EigenSplit, c: &CVec, mu: f64, rho: f64) -> CVec {
    let mut scaled = c.clone();
    for (ci, &s) in scaled.iter_mut().zip(&split.sigma_neg) {
        *ci /= C64::new(1.0 + mu - 2.0 * rho * s, 0.0);
    }
    &split.u * scaled
}

/// Norm-ball v-step: maximizes the surrogate with the convex part of A
/// linearized at `anchor`, subject to ||v||^2 <= N. `b_vec` collects
/// 2 rho (A_plus anchor + b) + u - rho lambda.
fn v_step_general(
    split: &EigenSplit,
    b_vec: &CVec,
    rho: f64,
    n: f64,
    norm_tol: f64,
) -> Result<CVec> {
    let c = split.u.adjoint() * b_vec;
    let v0 = v_from_mu(split, &c, 0.0, rho);
    if v0.norm_squared() <= n + norm_tol {
        return Ok(v0);
    }
    // ||v(mu)||^2 <= ||c||^2 / mu^2, so mu = ||c||/sqrt(N) brackets
    let mut lo = 0.0;
    let mut hi = c.norm() / n.sqrt();
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let nn = v_from_mu(split, &c, mid, rho).norm_squared();
        if nn > n {
            lo = mid;
        } else {
            hi = mid;
        }
        if (nn - n).abs() <= norm_tol || hi - lo <= f64::EPSILON * hi {
            return Ok(v_from_mu(split, &c, mid, rho));
        }
    }
    Err(Error::Numerical(
        "v-step norm bisection failed to converge".into(),
    ))
}

/// Closed form valid when A has no negative eigenvalues: the unconstrained
/// maximizer is b_vec itself, rescaled onto the norm ball if needed.
fn v_step_closed(b_vec: &CVec, n: f64) -> CVec {
    let nn = b_vec.norm_squared();
    if nn <= n {
        b_vec.clone()
    } else {
        b_vec.scale((n / nn).sqrt())
    }
}

/// Elementwise improvement sweeps on a discrete vector, accepting strict
/// objective gains until a full sweep changes nothing. The product A u is
/// maintained incrementally so each candidate costs O(1).
fn polish_discrete(obj: &QuadraticObjective, u: &mut CVec, table: &[C64]) {
    let n = u.len();
    let mut av = &obj.a * &*u;
    for _ in 0..100 {
        let mut changed = false;
        for i in 0..n {
            let current = u[i];
            let mut best_gain = 0.0;
            let mut best_z = current;
            for &z in table {
                if z == current {
                    continue;
                }
                let d = z - current;
                let gain = 2.0 * (d.conj() * (av[i] + obj.b[i])).re
                    + obj.a[(i, i)].re * d.norm_sqr();
                if gain > best_gain {
                    best_gain = gain;
                    best_z = z;
                }
            }
            if best_z != current {
                let d = best_z - current;
                for r in 0..n {
                    av[r] += obj.a[(r, i)] * d;
                }
                u[i] = best_z;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
}

/// Maximizes the quadratic objective over discrete phase vectors. Each
/// seeded restart runs the penalty loop and then polishes its best discrete
/// iterate with elementwise sweeps; the best restart wins.
pub fn pdd_maximize_quadratic(
    obj: &QuadraticObjective,
    q_bits: u32,
    cfg: &PddConfig,
    seed: u64,
) -> Result<PddOutcome> {
    let n = obj.n();
    if n == 0 {
        return Err(Error::InvalidParameter("empty objective".into()));
    }
    if cfg.restarts == 0 {
        return Err(Error::InvalidParameter("restarts must be positive".into()));
    }
    let table = phase::alphabet(q_bits)?;
    let split = eigen_split(&obj.a);
    let mut best: Option<PddOutcome> = None;
    for r in 0..cfg.restarts {
        let out = run_once(
            obj,
            &table,
            &split,
            q_bits,
            cfg,
            derive_seed(seed, &[r as u64]),
        )?;
        let better = match &best {
            None => true,
            Some(prev) => out.objective > prev.objective,
        };
        if better {
            best = Some(out);
        }
    }
    Ok(best.expect("at least one restart"))
}

fn run_once(
    obj: &QuadraticObjective,
    table: &[C64],
    split: &EigenSplit,
    q_bits: u32,
    cfg: &PddConfig,
    seed: u64,
) -> Result<PddOutcome> {
    let n = obj.n();
    let nf = n as f64;

    let mut rng = stream(seed);
    let mut u: CVec = CVec::from_fn(n, |_, _| table[rng.random_range(0..table.len())]);
    let mut v = u.clone();
    let mut lambda = CVec::zeros(n);
    let mut rho = cfg.rho0;

    let mut best_u = u.clone();
    let mut best_obj = obj.eval(&u);
    let mut prev_viol = f64::INFINITY;
    let mut converged = false;
    let mut outer_done = 0;

    for outer in 0..cfg.outer_iters {
        outer_done = outer + 1;
        for _ in 0..cfg.inner_iters {
            let drive = &u - lambda.scale(rho);
            let b_vec = apply_positive(&obj.a, split, &v).scale(2.0 * rho)
                + obj.b.scale(2.0 * rho)
                + drive;
            let v_new = if split.has_negative {
                v_step_general(split, &b_vec, rho, nf, cfg.norm_tol)?
            } else {
                v_step_closed(&b_vec, nf)
            };
            let u_new = phase::project_to_alphabet(&(&v_new + lambda.scale(rho)), q_bits)?;
            let moved = crate::linalg::linf_diff(&v_new, &v).max(crate::linalg::linf_diff(&u_new, &u));
            v = v_new;
            u = u_new;
            if moved <= 1e-12 {
                break;
            }
        }
        let cand = obj.eval(&u);
        if cand > best_obj {
            best_obj = cand;
            best_u = u.clone();
        }
        let viol = crate::linalg::linf_diff(&v, &u);
        if viol <= cfg.violation_tol {
            converged = true;
            break;
        }
        if viol <= cfg.improvement_factor * prev_viol {
            lambda += (&v - &u).unscale(rho);
        } else {
            rho = (rho * cfg.rho_shrink).max(1e-12);
        }
        prev_viol = viol;
    }

    polish_discrete(obj, &mut best_u, table);
    best_obj = obj.eval(&best_u);

    Ok(PddOutcome {
        v: PhaseVector::discrete(best_u, q_bits)?,
        objective: best_obj,
        converged,
        outer_iterations: outer_done,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::sample_cn01;
    use crate::scenario::{synthesize_scenario, PropagationParams, ScenarioGeometry};
    use crate::training::{build_training_pattern, error_covariance, PatternKind};

    fn random_hermitian(n: usize, seed: u64) -> CMat {
        let mut rng = stream(seed);
        let g = CMat::from_fn(n, n, |_, _| sample_cn01(&mut rng));
        crate::linalg::hermitian_part(&g)
    }

    fn random_vec(n: usize, seed: u64) -> CVec {
        let mut rng = stream(seed);
        CVec::from_fn(n, |_, _| sample_cn01(&mut rng))
    }

    #[test]
    fn v_step_paths_agree_on_psd_objectives() {
        let n = 6;
        let g = random_hermitian(n, 5);
        let a = &g * &g; // PSD
        let split = eigen_split(&a);
        assert!(!split.has_negative);
        for seed in 0..10u64 {
            let b_vec = random_vec(n, 100 + seed).scale(3.0);
            let closed = v_step_closed(&b_vec, n as f64);
            let general = v_step_general(&split, &b_vec, 10.0, n as f64, 1e-10).unwrap();
            assert!(
                (&closed - &general).norm() < 1e-8 * closed.norm().max(1.0),
                "seed {seed}"
            );
        }
    }

    #[test]
    fn v_step_satisfies_kkt() {
        let n = 5;
        let a = random_hermitian(n, 9).scale(2.0); // indefinite in general
        let split = eigen_split(&a);
        assert!(split.has_negative);
        let rho = 10.0;
        let nf = n as f64;
        for seed in 0..20u64 {
            let b_vec = random_vec(n, 200 + seed).scale(5.0);
            let v = v_step_general(&split, &b_vec, rho, nf, 1e-10).unwrap();
            let nn = v.norm_squared();
            assert!(nn <= nf + 1e-6);
            // recover mu from stationarity: (1+mu) v - 2 rho A_minus v = b_vec
            let mut c = split.u.adjoint() * &v;
            for (ci, &s) in c.iter_mut().zip(&split.sigma_neg) {
                *ci *= C64::new(2.0 * rho * s, 0.0);
            }
            let a_minus_v = &split.u * c;
            let lhs = &v - &a_minus_v;
            // least-squares mu over the stationarity equations
            let num = (&b_vec - &lhs).dotc(&v).re;
            let mu = (num / v.norm_squared()).max(0.0);
            let residual = (lhs + v.scale(mu) - &b_vec).norm() / b_vec.norm();
            assert!(residual < 1e-6, "seed {seed}: residual {residual}");
            // complementary slackness
            assert!(mu * (nn - nf).abs() < 1e-6 * nf, "seed {seed}");
        }
    }

    fn desk_objective(omega: f64, seed: u64) -> QuadraticObjective {
        let g = ScenarioGeometry::reference_layout(4, 3, 2, 1);
        let pr = PropagationParams::defaults();
        let ch = synthesize_scenario(&g, &pr, seed).unwrap();
        let pat = build_training_pattern(6, 7, PatternKind::QuantizedDft { q_bits: 2 }).unwrap();
        let em = error_covariance(&pat, 4e-3, 1e-11).unwrap();
        let err = em.sample_csi_errors(4, 1, seed ^ 0xABCD);
        let h_bar = &ch.composite[0] + &err[0];
        QuadraticObjective::weighted(&h_bar, &em, omega)
    }

    #[test]
    fn objective_eval_matches_augmented_quadratic() {
        let g = ScenarioGeometry::reference_layout(4, 3, 2, 1);
        let pr = PropagationParams::defaults();
        let ch = synthesize_scenario(&g, &pr, 31).unwrap();
        let pat = build_training_pattern(6, 7, PatternKind::QuantizedDft { q_bits: 2 }).unwrap();
        let em = error_covariance(&pat, 4e-3, 1e-11).unwrap();
        let h_bar = ch.composite[0].clone();
        let omega = -3.5;
        let obj = QuadraticObjective::weighted(&h_bar, &em, omega);
        let v = random_vec(6, 77);
        let mut v_aug = CVec::zeros(7);
        v_aug[0] = C64::new(1.0, 0.0);
        v_aug.rows_mut(1, 6).copy_from(&v);
        let s2 = (h_bar.adjoint() * &v_aug).norm_squared();
        let s1 = em.quad_form(&v_aug);
        let want = s2 + omega * s1;
        let got = obj.eval(&v);
        assert!((want - got).abs() < 1e-10 * want.abs().max(1e-30));
    }

    #[test]
    fn pdd_nearly_matches_exhaustive_maximum() {
        for seed in [1u64, 2, 3] {
            let obj = desk_objective(-5.0, seed);
            let table = phase::alphabet(1).unwrap();
            let mut best = f64::NEG_INFINITY;
            let mut v = CVec::zeros(6);
            for idx in 0..64u64 {
                phase::configuration(idx, &table, v.as_mut_slice());
                best = best.max(obj.eval(&v));
            }
            let out = pdd_maximize_quadratic(&obj, 1, &PddConfig::default(), seed).unwrap();
            assert!(
                out.objective >= 0.99 * best && out.objective <= best + 1e-9 * best.abs(),
                "seed {seed}: pdd {} vs exhaustive {best}",
                out.objective
            );
        }
    }

    #[test]
    fn pdd_returns_exact_alphabet_members() {
        let obj = desk_objective(0.0, 7);
        let out = pdd_maximize_quadratic(&obj, 2, &PddConfig::default(), 7).unwrap();
        let table = phase::alphabet(2).unwrap();
        for z in out.v.v.iter() {
            assert!(table.contains(z));
        }
        assert!(out.converged);
    }

    #[test]
    fn pdd_is_seed_deterministic() {
        let obj = desk_objective(-2.0, 11);
        let a = pdd_maximize_quadratic(&obj, 1, &PddConfig::default(), 42).unwrap();
        let b = pdd_maximize_quadratic(&obj, 1, &PddConfig::default(), 42).unwrap();
        assert_eq!(a.v.v, b.v.v);
        assert_eq!(a.objective, b.objective);
    }
}

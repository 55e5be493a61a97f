//! Convex solvers for quadratics over intersections of Euclidean balls.
//!
//! Strongly convex quadratic constraints complete algebraically to balls, so
//! the feasibility subproblems reduce to projections: Dykstra's scheme for
//! exact projection onto the intersection, plain alternating projections for
//! feasibility detection, proximal gradient for the objective. The min-max
//! variant bisects on the level value, growing every ball until the
//! intersection becomes nonempty, then polishes with Polyak subgradient
//! steps toward the certified lower bound.

use crate::error::{Error, Result};
use crate::{C64, CVec};

/// Which coordinates a ball constrains.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BallScope {
    Full,
    Coordinate(usize),
}

/// ||x_scope - center||^2 <= radius_sq. A negative radius_sq is a legitimate
/// empty-set signal, not an error.
#[derive(Debug, Clone)]
pub struct BallConstraint {
    pub center: CVec,
    pub radius_sq: f64,
    pub scope: BallScope,
}

impl BallConstraint {
    #[must_use]
    pub fn full(center: CVec, radius_sq: f64) -> Self {
        Self {
            center,
            radius_sq,
            scope: BallScope::Full,
        }
    }

    #[must_use]
    pub fn coordinate(index: usize, center: C64, radius_sq: f64) -> Self {
        Self {
            center: CVec::from_element(1, center),
            radius_sq,
            scope: BallScope::Coordinate(index),
        }
    }

    #[must_use]
    pub fn is_empty(&self) -> bool {
        self.radius_sq < 0.0
    }

    fn check_dims(&self, n: usize) -> Result<()> {
        let ok = match self.scope {
            BallScope::Full => self.center.len() == n,
            BallScope::Coordinate(i) => i < n && self.center.len() == 1,
        };
        if ok && self.radius_sq.is_finite() {
            Ok(())
        } else {
            Err(Error::DimensionMismatch(
                "ball constraint does not match the variable".into(),
            ))
        }
    }

    /// max(0, ||x_scope - center||^2 - radius_sq).
    #[must_use]
    pub fn violation(&self, x: &CVec) -> f64 {
        let d2 = match self.scope {
            BallScope::Full => (x - &self.center).norm_squared(),
            BallScope::Coordinate(i) => (x[i] - self.center[0]).norm_sqr(),
        };
        level_gap(d2, self.radius_sq).max(0.0)
    }

    /// Euclidean projection; requires a nonempty ball.
    pub fn project_in_place(&self, x: &mut CVec) {
        debug_assert!(self.radius_sq >= 0.0);
        match self.scope {
            BallScope::Full => {
                let d2 = (&*x - &self.center).norm_squared();
                if d2 > self.radius_sq {
                    let t = (self.radius_sq / d2).sqrt();
                    *x = &self.center + (&*x - &self.center).scale(t);
                }
            }
            BallScope::Coordinate(i) => {
                let d = x[i] - self.center[0];
                let d2 = d.norm_sqr();
                if d2 > self.radius_sq {
                    x[i] = self.center[0] + d * C64::new((self.radius_sq / d2).sqrt(), 0.0);
                }
            }
        }
    }
}

/// ||x - c||^2 - r^2 as (d - r)(d + r). The squared form loses all precision
/// once the center sits far from the evaluation region (completed balls from
/// steep quadratics put it ~||grad||/tau away); the factored form keeps the
/// absolute error near eps * d * (d + r) instead of eps * d^2 * (d/gap).
fn level_gap(dist_sq: f64, radius_sq: f64) -> f64 {
    if radius_sq <= 0.0 {
        return dist_sq - radius_sq;
    }
    let d = dist_sq.sqrt();
    let r = radius_sq.sqrt();
    (d - r) * (d + r)
}

/// Completes the strongly convex quadratic
/// f(x) = value + 2 Re{grad^H (x - anchor)} + tau ||x - anchor||^2
/// to a ball: f(x) <= epsilon iff x lies in the returned constraint.
pub fn complete_to_ball(
    value: f64,
    grad: &CVec,
    tau: f64,
    anchor: &CVec,
    epsilon: f64,
) -> Result<BallConstraint> {
    if !(tau > 0.0) {
        return Err(Error::InvalidParameter("curvature must be positive".into()));
    }
    let center = anchor - grad.unscale(tau);
    let radius_sq = (epsilon - value) / tau + grad.norm_squared() / (tau * tau);
    Ok(BallConstraint::full(center, radius_sq))
}

/// Quadratic objective sum_i weights_i |x_i|^2 + 2 Re{linear^H x} over a
/// list of ball constraints. Weights are nonnegative; a zero-weight
/// coordinate is legal only when it is bounded by some constraint or has no
/// linear pull.
#[derive(Debug, Clone)]
pub struct QcqpProblem {
    pub weights: Vec<f64>,
    pub linear: Option<CVec>,
    pub constraints: Vec<BallConstraint>,
}

impl QcqpProblem {
    #[must_use]
    pub fn n(&self) -> usize {
        self.weights.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n();
        if n == 0 {
            return Err(Error::InvalidParameter("empty variable".into()));
        }
        if self.weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidParameter(
                "objective weights must be finite and nonnegative".into(),
            ));
        }
        if let Some(l) = &self.linear {
            if l.len() != n {
                return Err(Error::DimensionMismatch("linear term length".into()));
            }
        }
        for c in &self.constraints {
            c.check_dims(n)?;
        }
        let any_full = self
            .constraints
            .iter()
            .any(|c| c.scope == BallScope::Full);
        if let Some(l) = &self.linear {
            for i in 0..n {
                let pulled = self.weights[i] == 0.0 && l[i].norm_sqr() > 0.0;
                let bounded = any_full
                    || self
                        .constraints
                        .iter()
                        .any(|c| c.scope == BallScope::Coordinate(i));
                if pulled && !bounded {
                    return Err(Error::InvalidParameter(
                        "objective is unbounded along an unconstrained coordinate".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    #[must_use]
    pub fn objective(&self, x: &CVec) -> f64 {
        let mut f = 0.0;
        for (xi, w) in x.iter().zip(&self.weights) {
            f += w * xi.norm_sqr();
        }
        if let Some(l) = &self.linear {
            f += 2.0 * x.dotc(l).re;
        }
        f
    }

    fn gradient(&self, x: &CVec) -> CVec {
        let mut g = CVec::from_fn(x.len(), |i, _| x[i] * C64::new(self.weights[i], 0.0));
        if let Some(l) = &self.linear {
            g += l;
        }
        g
    }
}

/// Iteration controls shared by both solvers.
#[derive(Debug, Clone, Copy)]
pub struct QcqpConfig {
    pub max_iters: u32,
    pub kkt_tol: f64,
    /// Dykstra rounds per projection and movement tolerance.
    pub projection_rounds: u32,
    pub projection_tol: f64,
    /// Alternating projections declare infeasibility after this many rounds
    /// without residual improvement above `feasibility_tol`.
    pub stall_rounds: u32,
    pub feasibility_tol: f64,
}

impl Default for QcqpConfig {
    fn default() -> Self {
        Self {
            max_iters: 20_000,
            kkt_tol: 1e-6,
            projection_rounds: 500,
            projection_tol: 1e-12,
            stall_rounds: 500,
            feasibility_tol: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct QcqpPoint {
    pub x: CVec,
    pub objective: f64,
    /// Norm of the projected-gradient fixed-point residual, scaled by the
    /// step and 1 + ||x||.
    pub kkt_residual: f64,
    pub iterations: u32,
}

#[derive(Debug, Clone)]
pub enum QcqpSolution {
    Solved(QcqpPoint),
    /// Iteration cap hit; best iterate attached.
    CapReached(QcqpPoint),
    Infeasible,
}

fn max_violation(constraints: &[BallConstraint], x: &CVec) -> f64 {
    constraints
        .iter()
        .map(|c| c.violation(x))
        .fold(0.0, f64::max)
}

/// Plain alternating projections; None when the residual stalls above the
/// feasibility tolerance.
fn find_feasible(constraints: &[BallConstraint], x0: &CVec, cfg: &QcqpConfig) -> Option<CVec> {
    if constraints.iter().any(BallConstraint::is_empty) {
        return None;
    }
    let mut x = x0.clone();
    let mut best = max_violation(constraints, &x);
    let mut stalled = 0u32;
    for _ in 0..200_000u32 {
        if best <= cfg.feasibility_tol {
            return Some(x);
        }
        for c in constraints {
            c.project_in_place(&mut x);
        }
        let r = max_violation(constraints, &x);
        if r < best * (1.0 - 1e-12) {
            best = r;
            stalled = 0;
        } else {
            stalled += 1;
            if stalled >= cfg.stall_rounds {
                break;
            }
        }
    }
    (best <= cfg.feasibility_tol).then_some(x)
}

/// Dykstra's alternating projections: converges to the exact projection of
/// `x0` onto the intersection, unlike plain cyclic projection.
fn dykstra_project(constraints: &[BallConstraint], x0: &CVec, cfg: &QcqpConfig) -> CVec {
    if constraints.is_empty() {
        return x0.clone();
    }
    let mut y = x0.clone();
    let mut corrections: Vec<CVec> = vec![CVec::zeros(x0.len()); constraints.len()];
    for _ in 0..cfg.projection_rounds {
        let mut moved = 0.0f64;
        for (c, p) in constraints.iter().zip(corrections.iter_mut()) {
            let shifted = &y + &*p;
            let mut z = shifted.clone();
            c.project_in_place(&mut z);
            *p = &shifted - &z;
            moved = moved.max(crate::linalg::linf_diff(&z, &y));
            y = z;
        }
        if moved <= cfg.projection_tol {
            break;
        }
    }
    y
}

/// Minimizes the quadratic over the ball intersection by proximal gradient
/// with Dykstra projections.
pub fn solve_min_quadratic_over_balls(
    problem: &QcqpProblem,
    x0: Option<&CVec>,
    cfg: &QcqpConfig,
) -> Result<QcqpSolution> {
    problem.validate()?;
    let n = problem.n();
    let start = x0.cloned().unwrap_or_else(|| CVec::zeros(n));
    if start.len() != n {
        return Err(Error::DimensionMismatch("starting point length".into()));
    }
    let Some(mut x) = find_feasible(&problem.constraints, &start, cfg) else {
        return Ok(QcqpSolution::Infeasible);
    };
    let w_max = problem.weights.iter().cloned().fold(0.0, f64::max);
    let step = if w_max > 0.0 { 1.0 / w_max } else { 1.0 };
    let mut kkt = f64::INFINITY;
    let mut iterations = 0;
    for t in 0..cfg.max_iters {
        iterations = t + 1;
        let g = problem.gradient(&x);
        let y = &x - g.scale(step);
        let x_new = dykstra_project(&problem.constraints, &y, cfg);
        kkt = (&x - &x_new).norm() / (step * (1.0 + x.norm()));
        x = x_new;
        if kkt <= cfg.kkt_tol {
            break;
        }
    }
    // purify: the Dykstra iterate satisfies the last-projected set exactly,
    // the others only to its own tolerance
    if let Some(clean) = find_feasible(&problem.constraints, &x, cfg) {
        x = clean;
    }
    let point = QcqpPoint {
        objective: problem.objective(&x),
        x,
        kkt_residual: kkt,
        iterations,
    };
    if kkt <= cfg.kkt_tol {
        Ok(QcqpSolution::Solved(point))
    } else {
        Ok(QcqpSolution::CapReached(point))
    }
}

#[derive(Debug, Clone)]
pub struct MinMaxOutcome {
    pub x: CVec,
    /// Achieved max_k of the scaled constraint values.
    pub alpha: f64,
    pub iterations: u32,
    pub converged: bool,
}

fn clamp_coordinates(balls: &[BallConstraint], x: &mut CVec) {
    for b in balls {
        b.project_in_place(x);
    }
}

/// Minimizes alpha = max_k tau_k (||x - c_k||^2 - r_k^2) over the coordinate
/// balls. Each piece is one completed quadratic with its curvature tau_k.
/// The returned alpha is independent of any starting point: a single piece
/// solves in closed form (the objective is separable across coordinates),
/// several pieces bisect on the level value with a subgradient polish.
pub fn solve_minmax_feasibility(
    pieces: &[(BallConstraint, f64)],
    coord_balls: &[BallConstraint],
    cfg: &QcqpConfig,
) -> Result<MinMaxOutcome> {
    if pieces.is_empty() {
        return Err(Error::InvalidParameter("no constraint pieces".into()));
    }
    let n = pieces[0].0.center.len();
    for (ball, tau) in pieces {
        ball.check_dims(n)?;
        if ball.scope != BallScope::Full {
            return Err(Error::InvalidParameter(
                "constraint pieces must be full-vector balls".into(),
            ));
        }
        if !(*tau > 0.0) {
            return Err(Error::InvalidParameter("curvature must be positive".into()));
        }
    }
    for b in coord_balls {
        b.check_dims(n)?;
        if !matches!(b.scope, BallScope::Coordinate(_)) || b.is_empty() {
            return Err(Error::InvalidParameter(
                "coordinate balls must be nonempty and coordinate-scoped".into(),
            ));
        }
    }

    let value = |x: &CVec| -> f64 {
        pieces
            .iter()
            .map(|(b, tau)| tau * level_gap((x - &b.center).norm_squared(), b.radius_sq))
            .fold(f64::NEG_INFINITY, f64::max)
    };

    if pieces.len() == 1 {
        let (ball, tau) = &pieces[0];
        let mut x = ball.center.clone();
        for _ in 0..100 {
            let before = x.clone();
            clamp_coordinates(coord_balls, &mut x);
            if crate::linalg::linf_diff(&x, &before) <= 1e-15 {
                break;
            }
        }
        let alpha = tau * level_gap((&x - &ball.center).norm_squared(), ball.radius_sq);
        return Ok(MinMaxOutcome {
            x,
            alpha,
            iterations: 0,
            converged: true,
        });
    }

    // separable lower bound: per piece, the squared distance from its center
    // to the coordinate-ball product set is a sum of per-coordinate terms
    let mut alpha_lo = f64::NEG_INFINITY;
    for (ball, tau) in pieces {
        let mut d2 = 0.0;
        for i in 0..n {
            let mut dist = 0.0f64;
            for b in coord_balls {
                if b.scope == BallScope::Coordinate(i) {
                    let gap = (ball.center[i] - b.center[0]).norm() - b.radius_sq.sqrt();
                    dist = dist.max(gap.max(0.0));
                }
            }
            d2 += dist * dist;
        }
        alpha_lo = alpha_lo.max(tau * level_gap(d2, ball.radius_sq));
    }

    let mut witness = CVec::zeros(n);
    clamp_coordinates(coord_balls, &mut witness);
    let start = witness.clone();
    let mut alpha_hi = value(&witness);
    let mut iterations = 0;
    let mut lo = alpha_lo;
    // near-tangent intersections slow the projections down, so the level
    // search gets extra stall patience
    let mut patient = *cfg;
    patient.stall_rounds = cfg.stall_rounds.saturating_mul(4);
    while alpha_hi - lo > (1e-12 * alpha_hi.abs()).max(1e-8) && iterations < 200 {
        iterations += 1;
        let mid = 0.5 * (lo + alpha_hi);
        let mut sets: Vec<BallConstraint> = pieces
            .iter()
            .map(|(b, tau)| BallConstraint::full(b.center.clone(), b.radius_sq + mid / tau))
            .collect();
        sets.extend(coord_balls.iter().cloned());
        match find_feasible(&sets, &start, &patient) {
            Some(x) => {
                alpha_hi = mid;
                witness = x;
            }
            None => lo = mid,
        }
    }
    let converged = alpha_hi - lo <= (1e-12 * alpha_hi.abs()).max(1e-8);

    // Polyak subgradient polish toward the certified lower bound
    let mut x = witness;
    clamp_coordinates(coord_balls, &mut x);
    let mut fx = value(&x);
    let mut best_f = fx;
    let mut best_x = x.clone();
    for _ in 0..400 {
        let (ball, tau) = pieces
            .iter()
            .max_by(|a, b| {
                let fa = a.1 * level_gap((&x - &a.0.center).norm_squared(), a.0.radius_sq);
                let fb = b.1 * level_gap((&x - &b.0.center).norm_squared(), b.0.radius_sq);
                fa.partial_cmp(&fb).expect("finite values")
            })
            .expect("nonempty pieces");
        let g = (&x - &ball.center).scale(2.0 * tau);
        let gn2 = g.norm_squared();
        if gn2 < 1e-30 || fx - alpha_lo <= 0.0 {
            break;
        }
        let step = (fx - alpha_lo) / gn2;
        x -= g.scale(step);
        clamp_coordinates(coord_balls, &mut x);
        fx = value(&x);
        if fx < best_f {
            best_f = fx;
            best_x = x.clone();
        }
    }

    Ok(MinMaxOutcome {
        x: best_x,
        alpha: best_f,
        iterations,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{sample_cn01, stream};
    use rand::Rng;

    fn random_vec(n: usize, seed: u64) -> CVec {
        let mut rng = stream(seed);
        CVec::from_fn(n, |_, _| sample_cn01(&mut rng))
    }

    #[test]
    fn completion_classifies_like_the_quadratic() {
        let n = 5;
        for trial in 0..10u64 {
            let anchor = random_vec(n, 900 + trial);
            let grad = random_vec(n, 950 + trial).scale(0.8);
            let tau = 0.3 + 0.2 * trial as f64;
            let value = -0.5 + 0.3 * trial as f64;
            let epsilon = 0.4;
            let ball = complete_to_ball(value, &grad, tau, &anchor, epsilon).unwrap();
            let mut rng = stream(7000 + trial);
            for _ in 0..1000 {
                let x = &anchor + CVec::from_fn(n, |_, _| sample_cn01(&mut rng)).scale(2.0);
                let d = &x - &anchor;
                let f = value + 2.0 * d.dotc(&grad).re + tau * d.norm_squared();
                let lhs = tau * ((&x - &ball.center).norm_squared() - ball.radius_sq);
                // exact algebraic identity, not just matching signs
                assert!(
                    (lhs - (f - epsilon)).abs() <= 1e-10 * (1.0 + f.abs()),
                    "trial {trial}"
                );
            }
        }
    }

    #[test]
    fn completion_edge_cases() {
        let anchor = random_vec(4, 1);
        let zero = CVec::zeros(4);
        let ball = complete_to_ball(0.1, &zero, 0.5, &anchor, 0.3).unwrap();
        assert!((&ball.center - &anchor).norm() < 1e-15);
        assert!((ball.radius_sq - 0.4).abs() < 1e-12);
        let empty = complete_to_ball(0.9, &zero, 0.5, &anchor, 0.3).unwrap();
        assert!(empty.is_empty());
        assert!(complete_to_ball(0.1, &zero, 0.0, &anchor, 0.3).is_err());
    }

    #[test]
    fn projections_are_nonexpansive_and_idempotent() {
        let n = 6;
        let mut rng = stream(11);
        for trial in 0..200u64 {
            let c = random_vec(n, 2000 + trial);
            let r2 = 0.2 + rng.random::<f64>() * 2.0;
            let balls = [
                BallConstraint::full(c.clone(), r2),
                BallConstraint::coordinate(trial as usize % n, c[0], r2),
            ];
            for ball in &balls {
                let mut a = random_vec(n, 3000 + trial).scale(2.0);
                let mut b = random_vec(n, 4000 + trial).scale(2.0);
                let before = (&a - &b).norm();
                ball.project_in_place(&mut a);
                ball.project_in_place(&mut b);
                assert!((&a - &b).norm() <= before + 1e-12);
                assert!(ball.violation(&a) <= 1e-12);
                let mut again = a.clone();
                ball.project_in_place(&mut again);
                assert!((&again - &a).norm() <= 1e-12);
            }
        }
    }

    #[test]
    fn unconstrained_minimizer_inside_one_ball_is_returned() {
        let n = 4;
        let l = random_vec(n, 21);
        // minimizer of ||x||^2 + 2 Re{l^H x} is -l
        let target = -&l;
        let ball = BallConstraint::full(target.clone(), 4.0);
        let problem = QcqpProblem {
            weights: vec![1.0; n],
            linear: Some(l),
            constraints: vec![ball],
        };
        let sol = solve_min_quadratic_over_balls(&problem, None, &QcqpConfig::default()).unwrap();
        let QcqpSolution::Solved(p) = sol else {
            panic!("expected solved")
        };
        assert!((&p.x - &target).norm() < 1e-6);
    }

    #[test]
    fn excluded_minimizer_lands_on_the_boundary_ray() {
        let n = 3;
        let l = random_vec(n, 23);
        let target = -&l;
        let c = &target + random_vec(n, 24).normalize().scale(5.0);
        let r2 = 2.0;
        let problem = QcqpProblem {
            weights: vec![1.0; n],
            linear: Some(l),
            constraints: vec![BallConstraint::full(c.clone(), r2)],
        };
        let sol = solve_min_quadratic_over_balls(&problem, None, &QcqpConfig::default()).unwrap();
        let QcqpSolution::Solved(p) = sol else {
            panic!("expected solved")
        };
        let expect = &c + (&target - &c).scale(r2.sqrt() / (&target - &c).norm());
        assert!((&p.x - &expect).norm() < 1e-5, "{}", (&p.x - &expect).norm());
        assert!(p.kkt_residual <= 1e-6);
    }

    #[test]
    fn empty_ball_reports_infeasible() {
        let problem = QcqpProblem {
            weights: vec![1.0; 2],
            linear: None,
            constraints: vec![BallConstraint::full(random_vec(2, 5), -0.1)],
        };
        let sol = solve_min_quadratic_over_balls(&problem, None, &QcqpConfig::default()).unwrap();
        assert!(matches!(sol, QcqpSolution::Infeasible));
    }

    #[test]
    fn disjoint_balls_report_infeasible() {
        let c1 = CVec::zeros(3);
        let mut c2 = CVec::zeros(3);
        c2[0] = C64::new(10.0, 0.0);
        let problem = QcqpProblem {
            weights: vec![1.0; 3],
            linear: None,
            constraints: vec![
                BallConstraint::full(c1, 1.0),
                BallConstraint::full(c2, 1.0),
            ],
        };
        let sol = solve_min_quadratic_over_balls(&problem, None, &QcqpConfig::default()).unwrap();
        assert!(matches!(sol, QcqpSolution::Infeasible));
    }

    /// Two-stage dense grid over one complex coordinate.
    fn grid_oracle(problem: &QcqpProblem, lo: (f64, f64), hi: (f64, f64)) -> f64 {
        let feasible_min = |lo: (f64, f64), hi: (f64, f64), steps: usize| -> (f64, (f64, f64)) {
            let mut best = (f64::INFINITY, (0.0, 0.0));
            for i in 0..=steps {
                for j in 0..=steps {
                    let re = lo.0 + (hi.0 - lo.0) * i as f64 / steps as f64;
                    let im = lo.1 + (hi.1 - lo.1) * j as f64 / steps as f64;
                    let x = CVec::from_element(1, C64::new(re, im));
                    if max_violation(&problem.constraints, &x) <= 0.0 {
                        let f = problem.objective(&x);
                        if f < best.0 {
                            best = (f, (re, im));
                        }
                    }
                }
            }
            best
        };
        let coarse = feasible_min(lo, hi, 800);
        let h = ((hi.0 - lo.0) / 800.0).max((hi.1 - lo.1) / 800.0);
        let (re, im) = coarse.1;
        let fine = feasible_min((re - 3.0 * h, im - 3.0 * h), (re + 3.0 * h, im + 3.0 * h), 600);
        fine.0.min(coarse.0)
    }

    #[test]
    fn two_ball_solutions_match_a_dense_grid() {
        for trial in 0..5u64 {
            let mut rng = stream(600 + trial);
            let c1 = CVec::from_element(1, sample_cn01(&mut rng));
            let sep = sample_cn01(&mut rng) * C64::new(0.4, 0.0);
            let c2 = &c1 + CVec::from_element(1, sep);
            let l = CVec::from_element(1, sample_cn01(&mut rng));
            let problem = QcqpProblem {
                weights: vec![1.0],
                linear: Some(l),
                constraints: vec![
                    BallConstraint::full(c1.clone(), 1.0),
                    BallConstraint::full(c2.clone(), 0.5),
                ],
            };
            let sol =
                solve_min_quadratic_over_balls(&problem, None, &QcqpConfig::default()).unwrap();
            let QcqpSolution::Solved(p) = sol else {
                panic!("trial {trial}: expected solved")
            };
            let lo = (c1[0].re - 2.0, c1[0].im - 2.0);
            let hi = (c1[0].re + 2.0, c1[0].im + 2.0);
            let oracle = grid_oracle(&problem, lo, hi);
            assert!(
                (p.objective - oracle).abs() <= 1e-3 * (1.0 + oracle.abs()),
                "trial {trial}: {} vs {oracle}",
                p.objective
            );
            assert!(max_violation(&problem.constraints, &p.x) <= 1e-8);
        }
    }

    /// Stationarity check: gradient plus nonnegative combination of active
    /// ball normals vanishes.
    fn kkt_residual_with_multipliers(problem: &QcqpProblem, x: &CVec) -> f64 {
        let g = problem.gradient(x);
        let active: Vec<CVec> = problem
            .constraints
            .iter()
            .filter(|c| {
                let d2 = match c.scope {
                    BallScope::Full => (x - &c.center).norm_squared(),
                    BallScope::Coordinate(i) => (x[i] - c.center[0]).norm_sqr(),
                };
                d2 >= c.radius_sq - 1e-6
            })
            .map(|c| match c.scope {
                BallScope::Full => x - &c.center,
                BallScope::Coordinate(i) => {
                    let mut v = CVec::zeros(x.len());
                    v[i] = x[i] - c.center[0];
                    v
                }
            })
            .collect();
        if active.is_empty() {
            return g.norm();
        }
        // nonnegative least squares by projection for up to two normals
        let solve = |mus: &[f64]| -> f64 {
            let mut r = g.clone();
            for (m, a) in mus.iter().zip(&active) {
                r += a.scale(*m);
            }
            r.norm()
        };
        let mut best = g.norm();
        let steps = 400;
        if active.len() == 1 {
            let a = &active[0];
            let mu = (-g.dotc(a).re / a.norm_squared()).max(0.0);
            best = best.min(solve(&[mu]));
        } else {
            for i in 0..=steps {
                for j in 0..=steps {
                    let m1 = 5.0 * i as f64 / steps as f64;
                    let m2 = 5.0 * j as f64 / steps as f64;
                    best = best.min(solve(&[m1, m2]));
                }
            }
        }
        best
    }

    #[test]
    fn returned_points_satisfy_stationarity() {
        for trial in 0..4u64 {
            let n = 3;
            let c1 = random_vec(n, 700 + trial);
            let c2 = &c1 + random_vec(n, 750 + trial).normalize().scale(0.7);
            let problem = QcqpProblem {
                weights: vec![1.0; n],
                linear: Some(random_vec(n, 770 + trial).scale(2.0)),
                constraints: vec![
                    BallConstraint::full(c1, 1.2),
                    BallConstraint::full(c2, 0.8),
                ],
            };
            let sol =
                solve_min_quadratic_over_balls(&problem, None, &QcqpConfig::default()).unwrap();
            let QcqpSolution::Solved(p) = sol else {
                panic!("trial {trial}")
            };
            let res = kkt_residual_with_multipliers(&problem, &p.x);
            let scale = 1.0 + problem.gradient(&p.x).norm();
            assert!(res <= 2e-2 * scale, "trial {trial}: residual {res}");
        }
    }

    #[test]
    fn zero_weight_block_rests_at_zero_objective() {
        // objective only sees the second coordinate; any feasible point with
        // that coordinate at its minimizer is optimal
        let mut c = CVec::zeros(2);
        c[0] = C64::new(3.0, 1.0);
        let problem = QcqpProblem {
            weights: vec![0.0, 1.0],
            linear: None,
            constraints: vec![BallConstraint::full(c, 9.0 + 1.0 + 1e-6)],
        };
        let sol = solve_min_quadratic_over_balls(&problem, None, &QcqpConfig::default()).unwrap();
        let QcqpSolution::Solved(p) = sol else {
            panic!("expected solved")
        };
        assert!(p.objective <= 1e-8, "objective {}", p.objective);
    }

    fn unit_coordinate_balls(n: usize) -> Vec<BallConstraint> {
        (0..n)
            .map(|i| BallConstraint::coordinate(i, C64::new(0.0, 0.0), 1.0))
            .collect()
    }

    #[test]
    fn single_piece_minmax_matches_the_separable_solution() {
        for trial in 0..6u64 {
            let n = 4;
            let c = random_vec(n, 820 + trial).scale(1.5);
            let tau = 0.7;
            let r2 = 0.6;
            let balls = unit_coordinate_balls(n);
            // separable optimum: clamp each coordinate of c into its ball
            let mut d2 = 0.0;
            for i in 0..n {
                let gap = (c[i].norm() - 1.0).max(0.0);
                d2 += gap * gap;
            }
            let expect = tau * (d2 - r2);
            let out = solve_minmax_feasibility(
                &[(BallConstraint::full(c, r2), tau)],
                &balls,
                &QcqpConfig::default(),
            )
            .unwrap();
            assert!(out.converged);
            assert!(
                (out.alpha - expect).abs() <= 1e-12 * (1.0 + expect.abs()),
                "trial {trial}: {} vs {expect}",
                out.alpha
            );
        }
    }

    // the witness lives in a lens of diameter ~sqrt(level width) around the
    // equalizing point, so the imbalance tolerance is looser than the alpha
    // tolerance
    #[test]
    fn mirror_pieces_equalize_at_the_midpoint() {
        let n = 3;
        let c = random_vec(n, 91).normalize().scale(0.6);
        let tau = 1.0;
        let r2 = 0.2;
        let pieces = [
            (BallConstraint::full(c.clone(), r2), tau),
            (BallConstraint::full(-&c, r2), tau),
        ];
        let out = solve_minmax_feasibility(
            &pieces,
            &unit_coordinate_balls(n),
            &QcqpConfig::default(),
        )
        .unwrap();
        let expect = c.norm_squared() - r2;
        assert!(
            (out.alpha - expect).abs() <= 1e-5 * (1.0 + expect.abs()),
            "{} vs {expect}",
            out.alpha
        );
        let f1 = tau * ((&out.x - &c).norm_squared() - r2);
        let f2 = tau * ((&out.x + &c).norm_squared() - r2);
        assert!((f1 - f2).abs() <= 1e-3, "pieces differ: {f1} vs {f2}");
    }

    #[test]
    fn satisfied_pieces_give_negative_alpha() {
        let n = 2;
        let pieces = [(BallConstraint::full(CVec::zeros(n), 5.0), 1.0)];
        let out = solve_minmax_feasibility(
            &pieces,
            &unit_coordinate_balls(n),
            &QcqpConfig::default(),
        )
        .unwrap();
        assert!(out.alpha < 0.0);
        assert!((out.alpha + 5.0).abs() <= 1e-12 * 5.0);
    }

    #[test]
    fn minmax_is_deterministic() {
        let n = 3;
        let pieces = [
            (BallConstraint::full(random_vec(n, 94), 0.4), 0.9),
            (BallConstraint::full(random_vec(n, 95), 0.7), 1.3),
        ];
        let balls = unit_coordinate_balls(n);
        let a = solve_minmax_feasibility(&pieces, &balls, &QcqpConfig::default()).unwrap();
        let b = solve_minmax_feasibility(&pieces, &balls, &QcqpConfig::default()).unwrap();
        assert_eq!(a.alpha, b.alpha);
        assert_eq!(a.x, b.x);
    }
}

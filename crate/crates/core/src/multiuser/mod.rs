//! Multiuser outage-constrained beamforming by constrained stochastic
//! successive convex approximation.
//!
//! Each user's outage probability is approximated by the sample mean of a
//! smoothed step applied to a per-realization SINR margin. The smoothed
//! constraints are replaced by strongly convex quadratic surrogates built
//! from running gradient averages, each completed algebraically to a
//! Euclidean ball, so every iteration solves a small quadratic program over
//! an intersection of balls (with a min-max feasibility fallback). Stage one
//! optimizes precoders and relaxed surface phases jointly; the phases are
//! then quantized and stage two re-runs the same machinery on the precoders
//! alone. A final independent Monte-Carlo run verifies the returned design.
//!
//! The margin fed to the smoothed step is normalized by the user's noise
//! power. The exact outage indicator is invariant under that positive
//! rescaling, while the smoothing parameters stop depending on the absolute
//! watt scale of the link budget.

pub mod power_min;

use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::outage::{mc_outage, OutageSpec};
use crate::phase::{project_to_alphabet, PhaseVector};
use crate::qcqp::{
    complete_to_ball, solve_min_quadratic_over_balls, solve_minmax_feasibility, BallConstraint,
    MinMaxOutcome, QcqpConfig, QcqpPoint, QcqpProblem, QcqpSolution,
};
use crate::rng::{derive_seed, stream};
use crate::scenario::effective_channel;
use crate::training::ErrorModel;
use crate::{C64, CMat, CVec};

pub use power_min::{
    deterministic_sinr, non_robust_baseline, progressive_thresholding_mu,
    sinr_constrained_power_min, ProgressiveMuOutcome,
};

/// Stacked optimization variable [w_1; ...; w_K; v] with the index maps that
/// recover each precoder block and the phase block.
#[derive(Debug, Clone)]
pub struct CompositeVariable {
    pub varpi: CVec,
    pub k_users: usize,
    pub m: usize,
    pub n: usize,
}

impl CompositeVariable {
    pub fn from_parts(precoders: &[CVec], v: &CVec) -> Result<Self> {
        let k_users = precoders.len();
        if k_users == 0 {
            return Err(Error::InvalidParameter("need at least one user".into()));
        }
        let m = precoders[0].len();
        if m == 0 || precoders.iter().any(|w| w.len() != m) {
            return Err(Error::DimensionMismatch(
                "precoders must share one nonzero antenna count".into(),
            ));
        }
        let n = v.len();
        if n == 0 {
            return Err(Error::InvalidParameter(
                "need at least one surface element".into(),
            ));
        }
        let mut varpi = CVec::zeros(k_users * m + n);
        for (j, w) in precoders.iter().enumerate() {
            varpi.rows_mut(j * m, m).copy_from(w);
        }
        varpi.rows_mut(k_users * m, n).copy_from(v);
        Ok(Self {
            varpi,
            k_users,
            m,
            n,
        })
    }

    pub fn from_stacked(varpi: CVec, k_users: usize, m: usize, n: usize) -> Result<Self> {
        if k_users == 0 || m == 0 || n == 0 || varpi.len() != k_users * m + n {
            return Err(Error::DimensionMismatch(format!(
                "stacked length {} does not match K={k_users}, M={m}, N={n}",
                varpi.len()
            )));
        }
        Ok(Self {
            varpi,
            k_users,
            m,
            n,
        })
    }

    #[must_use]
    pub fn dim(&self) -> usize {
        self.k_users * self.m + self.n
    }

    #[must_use]
    pub fn w_range(&self, k: usize) -> std::ops::Range<usize> {
        k * self.m..(k + 1) * self.m
    }

    #[must_use]
    pub fn v_range(&self) -> std::ops::Range<usize> {
        self.k_users * self.m..self.dim()
    }

    #[must_use]
    pub fn precoder(&self, k: usize) -> CVec {
        self.varpi.rows(k * self.m, self.m).into_owned()
    }

    #[must_use]
    pub fn phase_part(&self) -> CVec {
        self.varpi.rows(self.k_users * self.m, self.n).into_owned()
    }

    /// [1; v], the reflection vector extended by the direct path.
    #[must_use]
    pub fn v_aug(&self) -> CVec {
        let mut t = CVec::zeros(self.n + 1);
        t[0] = C64::new(1.0, 0.0);
        t.rows_mut(1, self.n)
            .copy_from(&self.varpi.rows(self.k_users * self.m, self.n));
        t
    }

    /// Total transmit power over all precoder blocks.
    #[must_use]
    pub fn precoder_power(&self) -> f64 {
        self.varpi.rows(0, self.k_users * self.m).norm_squared()
    }
}

/// Algorithm controls. The step-size sequences are fixed power laws; the
/// sample counts trade estimate noise against runtime.
#[derive(Debug, Clone)]
pub struct CsscaConfig {
    /// Sigmoid sharpness of the smoothed outage indicator.
    pub vartheta: f64,
    /// Half-width of the sigmoid window; linear tails outside.
    pub zeta: f64,
    /// Proximal curvature of every surrogate.
    pub tau: f64,
    /// Samples per iteration for the constraint-value averages.
    pub value_samples: usize,
    /// Samples per iteration for the gradient averages.
    pub grad_samples: usize,
    /// Per-iteration bound on each phase coordinate's move. The phase block
    /// carries no objective weight, so without this one noisy linearization
    /// can fling it across the hypercube.
    pub phase_trust: f64,
    /// Stop once the windowed fractional decrease falls below this.
    pub xi_o: f64,
    /// Window length for the stopping rule.
    pub stall_window: usize,
    /// Iterations to run before the stopping rule may fire.
    pub min_iters: usize,
    /// Hard iteration cap per stage.
    pub max_iters: usize,
    /// Constraint slack below which an exit is considered feasible.
    pub feasibility_slack: f64,
    /// Sample count for the final independent verification.
    pub verify_samples: usize,
    pub qcqp: QcqpConfig,
}

impl Default for CsscaConfig {
    fn default() -> Self {
        Self {
            vartheta: 100.0,
            zeta: 8.0,
            tau: 1e-3,
            value_samples: 1000,
            grad_samples: 200,
            phase_trust: 0.35,
            xi_o: 1e-3,
            stall_window: 5,
            min_iters: 15,
            max_iters: 300,
            feasibility_slack: 0.02,
            verify_samples: 100_000,
            qcqp: QcqpConfig::default(),
        }
    }
}

impl CsscaConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.vartheta > 0.0
            && self.zeta > 0.0
            && self.tau > 0.0
            && self.value_samples >= 1
            && self.grad_samples >= 1
            && self.phase_trust > 0.0
            && self.xi_o > 0.0
            && self.stall_window >= 1
            && self.min_iters >= 1
            && self.max_iters >= self.min_iters
            && self.feasibility_slack >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(
                "inconsistent CSSCA configuration".into(),
            ))
        }
    }

    /// Gradient-averaging weight, (1+t)^(-1/2); equal to one at t = 0.
    #[must_use]
    pub fn rho(&self, t: u32) -> f64 {
        (1.0 + f64::from(t)).powf(-0.5)
    }

    /// Iterate-blending weight, (1+t)^(-3/5); equal to one at t = 0.
    #[must_use]
    pub fn gamma(&self, t: u32) -> f64 {
        (1.0 + f64::from(t)).powf(-0.6)
    }
}

/// Sigmoid 1/(1+e^(-vartheta x)) inside |vartheta x| < zeta, extended outside
/// by the tangent lines at the window edges (value and slope both match, so
/// the function is C^1 everywhere except the two junction points, where it is
/// still continuous with equal one-sided slopes).
///
/// The linear tails escape [0,1] far from the origin by construction; the
/// outage-probability use clamps the value at the evaluation site.
#[must_use]
pub fn smooth_step(x: f64, vartheta: f64, zeta: f64) -> f64 {
    let zx = vartheta * x;
    if zx.abs() < zeta {
        1.0 / (1.0 + (-zx).exp())
    } else {
        let slope = junction_slope(vartheta, zeta);
        if zx >= zeta {
            1.0 / (1.0 + (-zeta).exp()) + slope * (x - zeta / vartheta)
        } else {
            1.0 / (1.0 + zeta.exp()) + slope * (x + zeta / vartheta)
        }
    }
}

/// Derivative factor with the argument clipped into the sigmoid window:
/// vartheta e^(-c)/(1+e^(-c))^2 at c = clamp(vartheta x, +-zeta). Constant in
/// the tails, which keeps gradients alive where the sigmoid saturates.
#[must_use]
pub fn smooth_step_deriv(x: f64, vartheta: f64, zeta: f64) -> f64 {
    let c = (vartheta * x).clamp(-zeta, zeta);
    let e = (-c).exp();
    vartheta * e / ((1.0 + e) * (1.0 + e))
}

fn junction_slope(vartheta: f64, zeta: f64) -> f64 {
    let e = (-zeta).exp();
    vartheta * e / ((1.0 + e) * (1.0 + e))
}

/// Noise-normalized QoS margin of user `k` under one channel realization,
/// optionally with its conjugate gradient in the stacked variable. Returns
/// the raw margin in watts; the gradient (when requested) is written for the
/// normalized margin z / sigma^2.
fn margin_and_grad(
    varpi: &CompositeVariable,
    v_aug: &CVec,
    sample: &CMat,
    k: usize,
    eta: f64,
    sigma2: f64,
    mut grad: Option<&mut CVec>,
) -> f64 {
    let m = varpi.m;
    let n = varpi.n;
    let k_users = varpi.k_users;
    let data = &varpi.varpi;
    if let Some(g) = grad.as_deref_mut() {
        g.fill(C64::new(0.0, 0.0));
    }

    // effective downlink channel e = sample^H [1; v]
    let mut e = CVec::zeros(m);
    for a in 0..m {
        let mut acc = C64::new(0.0, 0.0);
        for i in 0..=n {
            acc += sample[(i, a)].conj() * v_aug[i];
        }
        e[a] = acc;
    }

    let mut desired = 0.0f64;
    let mut interference = 0.0f64;
    for j in 0..k_users {
        let base = j * m;
        let mut c = C64::new(0.0, 0.0);
        for a in 0..m {
            c += e[a].conj() * data[base + a];
        }
        if j == k {
            desired = c.norm_sqr();
        } else {
            interference += c.norm_sqr();
        }
        if let Some(g) = grad.as_deref_mut() {
            let factor = if j == k { -1.0 } else { eta } / sigma2;
            let cw = c * factor;
            for a in 0..m {
                g[base + a] += e[a] * cw;
            }
            let cv = c.conj() * factor;
            for i in 1..=n {
                let mut s = C64::new(0.0, 0.0);
                for a in 0..m {
                    s += sample[(i, a)] * data[base + a];
                }
                g[k_users * m + i - 1] += s * cv;
            }
        }
    }

    eta * (interference + sigma2) - desired
}

/// QoS margin z_k (watts) of user `k` under one composite channel sample, and
/// the smoothed outage indicator of its noise-normalized value, clamped into
/// [0, 1].
pub fn eval_qos_margin(
    varpi: &CompositeVariable,
    sample: &CMat,
    k: usize,
    spec: &OutageSpec,
    vartheta: f64,
    zeta: f64,
) -> Result<(f64, f64)> {
    check_sample(varpi, sample, k)?;
    spec.validate()?;
    let z = margin_and_grad(varpi, &varpi.v_aug(), sample, k, spec.eta, spec.sigma2, None);
    let g = smooth_step(z / spec.sigma2, vartheta, zeta).clamp(0.0, 1.0);
    Ok((z, g))
}

/// Conjugate gradient of the smoothed indicator for user `k` under one
/// sample: 2 Re{grad^H delta} is the first-order change along delta. The
/// derivative follows the linear-tail extension, so it stays nonzero even
/// where the clamped value saturates.
pub fn grad_g(
    varpi: &CompositeVariable,
    sample: &CMat,
    k: usize,
    spec: &OutageSpec,
    vartheta: f64,
    zeta: f64,
) -> Result<CVec> {
    check_sample(varpi, sample, k)?;
    spec.validate()?;
    let mut grad = CVec::zeros(varpi.dim());
    let z = margin_and_grad(
        varpi,
        &varpi.v_aug(),
        sample,
        k,
        spec.eta,
        spec.sigma2,
        Some(&mut grad),
    );
    let factor = smooth_step_deriv(z / spec.sigma2, vartheta, zeta);
    Ok(grad.scale(factor))
}

fn check_sample(varpi: &CompositeVariable, sample: &CMat, k: usize) -> Result<()> {
    if k >= varpi.k_users {
        return Err(Error::InvalidParameter(format!(
            "user index {k} out of range"
        )));
    }
    if sample.nrows() != varpi.n + 1 || sample.ncols() != varpi.m {
        return Err(Error::DimensionMismatch(
            "composite channel sample does not match the variable layout".into(),
        ));
    }
    Ok(())
}

/// Running surrogate data: per-user constraint values, averaged conjugate
/// gradients, proximal weights and the anchor they expand around.
#[derive(Debug, Clone)]
pub struct SurrogateState {
    pub f: Vec<f64>,
    pub f_vec: Vec<CVec>,
    pub tau: Vec<f64>,
    pub anchor: CVec,
    pub t: u32,
}

impl SurrogateState {
    pub fn new(k_users: usize, dim: usize, tau: f64) -> Result<Self> {
        if k_users == 0 || dim == 0 {
            return Err(Error::InvalidParameter("empty surrogate state".into()));
        }
        if !(tau > 0.0) {
            return Err(Error::InvalidParameter("curvature must be positive".into()));
        }
        Ok(Self {
            f: vec![0.0; k_users],
            f_vec: vec![CVec::zeros(dim); k_users],
            tau: vec![tau; k_users],
            anchor: CVec::zeros(dim),
            t: 0,
        })
    }

    /// Surrogate for user `k` at `x`: value + 2 Re{grad^H (x-anchor)} +
    /// tau ||x-anchor||^2. Equals `f[k]` exactly at the anchor.
    #[must_use]
    pub fn surrogate_value(&self, k: usize, x: &CVec) -> f64 {
        let d = x - &self.anchor;
        self.f[k] + 2.0 * self.f_vec[k].dotc(&d).re + self.tau[k] * d.norm_squared()
    }
}

const SHARD: usize = 256;

/// One sample batch: per-user sums of the clamped smoothed indicator, plus
/// per-user gradient sums when requested. Sharded for parallelism with a
/// fixed reduction order, so results do not depend on the thread pool.
fn batch_sums(
    varpi: &CompositeVariable,
    v_aug: &CVec,
    h_bars: &[CMat],
    em: &ErrorModel,
    specs: &[OutageSpec],
    vartheta: f64,
    zeta: f64,
    count: usize,
    seed: u64,
    with_grad: bool,
) -> (Vec<f64>, Vec<CVec>) {
    let k_users = varpi.k_users;
    let dim = varpi.dim();
    let m = varpi.m;
    let n_shards = count.div_ceil(SHARD);
    let partials: Vec<(Vec<f64>, Vec<CVec>)> = (0..n_shards)
        .into_par_iter()
        .map(|s| {
            let mut rng = stream(derive_seed(seed, &[s as u64]));
            let len = SHARD.min(count - s * SHARD);
            let mut g_sum = vec![0.0f64; k_users];
            let mut grad_sum = if with_grad {
                vec![CVec::zeros(dim); k_users]
            } else {
                Vec::new()
            };
            let mut scratch = CVec::zeros(dim);
            for _ in 0..len {
                let errs = em.sample_csi_errors_with(m, k_users, &mut rng);
                for (user, err) in errs.iter().enumerate() {
                    let sample = &h_bars[user] - err;
                    let spec = &specs[user];
                    let grad_slot = with_grad.then_some(&mut scratch);
                    let z = margin_and_grad(
                        varpi,
                        v_aug,
                        &sample,
                        user,
                        spec.eta,
                        spec.sigma2,
                        grad_slot,
                    );
                    let zn = z / spec.sigma2;
                    g_sum[user] += smooth_step(zn, vartheta, zeta).clamp(0.0, 1.0);
                    if with_grad {
                        let factor = smooth_step_deriv(zn, vartheta, zeta);
                        let acc = &mut grad_sum[user];
                        for i in 0..dim {
                            acc[i] += scratch[i] * factor;
                        }
                    }
                }
            }
            (g_sum, grad_sum)
        })
        .collect();

    let mut g_total = vec![0.0f64; k_users];
    let mut grad_total = vec![CVec::zeros(dim); k_users];
    for (g, grads) in partials {
        for u in 0..k_users {
            g_total[u] += g[u];
        }
        if with_grad {
            for u in 0..k_users {
                grad_total[u] += &grads[u];
            }
        }
    }
    (g_total, grad_total)
}

/// Draws fresh error batches at the current point and refreshes the state:
/// constraint values from a plain batch mean, gradients through the running
/// (1-rho, rho) recursion whose weight is one on the first call.
pub fn update_surrogate(
    state: &mut SurrogateState,
    varpi: &CompositeVariable,
    h_bars: &[CMat],
    em: &ErrorModel,
    specs: &[OutageSpec],
    cfg: &CsscaConfig,
    seed: u64,
) -> Result<()> {
    cfg.validate()?;
    let k_users = varpi.k_users;
    if h_bars.len() != k_users || specs.len() != k_users || state.f.len() != k_users {
        return Err(Error::DimensionMismatch(
            "channels, specs and state must agree on the user count".into(),
        ));
    }
    for (h, s) in h_bars.iter().zip(specs) {
        s.validate()?;
        if h.nrows() != varpi.n + 1 || h.ncols() != varpi.m {
            return Err(Error::DimensionMismatch(
                "channel estimate does not match the variable layout".into(),
            ));
        }
    }
    let v_aug = varpi.v_aug();

    let (g_sum, _) = batch_sums(
        varpi,
        &v_aug,
        h_bars,
        em,
        specs,
        cfg.vartheta,
        cfg.zeta,
        cfg.value_samples,
        derive_seed(seed, &[0]),
        false,
    );
    let (_, grad_sum) = batch_sums(
        varpi,
        &v_aug,
        h_bars,
        em,
        specs,
        cfg.vartheta,
        cfg.zeta,
        cfg.grad_samples,
        derive_seed(seed, &[1]),
        true,
    );

    let rho = cfg.rho(state.t);
    for u in 0..k_users {
        state.f[u] = g_sum[u] / cfg.value_samples as f64;
        let mean = grad_sum[u].unscale(cfg.grad_samples as f64);
        state.f_vec[u] = state.f_vec[u].scale(1.0 - rho) + mean.scale(rho);
    }
    state.anchor = varpi.varpi.clone();
    state.t += 1;
    Ok(())
}

/// Re-sizes the precoder block at fixed phases until the worst smoothed
/// outage starts below its epsilon. A common power factor cannot do this
/// for K > 1 (signal and interference scale together, pinning the SIR), so
/// the precoders are instead re-solved at deterministic SINR targets
/// inflated in 1 dB steps, which buys genuine margin against the estimation
/// error. Smoothed outage is scored on one cached error batch so every
/// candidate sees common randomness. Starting each stage inside the
/// constraint region keeps the first surrogate cuts small; without this the
/// opening subproblem extrapolates one noisy linearization across the whole
/// phase hypercube.
fn resize_precoders_into_constraint(
    varpi: &mut CompositeVariable,
    h_bars: &[CMat],
    em: &ErrorModel,
    specs: &[OutageSpec],
    cfg: &CsscaConfig,
    seed: u64,
) -> Result<()> {
    let k_users = varpi.k_users;
    let m = varpi.m;
    let v_aug = varpi.v_aug();
    let draws = cfg.value_samples.max(500);
    let mut rng = stream(seed);
    // cached true effective channels, [user][draw]
    let mut e_true: Vec<Vec<CVec>> = vec![Vec::with_capacity(draws); k_users];
    for _ in 0..draws {
        let errs = em.sample_csi_errors_with(m, k_users, &mut rng);
        for u in 0..k_users {
            let sample = &h_bars[u] - &errs[u];
            e_true[u].push(effective_channel(&v_aug, &sample));
        }
    }
    let slack = |w: &[CVec]| -> f64 {
        let mut worst = f64::NEG_INFINITY;
        for u in 0..k_users {
            let s = &specs[u];
            let mut acc = 0.0;
            for e in &e_true[u] {
                let mut desired = 0.0;
                let mut interference = 0.0;
                for (j, wj) in w.iter().enumerate() {
                    let c = e.dotc(wj).norm_sqr();
                    if j == u {
                        desired = c;
                    } else {
                        interference += c;
                    }
                }
                let z = (s.eta * (interference + s.sigma2) - desired) / s.sigma2;
                acc += smooth_step(z, cfg.vartheta, cfg.zeta).clamp(0.0, 1.0);
            }
            worst = worst.max(acc / draws as f64 - 0.9 * s.epsilon);
        }
        worst
    };

    let w0: Vec<CVec> = (0..k_users).map(|j| varpi.precoder(j)).collect();
    let mut best = (slack(&w0), w0);
    if best.0 <= 0.0 {
        return Ok(());
    }
    let channels: Vec<CVec> = h_bars.iter().map(|h| effective_channel(&v_aug, h)).collect();
    let mut inflation = 1.0f64;
    for _ in 0..60 {
        inflation *= 10f64.powf(0.1);
        let inflated: Vec<OutageSpec> = specs
            .iter()
            .map(|s| OutageSpec {
                eta: s.eta * inflation,
                ..*s
            })
            .collect();
        let w = match sinr_constrained_power_min(&channels, &inflated) {
            Ok(w) => w,
            Err(Error::InfeasibleTargets(_)) => break,
            Err(e) => return Err(e),
        };
        let s = slack(&w);
        if s < best.0 {
            best = (s, w);
        }
        if best.0 <= 0.0 {
            break;
        }
    }
    // on an outage floor above the target this is the least-bad start and
    // the stage reports infeasibility honestly
    for (j, w) in best.1.iter().enumerate() {
        varpi.varpi.rows_mut(j * m, m).copy_from(w);
    }
    Ok(())
}

/// Feasibility tolerances live in surrogate units; dividing by the curvature
/// converts them to the ball-distance units the projections measure.
fn scaled_qcqp(cfg: &CsscaConfig) -> QcqpConfig {
    let mut q = cfg.qcqp;
    q.feasibility_tol = (q.feasibility_tol / cfg.tau).max(q.feasibility_tol);
    q
}

fn subproblem_constraints(
    state: &SurrogateState,
    varpi: &CompositeVariable,
    epsilons: &[f64],
    optimize_v: bool,
    phase_trust: f64,
) -> Result<(Vec<BallConstraint>, Vec<BallConstraint>)> {
    let k_users = varpi.k_users;
    if epsilons.len() != k_users || state.f.len() != k_users {
        return Err(Error::DimensionMismatch(
            "epsilons and state must agree on the user count".into(),
        ));
    }
    let mut pieces = Vec::with_capacity(k_users);
    for u in 0..k_users {
        pieces.push(complete_to_ball(
            state.f[u],
            &state.f_vec[u],
            state.tau[u],
            &state.anchor,
            epsilons[u],
        )?);
    }
    let offset = k_users * varpi.m;
    let mut coords = Vec::with_capacity(if optimize_v { 2 * varpi.n } else { varpi.n });
    for i in 0..varpi.n {
        let current = varpi.varpi[offset + i];
        if optimize_v {
            coords.push(BallConstraint::coordinate(
                offset + i,
                C64::new(0.0, 0.0),
                1.0,
            ));
            coords.push(BallConstraint::coordinate(
                offset + i,
                current,
                phase_trust * phase_trust,
            ));
        } else {
            coords.push(BallConstraint::coordinate(offset + i, current, 0.0));
        }
    }
    Ok((pieces, coords))
}

fn feasible_step(
    state: &SurrogateState,
    varpi: &CompositeVariable,
    epsilons: &[f64],
    optimize_v: bool,
    cfg: &CsscaConfig,
    start: &CVec,
) -> Result<Option<QcqpPoint>> {
    let (pieces, coords) =
        subproblem_constraints(state, varpi, epsilons, optimize_v, cfg.phase_trust)?;
    let mut constraints = pieces;
    constraints.extend(coords);
    let mut weights = vec![0.0f64; varpi.dim()];
    for w in weights.iter_mut().take(varpi.k_users * varpi.m) {
        *w = 1.0;
    }
    let problem = QcqpProblem {
        weights,
        linear: None,
        constraints,
    };
    match solve_min_quadratic_over_balls(&problem, Some(start), &scaled_qcqp(cfg))? {
        QcqpSolution::Solved(pt) | QcqpSolution::CapReached(pt) => Ok(Some(pt)),
        QcqpSolution::Infeasible => Ok(None),
    }
}

/// Minimum total precoder power subject to every surrogate constraint and
/// the per-element phase bounds; `None` signals an infeasible intersection,
/// in which case the caller falls back to the min-max subproblem.
pub fn solve_feasible_subproblem(
    state: &SurrogateState,
    varpi: &CompositeVariable,
    epsilons: &[f64],
    optimize_v: bool,
    cfg: &CsscaConfig,
) -> Result<Option<QcqpPoint>> {
    feasible_step(state, varpi, epsilons, optimize_v, cfg, &state.anchor)
}

/// Minimizes the worst surrogate violation max_k (surrogate_k - epsilon_k)
/// over the phase bounds alone. Always solvable; alpha <= 0 certifies that
/// the power subproblem was feasible after all.
pub fn solve_feasibility_subproblem(
    state: &SurrogateState,
    varpi: &CompositeVariable,
    epsilons: &[f64],
    optimize_v: bool,
    cfg: &CsscaConfig,
) -> Result<MinMaxOutcome> {
    let (pieces, coords) =
        subproblem_constraints(state, varpi, epsilons, optimize_v, cfg.phase_trust)?;
    let weighted: Vec<(BallConstraint, f64)> = pieces
        .into_iter()
        .zip(state.tau.iter().copied())
        .collect();
    solve_minmax_feasibility(&weighted, &coords, &scaled_qcqp(cfg))
}

/// Per-iteration trace entry of one optimization stage.
#[derive(Debug, Clone, Copy)]
pub struct StageRecord {
    pub iteration: u32,
    /// Worst per-user smoothed outage estimate at the iterate.
    pub max_smoothed_outage: f64,
    /// Total precoder power after the blending update.
    pub power: f64,
    /// Whether the min-max fallback ran this iteration.
    pub fallback: bool,
}

/// Final variables and diagnostics of one stage.
#[derive(Debug, Clone)]
pub struct StageOutcome {
    pub varpi: CompositeVariable,
    pub trace: Vec<StageRecord>,
    /// True when the windowed stopping rule fired before the iteration cap.
    pub converged: bool,
    /// True when the exit point's worst constraint slack is within tolerance.
    pub feasible: bool,
    /// max_k (smoothed outage - epsilon) at exit.
    pub max_violation: f64,
}

/// One stage of the stochastic approximation loop: sample, refresh the
/// surrogates, solve the power subproblem (or its feasibility fallback) and
/// blend the iterate with a diminishing step. `optimize_v = false` pins the
/// phase block, which is the quantized-phase refinement stage.
pub fn cssca_stage(
    varpi0: &CompositeVariable,
    h_bars: &[CMat],
    em: &ErrorModel,
    specs: &[OutageSpec],
    optimize_v: bool,
    cfg: &CsscaConfig,
    seed: u64,
) -> Result<StageOutcome> {
    cfg.validate()?;
    let k_users = varpi0.k_users;
    if h_bars.len() != k_users || specs.len() != k_users {
        return Err(Error::DimensionMismatch(
            "channels and specs must agree on the user count".into(),
        ));
    }
    let epsilons: Vec<f64> = specs.iter().map(|s| s.epsilon).collect();
    let mut varpi = varpi0.clone();
    let mut state = SurrogateState::new(k_users, varpi.dim(), cfg.tau)?;
    let mut trace: Vec<StageRecord> = Vec::new();
    let mut converged = false;

    for t in 0..cfg.max_iters {
        update_surrogate(
            &mut state,
            &varpi,
            h_bars,
            em,
            specs,
            cfg,
            derive_seed(seed, &[t as u64]),
        )?;
        let max_f = state.f.iter().copied().fold(f64::NEG_INFINITY, f64::max);

        let mut fallback = false;
        let target =
            match solve_feasible_subproblem(&state, &varpi, &epsilons, optimize_v, cfg)? {
                Some(pt) => pt.x,
                None => {
                    fallback = true;
                    let mm =
                        solve_feasibility_subproblem(&state, &varpi, &epsilons, optimize_v, cfg)?;
                    if mm.alpha <= 0.0 {
                        // the projections stalled on a feasible instance;
                        // retry the power step from the min-max witness
                        match feasible_step(&state, &varpi, &epsilons, optimize_v, cfg, &mm.x)? {
                            Some(pt) => pt.x,
                            None => mm.x,
                        }
                    } else {
                        mm.x
                    }
                }
            };

        let gamma = cfg.gamma(t as u32);
        varpi.varpi = varpi.varpi.scale(1.0 - gamma) + target.scale(gamma);
        if !optimize_v {
            let r = varpi.v_range();
            let pinned = varpi0.varpi.rows(r.start, varpi.n).into_owned();
            varpi.varpi.rows_mut(r.start, varpi.n).copy_from(&pinned);
        }

        trace.push(StageRecord {
            iteration: t as u32,
            max_smoothed_outage: max_f,
            power: varpi.precoder_power(),
            fallback,
        });

        let len = trace.len();
        if len >= cfg.min_iters && len > cfg.stall_window {
            let past = &trace[len - 1 - cfg.stall_window];
            let f_move =
                (past.max_smoothed_outage - max_f).abs() / past.max_smoothed_outage.abs().max(1e-12);
            let p_now = trace[len - 1].power;
            let p_move = (past.power - p_now).abs() / past.power.max(1e-30);
            if f_move < cfg.xi_o && p_move < cfg.xi_o {
                converged = true;
                break;
            }
        }
    }

    let max_violation = state
        .f
        .iter()
        .zip(specs)
        .map(|(f, s)| f - s.epsilon)
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(StageOutcome {
        varpi,
        trace,
        converged,
        feasible: max_violation <= cfg.feasibility_slack,
        max_violation,
    })
}

/// Nearest-alphabet projection of a relaxed phase vector, tie-breaking to the
/// lower phase index. Entries inside the unit disk project outward.
pub fn quantize_phases(v: &CVec, q_bits: u32) -> Result<PhaseVector> {
    PhaseVector::discrete(project_to_alphabet(v, q_bits)?, q_bits)
}

/// Complete two-stage design with its verification report.
#[derive(Debug, Clone)]
pub struct CsscaDesign {
    pub v: PhaseVector,
    pub precoders: Vec<CVec>,
    /// Total transmit power of the returned precoders.
    pub power: f64,
    pub stage1: StageOutcome,
    pub stage2: StageOutcome,
    /// Per-user (outage estimate, standard error) from the final check.
    pub outage: Vec<(f64, f64)>,
    /// True when every verified outage is within epsilon plus the slack.
    pub verified: bool,
}

/// Joint design: stage one optimizes precoders and relaxed phases, the
/// phases are quantized, stage two refines the precoders at fixed phases,
/// and an independent Monte-Carlo run scores the result.
pub fn two_stage_cssca(
    h_bars: &[CMat],
    em: &ErrorModel,
    specs: &[OutageSpec],
    q_bits: u32,
    cfg: &CsscaConfig,
    seed: u64,
) -> Result<CsscaDesign> {
    cfg.validate()?;
    let k_users = h_bars.len();
    if k_users == 0 || specs.len() != k_users {
        return Err(Error::DimensionMismatch(
            "channels and specs must agree on the user count".into(),
        ));
    }
    let n = h_bars[0].nrows().saturating_sub(1);
    let m = h_bars[0].ncols();
    if n == 0 || m == 0 {
        return Err(Error::InvalidParameter("empty channel estimate".into()));
    }

    // random unit-modulus phases; precoders sized for the deterministic
    // targets on the estimates so the smoothed constraints start near 1/2
    let mut rng = stream(derive_seed(seed, &[0]));
    let v0 = CVec::from_fn(n, |_, _| {
        let theta = rng.random::<f64>() * std::f64::consts::TAU;
        C64::new(theta.cos(), theta.sin())
    });
    let mut varpi0 = {
        let mut aug = CVec::zeros(n + 1);
        aug[0] = C64::new(1.0, 0.0);
        aug.rows_mut(1, n).copy_from(&v0);
        let channels: Vec<CVec> = h_bars.iter().map(|h| effective_channel(&aug, h)).collect();
        let w0 = sinr_constrained_power_min(&channels, specs)?;
        CompositeVariable::from_parts(&w0, &v0)?
    };
    resize_precoders_into_constraint(&mut varpi0, h_bars, em, specs, cfg, derive_seed(seed, &[4]))?;

    let stage1 = cssca_stage(
        &varpi0,
        h_bars,
        em,
        specs,
        true,
        cfg,
        derive_seed(seed, &[1]),
    )?;
    let v_q = quantize_phases(&stage1.varpi.phase_part(), q_bits)?;
    let w1: Vec<CVec> = (0..k_users).map(|j| stage1.varpi.precoder(j)).collect();
    let mut varpi1 = CompositeVariable::from_parts(&w1, &v_q.v)?;
    // quantization costs margin; restore headroom before the refinement
    resize_precoders_into_constraint(&mut varpi1, h_bars, em, specs, cfg, derive_seed(seed, &[5]))?;
    let stage2 = cssca_stage(
        &varpi1,
        h_bars,
        em,
        specs,
        false,
        cfg,
        derive_seed(seed, &[2]),
    )?;

    let precoders: Vec<CVec> = (0..k_users).map(|j| stage2.varpi.precoder(j)).collect();
    let samples = cfg.verify_samples.max(100_000);
    let outage = mc_outage(
        &precoders,
        &v_q.augmented(),
        h_bars,
        em,
        specs,
        samples,
        derive_seed(seed, &[3]),
    )?;
    let verified = outage
        .iter()
        .zip(specs)
        .all(|((o, _), s)| *o <= s.epsilon + cfg.feasibility_slack);
    let power = precoders.iter().map(CVec::norm_squared).sum();
    Ok(CsscaDesign {
        v: v_q,
        precoders,
        power,
        stage1,
        stage2,
        outage,
        verified,
    })
}

//! Deterministic multiuser power control and the two reference designs built
//! on it: the estimate-as-truth baseline and progressive target inflation.
//!
//! The SINR-constrained power minimum comes from uplink-downlink duality: a
//! fixed-point iteration on virtual uplink powers (monotone from zero, so
//! divergence is an infeasibility certificate), MMSE receive directions, then
//! a K x K linear system for the downlink powers. Total uplink and downlink
//! power agree at the optimum, which the tests use as an oracle.

use nalgebra::DMatrix;
use rand::Rng;

use crate::error::{Error, Result};
use crate::outage::{mc_outage, OutageSpec};
use crate::phase::{alphabet, PhaseVector};
use crate::rng::{derive_seed, stream};
use crate::scenario::effective_channel;
use crate::single_user::{pdd_maximize_quadratic, PddConfig, QuadraticObjective};
use crate::training::ErrorModel;
use crate::{C64, CMat, CVec};

/// Achieved downlink SINR of user `k` when every user transmits.
#[must_use]
pub fn deterministic_sinr(channels: &[CVec], precoders: &[CVec], k: usize, sigma2: f64) -> f64 {
    let mut interference = sigma2;
    let mut desired = 0.0;
    for (j, w) in precoders.iter().enumerate() {
        let c = channels[k].dotc(w).norm_sqr();
        if j == k {
            desired = c;
        } else {
            interference += c;
        }
    }
    desired / interference
}

/// Virtual uplink power fixed point on noise-normalized channels. The
/// iteration is monotone from zero, so powers climbing past an
/// interference-to-noise ratio of 1e12 (or failing to settle) certify
/// infeasible targets.
fn uplink_fixed_point(channels: &[CVec], etas: &[f64]) -> Result<Vec<f64>> {
    let k = channels.len();
    let m = channels[0].len();
    let mut q = vec![0.0f64; k];
    for _ in 0..5000 {
        let mut shift = 0.0f64;
        for i in 0..k {
            let mut cov = CMat::identity(m, m);
            for j in 0..k {
                if j != i && q[j] > 0.0 {
                    cov += (&channels[j] * channels[j].adjoint()).scale(q[j]);
                }
            }
            let sol = cov
                .cholesky()
                .map(|c| c.solve(&channels[i]))
                .ok_or_else(|| Error::Numerical("uplink covariance lost definiteness".into()))?;
            let gain = channels[i].dotc(&sol).re;
            if !(gain > 0.0) {
                return Err(Error::Numerical("uplink channel gain collapsed".into()));
            }
            let next = etas[i] / gain;
            if !next.is_finite() || next * channels[i].norm_squared() > 1e12 {
                return Err(Error::InfeasibleTargets(format!(
                    "virtual uplink power diverged for user {i}"
                )));
            }
            shift = shift.max((next - q[i]).abs() / next);
            q[i] = next;
        }
        if shift < 1e-13 {
            return Ok(q);
        }
    }
    Err(Error::InfeasibleTargets(
        "virtual uplink powers did not settle".into(),
    ))
}

/// Minimum-power precoders meeting every user's SINR target exactly, taking
/// the given per-user channels as the truth.
pub fn sinr_constrained_power_min(
    channels: &[CVec],
    specs: &[OutageSpec],
) -> Result<Vec<CVec>> {
    let k = channels.len();
    if k == 0 || specs.len() != k {
        return Err(Error::DimensionMismatch(
            "channels and specs must agree on the user count".into(),
        ));
    }
    let m = channels[0].len();
    for (g, spec) in channels.iter().zip(specs) {
        spec.validate()?;
        if g.len() != m {
            return Err(Error::DimensionMismatch(
                "channel vectors must share one antenna count".into(),
            ));
        }
        if g.norm_squared() == 0.0 {
            return Err(Error::InvalidParameter("zero channel vector".into()));
        }
    }

    // noise-normalized channels make every receiver's noise power one
    let normalized: Vec<CVec> = channels
        .iter()
        .zip(specs)
        .map(|(g, s)| g.unscale(s.sigma2.sqrt()))
        .collect();
    let etas: Vec<f64> = specs.iter().map(|s| s.eta).collect();
    let q = uplink_fixed_point(&normalized, &etas)?;

    let mut cov = CMat::identity(m, m);
    for (g, qi) in normalized.iter().zip(&q) {
        if *qi > 0.0 {
            cov += (g * g.adjoint()).scale(*qi);
        }
    }
    let chol = cov
        .cholesky()
        .ok_or_else(|| Error::Numerical("downlink direction solve failed".into()))?;
    let directions: Vec<CVec> = normalized
        .iter()
        .map(|g| {
            let u = chol.solve(g);
            let norm = u.norm();
            u.unscale(norm)
        })
        .collect();

    // downlink powers from the K SINR equalities
    let mut system = DMatrix::<f64>::zeros(k, k);
    for i in 0..k {
        for j in 0..k {
            let gain = normalized[i].dotc(&directions[j]).norm_sqr();
            system[(i, j)] = if i == j { gain / etas[i] } else { -gain };
        }
    }
    let rhs = nalgebra::DVector::from_element(k, 1.0);
    let p = system
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::InfeasibleTargets("downlink power system is singular".into()))?;
    if p.iter().any(|x| !(*x > 0.0) || !x.is_finite()) {
        return Err(Error::InfeasibleTargets(
            "downlink power solution is not positive".into(),
        ));
    }

    Ok(directions
        .iter()
        .zip(p.iter())
        .map(|(u, pi)| u.scale(pi.sqrt()))
        .collect())
}

/// Designs that treat the channel estimates as exact: surface phases maximize
/// the summed composite-channel gains, precoders meet the deterministic SINR
/// targets at minimum power. Returns (phases, precoders, total power).
pub fn non_robust_baseline(
    h_bars: &[CMat],
    specs: &[OutageSpec],
    q_bits: u32,
    pdd: &PddConfig,
    seed: u64,
) -> Result<(PhaseVector, Vec<CVec>, f64)> {
    if h_bars.is_empty() || h_bars.len() != specs.len() {
        return Err(Error::DimensionMismatch(
            "channels and specs must agree on the user count".into(),
        ));
    }
    let refs: Vec<&CMat> = h_bars.iter().collect();
    let objective = QuadraticObjective::sum_composites(&refs);
    let outcome = pdd_maximize_quadratic(&objective, q_bits, pdd, seed)?;
    let v_aug = outcome.v.augmented();
    let channels: Vec<CVec> = h_bars.iter().map(|h| effective_channel(&v_aug, h)).collect();
    let precoders = sinr_constrained_power_min(&channels, specs)?;
    let power = precoders.iter().map(CVec::norm_squared).sum();
    Ok((outcome.v, precoders, power))
}

/// Progressive target inflation with a Monte-Carlo stopping check.
#[derive(Debug, Clone)]
pub struct ProgressiveMuOutcome {
    pub v: PhaseVector,
    pub precoders: Vec<CVec>,
    /// Total transmit power of the returned precoders.
    pub power: f64,
    /// Final multiplicative inflation applied to every SINR target.
    pub inflation: f64,
    /// Per-user (outage estimate, standard error) at the returned design.
    pub outage: Vec<(f64, f64)>,
    /// Power after each outer step, in step order.
    pub power_trace: Vec<f64>,
    pub steps: u32,
    /// False when the step cap ran out before every user met epsilon.
    pub converged: bool,
}

/// Alternates deterministic precoder sizing with per-element discrete phase
/// sweeps, inflating all SINR targets by `delta_eta` per outer step until the
/// measured outage drops below every user's epsilon. The Monte-Carlo check
/// reuses one seed across steps so the stopping rule sees common randomness.
pub fn progressive_thresholding_mu(
    h_bars: &[CMat],
    em: &ErrorModel,
    specs: &[OutageSpec],
    q_bits: u32,
    delta_eta: f64,
    mc_samples: usize,
    max_steps: u32,
    seed: u64,
) -> Result<ProgressiveMuOutcome> {
    if h_bars.is_empty() || h_bars.len() != specs.len() {
        return Err(Error::DimensionMismatch(
            "channels and specs must agree on the user count".into(),
        ));
    }
    if !(delta_eta > 1.0) || !delta_eta.is_finite() {
        return Err(Error::InvalidParameter(
            "target inflation factor must exceed one".into(),
        ));
    }
    if max_steps == 0 {
        return Err(Error::InvalidParameter("need at least one step".into()));
    }
    let n = h_bars[0].nrows() - 1;
    let table = alphabet(q_bits)?;

    let mut rng = stream(derive_seed(seed, &[0]));
    let mut v = CVec::from_fn(n, |_, _| table[rng.random_range(0..table.len())]);
    let mc_seed = derive_seed(seed, &[1]);

    let mut inflation = 1.0f64;
    let mut power_trace = Vec::new();
    let mut last: Option<(Vec<CVec>, Vec<(f64, f64)>, f64)> = None;
    let mut steps = 0u32;
    while steps < max_steps {
        steps += 1;
        let inflated: Vec<OutageSpec> = specs
            .iter()
            .map(|s| OutageSpec {
                eta: s.eta * inflation,
                ..*s
            })
            .collect();

        // precoder sizing and phase sweeps until the sweep makes no change;
        // inflated targets sliding past the feasible region end the climb
        // with whatever the previous step achieved
        let mut precoders = Vec::new();
        let mut infeasible = false;
        for _ in 0..10 {
            let v_aug = augment(&v);
            let channels: Vec<CVec> =
                h_bars.iter().map(|h| effective_channel(&v_aug, h)).collect();
            match sinr_constrained_power_min(&channels, &inflated) {
                Ok(w) => precoders = w,
                Err(Error::InfeasibleTargets(_)) => {
                    infeasible = true;
                    break;
                }
                Err(e) => return Err(e),
            }
            let changed = margin_sweeps(&mut v, h_bars, &precoders, &inflated, &table);
            if !changed {
                break;
            }
        }
        if infeasible {
            break;
        }

        let v_aug = augment(&v);
        let power: f64 = precoders.iter().map(CVec::norm_squared).sum();
        power_trace.push(power);
        let outage = mc_outage(&precoders, &v_aug, h_bars, em, specs, mc_samples, mc_seed)?;
        let ok = outage
            .iter()
            .zip(specs)
            .all(|((o, _), s)| *o <= s.epsilon);
        last = Some((precoders, outage, power));
        if ok {
            break;
        }
        inflation *= delta_eta;
    }

    let Some((precoders, outage, power)) = last else {
        return Err(Error::InfeasibleTargets(
            "base targets are infeasible at the initial phases".into(),
        ));
    };
    let converged = outage
        .iter()
        .zip(specs)
        .all(|((o, _), s)| *o <= s.epsilon);
    Ok(ProgressiveMuOutcome {
        v: PhaseVector::discrete(v, q_bits)?,
        precoders,
        power,
        inflation,
        outage,
        power_trace,
        steps,
        converged,
    })
}

fn augment(v: &CVec) -> CVec {
    let mut t = CVec::zeros(v.len() + 1);
    t[0] = C64::new(1.0, 0.0);
    t.rows_mut(1, v.len()).copy_from(v);
    t
}

/// Element-by-element sweeps maximizing the worst relative SINR margin at
/// fixed precoders; returns whether any element moved.
fn margin_sweeps(
    v: &mut CVec,
    h_bars: &[CMat],
    precoders: &[CVec],
    specs: &[OutageSpec],
    table: &[C64],
) -> bool {
    let n = v.len();
    let v_aug = augment(v);
    let mut effective: Vec<CVec> = h_bars.iter().map(|h| effective_channel(&v_aug, h)).collect();
    let mut any_change = false;
    for _ in 0..20 {
        let mut moved = 0usize;
        for e in 0..n {
            let current = v[e];
            let mut best = current;
            let mut best_margin = worst_margin(&effective, precoders, specs);
            for &candidate in table {
                if candidate == current {
                    continue;
                }
                let delta = candidate - current;
                let shifted: Vec<CVec> = effective
                    .iter()
                    .zip(h_bars)
                    .map(|(ek, h)| {
                        CVec::from_fn(ek.len(), |a, _| ek[a] + h[(e + 1, a)].conj() * delta)
                    })
                    .collect();
                let margin = worst_margin(&shifted, precoders, specs);
                if margin > best_margin * (1.0 + 1e-12) {
                    best_margin = margin;
                    best = candidate;
                }
            }
            if best != current {
                let delta = best - current;
                for (ek, h) in effective.iter_mut().zip(h_bars) {
                    for a in 0..ek.len() {
                        ek[a] += h[(e + 1, a)].conj() * delta;
                    }
                }
                v[e] = best;
                moved += 1;
            }
        }
        if moved == 0 {
            break;
        }
        any_change = true;
    }
    any_change
}

fn worst_margin(channels: &[CVec], precoders: &[CVec], specs: &[OutageSpec]) -> f64 {
    channels
        .iter()
        .enumerate()
        .map(|(k, _)| deterministic_sinr(channels, precoders, k, specs[k].sigma2) / specs[k].eta)
        .fold(f64::INFINITY, f64::min)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::sample_cn01;
    use crate::scenario::{synthesize_scenario, PropagationParams, ScenarioGeometry};
    use crate::training::{build_training_pattern, error_covariance, PatternKind};

    fn random_channels(k: usize, m: usize, seed: u64) -> Vec<CVec> {
        let mut rng = stream(seed);
        (0..k)
            .map(|_| CVec::from_fn(m, |_, _| sample_cn01(&mut rng)))
            .collect()
    }

    fn spec(eta: f64) -> OutageSpec {
        OutageSpec {
            eta,
            epsilon: 0.1,
            sigma2: 1e-11,
        }
    }

    fn desk_setup(
        k_users: usize,
        n_y: usize,
        n_z: usize,
        m: usize,
        seed: u64,
    ) -> (Vec<CMat>, ErrorModel, Vec<OutageSpec>) {
        let geom = ScenarioGeometry::reference_layout(m, n_y, n_z, k_users);
        let channels = synthesize_scenario(&geom, &PropagationParams::defaults(), seed).unwrap();
        let n = n_y * n_z;
        let pattern =
            build_training_pattern(n, n + 1, PatternKind::QuantizedDft { q_bits: 2 }).unwrap();
        // 18 dBm training power; multiuser designs need estimates whose
        // error does not dominate the cross-user interference
        let em = error_covariance(&pattern, 6.3e-2, 1e-11).unwrap();
        let specs = vec![spec(10f64.powf(0.5)); k_users];
        (channels.composite, em, specs)
    }

    #[test]
    fn single_user_reduces_to_maximum_ratio_transmission() {
        let g = random_channels(1, 4, 11);
        let s = vec![spec(10.0)];
        let w = sinr_constrained_power_min(&g, &s).unwrap();
        let expected_power = s[0].eta * s[0].sigma2 / g[0].norm_squared();
        assert!((w[0].norm_squared() - expected_power).abs() <= 1e-9 * expected_power);
        // collinear with the channel
        let overlap = g[0].dotc(&w[0]).norm() / (g[0].norm() * w[0].norm());
        assert!((overlap - 1.0).abs() <= 1e-9);
    }

    #[test]
    fn targets_are_met_with_equality() {
        let g = random_channels(3, 4, 29);
        let s = vec![spec(2.0), spec(5.0), spec(1.3)];
        let w = sinr_constrained_power_min(&g, &s).unwrap();
        for k in 0..3 {
            let sinr = deterministic_sinr(&g, &w, k, s[k].sigma2);
            assert!(
                (sinr - s[k].eta).abs() <= 1e-6 * s[k].eta,
                "user {k}: {} vs {}",
                sinr,
                s[k].eta
            );
        }
        // shrinking every precoder breaks at least its own target
        let shrunk: Vec<CVec> = w.iter().map(|x| x.scale(0.999)).collect();
        let violated = (0..3).any(|k| deterministic_sinr(&g, &shrunk, k, s[k].sigma2) < s[k].eta);
        assert!(violated);
    }

    #[test]
    fn downlink_power_matches_the_virtual_uplink_total() {
        let g = random_channels(4, 6, 47);
        let s = vec![spec(3.0), spec(1.0), spec(6.0), spec(2.2)];
        let w = sinr_constrained_power_min(&g, &s).unwrap();
        let downlink: f64 = w.iter().map(CVec::norm_squared).sum();
        let normalized: Vec<CVec> = g
            .iter()
            .zip(&s)
            .map(|(gi, si)| gi.unscale(si.sigma2.sqrt()))
            .collect();
        let etas: Vec<f64> = s.iter().map(|si| si.eta).collect();
        let uplink: f64 = uplink_fixed_point(&normalized, &etas).unwrap().iter().sum();
        assert!(
            (downlink - uplink).abs() <= 1e-6 * uplink,
            "duality gap: {downlink} vs {uplink}"
        );
    }

    #[test]
    fn collinear_channels_with_high_targets_are_infeasible() {
        let base = random_channels(1, 4, 5)[0].clone();
        let g = vec![base.clone(), base.scale(1.5)];
        let s = vec![spec(2.0), spec(2.0)];
        match sinr_constrained_power_min(&g, &s) {
            Err(Error::InfeasibleTargets(_)) => {}
            other => panic!("expected infeasible targets, got {other:?}"),
        }
    }

    #[test]
    fn non_robust_single_user_is_mrt_sized() {
        let (h_bars, _, specs) = desk_setup(1, 4, 2, 4, 303);
        let pdd = PddConfig::default();
        let (v, w, power) = non_robust_baseline(&h_bars, &specs, 1, &pdd, 7).unwrap();
        let g = effective_channel(&v.augmented(), &h_bars[0]);
        let expected = specs[0].eta * specs[0].sigma2 / g.norm_squared();
        assert!((power - expected).abs() <= 1e-9 * expected);
        assert!((w[0].norm_squared() - expected).abs() <= 1e-9 * expected);
    }

    #[test]
    fn non_robust_design_meets_targets_but_not_outage() {
        let (h_bars, em, specs) = desk_setup(2, 4, 2, 4, 911);
        let pdd = PddConfig::default();
        let (v, w, _) = non_robust_baseline(&h_bars, &specs, 1, &pdd, 3).unwrap();
        let v_aug = v.augmented();
        let channels: Vec<CVec> = h_bars.iter().map(|h| effective_channel(&v_aug, h)).collect();
        for k in 0..2 {
            let sinr = deterministic_sinr(&channels, &w, k, specs[k].sigma2);
            assert!((sinr - specs[k].eta).abs() <= 1e-6 * specs[k].eta);
        }
        // the deterministic design sits on the SINR boundary, so estimation
        // errors push roughly half the realizations into outage
        let outage = mc_outage(&w, &v_aug, &h_bars, &em, &specs, 4000, 99).unwrap();
        assert!(outage.iter().any(|(o, _)| *o > specs[0].epsilon));
    }

    #[test]
    fn progressive_inflation_reaches_the_outage_target() {
        let (h_bars, em, specs) = desk_setup(2, 4, 2, 4, 1201);
        let out = progressive_thresholding_mu(
            &h_bars,
            &em,
            &specs,
            1,
            10f64.powf(0.01),
            2000,
            400,
            17,
        )
        .unwrap();
        assert!(out.converged, "ran out of steps at {:?}", out.outage);
        for ((o, _), s) in out.outage.iter().zip(&specs) {
            assert!(o <= &s.epsilon);
        }
        assert!(out.inflation >= 1.0);
        for pair in out.power_trace.windows(2) {
            assert!(
                pair[1] >= pair[0] * (1.0 - 1e-9),
                "power fell: {} -> {}",
                pair[0],
                pair[1]
            );
        }
    }

    #[test]
    fn progressive_reruns_identically() {
        let (h_bars, em, specs) = desk_setup(2, 3, 2, 4, 88);
        let run = || {
            progressive_thresholding_mu(
                &h_bars,
                &em,
                &specs,
                1,
                10f64.powf(0.05),
                1500,
                200,
                5,
            )
            .unwrap()
        };
        let a = run();
        let b = run();
        assert_eq!(a.steps, b.steps);
        assert_eq!(a.power, b.power);
        assert_eq!(a.v.v, b.v.v);
    }
}

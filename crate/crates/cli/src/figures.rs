//! Named figure presets: each reproduces one published experiment at either
//! desk (CI-sized) or full scale and emits plot-ready CSV.

use std::fmt::Write as _;

use irsbf_core::multiuser::{two_stage_cssca, CsscaConfig, StageOutcome};
use irsbf_core::outage::{min_power_for_stats, signal_stats_aug, PowerBisection};
use irsbf_core::rng::derive_seed;
use irsbf_core::scenario::synthesize_scenario;
use irsbf_core::training::{
    build_training_pattern, channel_moments, error_covariance, lmmse_estimate, ls_estimate, nmse,
    PatternKind,
};
use irsbf_core::{C64, CVec};

use crate::bundle::{ComplexMat, ComplexVec, SolutionBundle};
use crate::spec::{dbm_to_watts, watts_to_dbm, EstimationBlock, ExperimentSpec, Scale};

pub const FIGURE_NAMES: [&str; 10] = [
    "fig5", "fig6", "fig7", "fig8", "fig9", "fig10", "fig11", "region3", "region4", "nmse3",
];

/// The files produced for one figure: (relative path, contents). The caller
/// owns writing them to disk.
#[derive(Debug)]
pub struct FigureBundle {
    pub files: Vec<(String, String)>,
}

fn spec_json(text: &str) -> ExperimentSpec {
    ExperimentSpec::from_json(text).expect("figure presets are well formed")
}

fn metadata(name: &str, scale: Scale, seed: u64, detail: &serde_json::Value) -> String {
    let doc = serde_json::json!({
        "figure": name,
        "scale": scale.name(),
        "seed": seed,
        "tool_version": env!("CARGO_PKG_VERSION"),
        "detail": detail,
    });
    serde_json::to_string_pretty(&doc).expect("metadata serializes")
}

/// Standard sweep figure: run the preset and emit results/timings/bundles.
fn sweep_files(
    name: &str,
    spec: &ExperimentSpec,
    scale: Scale,
    prefix: &str,
) -> anyhow::Result<Vec<(String, String)>> {
    crate::runner::experiment_files(name, spec, scale, prefix)
}

pub fn reproduce_figure(name: &str, scale: Scale, seed: u64) -> anyhow::Result<FigureBundle> {
    let files = match name {
        "fig5" => fig5(scale, seed)?,
        "fig6" => fig6(scale, seed)?,
        "fig7" => fig7(scale, seed)?,
        "fig8" => fig8(scale, seed)?,
        "fig9" => fig9(scale, seed)?,
        "fig10" => fig10(scale, seed)?,
        "fig11" => fig11(scale, seed)?,
        "region3" => region3(scale, seed)?,
        "region4" => region4(scale, seed)?,
        "nmse3" => nmse3(scale, seed)?,
        other => anyhow::bail!(
            "unknown figure {other:?}; supported figures: {}",
            FIGURE_NAMES.join(", ")
        ),
    };
    Ok(FigureBundle { files })
}

fn grid(lo: f64, hi: f64, step: f64) -> Vec<f64> {
    let count = ((hi - lo) / step + 1e-9).floor() as usize;
    (0..=count).map(|i| lo + i as f64 * step).collect()
}

/// Single-user benchmark comparison at N = 10, eta = 15 dB: the compact
/// surface keeps exhaustive enumeration affordable as the reference bound.
fn fig5(scale: Scale, seed: u64) -> anyhow::Result<Vec<(String, String)>> {
    let (values, draws) = match scale {
        Scale::Desk => (vec![2.0, 6.0, 10.0], 10),
        Scale::Full => (grid(0.0, 14.0, 2.0), 100),
    };
    let mut spec = spec_json(
        r#"{
            "scenario": {"m": 4, "n_y": 5, "n_z": 2},
            "outage": {"eta_db": 15.0},
            "algorithms": ["wsmax", "msp", "mpv", "mvr", "exhaustive"],
            "sweep": {"variable": "p_u", "values": [6.0]}
        }"#,
    );
    spec.sweep.values = values;
    spec.draws = draws;
    spec.seed = seed;
    sweep_files("fig5", &spec, scale, "")
}

/// Transmit power across the weighting-factor grid, at two grid spacings.
fn fig6(scale: Scale, seed: u64) -> anyhow::Result<Vec<(String, String)>> {
    let (n_y, n_z, draws) = match scale {
        Scale::Desk => (4, 2, 5),
        Scale::Full => (8, 5, 50),
    };
    let mut files = Vec::new();
    for (tag, step) in [("dw1", 1.0), ("dw5", 5.0)] {
        let mut spec = spec_json(
            r#"{
                "scenario": {"m": 4, "n_y": 4, "n_z": 2},
                "outage": {"eta_db": 15.0},
                "algorithms": ["wsmax"],
                "sweep": {"variable": "omega", "values": [0.0]}
            }"#,
        );
        spec.scenario.n_y = n_y;
        spec.scenario.n_z = n_z;
        spec.sweep.values = grid(-40.0, 10.0, step);
        spec.draws = draws;
        spec.seed = seed;
        files.extend(sweep_files("fig6", &spec, scale, &format!("{tag}/"))?);
    }
    Ok(files)
}

/// Power versus uplink training power.
fn fig7(scale: Scale, seed: u64) -> anyhow::Result<Vec<(String, String)>> {
    let (n_y, n_z, values, draws) = match scale {
        Scale::Desk => (4, 2, vec![2.0, 6.0, 10.0], 10),
        Scale::Full => (8, 5, grid(0.0, 14.0, 2.0), 100),
    };
    let mut spec = spec_json(
        r#"{
            "scenario": {"m": 4, "n_y": 4, "n_z": 2},
            "outage": {"eta_db": 15.0},
            "algorithms": ["wsmax", "msp", "mpv", "mvr", "no_irs"],
            "sweep": {"variable": "p_u", "values": [6.0]}
        }"#,
    );
    spec.scenario.n_y = n_y;
    spec.scenario.n_z = n_z;
    spec.sweep.values = values;
    spec.draws = draws;
    spec.seed = seed;
    sweep_files("fig7", &spec, scale, "")
}

/// Power versus the SINR target.
fn fig8(scale: Scale, seed: u64) -> anyhow::Result<Vec<(String, String)>> {
    let (n_y, n_z, values, draws) = match scale {
        Scale::Desk => (4, 2, vec![5.0, 10.0, 15.0], 10),
        Scale::Full => (8, 5, grid(0.0, 18.0, 3.0), 100),
    };
    let mut spec = spec_json(
        r#"{
            "scenario": {"m": 4, "n_y": 4, "n_z": 2},
            "algorithms": ["wsmax", "msp", "mpv", "mvr", "no_irs"],
            "sweep": {"variable": "eta", "values": [5.0]}
        }"#,
    );
    spec.scenario.n_y = n_y;
    spec.scenario.n_z = n_z;
    spec.sweep.values = values;
    spec.draws = draws;
    spec.seed = seed;
    sweep_files("fig8", &spec, scale, "")
}

/// Power versus the outage target.
fn fig9(scale: Scale, seed: u64) -> anyhow::Result<Vec<(String, String)>> {
    let (n_y, n_z, values, draws) = match scale {
        Scale::Desk => (4, 2, vec![0.05, 0.1, 0.2], 10),
        Scale::Full => (8, 5, vec![0.02, 0.05, 0.1, 0.15, 0.2, 0.3], 100),
    };
    let mut spec = spec_json(
        r#"{
            "scenario": {"m": 4, "n_y": 4, "n_z": 2},
            "algorithms": ["wsmax", "msp", "mpv", "mvr", "no_irs"],
            "sweep": {"variable": "epsilon", "values": [0.1]}
        }"#,
    );
    spec.scenario.n_y = n_y;
    spec.scenario.n_z = n_z;
    spec.sweep.values = values;
    spec.draws = draws;
    spec.seed = seed;
    sweep_files("fig9", &spec, scale, "")
}

fn stage_rows(out: &mut String, stage: usize, trace: &StageOutcome, epsilon: f64) {
    for r in &trace.trace {
        let _ = writeln!(
            out,
            "{stage},{},{:.6},{:.6},{}",
            r.iteration,
            watts_to_dbm(r.power.max(1e-300)),
            r.max_smoothed_outage - epsilon,
            u8::from(r.fallback)
        );
    }
}

/// Convergence trace of the two-stage stochastic design at K = 4.
fn fig10(scale: Scale, seed: u64) -> anyhow::Result<Vec<(String, String)>> {
    let spec = mu_reference_spec(vec![4.0], 1, seed);
    let pt = spec.at(4.0);
    let instance_seed = derive_seed(seed, &[0, 0]);
    let geom = pt.scenario.geometry();
    let channels = synthesize_scenario(&geom, &spec.propagation(), instance_seed)?;
    let n = pt.scenario.n();
    let pattern =
        build_training_pattern(n, pt.estimation.n_patterns(n), pt.estimation.pattern_kind()?)?;
    let p_u = dbm_to_watts(pt.estimation.p_u_dbm);
    let eps2 = dbm_to_watts(pt.estimation.eps2_dbm);
    let estimates = ls_estimate(
        &channels.composite,
        &pattern,
        p_u,
        eps2,
        derive_seed(instance_seed, &[1]),
    )?;
    let h_bars: Vec<_> = estimates.into_iter().map(|e| e.h_bar).collect();
    let em = error_covariance(&pattern, p_u, eps2)?;
    let specs: Vec<_> = (0..pt.scenario.k_users).map(|_| pt.outage.to_spec()).collect();
    let cfg = CsscaConfig {
        value_samples: spec.cssca_samples.unwrap_or_else(|| scale.cssca_samples()),
        ..CsscaConfig::default()
    };
    let design = two_stage_cssca(&h_bars, &em, &specs, spec.q_bits, &cfg, derive_seed(instance_seed, &[2]))?;

    let mut trace = String::from("stage,iteration,power_dbm,max_violation,fallback\n");
    stage_rows(&mut trace, 1, &design.stage1, pt.outage.epsilon);
    stage_rows(&mut trace, 2, &design.stage2, pt.outage.epsilon);

    let k = h_bars.len();
    let bundle = SolutionBundle {
        m: pt.scenario.m,
        n,
        k_users: k,
        estimation: pt.estimation.clone(),
        eta_db: vec![pt.outage.eta_db; k],
        epsilon: vec![pt.outage.epsilon; k],
        noise_dbm: pt.outage.noise_dbm,
        v: ComplexVec::pack(&design.v.v),
        precoders: design.precoders.iter().map(ComplexVec::pack).collect(),
        power_w: design.power,
        h_bars: h_bars.iter().map(ComplexMat::pack).collect(),
    };
    let detail = serde_json::json!({
        "spec": &spec,
        "verified": design.verified,
        "outage": design.outage,
    });
    Ok(vec![
        ("trace.csv".into(), trace),
        ("bundle.json".into(), bundle.to_json()?),
        ("metadata.json".into(), metadata("fig10", scale, seed, &detail)),
    ])
}

/// Multiuser reference scenario: M = 6, N = 16, 18 dBm training power.
fn mu_reference_spec(k_values: Vec<f64>, draws: usize, seed: u64) -> ExperimentSpec {
    let mut spec = spec_json(
        r#"{
            "scenario": {"m": 6, "n_y": 4, "n_z": 4, "k_users": 2},
            "estimation": {"p_u_dbm": 18.0},
            "algorithms": ["cssca", "progressive", "non_robust"],
            "sweep": {"variable": "k", "values": [2.0]}
        }"#,
    );
    spec.sweep.values = k_values;
    spec.draws = draws;
    spec.seed = seed;
    spec
}

/// Power versus the number of users for the robust and baseline designs.
fn fig11(scale: Scale, seed: u64) -> anyhow::Result<Vec<(String, String)>> {
    let (values, draws) = match scale {
        Scale::Desk => (vec![2.0, 4.0], 10),
        Scale::Full => (vec![2.0, 3.0, 4.0, 5.0, 6.0], 100),
    };
    let spec = mu_reference_spec(values, draws, seed);
    sweep_files("fig11", &spec, scale, "")
}

/// Signal statistics over the reflection-phase space with the minimum power
/// each point needs; continuous phases on a two-element surface.
fn region3(scale: Scale, seed: u64) -> anyhow::Result<Vec<(String, String)>> {
    let steps = match scale {
        Scale::Desk => 48,
        Scale::Full => 128,
    };
    let est = EstimationBlock {
        n_r: Some(4),
        ..EstimationBlock::default()
    };
    let outage = crate::spec::OutageBlock::default();
    let geom = irsbf_core::scenario::ScenarioGeometry::reference_layout(4, 2, 1, 1);
    let mut params = irsbf_core::scenario::PropagationParams::defaults();
    params.sigma2 = dbm_to_watts(outage.noise_dbm);
    let channels = synthesize_scenario(&geom, &params, derive_seed(seed, &[0]))?;
    let pattern = build_training_pattern(2, 4, PatternKind::ContinuousDft)?;
    let p_u = dbm_to_watts(est.p_u_dbm);
    let eps2 = dbm_to_watts(est.eps2_dbm);
    let estimates = ls_estimate(&channels.composite, &pattern, p_u, eps2, derive_seed(seed, &[1]))?;
    let h_bar = &estimates[0].h_bar;
    let em = error_covariance(&pattern, p_u, eps2)?;
    let spec0 = outage.to_spec();
    let bis = PowerBisection::default();

    let mut csv = String::from("theta1,theta2,s1,s2,power_dbm\n");
    let tau = std::f64::consts::TAU;
    for i in 0..steps {
        for j in 0..steps {
            let t1 = tau * i as f64 / steps as f64;
            let t2 = tau * j as f64 / steps as f64;
            let v_aug = CVec::from_vec(vec![
                C64::new(1.0, 0.0),
                C64::new(t1.cos(), t1.sin()),
                C64::new(t2.cos(), t2.sin()),
            ]);
            let st = signal_stats_aug(&v_aug, h_bar, &em, 1.0)?;
            let search = min_power_for_stats(st.variance_term, st.msp, &spec0, &bis)?;
            let _ = writeln!(
                csv,
                "{t1:.6},{t2:.6},{:.6e},{:.6e},{:.6}",
                st.variance_term,
                st.msp,
                watts_to_dbm(search.p)
            );
        }
    }
    let detail = serde_json::json!({"steps": steps, "n": 2, "n_r": 4, "estimation": est});
    Ok(vec![
        ("results.csv".into(), csv),
        ("metadata.json".into(), metadata("region3", scale, seed, &detail)),
    ])
}

/// Same map for the binary-phase surface with N = 12: the full alphabet is
/// enumerated, which is the exact image of the discrete design space.
fn region4(scale: Scale, seed: u64) -> anyhow::Result<Vec<(String, String)>> {
    let est = EstimationBlock::default();
    let outage = crate::spec::OutageBlock::default();
    let geom = irsbf_core::scenario::ScenarioGeometry::reference_layout(4, 4, 3, 1);
    let mut params = irsbf_core::scenario::PropagationParams::defaults();
    params.sigma2 = dbm_to_watts(outage.noise_dbm);
    let channels = synthesize_scenario(&geom, &params, derive_seed(seed, &[0]))?;
    let n = 12usize;
    let pattern = build_training_pattern(n, n + 1, est.pattern_kind()?)?;
    let p_u = dbm_to_watts(est.p_u_dbm);
    let eps2 = dbm_to_watts(est.eps2_dbm);
    let estimates = ls_estimate(&channels.composite, &pattern, p_u, eps2, derive_seed(seed, &[1]))?;
    let h_bar = &estimates[0].h_bar;
    let em = error_covariance(&pattern, p_u, eps2)?;
    let spec0 = outage.to_spec();
    let bis = PowerBisection::default();

    let mut csv = String::from("index,s1,s2,power_dbm\n");
    let mut v_aug = CVec::from_element(n + 1, C64::new(1.0, 0.0));
    for index in 0..(1u32 << n) {
        for bit in 0..n {
            let sign = if index >> bit & 1 == 1 { -1.0 } else { 1.0 };
            v_aug[bit + 1] = C64::new(sign, 0.0);
        }
        let st = signal_stats_aug(&v_aug, h_bar, &em, 1.0)?;
        let search = min_power_for_stats(st.variance_term, st.msp, &spec0, &bis)?;
        let _ = writeln!(
            csv,
            "{index},{:.6e},{:.6e},{:.6}",
            st.variance_term,
            st.msp,
            watts_to_dbm(search.p)
        );
    }
    let detail = serde_json::json!({"n": n, "n_r": n + 1, "q_bits": 1, "estimation": est});
    let _ = scale;
    Ok(vec![
        ("results.csv".into(), csv),
        ("metadata.json".into(), metadata("region4", scale, seed, &detail)),
    ])
}

/// Estimation quality of the two channel estimators across training powers.
fn nmse3(scale: Scale, seed: u64) -> anyhow::Result<Vec<(String, String)>> {
    let (n_y, n_z, p_u_grid, draws, moment_draws) = match scale {
        Scale::Desk => (4, 2, vec![0.0, 6.0, 12.0, 18.0], 20, 200),
        Scale::Full => (8, 5, grid(0.0, 18.0, 3.0), 200, 2000),
    };
    let est = EstimationBlock::default();
    let geom = irsbf_core::scenario::ScenarioGeometry::reference_layout(4, n_y, n_z, 1);
    let params = irsbf_core::scenario::PropagationParams::defaults();
    let n = n_y * n_z;
    let pattern = build_training_pattern(n, n + 1, est.pattern_kind()?)?;
    let eps2 = dbm_to_watts(est.eps2_dbm);
    let (mean, cov) = channel_moments(&geom, &params, moment_draws, derive_seed(seed, &[9]))?;

    let mut csv = String::from("p_u_dbm,draw,estimator,nmse\n");
    for (pi, &p_u_dbm) in p_u_grid.iter().enumerate() {
        let p_u = dbm_to_watts(p_u_dbm);
        for draw in 0..draws {
            let draw_seed = derive_seed(seed, &[pi as u64, draw as u64]);
            let channels = synthesize_scenario(&geom, &params, draw_seed)?;
            let noise_seed = derive_seed(draw_seed, &[1]);
            let ls = ls_estimate(&channels.composite, &pattern, p_u, eps2, noise_seed)?;
            let lm = lmmse_estimate(
                &channels.composite,
                &pattern,
                p_u,
                eps2,
                &mean,
                &cov,
                noise_seed,
            )?;
            let ls_mats: Vec<_> = ls.into_iter().map(|e| e.h_bar).collect();
            let lm_mats: Vec<_> = lm.into_iter().map(|e| e.h_bar).collect();
            let e_ls = nmse(&ls_mats, &channels.composite)?;
            let e_lm = nmse(&lm_mats, &channels.composite)?;
            let _ = writeln!(csv, "{p_u_dbm:.6},{draw},ls,{e_ls:.8e}");
            let _ = writeln!(csv, "{p_u_dbm:.6},{draw},lmmse,{e_lm:.8e}");
        }
    }
    let detail = serde_json::json!({
        "n": n, "draws": draws, "moment_draws": moment_draws, "estimation": est,
    });
    Ok(vec![
        ("results.csv".into(), csv),
        ("metadata.json".into(), metadata("nmse3", scale, seed, &detail)),
    ])
}

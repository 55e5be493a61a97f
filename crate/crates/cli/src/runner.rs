//! Experiment execution: one work item per (sweep point, channel draw),
//! solved in parallel, assembled into order-stable CSV output.
//!
//! Every random quantity flows from the master seed through documented
//! derivations: draw seeds are `derive(master, [sweep_index, draw])`, the
//! training noise uses tag 1, algorithm seeds tag [2, algorithm_index] and
//! verification seeds tag [3, algorithm_index]. Re-running an experiment
//! with the same spec and seed reproduces the result table byte for byte;
//! wall-clock timings live in a separate file outside that contract.

use std::fmt::Write as _;
use std::time::Instant;

use anyhow::Context;
use irsbf_core::multiuser::{
    non_robust_baseline, progressive_thresholding_mu, two_stage_cssca, CsscaConfig,
};
use irsbf_core::outage::mc_outage;
use irsbf_core::rng::derive_seed;
use irsbf_core::scenario::synthesize_scenario;
use irsbf_core::single_user::{
    exhaustive_min_power, msp_solve, mpv_solve, mvr_solve, no_irs_power, progressive_threshold,
    wsmax, PddConfig, WsMaxConfig,
};
use irsbf_core::outage::{OutageSpec, PowerBisection};
use irsbf_core::training::{build_training_pattern, error_covariance, ls_estimate, ErrorModel};
use irsbf_core::{C64, CMat, CVec};
use rayon::prelude::*;

use crate::bundle::{ComplexMat, ComplexVec, SolutionBundle};
use crate::spec::{dbm_to_watts, watts_to_dbm, ExperimentSpec, ResolvedPoint, Scale};

/// Cap on exhaustive pattern enumeration; anything larger is a config error.
const ENUMERATION_BUDGET: u64 = 1 << 22;

/// One line of the result table.
#[derive(Debug, Clone)]
pub struct Row {
    pub sweep_value: f64,
    pub draw: usize,
    pub algorithm: String,
    pub power_dbm: Option<f64>,
    /// Measured outage of the worst user and its standard error.
    pub outage: Option<(f64, f64)>,
    pub iterations: u64,
    pub status: String,
}

/// Wall-clock record, kept out of the deterministic table.
#[derive(Debug, Clone)]
pub struct Timing {
    pub sweep_value: f64,
    pub draw: usize,
    pub algorithm: String,
    pub wall_ms: u128,
}

/// Everything a run produces before it is written to disk.
#[derive(Debug)]
pub struct RunOutput {
    pub rows: Vec<Row>,
    pub timings: Vec<Timing>,
    pub bundles: Vec<(String, SolutionBundle)>,
    pub mc_samples: usize,
    pub cssca_samples: usize,
}

/// A solved cell before verification.
struct Design {
    v: CVec,
    precoders: Vec<CVec>,
    power: f64,
    iterations: u64,
}

pub fn run_experiment(spec: &ExperimentSpec, scale: Scale) -> anyhow::Result<RunOutput> {
    spec.validate()?;
    let mc = spec.mc_samples.unwrap_or_else(|| scale.mc_samples());
    let cssca_samples = spec.cssca_samples.unwrap_or_else(|| scale.cssca_samples());

    let cells: Vec<(usize, f64, usize)> = spec
        .sweep
        .values
        .iter()
        .enumerate()
        .flat_map(|(si, &value)| (0..spec.draws).map(move |draw| (si, value, draw)))
        .collect();

    let mut solved: Vec<(usize, usize, CellOutput)> = cells
        .into_par_iter()
        .map(|(si, value, draw)| {
            let out = run_cell(spec, scale, si, value, draw, mc, cssca_samples);
            (si, draw, out)
        })
        .collect();
    // completion order is nondeterministic; the table order is not
    solved.sort_by_key(|&(si, draw, _)| (si, draw));

    let mut rows = Vec::new();
    let mut timings = Vec::new();
    let mut bundles = Vec::new();
    for (_, _, cell) in solved {
        rows.extend(cell.rows);
        timings.extend(cell.timings);
        bundles.extend(cell.bundles);
    }
    Ok(RunOutput {
        rows,
        timings,
        bundles,
        mc_samples: mc,
        cssca_samples,
    })
}

struct CellOutput {
    rows: Vec<Row>,
    timings: Vec<Timing>,
    bundles: Vec<(String, SolutionBundle)>,
}

fn flagged(value: f64, draw: usize, algorithm: &str, err: &anyhow::Error) -> Row {
    // keep the CSV single-line and comma-free
    let msg: String = format!("error: {err:#}")
        .chars()
        .map(|c| match c {
            ',' => ';',
            '\n' => ' ',
            c => c,
        })
        .collect();
    Row {
        sweep_value: value,
        draw,
        algorithm: algorithm.into(),
        power_dbm: None,
        outage: None,
        iterations: 0,
        status: msg,
    }
}

fn run_cell(
    spec: &ExperimentSpec,
    scale: Scale,
    si: usize,
    value: f64,
    draw: usize,
    mc: usize,
    cssca_samples: usize,
) -> CellOutput {
    let pt = spec.at(value);
    let draw_seed = derive_seed(spec.seed, &[si as u64, draw as u64]);
    let mut rows = Vec::new();
    let mut timings = Vec::new();
    let mut bundles = Vec::new();

    let instance = match prepare_instance(spec, &pt, draw_seed) {
        Ok(i) => i,
        Err(e) => {
            for a in &spec.algorithms {
                rows.push(flagged(value, draw, a, &e));
            }
            return CellOutput {
                rows,
                timings,
                bundles,
            };
        }
    };

    for (ia, algorithm) in spec.algorithms.iter().enumerate() {
        let alg_seed = derive_seed(draw_seed, &[2, ia as u64]);
        let verify_seed = derive_seed(draw_seed, &[3, ia as u64]);
        let started = Instant::now();
        let design = solve_cell(
            spec,
            &pt,
            &instance,
            algorithm,
            scale,
            cssca_samples,
            alg_seed,
        );
        let wall_ms = started.elapsed().as_millis();
        timings.push(Timing {
            sweep_value: value,
            draw,
            algorithm: algorithm.clone(),
            wall_ms,
        });
        match design.and_then(|d| {
            let outage = verify_design(&instance, &d, mc, verify_seed)?;
            Ok((d, outage))
        }) {
            Ok((d, (outage, stderr))) => {
                let name = format!("s{si}_d{draw}_{algorithm}.json");
                bundles.push((name, make_bundle(spec, &pt, &instance, &d)));
                rows.push(Row {
                    sweep_value: value,
                    draw,
                    algorithm: algorithm.clone(),
                    power_dbm: Some(watts_to_dbm(d.power)),
                    outage: Some((outage, stderr)),
                    iterations: d.iterations,
                    status: "ok".into(),
                });
            }
            Err(e) => rows.push(flagged(value, draw, algorithm, &e)),
        }
    }
    CellOutput {
        rows,
        timings,
        bundles,
    }
}

/// Channels, estimates and error model shared by every algorithm in a cell.
struct Instance {
    h_bars: Vec<CMat>,
    em: ErrorModel,
    specs: Vec<OutageSpec>,
}

fn prepare_instance(
    spec: &ExperimentSpec,
    pt: &ResolvedPoint,
    draw_seed: u64,
) -> anyhow::Result<Instance> {
    let geom = pt.scenario.geometry();
    let params = spec.propagation();
    let channels = synthesize_scenario(&geom, &params, draw_seed).context("channel synthesis")?;
    let n = pt.scenario.n();
    let pattern = build_training_pattern(n, pt.estimation.n_patterns(n), pt.estimation.pattern_kind()?)
        .context("training pattern")?;
    let p_u = dbm_to_watts(pt.estimation.p_u_dbm);
    let eps2 = dbm_to_watts(pt.estimation.eps2_dbm);
    let estimates = ls_estimate(
        &channels.composite,
        &pattern,
        p_u,
        eps2,
        derive_seed(draw_seed, &[1]),
    )
    .context("channel estimation")?;
    let em = error_covariance(&pattern, p_u, eps2).context("error model")?;
    let specs = vec![pt.outage.to_spec(); pt.scenario.k_users];
    Ok(Instance {
        h_bars: estimates.into_iter().map(|e| e.h_bar).collect(),
        em,
        specs,
    })
}

fn single_user<'a>(instance: &'a Instance, algorithm: &str) -> anyhow::Result<&'a CMat> {
    if instance.h_bars.len() != 1 {
        anyhow::bail!("{algorithm} needs a single user");
    }
    Ok(&instance.h_bars[0])
}

fn solve_cell(
    spec: &ExperimentSpec,
    pt: &ResolvedPoint,
    instance: &Instance,
    algorithm: &str,
    scale: Scale,
    cssca_samples: usize,
    seed: u64,
) -> anyhow::Result<Design> {
    let q = spec.q_bits;
    let em = &instance.em;
    let s0 = &instance.specs[0];
    let pdd = PddConfig::default();
    let bis = PowerBisection::default();
    let from_su = |v: CVec, p: f64, iterations: u64| Design {
        v,
        precoders: Vec::new(),
        power: p,
        iterations,
    };
    match algorithm {
        "wsmax" => {
            let h = single_user(instance, algorithm)?;
            let mut cfg = WsMaxConfig::default();
            if let Some(omega) = pt.omega {
                cfg.omega_lo = omega;
                cfg.omega_hi = omega;
            }
            let out = wsmax(h, em, q, s0, &cfg, seed)?;
            Ok(from_su(out.v.v, out.p, out.trace.len() as u64))
        }
        "msp" => {
            let h = single_user(instance, algorithm)?;
            let d = msp_solve(h, em, q, s0, &pdd, &bis, seed)?;
            Ok(from_su(d.v.v, d.p, u64::from(d.iterations)))
        }
        "mpv" => {
            let h = single_user(instance, algorithm)?;
            let d = mpv_solve(h, em, q, s0, &pdd, &bis, seed)?;
            Ok(from_su(d.v.v, d.p, u64::from(d.iterations)))
        }
        "mvr" => {
            let h = single_user(instance, algorithm)?;
            let d = mvr_solve(h, em, q, s0, &pdd, &bis, seed)?;
            Ok(from_su(d.v.v, d.p, u64::from(d.iterations)))
        }
        "exhaustive" => {
            let h = single_user(instance, algorithm)?;
            let d = exhaustive_min_power(h, em, q, s0, &bis, ENUMERATION_BUDGET)?;
            Ok(from_su(d.v.v, d.p, u64::from(d.iterations)))
        }
        "no_irs" => {
            let h = single_user(instance, algorithm)?;
            let d = no_irs_power(h, em, s0, &bis)?;
            Ok(from_su(d.v.v, d.p, u64::from(d.iterations)))
        }
        "progressive" => {
            if instance.h_bars.len() == 1 {
                let d = progressive_threshold(&instance.h_bars[0], em, q, s0, &pdd, seed)?;
                return Ok(from_su(d.v.v, d.p, u64::from(d.iterations)));
            }
            let (delta_eta, max_steps) = match scale {
                Scale::Desk => (10f64.powf(0.01), 400),
                Scale::Full => (10f64.powf(0.001), 4000),
            };
            let out = progressive_thresholding_mu(
                &instance.h_bars,
                em,
                &instance.specs,
                q,
                delta_eta,
                scale.mc_samples(),
                max_steps,
                seed,
            )?;
            Ok(Design {
                v: out.v.v,
                precoders: out.precoders,
                power: out.power,
                iterations: out.power_trace.len() as u64,
            })
        }
        "non_robust" => {
            let (v, precoders, power) = non_robust_baseline(&instance.h_bars, &instance.specs, q, &pdd, seed)?;
            Ok(Design {
                v: v.v,
                precoders,
                power,
                iterations: 0,
            })
        }
        "cssca" => {
            let cfg = CsscaConfig {
                value_samples: cssca_samples,
                ..CsscaConfig::default()
            };
            let d = two_stage_cssca(&instance.h_bars, em, &instance.specs, q, &cfg, seed)?;
            let iterations = (d.stage1.trace.len() + d.stage2.trace.len()) as u64;
            Ok(Design {
                v: d.v.v,
                precoders: d.precoders,
                power: d.power,
                iterations,
            })
        }
        other => anyhow::bail!("unknown algorithm {other:?}"),
    }
}

fn augmented(v: &CVec) -> CVec {
    let mut aug = CVec::zeros(v.len() + 1);
    aug[0] = C64::new(1.0, 0.0);
    aug.rows_mut(1, v.len()).copy_from(v);
    aug
}

/// Worst-user outage with its standard error, measured fresh.
fn verify_design(
    instance: &Instance,
    design: &Design,
    mc: usize,
    seed: u64,
) -> anyhow::Result<(f64, f64)> {
    let v_aug = augmented(&design.v);
    let precoders: Vec<CVec> = if design.precoders.is_empty() {
        let eff = instance.h_bars[0].adjoint() * &v_aug;
        let norm = eff.norm();
        if !(norm > 0.0) {
            anyhow::bail!("zero effective channel");
        }
        vec![eff.scale(design.power.sqrt() / norm)]
    } else {
        design.precoders.clone()
    };
    let outages = mc_outage(
        &precoders,
        &v_aug,
        &instance.h_bars,
        &instance.em,
        &instance.specs,
        mc,
        seed,
    )?;
    let worst = outages
        .into_iter()
        .max_by(|a, b| a.0.total_cmp(&b.0))
        .expect("at least one user");
    Ok(worst)
}

fn make_bundle(
    spec: &ExperimentSpec,
    pt: &ResolvedPoint,
    instance: &Instance,
    design: &Design,
) -> SolutionBundle {
    let k = instance.h_bars.len();
    SolutionBundle {
        m: pt.scenario.m,
        n: pt.scenario.n(),
        k_users: k,
        estimation: pt.estimation.clone(),
        eta_db: vec![pt.outage.eta_db; k],
        epsilon: vec![pt.outage.epsilon; k],
        noise_dbm: spec.outage.noise_dbm,
        v: ComplexVec::pack(&design.v),
        precoders: design.precoders.iter().map(ComplexVec::pack).collect(),
        power_w: design.power,
        h_bars: instance.h_bars.iter().map(ComplexMat::pack).collect(),
    }
}

/// Runs an experiment and renders every output file: the result table, the
/// timing sidecar, solution bundles and metadata. Paths are relative; the
/// caller chooses the directory.
pub fn experiment_files(
    label: &str,
    spec: &ExperimentSpec,
    scale: Scale,
    prefix: &str,
) -> anyhow::Result<Vec<(String, String)>> {
    let out = run_experiment(spec, scale)?;
    let mut files = vec![
        (format!("{prefix}results.csv"), results_csv(&out.rows)),
        (format!("{prefix}timings.csv"), timings_csv(&out.timings)),
    ];
    for (name, bundle) in &out.bundles {
        files.push((format!("{prefix}bundles/{name}"), bundle.to_json()?));
    }
    let metadata = serde_json::json!({
        "label": label,
        "scale": scale.name(),
        "seed": spec.seed,
        "spec": spec,
        "mc_samples": out.mc_samples,
        "cssca_samples": out.cssca_samples,
        "tool_version": env!("CARGO_PKG_VERSION"),
        "rows": out.rows.len(),
    });
    files.push((
        format!("{prefix}metadata.json"),
        serde_json::to_string_pretty(&metadata)?,
    ));
    Ok(files)
}

/// Fixed-precision CSV of the result table.
#[must_use]
pub fn results_csv(rows: &[Row]) -> String {
    let mut out = String::from("sweep_value,draw,algorithm,power_dbm,outage,outage_stderr,iterations,status\n");
    for r in rows {
        let power = r.power_dbm.map_or(String::new(), |p| format!("{p:.6}"));
        let (outage, stderr) = r.outage.map_or((String::new(), String::new()), |(o, s)| {
            (format!("{o:.6}"), format!("{s:.8}"))
        });
        let _ = writeln!(
            out,
            "{:.6},{},{},{},{},{},{},{}",
            r.sweep_value, r.draw, r.algorithm, power, outage, stderr, r.iterations, r.status
        );
    }
    out
}

/// Wall-clock sidecar; excluded from the determinism contract.
#[must_use]
pub fn timings_csv(timings: &[Timing]) -> String {
    let mut out = String::from("sweep_value,draw,algorithm,wall_ms\n");
    for t in timings {
        let _ = writeln!(out, "{:.6},{},{},{}", t.sweep_value, t.draw, t.algorithm, t.wall_ms);
    }
    out
}

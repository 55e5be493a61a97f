use std::time::Instant;
use irsbf_core::multiuser::{cssca_stage, CompositeVariable, CsscaConfig};
use irsbf_core::multiuser::sinr_constrained_power_min;
use irsbf_core::outage::OutageSpec;
use irsbf_core::rng::{derive_seed, stream};
use irsbf_core::scenario::{effective_channel, synthesize_scenario, PropagationParams, ScenarioGeometry};
use irsbf_core::training::{build_training_pattern, error_covariance, ls_estimate, PatternKind};
use irsbf_core::{C64, CVec};
use rand::Rng as _;

fn main() {
    let geom = ScenarioGeometry::reference_layout(6, 4, 4, 4);
    let channels = synthesize_scenario(&geom, &PropagationParams::defaults(), 700).unwrap();
    let pattern = build_training_pattern(16, 17, PatternKind::QuantizedDft { q_bits: 2 }).unwrap();
    let p_u = 6.3e-2;
    let est = ls_estimate(&channels.composite, &pattern, p_u, 1e-11, derive_seed(700, &[1])).unwrap();
    let em = error_covariance(&pattern, p_u, 1e-11).unwrap();
    let h_bars: Vec<_> = est.into_iter().map(|e| e.h_bar).collect();
    let spec = OutageSpec { eta: 10f64.powf(0.5), epsilon: 0.1, sigma2: 1e-11 };
    let specs = vec![spec; 4];

    let mut rng = stream(1);
    let v0 = CVec::from_fn(16, |_, _| {
        let th = rng.random::<f64>() * std::f64::consts::TAU;
        C64::new(th.cos(), th.sin())
    });
    let mut aug = CVec::zeros(17);
    aug[0] = C64::new(1.0, 0.0);
    aug.rows_mut(1, 16).copy_from(&v0);
    let chans: Vec<CVec> = h_bars.iter().map(|h| effective_channel(&aug, h)).collect();
    let w0 = sinr_constrained_power_min(&chans, &specs).unwrap();
    let varpi0 = CompositeVariable::from_parts(&w0, &v0).unwrap();

    let mut cfg = CsscaConfig { max_iters: 10, min_iters: 2, stall_window: 2, xi_o: 1e-12, ..CsscaConfig::default() };
    if std::env::var("LOOSE").is_ok() {
        cfg.qcqp.max_iters = 2000;
        cfg.qcqp.projection_rounds = 60;
        cfg.qcqp.stall_rounds = 60;
        cfg.qcqp.kkt_tol = 1e-5;
    }
    if std::env::var("TINY_SAMPLES").is_ok() {
        cfg.value_samples = 10;
        cfg.grad_samples = 10;
    }
    let t0 = Instant::now();
    let out = match cssca_stage(&varpi0, &h_bars, &em, &specs, true, &cfg, 37) { Ok(o) => o, Err(e) => { println!("stage error: {e}"); return; } };
    println!("10 iters: {:.2?} ({:.0} ms/it), trace {}", t0.elapsed(), t0.elapsed().as_millis() as f64 / 10.0, out.trace.len());
    for r in &out.trace {
        println!("it {} maxf {:.4} power {:.3e} fb {}", r.iteration, r.max_smoothed_outage, r.power, r.fallback);
    }
}
// appended: loosened-qcqp comparison entry happens in main2 via env toggle

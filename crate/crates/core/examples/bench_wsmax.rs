use std::time::Instant;
use irsbf_core::outage::OutageSpec;
use irsbf_core::rng::derive_seed;
use irsbf_core::scenario::{synthesize_scenario, PropagationParams, ScenarioGeometry};
use irsbf_core::single_user::{exhaustive_min_power, wsmax, WsMaxConfig};
use irsbf_core::outage::PowerBisection;
use irsbf_core::training::{build_training_pattern, error_covariance, ls_estimate, PatternKind};

fn main() {
    let geom = ScenarioGeometry::reference_layout(4, 5, 2, 1);
    let channels = synthesize_scenario(&geom, &PropagationParams::defaults(), 11).unwrap();
    let pattern = build_training_pattern(10, 11, PatternKind::QuantizedDft { q_bits: 2 }).unwrap();
    let p_u = 10f64.powf(6.0 / 10.0) * 1e-3;
    let est = ls_estimate(&channels.composite, &pattern, p_u, 1e-11, derive_seed(11, &[1])).unwrap();
    let em = error_covariance(&pattern, p_u, 1e-11).unwrap();
    let spec = OutageSpec { eta: 10f64.powf(15.0 / 10.0), epsilon: 0.1, sigma2: 1e-11 };

    let t0 = Instant::now();
    let out = wsmax(&est[0].h_bar, &em, 1, &spec, &WsMaxConfig::default(), 3).unwrap();
    println!("wsmax default grid: {:.2?}  p={:.3e} omega*={}", t0.elapsed(), out.p, out.omega_best);

    let t1 = Instant::now();
    let ex = exhaustive_min_power(&est[0].h_bar, &em, 1, &spec, &PowerBisection::default(), 1 << 22).unwrap();
    println!("exhaustive 2^10:    {:.2?}  p={:.3e}", t1.elapsed(), ex.p);
    println!("gap dB: {:.3}", 10.0 * (out.p / ex.p).log10());
}

//! Experiment description files and their resolution into solver inputs.
//!
//! Config files speak dB and dBm; everything handed to the core crate is
//! linear (watts). The conversion happens exactly once, here.

use irsbf_core::outage::OutageSpec;
use irsbf_core::scenario::{PropagationParams, ScenarioGeometry};
use irsbf_core::training::PatternKind;
use serde::{Deserialize, Serialize};

/// dBm to watts.
#[must_use]
pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

/// Watts to dBm.
#[must_use]
pub fn watts_to_dbm(w: f64) -> f64 {
    10.0 * w.log10() + 30.0
}

/// dB to linear ratio.
#[must_use]
pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

/// Geometry block: antenna and surface dimensions. Positions come from the
/// reference layout; only the sizes vary between experiments.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioBlock {
    pub m: usize,
    pub n_y: usize,
    pub n_z: usize,
    #[serde(default = "one")]
    pub k_users: usize,
}

fn one() -> usize {
    1
}

impl ScenarioBlock {
    #[must_use]
    pub fn n(&self) -> usize {
        self.n_y * self.n_z
    }

    #[must_use]
    pub fn geometry(&self) -> ScenarioGeometry {
        ScenarioGeometry::reference_layout(self.m, self.n_y, self.n_z, self.k_users)
    }
}

/// Training stage: pattern family, uplink power and noise level.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimationBlock {
    /// One of "quantized_dft", "continuous_dft", "truncated_hadamard".
    #[serde(default = "default_pattern")]
    pub pattern: String,
    /// Phase resolution of the training pattern (quantized DFT only).
    #[serde(default = "default_pattern_bits")]
    pub pattern_bits: u32,
    /// Number of training patterns; null means N + 1.
    #[serde(default)]
    pub n_r: Option<usize>,
    #[serde(default = "default_pu")]
    pub p_u_dbm: f64,
    /// Training noise variance.
    #[serde(default = "default_noise")]
    pub eps2_dbm: f64,
}

fn default_pattern() -> String {
    "quantized_dft".into()
}

fn default_pattern_bits() -> u32 {
    2
}

fn default_pu() -> f64 {
    6.0
}

fn default_noise() -> f64 {
    -80.0
}

impl Default for EstimationBlock {
    fn default() -> Self {
        Self {
            pattern: default_pattern(),
            pattern_bits: default_pattern_bits(),
            n_r: None,
            p_u_dbm: default_pu(),
            eps2_dbm: default_noise(),
        }
    }
}

impl EstimationBlock {
    pub fn pattern_kind(&self) -> anyhow::Result<PatternKind> {
        match self.pattern.as_str() {
            "quantized_dft" => Ok(PatternKind::QuantizedDft {
                q_bits: self.pattern_bits,
            }),
            "continuous_dft" => Ok(PatternKind::ContinuousDft),
            "truncated_hadamard" => Ok(PatternKind::TruncatedHadamard),
            other => anyhow::bail!(
                "unknown training pattern {other:?}; expected quantized_dft, continuous_dft or truncated_hadamard"
            ),
        }
    }

    #[must_use]
    pub fn n_patterns(&self, n: usize) -> usize {
        self.n_r.unwrap_or(n + 1)
    }
}

/// Outage constraint shared by every user.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutageBlock {
    #[serde(default = "default_eta")]
    pub eta_db: f64,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default = "default_noise")]
    pub noise_dbm: f64,
}

fn default_eta() -> f64 {
    5.0
}

fn default_epsilon() -> f64 {
    0.1
}

impl Default for OutageBlock {
    fn default() -> Self {
        Self {
            eta_db: default_eta(),
            epsilon: default_epsilon(),
            noise_dbm: default_noise(),
        }
    }
}

impl OutageBlock {
    #[must_use]
    pub fn to_spec(&self) -> OutageSpec {
        OutageSpec {
            eta: db_to_linear(self.eta_db),
            epsilon: self.epsilon,
            sigma2: dbm_to_watts(self.noise_dbm),
        }
    }
}

/// The quantity a sweep varies, with its grid in config units.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepBlock {
    /// One of "p_u" (dBm), "eta" (dB), "epsilon", "n", "k", "omega".
    pub variable: String,
    pub values: Vec<f64>,
}

/// A full experiment: scenario, constraint, algorithm list and sweep.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub scenario: ScenarioBlock,
    #[serde(default)]
    pub estimation: EstimationBlock,
    #[serde(default)]
    pub outage: OutageBlock,
    /// Reflection phase resolution of the designed surface.
    #[serde(default = "default_q")]
    pub q_bits: u32,
    pub algorithms: Vec<String>,
    pub sweep: SweepBlock,
    #[serde(default = "default_draws")]
    pub draws: usize,
    #[serde(default)]
    pub seed: u64,
    /// Monte-Carlo samples for per-row outage verification; null picks a
    /// scale-dependent default.
    #[serde(default)]
    pub mc_samples: Option<usize>,
    /// Per-iteration sample count of the stochastic multiuser solver; null
    /// picks a scale-dependent default.
    #[serde(default)]
    pub cssca_samples: Option<usize>,
}

fn default_q() -> u32 {
    1
}

fn default_draws() -> usize {
    10
}

/// Run size: desk keeps CI-friendly sample counts, full restores the
/// reference-scale ones.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scale {
    Desk,
    Full,
}

impl Scale {
    pub fn parse(s: &str) -> anyhow::Result<Self> {
        match s {
            "desk" => Ok(Self::Desk),
            "full" => Ok(Self::Full),
            other => anyhow::bail!("unknown scale {other:?}; expected desk or full"),
        }
    }

    #[must_use]
    pub fn name(self) -> &'static str {
        match self {
            Self::Desk => "desk",
            Self::Full => "full",
        }
    }

    /// Default Monte-Carlo sample count for outage rows.
    #[must_use]
    pub fn mc_samples(self) -> usize {
        match self {
            Self::Desk => 20_000,
            Self::Full => 100_000,
        }
    }

    /// Default per-iteration sample count for the stochastic solver.
    #[must_use]
    pub fn cssca_samples(self) -> usize {
        match self {
            Self::Desk => 1_000,
            Self::Full => 100_000,
        }
    }
}

impl ExperimentSpec {
    pub fn from_json(text: &str) -> anyhow::Result<Self> {
        let spec: Self = serde_json::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        if self.sweep.values.is_empty() {
            anyhow::bail!("sweep grid is empty");
        }
        if self.draws == 0 {
            anyhow::bail!("need at least one channel draw");
        }
        if self.algorithms.is_empty() {
            anyhow::bail!("no algorithms selected");
        }
        let known = [
            "wsmax",
            "msp",
            "mpv",
            "mvr",
            "exhaustive",
            "progressive",
            "non_robust",
            "no_irs",
            "cssca",
        ];
        for a in &self.algorithms {
            if !known.contains(&a.as_str()) {
                anyhow::bail!("unknown algorithm {a:?}; expected one of {known:?}");
            }
        }
        let vars = ["p_u", "eta", "epsilon", "n", "k", "omega"];
        if !vars.contains(&self.sweep.variable.as_str()) {
            anyhow::bail!(
                "unknown sweep variable {:?}; expected one of {vars:?}",
                self.sweep.variable
            );
        }
        if self.sweep.variable == "n" || self.sweep.variable == "k" {
            for &v in &self.sweep.values {
                if v.fract() != 0.0 || v < 1.0 {
                    anyhow::bail!("sweep variable {} needs positive integers", self.sweep.variable);
                }
            }
        }
        if self.sweep.variable == "n" {
            for &v in &self.sweep.values {
                if (v as usize) % self.scenario.n_y != 0 {
                    anyhow::bail!(
                        "swept element count {v} is not a multiple of the row length {}",
                        self.scenario.n_y
                    );
                }
            }
        }
        Ok(())
    }

    /// The scenario/constraint instance at one sweep value.
    #[must_use]
    pub fn at(&self, value: f64) -> ResolvedPoint {
        let mut scenario = self.scenario.clone();
        let mut estimation = self.estimation.clone();
        let mut outage = self.outage.clone();
        let mut omega = None;
        match self.sweep.variable.as_str() {
            "p_u" => estimation.p_u_dbm = value,
            "eta" => outage.eta_db = value,
            "epsilon" => outage.epsilon = value,
            "n" => scenario.n_z = (value as usize) / scenario.n_y,
            "k" => scenario.k_users = value as usize,
            "omega" => omega = Some(value),
            _ => unreachable!("validated variable"),
        }
        ResolvedPoint {
            scenario,
            estimation,
            outage,
            omega,
        }
    }

    #[must_use]
    pub fn propagation(&self) -> PropagationParams {
        let mut p = PropagationParams::defaults();
        p.sigma2 = dbm_to_watts(self.outage.noise_dbm);
        p
    }
}

/// One sweep point, fully resolved.
#[derive(Debug, Clone)]
pub struct ResolvedPoint {
    pub scenario: ScenarioBlock,
    pub estimation: EstimationBlock,
    pub outage: OutageBlock,
    /// Set only when the sweep pins the single-user weighting factor.
    pub omega: Option<f64>,
}

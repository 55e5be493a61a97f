//! Self-contained solution artifacts and their independent verification.
//!
//! A bundle carries the designed reflection pattern and precoders together
//! with the estimated channels and the training recipe, so outage can be
//! re-checked later with fresh randomness and no access to the original run.

use anyhow::Context;
use irsbf_core::outage::{mc_outage, OutageSpec};
use irsbf_core::training::{build_training_pattern, error_covariance};
use irsbf_core::{C64, CMat, CVec};
use serde::{Deserialize, Serialize};

use crate::spec::{db_to_linear, dbm_to_watts, EstimationBlock};

/// Complex vector as parallel real/imaginary arrays.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ComplexVec {
    pub re: Vec<f64>,
    pub im: Vec<f64>,
}

impl ComplexVec {
    #[must_use]
    pub fn pack(v: &CVec) -> Self {
        Self {
            re: v.iter().map(|z| z.re).collect(),
            im: v.iter().map(|z| z.im).collect(),
        }
    }

    pub fn unpack(&self) -> anyhow::Result<CVec> {
        if self.re.len() != self.im.len() {
            anyhow::bail!("mismatched real/imaginary lengths");
        }
        Ok(CVec::from_iterator(
            self.re.len(),
            self.re.iter().zip(&self.im).map(|(&r, &i)| C64::new(r, i)),
        ))
    }
}

/// Complex matrix, row-major flat storage.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ComplexMat {
    pub rows: usize,
    pub cols: usize,
    pub re: Vec<f64>,
    pub im: Vec<f64>,
}

impl ComplexMat {
    #[must_use]
    pub fn pack(m: &CMat) -> Self {
        let mut re = Vec::with_capacity(m.len());
        let mut im = Vec::with_capacity(m.len());
        for r in 0..m.nrows() {
            for c in 0..m.ncols() {
                re.push(m[(r, c)].re);
                im.push(m[(r, c)].im);
            }
        }
        Self {
            rows: m.nrows(),
            cols: m.ncols(),
            re,
            im,
        }
    }

    pub fn unpack(&self) -> anyhow::Result<CMat> {
        if self.re.len() != self.rows * self.cols || self.im.len() != self.re.len() {
            anyhow::bail!("matrix storage does not match its dimensions");
        }
        Ok(CMat::from_fn(self.rows, self.cols, |r, c| {
            let i = r * self.cols + c;
            C64::new(self.re[i], self.im[i])
        }))
    }
}

/// A designed solution plus everything needed to re-verify it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolutionBundle {
    pub m: usize,
    pub n: usize,
    pub k_users: usize,
    pub estimation: EstimationBlock,
    pub eta_db: Vec<f64>,
    pub epsilon: Vec<f64>,
    pub noise_dbm: f64,
    /// Reflection coefficients, length n.
    pub v: ComplexVec,
    /// Per-user precoders; empty means maximum-ratio at the stated power.
    pub precoders: Vec<ComplexVec>,
    /// Total transmit power in watts (informative; the precoders are the
    /// authoritative design for multiuser bundles).
    pub power_w: f64,
    /// Estimated composite channels, one (n+1) x m matrix per user.
    pub h_bars: Vec<ComplexMat>,
}

/// Verdict of an independent outage re-check.
#[derive(Debug, Clone, Serialize)]
pub struct Verdict {
    pub pass: bool,
    /// Per-user (outage, standard error, allowance).
    pub users: Vec<(f64, f64, f64)>,
}

impl SolutionBundle {
    pub fn from_json(text: &str) -> anyhow::Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> anyhow::Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn specs(&self) -> Vec<OutageSpec> {
        let sigma2 = dbm_to_watts(self.noise_dbm);
        self.eta_db
            .iter()
            .zip(&self.epsilon)
            .map(|(&eta_db, &eps)| OutageSpec {
                eta: db_to_linear(eta_db),
                epsilon: eps,
                sigma2,
            })
            .collect()
    }

    /// Monte-Carlo re-check: pass when every user's measured outage is at most
    /// epsilon + 3 standard errors + 0.005.
    pub fn verify(&self, n_samples: usize, seed: u64) -> anyhow::Result<Verdict> {
        let h_bars: Vec<CMat> = self
            .h_bars
            .iter()
            .map(ComplexMat::unpack)
            .collect::<anyhow::Result<_>>()?;
        let v = self.v.unpack()?;
        if v.len() != self.n {
            anyhow::bail!("reflection vector length {} does not match n = {}", v.len(), self.n);
        }
        let mut v_aug = CVec::zeros(self.n + 1);
        v_aug[0] = C64::new(1.0, 0.0);
        v_aug.rows_mut(1, self.n).copy_from(&v);

        let precoders: Vec<CVec> = if self.precoders.is_empty() {
            // single-user convention: maximum-ratio on the estimated
            // effective channel, sized to the stated power
            if self.k_users != 1 {
                anyhow::bail!("precoders are required for multiuser bundles");
            }
            let eff = h_bars[0].adjoint() * &v_aug;
            let norm = eff.norm();
            if !(norm > 0.0) {
                anyhow::bail!("estimated effective channel is zero");
            }
            vec![eff.scale(self.power_w.sqrt() / norm)]
        } else {
            self.precoders
                .iter()
                .map(ComplexVec::unpack)
                .collect::<anyhow::Result<_>>()?
        };

        let pattern = build_training_pattern(
            self.n,
            self.estimation.n_patterns(self.n),
            self.estimation.pattern_kind()?,
        )
        .context("rebuilding the training pattern")?;
        let em = error_covariance(
            &pattern,
            dbm_to_watts(self.estimation.p_u_dbm),
            dbm_to_watts(self.estimation.eps2_dbm),
        )
        .context("rebuilding the error model")?;

        let specs = self.specs();
        let outages = mc_outage(&precoders, &v_aug, &h_bars, &em, &specs, n_samples, seed)
            .context("Monte-Carlo outage check")?;
        let users: Vec<(f64, f64, f64)> = outages
            .iter()
            .zip(&specs)
            .map(|(&(o, se), s)| (o, se, s.epsilon + 3.0 * se + 0.005))
            .collect();
        let pass = users.iter().all(|&(o, _, allow)| o <= allow);
        Ok(Verdict { pass, users })
    }
}

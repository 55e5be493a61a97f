//! Physical layout, large-scale fading, and channel synthesis.
//!
//! One access point (ULA, M antennas) serves K single-antenna users with the
//! help of a reflecting surface (UPA, N = n_y * n_z elements). Downlink
//! channels are drawn per scenario: a direct AP-user link h_d, an AP-surface
//! matrix G, and surface-user links h_r, each Rician with its own link gain.
//!
//! Conventions fixed here and relied on elsewhere:
//! * reflection coefficients are handled as v = diag(Theta^*), so the
//!   cascaded channel is H_k = diag(h_r,k^H) G and the end-to-end row is
//!   v^H H_k + h_d,k^H = v~^H H~_k with v~ = [1; v];
//! * the ULA extends along the y axis, the UPA spans the y-z plane, both at
//!   half-wavelength spacing, with phases derived from node positions.

use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::{sample_cn01, stream};
use crate::{C64, CMat, CVec};

/// Node positions and array sizes. Distances are meters.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioGeometry {
    pub ap_position: [f64; 3],
    pub irs_position: [f64; 3],
    /// Center of the user cluster; users are uniform on the disc of
    /// `user_cluster_radius` around it in the x-y plane.
    pub user_cluster_center: [f64; 3],
    pub user_cluster_radius: f64,
    pub m_antennas: usize,
    /// Surface elements along y and z; N = n_y * n_z.
    pub n_y: usize,
    pub n_z: usize,
    pub k_users: usize,
}

impl ScenarioGeometry {
    /// Default layout: AP at (2, 0, 0), surface at (0, 45, 2), users clustered
    /// on the ground 2 m beyond the surface.
    #[must_use]
    pub fn reference_layout(m_antennas: usize, n_y: usize, n_z: usize, k_users: usize) -> Self {
        Self {
            ap_position: [2.0, 0.0, 0.0],
            irs_position: [0.0, 45.0, 2.0],
            user_cluster_center: [0.0, 47.0, 0.0],
            user_cluster_radius: 1.5,
            m_antennas,
            n_y,
            n_z,
            k_users,
        }
    }

    /// Number of reflecting elements.
    #[must_use]
    pub fn n_elements(&self) -> usize {
        self.n_y * self.n_z
    }

    pub fn validate(&self) -> Result<()> {
        if self.m_antennas == 0 || self.n_y == 0 || self.n_z == 0 || self.k_users == 0 {
            return Err(Error::InvalidParameter(
                "antenna, element, and user counts must be positive".into(),
            ));
        }
        if !(self.user_cluster_radius > 0.0) || !self.user_cluster_radius.is_finite() {
            return Err(Error::InvalidParameter(
                "user cluster radius must be positive and finite".into(),
            ));
        }
        Ok(())
    }
}

/// Large-scale propagation constants. All quantities linear; `sigma2` is the
/// downlink noise power in watts.
#[derive(Debug, Clone, PartialEq)]
pub struct PropagationParams {
    /// Reference path loss at distance `d0`.
    pub c0: f64,
    pub d0: f64,
    pub alpha_ap_user: f64,
    pub alpha_ap_irs: f64,
    pub alpha_irs_user: f64,
    /// Rician factors (linear; 0 means pure Rayleigh).
    pub beta_ap_user: f64,
    pub beta_ap_irs: f64,
    pub beta_irs_user: f64,
    pub sigma2: f64,
}

impl PropagationParams {
    /// Defaults: -30 dB reference loss at 1 m, exponents 3.6 / 2.2 / 2.2,
    /// 3 dB Rician factor on the AP-surface link only, -80 dBm noise.
    #[must_use]
    pub fn defaults() -> Self {
        Self {
            c0: 1e-3,
            d0: 1.0,
            alpha_ap_user: 3.6,
            alpha_ap_irs: 2.2,
            alpha_irs_user: 2.2,
            beta_ap_user: 0.0,
            beta_ap_irs: 10f64.powf(0.3),
            beta_irs_user: 0.0,
            sigma2: 1e-11,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let nonneg = [self.beta_ap_user, self.beta_ap_irs, self.beta_irs_user];
        if nonneg.iter().any(|b| !(*b >= 0.0) || !b.is_finite()) {
            return Err(Error::InvalidParameter(
                "Rician factors must be finite and nonnegative".into(),
            ));
        }
        if !(self.c0 > 0.0) || !(self.d0 > 0.0) || !(self.sigma2 > 0.0) {
            return Err(Error::InvalidParameter(
                "c0, d0, sigma2 must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// One synthesized channel realization for all users.
#[derive(Debug, Clone)]
pub struct ChannelSet {
    /// AP-surface matrix, N x M.
    pub g: CMat,
    /// Surface-user vectors, length N each.
    pub h_r: Vec<CVec>,
    /// Direct AP-user vectors, length M each.
    pub h_d: Vec<CVec>,
    /// Cascaded H_k = diag(h_r,k^H) G, N x M.
    pub cascaded: Vec<CMat>,
    /// Composite H~_k = [h_d,k^H; H_k], (N+1) x M.
    pub composite: Vec<CMat>,
    pub user_positions: Vec<[f64; 3]>,
}

impl ChannelSet {
    #[must_use]
    pub fn k_users(&self) -> usize {
        self.h_d.len()
    }

    /// CSV dump (entity,user,row,col,re,im) with lossless float formatting.
    #[must_use]
    pub fn to_csv(&self) -> String {
        let mut out = String::from("entity,user,row,col,re,im\n");
        let mut push = |entity: &str, user: usize, m: &CMat| {
            for c in 0..m.ncols() {
                for r in 0..m.nrows() {
                    let z = m[(r, c)];
                    out.push_str(&format!("{entity},{user},{r},{c},{:e},{:e}\n", z.re, z.im));
                }
            }
        };
        push("g", 0, &self.g);
        for (k, h) in self.h_r.iter().enumerate() {
            push("h_r", k, &CMat::from_column_slice(h.len(), 1, h.as_slice()));
        }
        for (k, h) in self.h_d.iter().enumerate() {
            push("h_d", k, &CMat::from_column_slice(h.len(), 1, h.as_slice()));
        }
        out
    }
}

/// Distance-law path loss c0 * (d / d0)^(-alpha).
pub fn path_loss(distance: f64, alpha: f64, params: &PropagationParams) -> Result<f64> {
    params.validate()?;
    if !(distance > 0.0) || !distance.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "path loss needs a positive distance, got {distance}"
        )));
    }
    Ok(params.c0 * (distance / params.d0).powf(-alpha))
}

fn distance(a: [f64; 3], b: [f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

fn unit_dir(from: [f64; 3], to: [f64; 3]) -> [f64; 3] {
    let d = distance(from, to);
    [
        (to[0] - from[0]) / d,
        (to[1] - from[1]) / d,
        (to[2] - from[2]) / d,
    ]
}

/// ULA steering vector for a half-wavelength array along y.
fn ula_steering(m: usize, dir: [f64; 3]) -> CVec {
    CVec::from_fn(m, |i, _| {
        C64::from_polar(1.0, std::f64::consts::PI * i as f64 * dir[1])
    })
}

/// UPA steering vector; element n = i_y + n_y * i_z sits at offset
/// (0, i_y, i_z) * lambda/2.
fn upa_steering(n_y: usize, n_z: usize, dir: [f64; 3]) -> CVec {
    CVec::from_fn(n_y * n_z, |n, _| {
        let iy = (n % n_y) as f64;
        let iz = (n / n_y) as f64;
        C64::from_polar(1.0, std::f64::consts::PI * (iy * dir[1] + iz * dir[2]))
    })
}

/// Draws one Rician matrix: sqrt(beta/(1+beta)) * los + sqrt(gain/(1+beta)) * W
/// with W i.i.d. unit-variance circular Gaussian. The deterministic component
/// must be prescaled so |los_ij|^2 = link_gain.
pub fn sample_rician_channel<R: Rng + ?Sized>(
    rows: usize,
    cols: usize,
    beta: f64,
    los: &CMat,
    link_gain: f64,
    rng: &mut R,
) -> Result<CMat> {
    if !(beta >= 0.0) || !beta.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "Rician factor must be finite and nonnegative, got {beta}"
        )));
    }
    if !(link_gain > 0.0) {
        return Err(Error::InvalidParameter("link gain must be positive".into()));
    }
    if los.nrows() != rows || los.ncols() != cols {
        return Err(Error::DimensionMismatch(format!(
            "LoS component is {}x{}, expected {rows}x{cols}",
            los.nrows(),
            los.ncols()
        )));
    }
    let det = (beta / (1.0 + beta)).sqrt();
    let dif = (link_gain / (1.0 + beta)).sqrt();
    let mut data = Vec::with_capacity(rows * cols);
    for c in 0..cols {
        for r in 0..rows {
            data.push(los[(r, c)] * det + sample_cn01(rng) * dif);
        }
    }
    Ok(CMat::from_vec(rows, cols, data))
}

/// Synthesizes all channels for one scenario draw. RNG consumption order is
/// fixed (user positions, then G, then each h_r, then each h_d) so a seed
/// pins the full realization.
pub fn synthesize_scenario(
    geometry: &ScenarioGeometry,
    params: &PropagationParams,
    seed: u64,
) -> Result<ChannelSet> {
    geometry.validate()?;
    params.validate()?;
    let mut rng = stream(seed);
    let m = geometry.m_antennas;
    let n = geometry.n_elements();

    let mut user_positions = Vec::with_capacity(geometry.k_users);
    for _ in 0..geometry.k_users {
        let u1: f64 = rng.random();
        let u2: f64 = rng.random();
        let r = geometry.user_cluster_radius * u1.sqrt();
        let phi = std::f64::consts::TAU * u2;
        let c = geometry.user_cluster_center;
        user_positions.push([c[0] + r * phi.cos(), c[1] + r * phi.sin(), c[2]]);
    }

    let d_ai = distance(geometry.ap_position, geometry.irs_position);
    let gain_g = path_loss(d_ai, params.alpha_ap_irs, params)?;
    let a_rx = upa_steering(
        geometry.n_y,
        geometry.n_z,
        unit_dir(geometry.irs_position, geometry.ap_position),
    );
    let a_tx = ula_steering(m, unit_dir(geometry.ap_position, geometry.irs_position));
    let g_los = (&a_rx * a_tx.adjoint()).scale(gain_g.sqrt());
    let g = sample_rician_channel(n, m, params.beta_ap_irs, &g_los, gain_g, &mut rng)?;

    let mut h_r = Vec::with_capacity(geometry.k_users);
    for pos in &user_positions {
        let gain = path_loss(
            distance(geometry.irs_position, *pos),
            params.alpha_irs_user,
            params,
        )?;
        let los = upa_steering(geometry.n_y, geometry.n_z, unit_dir(geometry.irs_position, *pos))
            .scale(gain.sqrt());
        let los = CMat::from_column_slice(n, 1, los.as_slice());
        let v = sample_rician_channel(n, 1, params.beta_irs_user, &los, gain, &mut rng)?;
        h_r.push(CVec::from_column_slice(v.as_slice()));
    }

    let mut h_d = Vec::with_capacity(geometry.k_users);
    for pos in &user_positions {
        let gain = path_loss(
            distance(geometry.ap_position, *pos),
            params.alpha_ap_user,
            params,
        )?;
        let los = ula_steering(m, unit_dir(geometry.ap_position, *pos)).scale(gain.sqrt());
        let los = CMat::from_column_slice(m, 1, los.as_slice());
        let v = sample_rician_channel(m, 1, params.beta_ap_user, &los, gain, &mut rng)?;
        h_d.push(CVec::from_column_slice(v.as_slice()));
    }

    let mut cascaded = Vec::with_capacity(geometry.k_users);
    let mut composite = Vec::with_capacity(geometry.k_users);
    for k in 0..geometry.k_users {
        let mut hk = CMat::zeros(n, m);
        for i in 0..n {
            let w = h_r[k][i].conj();
            for j in 0..m {
                hk[(i, j)] = w * g[(i, j)];
            }
        }
        let mut comp = CMat::zeros(n + 1, m);
        comp.row_mut(0).copy_from(&h_d[k].adjoint());
        comp.rows_mut(1, n).copy_from(&hk);
        cascaded.push(hk);
        composite.push(comp);
    }

    Ok(ChannelSet {
        g,
        h_r,
        h_d,
        cascaded,
        composite,
        user_positions,
    })
}

/// Effective downlink vector seen by a user for augmented reflection
/// coefficients v~ = [1; v]: returns H~^H v~, so the received scalar for a
/// precoder w is (H~^H v~)^H w = v~^H H~ w.
#[must_use]
pub fn effective_channel(v_aug: &CVec, composite: &CMat) -> CVec {
    composite.adjoint() * v_aug
}

//! Outage-constrained joint active/passive beamforming for an IRS-aided MISO
//! downlink with imperfect, correlated channel state information.
//!
//! The crate is organized bottom-up:
//!
//! * [`scenario`]: geometry, path loss, Rician fading, channel synthesis.
//! * [`training`]: IRS training patterns, LS/LMMSE estimation, and the
//!   correlated estimation-error model induced by the training stage.
//! * [`outage`]: Marcum-Q / noncentral chi-square machinery and closed-form
//!   plus Monte-Carlo outage evaluation.
//! * [`phase`]: discrete reflection-coefficient alphabets and projections.
//! * [`single_user`]: penalty dual decomposition solver for the weighted
//!   signal-power/variance objective, power bisection, and baselines.
//! * [`qcqp`]: small dense solver for quadratic objectives over
//!   intersections of balls (surrogate subproblems).
//! * [`multiuser`]: stochastic successive convex approximation for the
//!   multiuser outage-constrained power minimization, plus deterministic
//!   baselines.
//!
//! All powers are linear (watts) inside this crate; dB/dBm conversions are a
//! front-end concern. All randomness flows through explicit seeds.

pub mod error;
pub mod linalg;
pub mod multiuser;
pub mod outage;
pub mod phase;
pub mod qcqp;
pub mod rng;
pub mod scenario;
pub mod single_user;
pub mod training;

pub use error::Error;

/// Complex scalar used throughout.
pub type C64 = num_complex::Complex64;

/// Dense complex matrix.
pub type CMat = nalgebra::DMatrix<C64>;

/// Dense complex column vector.
pub type CVec = nalgebra::DVector<C64>;

//! Numerical laboratory for localized entropy functionals on rotationally
//! symmetric Ricci flows.
//!
//! Every manifold here is a warped product `dr^2 + f(r)^2 g_{S^{m-1}}` over an
//! arc-length interval, either disk-like (one pole) or sphere-like (two
//! poles). On top of that one-dimensional reduction the crate builds:
//!
//! * [`geometry`]: grids, warp factors, curvature, geodesic balls, volumes;
//! * [`flow`]: static, exact round-sphere, and numerical warped Ricci flows
//!   in a fixed radial gauge, plus flow-hypothesis and distance-evolution
//!   monitors;
//! * [`entropy`]: localized `W`-functionals, their minimizers `mu`, the
//!   infimum-over-scales `nu`, and equimeasurable symmetrization;
//! * [`heat`]: conjugate heat flows started from entropy minimizers and the
//!   Harnack quantity `v` attached to them;
//! * [`reduced`]: reduced distances and reduced volume densities with
//!   respect to a base probability measure;
//! * [`cutoff`]: the two cutoff families used by the localization arguments,
//!   with certified differential inequalities.
//!
//! All state lives in plain `Vec<f64>` arrays on uniform grids; solvers are
//! deterministic given their inputs.

pub mod cutoff;
pub mod entropy;
pub mod flow;
pub mod geometry;
pub mod grid;
pub mod heat;
pub mod optim;
pub mod reduced;

/// Errors shared across the numerical modules.
///
/// Construction errors mean the caller handed in data that violates a type
/// invariant; solver errors mean a computation could not be completed to its
/// declared tolerance and carry enough context to diagnose why.
#[derive(Debug, thiserror::Error)]
pub enum LabError {
    #[error("dimension m = {m} is not supported; the warped reduction needs m >= 3")]
    DimensionTooSmall { m: usize },

    #[error("grid needs at least {need} points, got {got}")]
    GridTooSmall { need: usize, got: usize },

    #[error("grid spacing must be positive and finite, got {ds}")]
    BadSpacing { ds: f64 },

    #[error("warp factor must vanish at the pole (index {index}), got {value}")]
    PoleNotPinned { index: usize, value: f64 },

    #[error("warp factor must be positive away from poles; f[{index}] = {value}")]
    NonPositiveWarp { index: usize, value: f64 },

    #[error(
        "pole smoothness violated: one-sided slope {slope} differs from 1 by {defect}, \
         allowed {allowed}"
    )]
    PoleSlope { slope: f64, defect: f64, allowed: f64 },

    #[error("ball radius {radius} outside (0, {max}]")]
    BadBallRadius { radius: f64, max: f64 },

    #[error("far-pole ball center requires a sphere-like geometry")]
    NoFarPole,

    #[error("{what} must be finite, got {value}")]
    NotFinite { what: &'static str, value: f64 },

    #[error("{what}: expected {expected}, got {got}")]
    BadParameter { what: &'static str, expected: String, got: String },

    #[error("flow horizon {horizon} reaches extinction; round sphere collapses at {extinction}")]
    HorizonPastExtinction { horizon: f64, extinction: f64 },

    #[error("flow truncated at t = {t}: {reason} (requested horizon {horizon})")]
    HorizonTruncated { t: f64, horizon: f64, reason: String },

    #[error("initial geometry does not match flow kind `{kind}`: {detail}")]
    GeometryKindMismatch { kind: &'static str, detail: String },

    #[error("trial function mass {mass} deviates from 1 beyond certificate tolerance {tol}")]
    Unnormalized { mass: f64, tol: f64 },

    #[error("domain [{lo}, {hi}] does not fit the geometry (s_max = {s_max}, need >= {min_pts} interior points)")]
    BadDomain { lo: f64, hi: f64, s_max: f64, min_pts: usize },

    #[error("minimizer did not reach tolerance {tol} in {iters} iterations (residual {residual})")]
    NoConvergence { tol: f64, iters: usize, residual: f64 },

    #[error("cutoff construction failed: property `{property}` has margin {margin}")]
    CutoffConstruction { property: &'static str, margin: f64 },

    #[error("{context}: solutions live on incompatible grids ({detail})")]
    GridMismatch { context: &'static str, detail: String },

    #[error("conjugate heat mass drifted to {mass} at slice {slice} (tolerance {tol})")]
    MassDrift { slice: usize, mass: f64, tol: f64 },
}

/// Shorthand used throughout the crate.
pub type Result<T> = std::result::Result<T, LabError>;

/// Checks one scalar for NaN/inf before it enters a solver.
pub(crate) fn ensure_finite(what: &'static str, value: f64) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(LabError::NotFinite { what, value })
    }
}

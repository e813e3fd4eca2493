//! Localized entropy functionals and their minimizers.
//!
//! The functional evaluated here, for a nonnegative radial `phi` with
//! `int phi^2 dv = 1` supported in a radial domain, is
//!
//! ```text
//! W(phi, tau) = int { tau (a phi^2 + 4 |grad phi|^2) - 2 phi^2 log phi } dv
//!               - m - (m/2) log(4 pi tau)
//! ```
//!
//! with `a` either zero or the scalar curvature. `mu` is its infimum over
//! the unit sphere of trial functions, `nu` the infimum of `mu` over scales
//! `s in (0, tau]`.
//!
//! Discretization: trial functions are piecewise linear on the geometry
//! grid; every integral uses per-cell three-point Gauss quadrature against
//! the cubic interpolant of the warp factor. The minimizer runs projected
//! gradient descent in the `L^2(dv)` metric (the mass matrix is the
//! preconditioner) with Barzilai-Borwein steps, clamping to `phi >= 0` and
//! renormalizing each iterate, so positivity and unit mass hold at every
//! step by construction. One quadrature rule serves `eval_w`, the
//! minimizer, and the mass certificate, which is what makes the
//! `eval_w(minimizer) == mu` contract exact rather than approximate.

use crate::geometry::{
    compute_curvature, sphere_area_constant, unit_ball_constant, Pole, RadialGeometry, Topology,
};
use crate::grid::{self, EndRule, GL3_NODES, GL3_WEIGHTS};
use crate::optim::BbStep;
use crate::{ensure_finite, LabError, Result};
use serde::{Deserialize, Serialize};

/// Certificate tolerance on `int phi^2 dv = 1`.
pub const MASS_TOL: f64 = 1e-10;

/// Arguments under `phi log phi` are clamped here inside iteration
/// gradients; the functional value itself uses the continuous extension
/// `x log x -> 0`, so the clamp never biases a reported value. The floor
/// also caps the entropy term's curvature `|4 log phi + 6|`, which sets the
/// preconditioner scale below.
const LOG_FLOOR: f64 = 1e-12;

/// Zeroth-order coefficient of the functional.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AField {
    /// `a = 0`: the log-Sobolev variants written `mu-bar`, `nu-bar`.
    Zero,
    /// `a = R`: the entropy variants `mu`, `nu`.
    ScalarCurvature,
}

impl AField {
    /// Samples of `a` on the geometry grid.
    pub fn samples(&self, geom: &RadialGeometry) -> Vec<f64> {
        match self {
            AField::Zero => vec![0.0; geom.len()],
            AField::ScalarCurvature => compute_curvature(geom).r,
        }
    }

    pub fn tag(&self) -> &'static str {
        match self {
            AField::Zero => "zero",
            AField::ScalarCurvature => "scalar-curvature",
        }
    }
}

/// Support region for trial functions, in arc coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Domain {
    /// The whole geometry; its boundary (if the geometry has one) still
    /// carries a vanishing condition.
    Whole,
    /// Geodesic ball about a pole.
    Ball { center: Pole, radius: f64 },
    /// Arc interval `[lo, hi]`.
    Interval { lo: f64, hi: f64 },
}

/// A domain snapped onto a concrete grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct DomainSpan {
    pub i_lo: usize,
    pub i_hi: usize,
    /// Whether the span end is a cut boundary (trials vanish) rather than a
    /// smooth pole (no constraint).
    pub dirichlet_lo: bool,
    pub dirichlet_hi: bool,
}

impl DomainSpan {
    pub fn nodes(&self) -> usize {
        self.i_hi - self.i_lo + 1
    }

    fn pinned(&self, local: usize) -> bool {
        (self.dirichlet_lo && local == 0) || (self.dirichlet_hi && local == self.nodes() - 1)
    }
}

impl Domain {
    /// Snaps the domain to grid nodes. Domains need at least five cells.
    pub fn resolve(&self, geom: &RadialGeometry) -> Result<DomainSpan> {
        let n = geom.intervals();
        let ds = geom.spacing();
        let snap = |s: f64| -> usize { ((s / ds).round().max(0.0) as usize).min(n) };
        let (i_lo, i_hi) = match *self {
            Domain::Whole => (0, n),
            Domain::Ball { center, radius } => {
                ensure_finite("ball radius", radius)?;
                if center == Pole::Far && geom.topology() != Topology::SphereLike {
                    return Err(LabError::NoFarPole);
                }
                if radius <= 0.0 || radius > geom.s_max() {
                    return Err(LabError::BadBallRadius { radius, max: geom.s_max() });
                }
                match center {
                    Pole::Origin => (0, snap(radius)),
                    Pole::Far => (n - snap(radius).min(n), n),
                }
            }
            Domain::Interval { lo, hi } => {
                ensure_finite("interval lo", lo)?;
                ensure_finite("interval hi", hi)?;
                if !(0.0 <= lo && lo < hi && hi <= geom.s_max()) {
                    return Err(LabError::BadDomain {
                        lo,
                        hi,
                        s_max: geom.s_max(),
                        min_pts: 5,
                    });
                }
                (snap(lo), snap(hi))
            }
        };
        if i_hi.saturating_sub(i_lo) < 5 {
            return Err(LabError::BadDomain {
                lo: i_lo as f64 * ds,
                hi: i_hi as f64 * ds,
                s_max: geom.s_max(),
                min_pts: 5,
            });
        }
        let dirichlet_lo = i_lo != 0;
        let dirichlet_hi = match geom.topology() {
            Topology::SphereLike => i_hi != n,
            Topology::DiskLike => true,
        };
        Ok(DomainSpan { i_lo, i_hi, dirichlet_lo, dirichlet_hi })
    }
}

/// A nonnegative radial function with a unit-mass certificate.
#[derive(Debug, Clone, Serialize)]
pub struct TrialFunction {
    phi: Vec<f64>,
    domain: Domain,
    span: DomainSpan,
    mass: f64,
}

impl TrialFunction {
    /// Wraps full-grid samples; zero outside the domain, nonnegative, and
    /// unit mass within [`MASS_TOL`] are all enforced.
    pub fn new(geom: &RadialGeometry, domain: Domain, phi: Vec<f64>) -> Result<Self> {
        if phi.len() != geom.len() {
            return Err(LabError::GridMismatch {
                context: "trial function",
                detail: format!("{} samples on a {}-point grid", phi.len(), geom.len()),
            });
        }
        let span = domain.resolve(geom)?;
        for (i, &v) in phi.iter().enumerate() {
            ensure_finite("trial sample", v)?;
            if v < 0.0 {
                return Err(LabError::BadParameter {
                    what: "trial function sign",
                    expected: "phi >= 0".into(),
                    got: format!("phi[{i}] = {v}"),
                });
            }
            if (i < span.i_lo || i > span.i_hi) && v != 0.0 {
                return Err(LabError::BadParameter {
                    what: "trial function support",
                    expected: "zero outside the domain".into(),
                    got: format!("phi[{i}] = {v}"),
                });
            }
        }
        let quad = WQuadrature::new(geom, &AField::Zero, span);
        let mass = quad.mass(&phi);
        if (mass - 1.0).abs() > MASS_TOL {
            return Err(LabError::Unnormalized { mass, tol: MASS_TOL });
        }
        Ok(TrialFunction { phi, domain, span, mass })
    }

    /// Samples a profile of the arc coordinate, zeroes it outside the
    /// domain (and at cut boundaries), and normalizes exactly.
    pub fn from_profile(
        geom: &RadialGeometry,
        domain: Domain,
        profile: impl Fn(f64) -> f64,
    ) -> Result<Self> {
        let span = domain.resolve(geom)?;
        let mut phi = vec![0.0; geom.len()];
        for i in span.i_lo..=span.i_hi {
            let v = profile(geom.s(i));
            ensure_finite("profile sample", v)?;
            phi[i] = v.max(0.0);
        }
        if span.dirichlet_lo {
            phi[span.i_lo] = 0.0;
        }
        if span.dirichlet_hi {
            phi[span.i_hi] = 0.0;
        }
        let quad = WQuadrature::new(geom, &AField::Zero, span);
        let mass = quad.mass(&phi);
        if !(mass > 0.0) || !mass.is_finite() {
            return Err(LabError::BadParameter {
                what: "profile mass",
                expected: "positive finite int phi^2 dv".into(),
                got: format!("{mass}"),
            });
        }
        let scale = mass.sqrt().recip();
        phi.iter_mut().for_each(|v| *v *= scale);
        let mass = quad.mass(&phi);
        Ok(TrialFunction { phi, domain, span, mass })
    }

    pub fn phi(&self) -> &[f64] {
        &self.phi
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    pub fn span(&self) -> DomainSpan {
        self.span
    }

    /// The certified `int phi^2 dv`.
    pub fn mass(&self) -> f64 {
        self.mass
    }
}

/// The three integral terms of the functional plus its constant offset.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct WValue {
    /// `4 tau int |grad phi|^2 dv`.
    pub dirichlet: f64,
    /// `tau int a phi^2 dv`.
    pub potential: f64,
    /// `-2 int phi^2 log phi dv`.
    pub entropy: f64,
    /// `-m - (m/2) log(4 pi tau)`.
    pub offset: f64,
    pub total: f64,
}

/// Evaluates the functional on a certified trial function.
pub fn eval_w(
    geom: &RadialGeometry,
    a_field: &AField,
    trial: &TrialFunction,
    tau: f64,
) -> Result<WValue> {
    ensure_finite("tau", tau)?;
    if tau <= 0.0 {
        return Err(LabError::BadParameter {
            what: "tau",
            expected: "positive".into(),
            got: format!("{tau}"),
        });
    }
    if (trial.mass - 1.0).abs() > MASS_TOL {
        return Err(LabError::Unnormalized { mass: trial.mass, tol: MASS_TOL });
    }
    let quad = WQuadrature::new(geom, a_field, trial.span);
    Ok(quad.w_value(&trial.phi, tau, geom.dimension()))
}

/// Result of one `mu` minimization.
#[derive(Debug, Clone, Serialize)]
pub struct MuResult {
    pub mu: f64,
    pub minimizer: TrialFunction,
    pub tau: f64,
    pub a_tag: &'static str,
    /// Relative weighted-`L^2` norm of the discrete Euler-Lagrange
    /// residual at the final iterate; compare against `tol_el`.
    pub el_residual: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Terms of the final value, as from [`eval_w`].
    pub value: WValue,
}

/// Options for [`minimize_mu`].
#[derive(Debug, Clone)]
pub struct MuConfig {
    /// Relative Euler-Lagrange residual at which iteration stops.
    pub tol_el: f64,
    pub max_iters: usize,
}

impl Default for MuConfig {
    fn default() -> Self {
        MuConfig { tol_el: 1e-8, max_iters: 50_000 }
    }
}

/// Minimizes the functional over the domain's unit-mass trial functions.
pub fn minimize_mu(
    geom: &RadialGeometry,
    a_field: &AField,
    domain: &Domain,
    tau: f64,
    cfg: &MuConfig,
) -> Result<MuResult> {
    minimize_mu_from(geom, a_field, domain, tau, cfg, None)
}

/// As [`minimize_mu`], warm-started from full-grid samples when given.
pub fn minimize_mu_from(
    geom: &RadialGeometry,
    a_field: &AField,
    domain: &Domain,
    tau: f64,
    cfg: &MuConfig,
    warm: Option<&[f64]>,
) -> Result<MuResult> {
    ensure_finite("tau", tau)?;
    if tau <= 0.0 {
        return Err(LabError::BadParameter {
            what: "tau",
            expected: "positive".into(),
            got: format!("{tau}"),
        });
    }
    let span = domain.resolve(geom)?;
    let quad = WQuadrature::new(geom, a_field, span);
    let m = geom.dimension();
    let nn = span.nodes();

    // Iteration state lives on the span only.
    let mut phi: Vec<f64> = match warm {
        Some(full) => full[span.i_lo..=span.i_hi].to_vec(),
        None => initial_guess(geom, span, tau),
    };
    for i in 0..nn {
        if span.pinned(i) {
            phi[i] = 0.0;
        } else {
            phi[i] = phi[i].max(0.0);
        }
    }
    if !(quad.mass_span(&phi) > 0.0) {
        phi = initial_guess(geom, span, tau);
        for i in 0..nn {
            if span.pinned(i) {
                phi[i] = 0.0;
            }
        }
    }
    quad.normalize(&mut phi);

    let offset = -(m as f64) - 0.5 * m as f64 * (4.0 * std::f64::consts::PI * tau).ln();

    // Local curvature bound of the non-Dirichlet terms: `|4 log phi + 6|`
    // capped by the log floor, plus the potential. With
    // `gamma = 8 tau / c_loc` the preconditioned Hessian stays near `c_loc`
    // times the identity across the whole stiffness spectrum.
    let a_max = quad.a.iter().flat_map(|q| q.iter()).fold(0.0f64, |acc, v| acc.max(v.abs()));
    let c_loc = 4.0 * (-LOG_FLOOR.ln()) + 6.0 + 2.0 * tau * a_max;
    let gamma = 8.0 * tau / c_loc;

    let mut bb = BbStep::new(0.5 / c_loc, 1e-12, 1e2);
    let mut iterations = 0;
    let mut residual = f64::INFINITY;
    let mut grad = vec![0.0; nn];
    let mut best_phi = phi.clone();
    let mut best_residual = f64::INFINITY;
    while iterations < cfg.max_iters {
        let value = quad.w_integrals(&phi, tau) + offset;
        quad.w_gradient(&phi, tau, &mut grad);
        for i in 0..nn {
            if span.pinned(i) {
                grad[i] = 0.0;
            }
        }
        let theta = value - offset; // mu + m + (m/2) log(4 pi tau) at the optimum
        residual = quad.el_residual(&phi, &grad, theta, &span);
        if residual < best_residual {
            best_residual = residual;
            best_phi.copy_from_slice(&phi);
        }
        if residual <= cfg.tol_el {
            break;
        }
        // Tangent-projected weak residual: `grad - (phi^T grad) M phi`
        // vanishes exactly at constrained critical points, so fixed points
        // of this iteration solve the Euler-Lagrange equation.
        let mphi = grid::tridiagonal_apply(&quad.m_lower, &quad.m_diag, &quad.m_upper, &phi);
        let pg = 2.0 * (theta - 1.0);
        let tangent: Vec<f64> = grad.iter().zip(&mphi).map(|(g, mp)| g - pg * mp).collect();
        let dir = quad.shifted_solve(&tangent, &span, gamma);
        // Clamping can wipe the iterate out under an overlong BB step;
        // halving until the mass stays positive keeps the sphere
        // projection well defined without touching the BB state.
        let mut step = bb.next(&phi, &dir);
        for _ in 0..60 {
            let cand: Vec<f64> =
                phi.iter().zip(&dir).map(|(p, d)| (p - step * d).max(0.0)).collect();
            let mass = quad.mass_span(&cand);
            if mass > 0.0 && mass.is_finite() {
                phi = cand;
                break;
            }
            step *= 0.5;
        }
        quad.normalize(&mut phi);
        iterations += 1;
    }
    // BB iterations are nonmonotone; hand back the best visited point.
    if best_residual < residual {
        phi = best_phi;
        residual = best_residual;
    }
    let converged = residual <= cfg.tol_el;

    let mut full = vec![0.0; geom.len()];
    full[span.i_lo..=span.i_hi].copy_from_slice(&phi);
    let minimizer = TrialFunction::new(geom, *domain, full)?;
    let value = eval_w(geom, a_field, &minimizer, tau)?;
    Ok(MuResult {
        mu: value.total,
        minimizer,
        tau,
        a_tag: a_field.tag(),
        el_residual: residual,
        iterations,
        converged,
        value,
    })
}

/// Strong-form Euler-Lagrange residual of a trial function, in the
/// dv-weighted `L^2` norm over the domain interior, relative to the
/// eigenvalue scale `1 + |theta|`.
///
/// Unlike the weak residual driving the minimizer (which reaches `tol_el`),
/// this evaluates `-4 tau (phi'' + (m-1)(f'/f) phi') + tau a phi
/// - 2 phi log phi - theta phi` by finite differences, so for a converged
/// minimizer it measures pure discretization error and shrinks under grid
/// refinement.
pub fn strong_el_residual(
    geom: &RadialGeometry,
    a_field: &AField,
    trial: &TrialFunction,
    tau: f64,
    mu: f64,
) -> f64 {
    let span = trial.span;
    let m = geom.dimension() as f64;
    let ds = geom.spacing();
    let theta = mu + m + 0.5 * m * (4.0 * std::f64::consts::PI * tau).ln();
    let phi = &trial.phi[span.i_lo..=span.i_hi];
    let left = if span.dirichlet_lo { EndRule::OneSided } else { EndRule::EvenPole };
    let right = if span.dirichlet_hi { EndRule::OneSided } else { EndRule::EvenPole };
    let d1 = grid::deriv1(phi, ds, left, right);
    let d2 = grid::deriv2(phi, ds, left, right);
    let f = geom.warp();
    let fp = grid::deriv1(f, ds, EndRule::OddPole, geom.right_rule_odd());
    let a = a_field.samples(geom);
    let sigma = sphere_area_constant(geom.dimension());
    let mut num = 0.0;
    let mut den = 0.0;
    for local in 0..span.nodes() {
        if span.pinned(local) {
            continue;
        }
        let i = span.i_lo + local;
        let at_pole = f[i] == 0.0;
        let lap = if at_pole {
            m * d2[local]
        } else {
            d2[local] + (m - 1.0) * fp[i] / f[i] * d1[local]
        };
        let p = phi[local];
        let ent = if p > 0.0 { 2.0 * p * p.ln() } else { 0.0 };
        let r = -4.0 * tau * lap + tau * a[i] * p - ent - theta * p;
        // Trapezoid node weight of dv; pole nodes carry zero measure.
        let w = sigma * f[i].powi(geom.dimension() as i32 - 1) * ds;
        num += r * r * w;
        den += p * p * w;
    }
    (num.max(0.0)).sqrt() / ((1.0 + theta.abs()) * den.sqrt().max(f64::MIN_POSITIVE))
}

/// One sampled scale of a `nu` computation.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct NuSample {
    pub s: f64,
    pub mu: f64,
    pub converged: bool,
}

/// Result of a `nu` computation: the infimum of `mu(s)` over `(0, tau]`,
/// restricted to the sampled grid, so `nu` is an upper bound of the true
/// infimum and the stored samples make the slack auditable.
#[derive(Debug, Clone, Serialize)]
pub struct NuResult {
    pub nu: f64,
    pub tau: f64,
    /// Samples sorted by increasing `s`, refinement pass included.
    pub samples: Vec<NuSample>,
    pub argmin_s: f64,
    pub refinement_passes: usize,
    /// Set when any sample failed to converge.
    pub approximate: bool,
}

/// Number of points in the base geometric `s`-grid of [`compute_nu`].
pub const NU_BASE_SAMPLES: usize = 24;

/// Minimizes `mu(s)` over the geometric grid `s in [1e-3 tau, tau]` with
/// one refinement pass around the argmin. Scales are processed from the
/// largest down, warm-starting each solve from its neighbor's minimizer.
pub fn compute_nu(
    geom: &RadialGeometry,
    a_field: &AField,
    domain: &Domain,
    tau: f64,
    cfg: &MuConfig,
) -> Result<NuResult> {
    ensure_finite("tau", tau)?;
    if tau <= 0.0 {
        return Err(LabError::BadParameter {
            what: "tau",
            expected: "positive".into(),
            got: format!("{tau}"),
        });
    }
    let k = NU_BASE_SAMPLES;
    let ratio: f64 = 1e-3f64.powf(1.0 / (k - 1) as f64);
    // Descending: scales[0] = tau, scales[k-1] = 1e-3 tau.
    let scales: Vec<f64> = (0..k).map(|i| tau * ratio.powi(i as i32)).collect();
    let mut samples = Vec::with_capacity(k + 8);
    let mut warm: Option<Vec<f64>> = None;
    for &s in &scales {
        let res = minimize_mu_from(geom, a_field, domain, s, cfg, warm.as_deref())?;
        warm = Some(res.minimizer.phi().to_vec());
        samples.push((s, res));
    }

    // Refine around the current argmin: 8 extra geometric points between
    // its grid neighbors.
    let argmin = |samples: &[(f64, MuResult)]| -> usize {
        // Ties break toward smaller s; samples run from large s down.
        let mut best = 0;
        for i in 0..samples.len() {
            if samples[i].1.mu <= samples[best].1.mu {
                best = i;
            }
        }
        best
    };
    let b = argmin(&samples);
    let hi = if b == 0 { samples[0].0 } else { samples[b - 1].0 };
    let lo = if b + 1 == samples.len() { samples[b].0 } else { samples[b + 1].0 };
    let fine: f64 = (lo / hi).powf(1.0 / 9.0);
    let mut warm = Some(samples[b].1.minimizer.phi().to_vec());
    for i in 1..9 {
        let s = hi * fine.powi(i);
        let res = minimize_mu_from(geom, a_field, domain, s, cfg, warm.as_deref())?;
        warm = Some(res.minimizer.phi().to_vec());
        samples.push((s, res));
    }

    samples.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut nu = f64::INFINITY;
    let mut argmin_s = samples[0].0;
    let mut approximate = false;
    let out: Vec<NuSample> = samples
        .iter()
        .map(|(s, res)| {
            if res.mu < nu {
                nu = res.mu;
                argmin_s = *s;
            }
            approximate |= !res.converged;
            NuSample { s: *s, mu: res.mu, converged: res.converged }
        })
        .collect();
    Ok(NuResult {
        nu,
        tau,
        samples: out,
        argmin_s,
        refinement_passes: 1,
        approximate,
    })
}

/// Decreasing rearrangement of a trial function onto a Euclidean ball of
/// equal volume.
#[derive(Debug, Clone)]
pub struct Rearrangement {
    /// Euclidean ball `|ball| = |domain|`, same dimension.
    pub ball: RadialGeometry,
    /// Rearranged samples on the ball grid, nonincreasing from the center.
    pub h: Vec<f64>,
    /// `| int h^2 - int phi^2 |`.
    pub l2_defect: f64,
    /// `| int h^2 log h^2 - int phi^2 log phi^2 |`.
    pub entropy_defect: f64,
    /// Nodes clamped by the monotonicity pass (quadrature noise only).
    pub monotonicity_fixes: usize,
}

impl Rearrangement {
    /// The rearrangement as a certified trial function (renormalized; the
    /// raw mass defect stays recorded on `self`).
    pub fn as_trial(&self) -> Result<TrialFunction> {
        TrialFunction::from_profile(&self.ball, Domain::Whole, |s| {
            grid::cubic_eval(&self.h, self.ball.spacing(), s)
        })
    }
}

/// Rearranges `phi` onto a Euclidean ball with the same superlevel-set
/// volumes: `|{phi >= t}| = |{h >= t}|` for every level.
///
/// The level-volume function is computed from the piecewise-linear
/// interpolant of `phi` (partial cells integrate the exact volume form), and
/// inverted by bisection per target node, so `h` is monotone by construction
/// up to rounding; any clamped node increments `monotonicity_fixes`.
pub fn equimeasurable_rearrangement(
    geom: &RadialGeometry,
    trial: &TrialFunction,
) -> Result<Rearrangement> {
    let span = trial.span;
    let m = geom.dimension();
    let quad = WQuadrature::new(geom, &AField::Zero, span);
    let omega = unit_ball_constant(m);
    let total: f64 = quad.cell_volume.iter().sum();
    let radius = (total / omega).powf(1.0 / m as f64);
    // The level-set map can have root-type derivative singularities where a
    // level set touches a critical point, so the ball grid oversamples the
    // input by 2x; the residual interpolation bias lands in the defects.
    let n_t = (4 * (span.i_hi - span.i_lo)).max(128);
    let ds_t = radius / n_t as f64;
    let ball = RadialGeometry::new(
        m,
        Topology::DiskLike,
        ds_t,
        (0..=n_t).map(|i| i as f64 * ds_t).collect(),
    )?;

    let phi = &trial.phi;
    let max_phi = phi[span.i_lo..=span.i_hi].iter().cloned().fold(0.0, f64::max);
    let vol_above = |t: f64| -> f64 { quad.volume_above(phi, span, t) };

    let mut h = vec![0.0; n_t + 1];
    h[0] = max_phi;
    for j in 1..=n_t {
        let target = omega * (j as f64 * ds_t).powi(m as i32);
        // h[j] = sup { t : |{phi > t}| > target }, found by bisection.
        let mut lo = 0.0;
        let mut hi = max_phi;
        if vol_above(0.0) <= target {
            h[j] = 0.0;
            continue;
        }
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if vol_above(mid) > target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        h[j] = lo;
    }
    let mut monotonicity_fixes = 0;
    for j in 1..=n_t {
        if h[j] > h[j - 1] {
            h[j] = h[j - 1];
            monotonicity_fixes += 1;
        }
    }

    // Integral preservation diagnostics, same quadrature on both sides.
    let ball_span = Domain::Whole.resolve(&ball)?;
    let ball_quad = WQuadrature::new(&ball, &AField::Zero, ball_span);
    let l2_defect = (ball_quad.mass(&h) - quad.mass(phi)).abs();
    let ent_phi = 2.0 * quad.entropy_integral(phi);
    let ent_h = 2.0 * ball_quad.entropy_integral(&h);
    let entropy_defect = (ent_h - ent_phi).abs();
    Ok(Rearrangement { ball, h, l2_defect, entropy_defect, monotonicity_fixes })
}

/// Dirichlet-energy comparison between a trial function and a rearranged
/// competitor: the margin of `int |grad phi|^2 dv >= lambda^2 int |grad h|^2`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct DirichletComparison {
    pub lhs: f64,
    pub rhs: f64,
    pub margin: f64,
    pub lambda: f64,
}

/// Computes the comparison for a caller-supplied `lambda`; the margin is
/// signed, so a `lambda` above the actual energy ratio reports failure.
pub fn dirichlet_comparison(
    geom: &RadialGeometry,
    trial: &TrialFunction,
    rearranged: &Rearrangement,
    lambda: f64,
) -> Result<DirichletComparison> {
    ensure_finite("lambda", lambda)?;
    if lambda <= 0.0 {
        return Err(LabError::BadParameter {
            what: "lambda",
            expected: "positive".into(),
            got: format!("{lambda}"),
        });
    }
    let quad = WQuadrature::new(geom, &AField::Zero, trial.span);
    let ball_span = Domain::Whole.resolve(&rearranged.ball)?;
    let ball_quad = WQuadrature::new(&rearranged.ball, &AField::Zero, ball_span);
    let lhs = quad.dirichlet_integral(&trial.phi);
    let rhs = lambda * lambda * ball_quad.dirichlet_integral(&rearranged.h);
    Ok(DirichletComparison { lhs, rhs, margin: lhs - rhs, lambda })
}

/// Per-cell Gauss quadrature data for one `(geometry, a-field, span)`.
///
/// Basis values at the Gauss nodes are shared by all cells; only the
/// dv-weights and `a`-samples vary. All entropy integrals route through
/// this one struct.
struct WQuadrature {
    i_lo: usize,
    h: f64,
    /// dv Gauss weights per cell: `w[q] = W_q h sigma f(x_q)^{m-1}`.
    w: Vec<[f64; 3]>,
    /// `a` at the Gauss nodes per cell.
    a: Vec<[f64; 3]>,
    /// Volume density `sigma f^{m-1}` at the Gauss nodes per cell.
    dens: Vec<[f64; 3]>,
    /// Total dv volume per cell.
    cell_volume: Vec<f64>,
    /// Mass-matrix tridiagonal (span-local, Dirichlet rows untouched).
    m_lower: Vec<f64>,
    m_diag: Vec<f64>,
    m_upper: Vec<f64>,
    /// Stiffness tridiagonal `int b_i' b_j' dv` (span-local).
    k_lower: Vec<f64>,
    k_diag: Vec<f64>,
    k_upper: Vec<f64>,
}

impl WQuadrature {
    fn new(geom: &RadialGeometry, a_field: &AField, span: DomainSpan) -> Self {
        let h = geom.spacing();
        let sigma = sphere_area_constant(geom.dimension());
        let p = geom.dimension() as i32 - 1;
        let a_nodes = a_field.samples(geom);
        let cells = span.i_hi - span.i_lo;
        let nn = span.nodes();
        let mut w = Vec::with_capacity(cells);
        let mut a = Vec::with_capacity(cells);
        let mut dens = Vec::with_capacity(cells);
        let mut cell_volume = Vec::with_capacity(cells);
        let mut m_lower = vec![0.0; nn];
        let mut m_diag = vec![0.0; nn];
        let mut m_upper = vec![0.0; nn];
        let mut k_lower = vec![0.0; nn];
        let mut k_diag = vec![0.0; nn];
        let mut k_upper = vec![0.0; nn];
        for c in 0..cells {
            let s0 = (span.i_lo + c) as f64 * h;
            let mut wq = [0.0; 3];
            let mut aq = [0.0; 3];
            let mut dq = [0.0; 3];
            let mut vol = 0.0;
            for q in 0..3 {
                let x = s0 + GL3_NODES[q] * h;
                let f = grid::cubic_eval(geom.warp(), h, x);
                dq[q] = sigma * f.powi(p);
                wq[q] = GL3_WEIGHTS[q] * h * dq[q];
                aq[q] = grid::cubic_eval(&a_nodes, h, x);
                vol += wq[q];
            }
            for q in 0..3 {
                let bl = 1.0 - GL3_NODES[q];
                let br = GL3_NODES[q];
                m_diag[c] += wq[q] * bl * bl;
                m_diag[c + 1] += wq[q] * br * br;
                m_upper[c] += wq[q] * bl * br;
                m_lower[c + 1] += wq[q] * bl * br;
            }
            let k = vol / (h * h);
            k_diag[c] += k;
            k_diag[c + 1] += k;
            k_upper[c] -= k;
            k_lower[c + 1] -= k;
            w.push(wq);
            a.push(aq);
            dens.push(dq);
            cell_volume.push(vol);
        }
        WQuadrature {
            i_lo: span.i_lo,
            h,
            w,
            a,
            dens,
            cell_volume,
            m_lower,
            m_diag,
            m_upper,
            k_lower,
            k_diag,
            k_upper,
        }
    }

    /// `int phi^2 dv` for full-grid samples.
    fn mass(&self, phi_full: &[f64]) -> f64 {
        let mut acc = 0.0;
        for c in 0..self.w.len() {
            let pl = phi_full[self.i_lo + c];
            let pr = phi_full[self.i_lo + c + 1];
            for q in 0..3 {
                let p = pl + (pr - pl) * GL3_NODES[q];
                acc += self.w[c][q] * p * p;
            }
        }
        acc
    }

    /// `int phi^2 dv` for span-local samples.
    fn mass_span(&self, phi: &[f64]) -> f64 {
        let mut acc = 0.0;
        for c in 0..self.w.len() {
            let pl = phi[c];
            let pr = phi[c + 1];
            for q in 0..3 {
                let p = pl + (pr - pl) * GL3_NODES[q];
                acc += self.w[c][q] * p * p;
            }
        }
        acc
    }

    /// Normalizes span-local samples to unit mass in place.
    fn normalize(&self, phi: &mut [f64]) {
        let scale = self.mass_span(phi).sqrt().recip();
        phi.iter_mut().for_each(|v| *v *= scale);
    }

    /// `int { tau (a phi^2 + 4 phi'^2) - 2 phi^2 log phi } dv`, span-local.
    fn w_integrals(&self, phi: &[f64], tau: f64) -> f64 {
        let inv_h2 = 1.0 / (self.h * self.h);
        let mut acc = 0.0;
        for c in 0..self.w.len() {
            let pl = phi[c];
            let pr = phi[c + 1];
            let slope2 = (pr - pl) * (pr - pl) * inv_h2;
            for q in 0..3 {
                let p = pl + (pr - pl) * GL3_NODES[q];
                let ent = if p > 0.0 { p * p * p.ln() } else { 0.0 };
                acc += self.w[c][q] * (tau * (self.a[c][q] * p * p + 4.0 * slope2) - 2.0 * ent);
            }
        }
        acc
    }

    fn w_value(&self, phi_full: &[f64], tau: f64, m: usize) -> WValue {
        let inv_h2 = 1.0 / (self.h * self.h);
        let (mut dir, mut pot, mut ent) = (0.0, 0.0, 0.0);
        for c in 0..self.w.len() {
            let pl = phi_full[self.i_lo + c];
            let pr = phi_full[self.i_lo + c + 1];
            let slope2 = (pr - pl) * (pr - pl) * inv_h2;
            for q in 0..3 {
                let p = pl + (pr - pl) * GL3_NODES[q];
                dir += self.w[c][q] * 4.0 * slope2;
                pot += self.w[c][q] * self.a[c][q] * p * p;
                if p > 0.0 {
                    ent -= 2.0 * self.w[c][q] * p * p * p.ln();
                }
            }
        }
        let offset = -(m as f64) - 0.5 * m as f64 * (4.0 * std::f64::consts::PI * tau).ln();
        WValue {
            dirichlet: tau * dir,
            potential: tau * pot,
            entropy: ent,
            offset,
            total: tau * (dir + pot) + ent + offset,
        }
    }

    /// Gradient of [`Self::w_integrals`] with respect to the span nodes.
    fn w_gradient(&self, phi: &[f64], tau: f64, out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        let inv_h2 = 1.0 / (self.h * self.h);
        for c in 0..self.w.len() {
            let pl = phi[c];
            let pr = phi[c + 1];
            let mut gl = 0.0;
            let mut gr = 0.0;
            for q in 0..3 {
                let bl = 1.0 - GL3_NODES[q];
                let br = GL3_NODES[q];
                let p = pl + (pr - pl) * br;
                // d/dp of { tau a p^2 - 2 p^2 log p } with the log clamped.
                let dp = 2.0 * tau * self.a[c][q] * p
                    - (4.0 * p * p.max(LOG_FLOOR).ln() + 2.0 * p);
                gl += self.w[c][q] * dp * bl;
                gr += self.w[c][q] * dp * br;
            }
            let vol: f64 = self.cell_volume[c];
            let flux = 8.0 * tau * vol * (pr - pl) * inv_h2;
            gl -= flux;
            gr += flux;
            out[c] += gl;
            out[c + 1] += gr;
        }
    }

    /// Solves `M x = rhs` with identity rows at pinned nodes.
    fn mass_solve(&self, rhs: &[f64], span: &DomainSpan) -> Vec<f64> {
        let nn = rhs.len();
        let mut lower = self.m_lower.clone();
        let mut diag = self.m_diag.clone();
        let mut upper = self.m_upper.clone();
        let mut b = rhs.to_vec();
        for i in 0..nn {
            if span.pinned(i) {
                lower[i] = 0.0;
                diag[i] = 1.0;
                upper[i] = 0.0;
                b[i] = 0.0;
                if i > 0 {
                    upper[i - 1] = 0.0;
                }
                if i + 1 < nn {
                    lower[i + 1] = 0.0;
                }
            }
        }
        grid::solve_tridiagonal(&lower, &diag, &upper, &b)
    }

    /// Solves `(M + gamma K) x = rhs` with identity rows at pinned nodes.
    ///
    /// With `gamma ~ 8 tau / c_loc` this balances the stiffness against the
    /// local curvature of the potential and entropy terms, so the
    /// preconditioned Hessian has a bounded spectrum.
    fn shifted_solve(&self, rhs: &[f64], span: &DomainSpan, gamma: f64) -> Vec<f64> {
        let nn = rhs.len();
        let mut lower = vec![0.0; nn];
        let mut diag = vec![0.0; nn];
        let mut upper = vec![0.0; nn];
        for i in 0..nn {
            lower[i] = self.m_lower[i] + gamma * self.k_lower[i];
            diag[i] = self.m_diag[i] + gamma * self.k_diag[i];
            upper[i] = self.m_upper[i] + gamma * self.k_upper[i];
        }
        let mut b = rhs.to_vec();
        for i in 0..nn {
            if span.pinned(i) {
                lower[i] = 0.0;
                diag[i] = 1.0;
                upper[i] = 0.0;
                b[i] = 0.0;
                if i > 0 {
                    upper[i - 1] = 0.0;
                }
                if i + 1 < nn {
                    lower[i + 1] = 0.0;
                }
            }
        }
        grid::solve_tridiagonal(&lower, &diag, &upper, &b)
    }

    /// Relative weighted-`L^2` Euler-Lagrange residual.
    ///
    /// The weak residual is `grad/2 + (1 - theta) M phi`; its strong form is
    /// `M^{-1}` of that, and the reported norm is `sqrt(r^T M^{-1} r)`
    /// relative to the eigenvalue scale.
    fn el_residual(&self, phi: &[f64], grad: &[f64], theta: f64, span: &DomainSpan) -> f64 {
        let nn = phi.len();
        let mphi = grid::tridiagonal_apply(&self.m_lower, &self.m_diag, &self.m_upper, phi);
        let mut r = vec![0.0; nn];
        for i in 0..nn {
            // The equation holds on the open domain; pinned rows carry the
            // boundary flux, not a residual.
            r[i] = if span.pinned(i) { 0.0 } else { 0.5 * grad[i] + (1.0 - theta) * mphi[i] };
        }
        let z = self.mass_solve(&r, span);
        let norm2: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
        norm2.max(0.0).sqrt() / (1.0 + theta.abs())
    }

    /// `int phi^2 log phi dv`, span-local or full-grid (by offset).
    fn entropy_integral(&self, phi_full: &[f64]) -> f64 {
        let mut acc = 0.0;
        for c in 0..self.w.len() {
            let pl = phi_full[self.i_lo + c];
            let pr = phi_full[self.i_lo + c + 1];
            for q in 0..3 {
                let p = pl + (pr - pl) * GL3_NODES[q];
                if p > 0.0 {
                    acc += self.w[c][q] * p * p * p.ln();
                }
            }
        }
        acc
    }

    /// `int |grad phi|^2 dv` on full-grid samples.
    fn dirichlet_integral(&self, phi_full: &[f64]) -> f64 {
        let inv_h2 = 1.0 / (self.h * self.h);
        let mut acc = 0.0;
        for c in 0..self.w.len() {
            let d = phi_full[self.i_lo + c + 1] - phi_full[self.i_lo + c];
            acc += self.cell_volume[c] * d * d * inv_h2;
        }
        acc
    }

    /// `|{phi > t}|` from the piecewise-linear interpolant; partial cells
    /// integrate the volume form over the exact sub-interval.
    fn volume_above(&self, phi_full: &[f64], span: DomainSpan, t: f64) -> f64 {
        let mut acc = 0.0;
        for c in 0..self.w.len() {
            let pl = phi_full[span.i_lo + c];
            let pr = phi_full[span.i_lo + c + 1];
            if pl <= t && pr <= t {
                continue;
            }
            if pl > t && pr > t {
                acc += self.cell_volume[c];
                continue;
            }
            // One crossing at local coordinate xc.
            let xc = (t - pl) / (pr - pl);
            let (x0, x1) = if pl > t { (0.0, xc) } else { (xc, 1.0) };
            // Integrate dv over [x0, x1] with the cell's own Gauss rule
            // rescaled; the weights already include the warp factor at the
            // full-cell nodes, so re-sample the warp on the sub-interval.
            acc += self.subcell_volume(span.i_lo + c, x0, x1);
        }
        acc
    }

    fn subcell_volume(&self, cell: usize, x0: f64, x1: f64) -> f64 {
        let len = (x1 - x0) * self.h;
        if len <= 0.0 {
            return 0.0;
        }
        // Quadratic through the cell's three stored density samples; the
        // density is smooth within one cell, so this is O(h^3)-accurate.
        let local = cell - self.i_lo;
        let density = |x: f64| -> f64 {
            let mut acc = 0.0;
            for k in 0..3 {
                let mut lk = 1.0;
                for j in 0..3 {
                    if j != k {
                        lk *= (x - GL3_NODES[j]) / (GL3_NODES[k] - GL3_NODES[j]);
                    }
                }
                acc += self.dens[local][k] * lk;
            }
            acc
        };
        let mut acc = 0.0;
        for q in 0..3 {
            let x = x0 + GL3_NODES[q] * (x1 - x0);
            acc += GL3_WEIGHTS[q] * len * density(x);
        }
        acc
    }
}

fn initial_guess(geom: &RadialGeometry, span: DomainSpan, tau: f64) -> Vec<f64> {
    let nn = span.nodes();
    let ds = geom.spacing();
    let width = (nn - 1) as f64 * ds;
    // Distance to the nearest non-Dirichlet "center": for a span touching a
    // pole that pole, otherwise the span midpoint.
    let center = if !span.dirichlet_lo {
        0.0
    } else if !span.dirichlet_hi {
        width
    } else {
        0.5 * width
    };
    (0..nn)
        .map(|i| {
            let x = i as f64 * ds;
            let g = (-(x - center) * (x - center) / (4.0 * tau)).exp();
            let mut taper = 1.0f64;
            if span.dirichlet_lo {
                taper = taper.min(x / (0.2 * width));
            }
            if span.dirichlet_hi {
                taper = taper.min((width - x) / (0.2 * width));
            }
            g * taper.max(0.0)
        })
        .collect()
}

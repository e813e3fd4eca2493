//! Conjugate heat solutions on evolving flows and the Harnack fields built
//! from them.
//!
//! The solver marches `(-d/dt - Lap + R) u = 0` backward in time on the flow's
//! gauge grid with a conservative finite-volume discretization: cell masses
//! `V_j u_j` change only by face fluxes, so the total mass telescopes exactly
//! and the measure growth of the evolving cells plays the role of the `R u`
//! term. Each implicit step solves one tridiagonal M-matrix system, which
//! also preserves positivity.

use serde::Serialize;

use crate::flow::{FlowSampler, FlowSolution};
use crate::geometry::{sphere_area_constant, Topology};
use crate::grid::{self, EndRule, GL3_NODES, GL3_WEIGHTS};
use crate::reduced::{self, SpaceTimeCurve};
use crate::{ensure_finite, LabError, Result};

/// Positivity floor below which `f = -log u` stops being reliable; Harnack
/// assertions are masked where `u` sits under it.
pub const U_FLOOR: f64 = 1e-300;

/// Knobs for the backward conjugate solve.
#[derive(Debug, Clone, Copy)]
pub struct HeatConfig {
    /// Implicit substeps per stored slice interval.
    pub substeps: usize,
    /// Mass-conservation tolerance checked at every stored slice.
    pub tol_mass: f64,
}

impl Default for HeatConfig {
    fn default() -> Self {
        HeatConfig { substeps: 1, tol_mass: 1e-6 }
    }
}

/// Where the terminal slice data came from.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum TerminalData {
    /// `(4 pi tau_T)^{-m/2} e^{-r^2 / (4 tau_T)}` sampled on the terminal
    /// slice.
    Gaussian,
    /// Square of an entropy minimizer, with the multiplier it was solved at.
    Minimizer { mu: f64, tau: f64 },
    /// Anything else; the label lands in reports.
    Custom { label: String },
}

/// A solved conjugate heat flow: `u` on the gauge grid of every stored slice
/// from `t = 0` up to the terminal time.
#[derive(Debug, Clone)]
pub struct ConjugateHeatSolution {
    m: usize,
    topology: Topology,
    ds: f64,
    times: Vec<f64>,
    /// `u` per stored slice, terminal slice last.
    u: Vec<Vec<f64>>,
    /// Finite-volume cell volumes per stored slice.
    vol: Vec<Vec<f64>>,
    tau_t: f64,
    provenance: TerminalData,
}

impl ConjugateHeatSolution {
    pub fn dimension(&self) -> usize {
        self.m
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn terminal_time(&self) -> f64 {
        *self.times.last().unwrap()
    }

    pub fn tau_offset(&self) -> f64 {
        self.tau_t
    }

    /// `tau = tau_T + T - t`.
    pub fn tau_at(&self, t: f64) -> f64 {
        self.tau_t + self.terminal_time() - t
    }

    pub fn u_slice(&self, i: usize) -> &[f64] {
        &self.u[i]
    }

    pub fn cell_volumes(&self, i: usize) -> &[f64] {
        &self.vol[i]
    }

    pub fn provenance(&self) -> &TerminalData {
        &self.provenance
    }

    /// Finite-volume mass of slice `i`; conserved to rounding by the solver.
    pub fn mass(&self, i: usize) -> f64 {
        self.vol[i].iter().zip(&self.u[i]).map(|(v, u)| v * u).sum()
    }

    pub fn mass_series(&self) -> Vec<f64> {
        (0..self.u.len()).map(|i| self.mass(i)).collect()
    }

    /// Interpolates `u` at gauge coordinate `s` and time `t`: cubic in
    /// space, linear between stored slices.
    pub fn u_at(&self, s: f64, t: f64) -> f64 {
        let dt = self.times[1] - self.times[0];
        let x = ((t - self.times[0]) / dt).clamp(0.0, (self.times.len() - 1) as f64);
        let i = (x.floor() as usize).min(self.times.len() - 2);
        let w = x - i as f64;
        let a = grid::cubic_eval(&self.u[i], self.ds, s);
        let b = grid::cubic_eval(&self.u[i + 1], self.ds, s);
        (1.0 - w) * a + w * b
    }
}

/// Finite-volume cell volumes on the gauge grid at time `t`: cell `j` is
/// `[(j-1/2) ds, (j+1/2) ds]` clipped to the grid, measured in
/// `sigma fw^{m-1} phi ds`.
fn fv_cell_volumes(sampler: &FlowSampler, m: usize, n: usize, ds: f64, t: f64) -> Vec<f64> {
    let sigma = sphere_area_constant(m);
    let p = m as i32 - 1;
    let dens = |s: f64| sigma * sampler.fw(s, t).powi(p) * sampler.phi(s, t);
    let seg = |a: f64, b: f64| -> f64 {
        let mut acc = 0.0;
        for q in 0..3 {
            acc += GL3_WEIGHTS[q] * (b - a) * dens(a + GL3_NODES[q] * (b - a));
        }
        acc
    };
    (0..=n)
        .map(|j| {
            let lo = (j as f64 - 0.5).max(0.0) * ds;
            let hi = (j as f64 + 0.5).min(n as f64) * ds;
            seg(lo, 0.5 * (lo + hi)) + seg(0.5 * (lo + hi), hi)
        })
        .collect()
}

/// Finite-volume cell volumes of the flow's gauge grid at time `t`, in the
/// solver's own discrete measure: normalize terminal data against these
/// before calling [`solve_conjugate`].
pub fn cell_volumes_at(flow: &FlowSolution, t: f64) -> Result<Vec<f64>> {
    flow.slice_at(t)?;
    let sampler = FlowSampler::new(flow);
    Ok(fv_cell_volumes(
        &sampler,
        flow.dimension(),
        flow.gauge_points() - 1,
        flow.ds_gauge(),
        t,
    ))
}

/// Face conductances `sigma fw^{m-1} / phi` at the half-integer gauge points
/// for time `t`; entry `j` is the face between nodes `j` and `j+1`.
fn face_weights(sampler: &FlowSampler, m: usize, n: usize, ds: f64, t: f64) -> Vec<f64> {
    let sigma = sphere_area_constant(m);
    let p = m as i32 - 1;
    (0..n)
        .map(|j| {
            let s = (j as f64 + 0.5) * ds;
            sigma * sampler.fw(s, t).powi(p) / sampler.phi(s, t)
        })
        .collect()
}

/// Solves the conjugate heat equation backward from `terminal_u` given on
/// the gauge grid of the slice at `t_terminal`, down to `t = 0`.
///
/// The terminal data must be nonnegative with unit mass to within `1e-6`;
/// it is then rescaled so the discrete mass is exactly one, and the solver
/// verifies the conservation at every stored slice against `cfg.tol_mass`.
pub fn solve_conjugate(
    flow: &FlowSolution,
    terminal_u: &[f64],
    provenance: TerminalData,
    t_terminal: f64,
    tau_t: f64,
    cfg: &HeatConfig,
) -> Result<ConjugateHeatSolution> {
    ensure_finite("tau offset", tau_t)?;
    if tau_t <= 0.0 {
        return Err(LabError::BadParameter {
            what: "tau offset",
            expected: "positive".into(),
            got: format!("{tau_t}"),
        });
    }
    if cfg.substeps == 0 {
        return Err(LabError::BadParameter {
            what: "substeps",
            expected: ">= 1".into(),
            got: "0".into(),
        });
    }
    let n = flow.gauge_points() - 1;
    if terminal_u.len() != n + 1 {
        return Err(LabError::GridMismatch {
            context: "conjugate heat terminal data",
            detail: format!("{} samples on a {}-point grid", terminal_u.len(), n + 1),
        });
    }
    for (j, &v) in terminal_u.iter().enumerate() {
        if !v.is_finite() || v < 0.0 {
            return Err(LabError::BadParameter {
                what: "terminal data",
                expected: "finite and nonnegative".into(),
                got: format!("u[{j}] = {v}"),
            });
        }
    }
    let i_t = flow.slice_at(t_terminal)?;
    let sampler = FlowSampler::new(flow);
    let m = flow.dimension();
    let ds = flow.ds_gauge();

    // Mass pre-check, then exact normalization in the discrete measure.
    let vol_t = fv_cell_volumes(&sampler, m, n, ds, t_terminal);
    let raw_mass: f64 = vol_t.iter().zip(terminal_u).map(|(v, u)| v * u).sum();
    if (raw_mass - 1.0).abs() > 1e-6 {
        return Err(LabError::Unnormalized { mass: raw_mass, tol: 1e-6 });
    }
    let mut cur: Vec<f64> = terminal_u.iter().map(|u| u / raw_mass).collect();

    let times: Vec<f64> = flow.times()[..=i_t].to_vec();
    let mut u = vec![Vec::new(); i_t + 1];
    let mut vol = vec![Vec::new(); i_t + 1];
    u[i_t] = cur.clone();
    vol[i_t] = vol_t;

    let mut lower = vec![0.0; n + 1];
    let mut diag = vec![0.0; n + 1];
    let mut upper = vec![0.0; n + 1];
    let mut rhs = vec![0.0; n + 1];
    for i in (1..=i_t).rev() {
        let t_hi = times[i];
        let t_lo = times[i - 1];
        let mut v_from = vol[i].clone();
        for k in 0..cfg.substeps {
            // Sub-times by linear blend so the last lands exactly on t_lo.
            let frac_to = (k + 1) as f64 / cfg.substeps as f64;
            let t_from = t_hi + (t_lo - t_hi) * (k as f64 / cfg.substeps as f64);
            let t_to = t_hi + (t_lo - t_hi) * frac_to;
            let dstep = t_from - t_to;
            let v_to = fv_cell_volumes(&sampler, m, n, ds, t_to);
            let w = face_weights(&sampler, m, n, ds, 0.5 * (t_from + t_to));
            for j in 0..=n {
                let wl = if j > 0 { w[j - 1] } else { 0.0 };
                let wr = if j < n { w[j] } else { 0.0 };
                diag[j] = v_to[j] + dstep * (wl + wr) / ds;
                lower[j] = -dstep * wl / ds;
                upper[j] = -dstep * wr / ds;
                rhs[j] = v_from[j] * cur[j];
            }
            cur = grid::solve_tridiagonal(&lower, &diag, &upper, &rhs);
            v_from = v_to;
        }
        // Parabolic positivity: the M-matrix solve keeps evolved slices
        // strictly positive unless the data underflows outright.
        for (j, &x) in cur.iter().enumerate() {
            if !x.is_finite() || x <= 0.0 {
                return Err(LabError::BadParameter {
                    what: "conjugate heat iterate",
                    expected: "finite and strictly positive before the terminal time".into(),
                    got: format!("u[{j}] = {x} at slice {}", i - 1),
                });
            }
        }
        let mass: f64 = v_from.iter().zip(&cur).map(|(v, u)| v * u).sum();
        if (mass - 1.0).abs() > cfg.tol_mass {
            return Err(LabError::MassDrift { slice: i - 1, mass, tol: cfg.tol_mass });
        }
        u[i - 1] = cur.clone();
        vol[i - 1] = v_from;
    }

    Ok(ConjugateHeatSolution {
        m,
        topology: flow.topology(),
        ds,
        times,
        u,
        vol,
        tau_t,
        provenance,
    })
}

/// The Harnack quantity `v` and its ingredients on the space-time grid.
#[derive(Debug, Clone)]
pub struct HarnackFields {
    /// `mu` the fields were built with.
    pub mu: f64,
    /// `f = -log u - (m/2) log(4 pi tau)`; NaN where masked out.
    pub f: Vec<Vec<f64>>,
    /// `v = {tau (2 Lap f - |grad f|^2 + R) + f - m - mu} u`; zero where
    /// masked out.
    pub v: Vec<Vec<f64>>,
    /// True where `u >= U_FLOOR` and the fields are trustworthy.
    pub mask: Vec<Vec<bool>>,
    /// Number of masked-out grid points.
    pub masked_out: usize,
    /// Max of `v` over the masked-in grid.
    pub max_v: f64,
    /// Max of `u` over the full grid.
    pub max_u: f64,
    /// Per interior slice: sup over mask-interior, pole-free points of the
    /// residual of `(-d/dt - Lap + R) v = -2 tau |Rc + Hess f - g/(2 tau)|^2 u`.
    /// Points within two nodes of a pole are excluded so that no stencil
    /// touches the pole cell, whose node value carries an O(ds^2) collocation
    /// offset that second differences would blow up to O(1).
    pub identity_residual: Vec<f64>,
}

struct SliceDerived {
    f: Vec<f64>,
    v: Vec<f64>,
    mask: Vec<bool>,
    f_r: Vec<f64>,
    f_rr: Vec<f64>,
}

fn harnack_slice(
    flow: &FlowSolution,
    chs: &ConjugateHeatSolution,
    i: usize,
    mu: f64,
) -> SliceDerived {
    let m = chs.m as f64;
    let n = chs.u[i].len() - 1;
    let ds = chs.ds;
    let tau = chs.tau_at(chs.times[i]);
    let u = &chs.u[i];
    let frame = flow.frame(i);
    let curv = flow.gauge_curvature(i);
    let right = if chs.topology == Topology::SphereLike {
        EndRule::EvenPole
    } else {
        EndRule::OneSided
    };
    let u_s = grid::deriv1(u, ds, EndRule::EvenPole, right);
    let u_ss = grid::deriv2(u, ds, EndRule::EvenPole, right);
    let phi_s = grid::deriv1(&frame.phi, ds, EndRule::EvenPole, right);

    let log_norm = 0.5 * m * (4.0 * std::f64::consts::PI * tau).ln();
    let mut f = vec![f64::NAN; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut mask = vec![false; n + 1];
    let mut f_r = vec![0.0; n + 1];
    let mut f_rr = vec![0.0; n + 1];
    for j in 0..=n {
        if u[j] < U_FLOOR {
            continue;
        }
        mask[j] = true;
        f[j] = -u[j].ln() - log_norm;
        let phi = frame.phi[j];
        let fs = -u_s[j] / u[j];
        let fss = -u_ss[j] / u[j] + (u_s[j] / u[j]) * (u_s[j] / u[j]);
        f_r[j] = fs / phi;
        f_rr[j] = (fss - phi_s[j] / phi * fs) / (phi * phi);
        let pole = j == 0 || (chs.topology == Topology::SphereLike && j == n);
        let lap = if pole {
            m * f_rr[j]
        } else {
            f_rr[j] + (m - 1.0) * (curv.f_prime[j] / frame.fw[j]) * f_r[j]
        };
        v[j] = (tau * (2.0 * lap - f_r[j] * f_r[j] + curv.r[j]) + f[j] - m - mu) * u[j];
    }
    SliceDerived { f, v, mask, f_r, f_rr }
}

/// Builds `f` and `v` from a solved conjugate flow, plus the residual of the
/// evolution identity that forces `v <= 0`.
///
/// `mu` must be the multiplier of the terminal minimizer (or `0` for
/// analytic Gaussian data on a flat flow).
pub fn compute_harnack_fields(
    flow: &FlowSolution,
    chs: &ConjugateHeatSolution,
    mu: f64,
) -> Result<HarnackFields> {
    ensure_finite("mu", mu)?;
    if flow.gauge_points() != chs.u[0].len() || flow.ds_gauge() != chs.ds {
        return Err(LabError::GridMismatch {
            context: "harnack fields",
            detail: "conjugate solution grid differs from flow grid".into(),
        });
    }
    flow.slice_at(chs.terminal_time())?;

    let slices = chs.u.len();
    let n = chs.u[0].len() - 1;
    let m = chs.m as f64;
    let ds = chs.ds;
    let derived: Vec<SliceDerived> =
        (0..slices).map(|i| harnack_slice(flow, chs, i, mu)).collect();

    let mut masked_out = 0;
    let mut max_v = f64::NEG_INFINITY;
    let mut max_u = f64::NEG_INFINITY;
    for (i, d) in derived.iter().enumerate() {
        for j in 0..=n {
            max_u = max_u.max(chs.u[i][j]);
            if d.mask[j] {
                max_v = max_v.max(d.v[j]);
            } else {
                masked_out += 1;
            }
        }
    }

    // Identity residual on interior slices, at interior points whose stencils
    // stay clear of the poles. The finite-volume solve collocates cell
    // averages at nodes; at a pole cell this leaves a node-local offset of
    // order ds^2 in u (and hence in v). Harmless in sup norms, but the
    // second-difference stencil divides by ds^2 and would turn it into an
    // O(1) artifact, so the identity is certified on pole-free points only:
    // five-point stencils at distance >= 3 from a pole never touch it.
    let right = if chs.topology == Topology::SphereLike {
        EndRule::EvenPole
    } else {
        EndRule::OneSided
    };
    let j_lo = 3usize;
    let j_hi = if chs.topology == Topology::SphereLike { n.saturating_sub(3) } else { n };
    let mut identity_residual = Vec::with_capacity(slices.saturating_sub(2));
    for i in 1..slices.saturating_sub(1) {
        let dt = chs.times[i + 1] - chs.times[i];
        let tau = chs.tau_at(chs.times[i]);
        let frame = flow.frame(i);
        let curv = flow.gauge_curvature(i);
        let d = &derived[i];
        let v_s = grid::deriv1(&d.v, ds, EndRule::EvenPole, right);
        let v_ss = grid::deriv2(&d.v, ds, EndRule::EvenPole, right);
        let phi_s = grid::deriv1(&frame.phi, ds, EndRule::EvenPole, right);
        let mut sup = 0.0f64;
        for j in j_lo..=j_hi {
            let lo = j.saturating_sub(2);
            let hi = (j + 2).min(n);
            let stencil_ok = (lo..=hi).all(|k| d.mask[k])
                && derived[i - 1].mask[j]
                && derived[i + 1].mask[j];
            if !stencil_ok {
                continue;
            }
            let phi = frame.phi[j];
            let v_t = (derived[i + 1].v[j] - derived[i - 1].v[j]) / (2.0 * dt);
            let lap_v = (v_ss[j] - phi_s[j] / phi * v_s[j]) / (phi * phi)
                + (m - 1.0) * (curv.f_prime[j] / frame.fw[j]) * (v_s[j] / phi);
            let lhs = -v_t - lap_v + curv.r[j] * d.v[j];
            let a_r = curv.ric_rad[j] + d.f_rr[j] - 0.5 / tau;
            let a_th =
                curv.ric_sph[j] + (curv.f_prime[j] / frame.fw[j]) * d.f_r[j] - 0.5 / tau;
            let rhs = -2.0 * tau * (a_r * a_r + (m - 1.0) * a_th * a_th) * chs.u[i][j];
            sup = sup.max((lhs - rhs).abs());
        }
        identity_residual.push(sup);
    }

    Ok(HarnackFields {
        mu,
        f: derived.iter().map(|d| d.f.clone()).collect(),
        v: derived.iter().map(|d| d.v.clone()).collect(),
        mask: derived.iter().map(|d| d.mask.clone()).collect(),
        masked_out,
        max_v,
        max_u,
        identity_residual,
    })
}

/// One sample of a curve-wise Harnack margin.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct HarnackSample {
    pub tau: f64,
    pub lhs: f64,
    pub rhs: f64,
    /// `rhs - lhs`; nonnegative means the inequality holds at this sample.
    pub margin: f64,
}

/// Margins of the differential Harnack inequality along one curve.
#[derive(Debug, Clone, Serialize)]
pub struct DifferentialHarnackReport {
    pub samples: Vec<HarnackSample>,
    pub min_margin: f64,
    /// Samples dropped because `u` fell below the floor there.
    pub skipped: usize,
}

/// Checks `d/dtau (sqrt(tau) f) <= (1/2) sqrt(tau) (R + |gdot|^2) + mu / (2 sqrt(tau))`
/// along `curve`, with the left side formed by centered differences in the
/// curve parameter.
pub fn differential_harnack_along_curve(
    flow: &FlowSolution,
    chs: &ConjugateHeatSolution,
    mu: f64,
    curve: &SpaceTimeCurve,
) -> Result<DifferentialHarnackReport> {
    ensure_finite("mu", mu)?;
    let sig = curve.sigma();
    let pos = curve.positions();
    if sig.len() < 3 {
        return Ok(DifferentialHarnackReport {
            samples: Vec::new(),
            min_margin: f64::INFINITY,
            skipped: 0,
        });
    }
    let sampler = FlowSampler::new(flow);
    let m = chs.m as f64;
    let dsig = sig[1] - sig[0];
    // sqrt(tau) f along the curve, or None under the floor.
    let val = |k: usize| -> Option<f64> {
        let t = curve.time_of(sig[k]);
        let u = chs.u_at(pos[k], t);
        if u < U_FLOOR {
            return None;
        }
        let tau = sig[k] * sig[k];
        Some(sig[k] * (-u.ln() - 0.5 * m * (4.0 * std::f64::consts::PI * tau).ln()))
    };
    let mut samples = Vec::new();
    let mut skipped = 0;
    for k in 1..sig.len() - 1 {
        let (a, b) = match (val(k - 1), val(k + 1)) {
            (Some(a), Some(b)) => (a, b),
            _ => {
                skipped += 1;
                continue;
            }
        };
        let sigma = sig[k];
        let tau = sigma * sigma;
        let t = curve.time_of(sigma);
        let lhs = (b - a) / (2.0 * dsig) / (2.0 * sigma);
        let ds_dsig = (pos[k + 1] - pos[k - 1]) / (2.0 * dsig);
        let speed2 = {
            let phi = sampler.phi(pos[k], t);
            (phi * ds_dsig) * (phi * ds_dsig) / (4.0 * tau)
        };
        let r = sampler.scalar_curv(pos[k], t);
        let rhs = 0.5 * sigma * (r + speed2) + mu / (2.0 * sigma);
        samples.push(HarnackSample { tau, lhs, rhs, margin: rhs - lhs });
    }
    let min_margin = samples.iter().map(|s| s.margin).fold(f64::INFINITY, f64::min);
    Ok(DifferentialHarnackReport { samples, min_margin, skipped })
}

/// Result of the integrated (endpoint) Harnack inequality, in log space.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct IntegratedHarnack {
    /// `log u(y0, t0)`.
    pub log_lhs: f64,
    /// Log of the curve-dependent lower bound.
    pub log_rhs: f64,
    /// `log_lhs - log_rhs`; nonnegative means the inequality holds.
    pub margin: f64,
    /// The action of the comparison curve.
    pub action: f64,
}

/// Evaluates `u(y0, t0) >= (4 pi tau0)^{-m/2} e^{(-1 + sqrt(tau_T/tau0)) mu}
/// e^{-L(curve)/(2 sqrt(tau0))} ((4 pi tau_T)^{m/2} u(x0, T))^{sqrt(tau_T/tau0)}`
/// for a curve running from `(x0, T)` at `sigma = sqrt(tau_T)` to `(y0, t0)`.
pub fn integrated_harnack(
    flow: &FlowSolution,
    chs: &ConjugateHeatSolution,
    mu: f64,
    curve: &SpaceTimeCurve,
) -> Result<IntegratedHarnack> {
    ensure_finite("mu", mu)?;
    let sig = curve.sigma();
    let pos = curve.positions();
    let tau_t = sig[0] * sig[0];
    let tau0 = sig[sig.len() - 1] * sig[sig.len() - 1];
    if (tau_t - chs.tau_offset()).abs() > 1e-9 * (1.0 + tau_t) {
        return Err(LabError::BadParameter {
            what: "curve start",
            expected: format!("sigma^2 = tau offset {}", chs.tau_offset()),
            got: format!("{tau_t}"),
        });
    }
    let m = chs.m as f64;
    let action = reduced::action(flow, curve)?;
    let u_term = chs.u_at(pos[0], curve.time_of(sig[0]));
    let u_base = chs.u_at(pos[pos.len() - 1], curve.time_of(sig[sig.len() - 1]));
    if u_term < U_FLOOR || u_base < U_FLOOR {
        return Err(LabError::BadParameter {
            what: "curve endpoints",
            expected: format!("u above the floor {U_FLOOR:e}"),
            got: format!("{u_term:e}, {u_base:e}"),
        });
    }
    let ratio = (tau_t / tau0).sqrt();
    let log_lhs = u_base.ln();
    let log_rhs = -0.5 * m * (4.0 * std::f64::consts::PI * tau0).ln() + (ratio - 1.0) * mu
        - action / (2.0 * tau0.sqrt())
        + ratio * (0.5 * m * (4.0 * std::f64::consts::PI * tau_t).ln() + u_term.ln());
    Ok(IntegratedHarnack { log_lhs, log_rhs, margin: log_lhs - log_rhs, action })
}

/// Diagnostic gradient series of a conjugate solution; pure reporting.
#[derive(Debug, Clone, Serialize)]
pub struct GradientMonitor {
    pub times: Vec<f64>,
    /// `sup |grad sqrt(u)|` per slice over the masked-in grid.
    pub sup_grad_sqrt_u: Vec<f64>,
    /// `sup |grad u|^2 / u` per slice over the masked-in grid.
    pub sup_grad_sq_over_u: Vec<f64>,
}

pub fn gradient_monitor(flow: &FlowSolution, chs: &ConjugateHeatSolution) -> GradientMonitor {
    let right = if chs.topology == Topology::SphereLike {
        EndRule::EvenPole
    } else {
        EndRule::OneSided
    };
    let mut sup_grad_sqrt_u = Vec::with_capacity(chs.u.len());
    let mut sup_grad_sq_over_u = Vec::with_capacity(chs.u.len());
    for (i, u) in chs.u.iter().enumerate() {
        let u_s = grid::deriv1(u, chs.ds, EndRule::EvenPole, right);
        let phi = &flow.frame(i).phi;
        let mut a = 0.0f64;
        let mut b = 0.0f64;
        for j in 0..u.len() {
            if u[j] < U_FLOOR {
                continue;
            }
            let u_r = u_s[j] / phi[j];
            a = a.max(0.5 * u_r.abs() / u[j].sqrt());
            b = b.max(u_r * u_r / u[j]);
        }
        sup_grad_sqrt_u.push(a);
        sup_grad_sq_over_u.push(b);
    }
    GradientMonitor { times: chs.times.clone(), sup_grad_sqrt_u, sup_grad_sq_over_u }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::{evolve, FlowKind, FlowSpec};
    use crate::geometry::GeometryPreset;

    fn flat_flow(s_max: f64, n: usize, horizon: f64, slices: usize) -> FlowSolution {
        let geom = GeometryPreset::Euclidean { m: 3, s_max }.build(n).unwrap();
        let spec = FlowSpec {
            kind: FlowKind::StaticEuclidean,
            horizon,
            slices,
            dt: horizon,
            k_norm: 1.0,
            lambda: 0.0,
        };
        evolve(&geom, &spec).unwrap()
    }

    fn sphere_flow(a0: f64, n: usize, horizon: f64, slices: usize) -> FlowSolution {
        let geom = GeometryPreset::Sphere { m: 3, a: a0 }.build(n).unwrap();
        let spec = FlowSpec {
            kind: FlowKind::RoundSphereExact,
            horizon,
            slices,
            dt: horizon,
            k_norm: 1.0,
            lambda: 0.0,
        };
        evolve(&geom, &spec).unwrap()
    }

    fn gaussian_terminal(flow: &FlowSolution, tau: f64) -> Vec<f64> {
        let i = flow.times().len() - 1;
        let arc = flow.arc_positions(i);
        let mut u: Vec<f64> = arc
            .iter()
            .map(|&r| {
                (4.0 * std::f64::consts::PI * tau).powf(-1.5) * (-r * r / (4.0 * tau)).exp()
            })
            .collect();
        // Unit mass in the solver's discrete measure, not the continuum one.
        let vol = cell_volumes_at(flow, flow.times()[i]).unwrap();
        let mass: f64 = vol.iter().zip(&u).map(|(v, u)| v * u).sum();
        for x in u.iter_mut() {
            *x /= mass;
        }
        u
    }

    #[test]
    fn flat_gaussian_evolves_as_heat_kernel() {
        let flow = flat_flow(14.0, 560, 0.25, 26);
        let tau_t = 0.25;
        let term = gaussian_terminal(&flow, tau_t);
        let cfg = HeatConfig { substeps: 160, tol_mass: 1e-6 };
        let chs = solve_conjugate(&flow, &term, TerminalData::Gaussian, 0.25, tau_t, &cfg)
            .unwrap();
        // Against the closed-form kernel with parameter tau_T + T - t:
        // relative accuracy in the core, integrated accuracy globally. Tail
        // relative error is dominated by the (r/2tau)^4 truncation weight
        // and is meaningless as a sup norm.
        for (i, &t) in chs.times().iter().enumerate() {
            let tau = chs.tau_at(t);
            let arc = flow.arc_positions(i);
            let mut l1 = 0.0;
            for (j, &r) in arc.iter().enumerate() {
                let exact = (4.0 * std::f64::consts::PI * tau).powf(-1.5)
                    * (-r * r / (4.0 * tau)).exp();
                let got = chs.u_slice(i)[j];
                l1 += chs.cell_volumes(i)[j] * (got - exact).abs();
                if r <= 2.0 * tau.sqrt() {
                    assert!(
                        (got - exact).abs() <= 1e-3 * exact,
                        "slice {i} node {j}: {got} vs {exact}"
                    );
                }
            }
            assert!(l1 <= 1e-3, "slice {i}: L1 error {l1}");
        }
    }

    #[test]
    fn mass_is_conserved_to_rounding_at_any_substep_count() {
        let flow = sphere_flow(1.0, 200, 0.1, 11);
        let i_t = flow.times().len() - 1;
        let geom = flow.geometry(i_t);
        let quad_mass: f64 = geom.total_volume();
        let term: Vec<f64> = vec![1.0 / quad_mass; flow.gauge_points()];
        for substeps in [1usize, 2, 4] {
            let cfg = HeatConfig { substeps, tol_mass: 1e-6 };
            let chs =
                solve_conjugate(&flow, &term, TerminalData::Custom { label: "uniform".into() },
                    0.1, 0.3, &cfg)
                .unwrap();
            let worst = chs
                .mass_series()
                .iter()
                .map(|m| (m - 1.0).abs())
                .fold(0.0f64, f64::max);
            // Conservation is exact by telescoping; only rounding remains.
            assert!(worst < 1e-12, "drift {worst} at substeps {substeps}");
        }
    }

    #[test]
    fn positivity_spreads_from_compact_terminal_data() {
        let flow = sphere_flow(1.0, 160, 0.08, 9);
        let n = flow.gauge_points();
        // Terminal bump supported on the middle third only.
        let mut term = vec![0.0; n];
        for (j, v) in term.iter_mut().enumerate() {
            let x = j as f64 / (n - 1) as f64;
            if (0.34..0.66).contains(&x) {
                *v = 1.0;
            }
        }
        let i_t = flow.times().len() - 1;
        let vol = fv_cell_volumes(
            &FlowSampler::new(&flow),
            3,
            n - 1,
            flow.ds_gauge(),
            flow.times()[i_t],
        );
        let mass: f64 = vol.iter().zip(&term).map(|(v, u)| v * u).sum();
        for v in term.iter_mut() {
            *v /= mass;
        }
        let chs = solve_conjugate(
            &flow,
            &term,
            TerminalData::Custom { label: "bump".into() },
            0.08,
            0.2,
            &HeatConfig::default(),
        )
        .unwrap();
        // Strictly positive well beyond the floor at every earlier slice.
        for i in 0..chs.times().len() - 1 {
            for &x in chs.u_slice(i) {
                assert!(x > U_FLOOR, "slice {i} not positive: {x:e}");
            }
        }
    }

    #[test]
    fn unnormalized_terminal_data_is_rejected() {
        let flow = flat_flow(6.0, 120, 0.1, 5);
        let term: Vec<f64> = vec![1.0; flow.gauge_points()];
        let err = solve_conjugate(
            &flow,
            &term,
            TerminalData::Custom { label: "bad".into() },
            0.1,
            0.5,
            &HeatConfig::default(),
        )
        .unwrap_err();
        assert!(matches!(err, LabError::Unnormalized { .. }), "{err}");
    }

    #[test]
    fn harnack_v_vanishes_for_flat_gaussian() {
        let flow = flat_flow(12.0, 480, 0.2, 21);
        let tau_t = 0.3;
        let term = gaussian_terminal(&flow, tau_t);
        let cfg = HeatConfig { substeps: 40, tol_mass: 1e-6 };
        let chs = solve_conjugate(&flow, &term, TerminalData::Gaussian, 0.2, tau_t, &cfg)
            .unwrap();
        // The Gaussian soliton saturates the Harnack inequality with mu = 0.
        let fields = compute_harnack_fields(&flow, &chs, 0.0).unwrap();
        let tol_v = 1e-3 * fields.max_u;
        assert!(
            fields.max_v.abs() <= tol_v,
            "max v {} vs tol {tol_v}",
            fields.max_v
        );
        // The evolution identity holds with both sides near zero.
        for r in &fields.identity_residual {
            assert!(*r <= 2e-2 * fields.max_u, "identity residual {r}");
        }
    }

    #[test]
    fn harnack_max_v_decreases_under_refinement() {
        let mut prev = f64::INFINITY;
        for (n, slices, sub) in [(120usize, 11usize, 10usize), (240, 21, 20)] {
            let flow = flat_flow(12.0, n, 0.2, slices);
            let term = gaussian_terminal(&flow, 0.3);
            let cfg = HeatConfig { substeps: sub, tol_mass: 1e-6 };
            let chs = solve_conjugate(&flow, &term, TerminalData::Gaussian, 0.2, 0.3, &cfg)
                .unwrap();
            let fields = compute_harnack_fields(&flow, &chs, 0.0).unwrap();
            let score = fields.max_v.abs() / fields.max_u;
            assert!(score < prev, "no refinement: {score} !< {prev}");
            prev = score;
        }
    }

    #[test]
    fn gradient_monitor_matches_gaussian_closed_form() {
        let flow = flat_flow(12.0, 600, 0.1, 11);
        let tau_t = 0.4;
        let term = gaussian_terminal(&flow, tau_t);
        let cfg = HeatConfig { substeps: 60, tol_mass: 1e-6 };
        let chs = solve_conjugate(&flow, &term, TerminalData::Gaussian, 0.1, tau_t, &cfg)
            .unwrap();
        let mon = gradient_monitor(&flow, &chs);
        // sqrt(u) has max gradient (4 pi tau)^{-m/4} e^{-1/2} / (2 sqrt(tau)).
        for (i, &t) in mon.times.iter().enumerate() {
            let tau = chs.tau_at(t);
            let want = (4.0 * std::f64::consts::PI * tau).powf(-0.75) * (-0.5f64).exp()
                / (2.0 * tau.sqrt());
            let got = mon.sup_grad_sqrt_u[i];
            assert!(
                (got - want).abs() <= 1e-3 * want,
                "slice {i}: {got} vs {want}"
            );
            assert!(mon.sup_grad_sq_over_u[i].is_finite());
        }
    }
}

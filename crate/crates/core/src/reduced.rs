//! Space-time action, reduced distances, and reduced volume densities with
//! respect to probability base measures.
//!
//! Curves are parametrized by `sigma = sqrt(tau)`, uniformly sampled; the
//! substitution turns the `sqrt(tau)` endpoint singularity of the Lagrangian
//! into a smooth integrand, so a plain midpoint rule converges cleanly.
//! Curves are radial: a position is a single gauge coordinate on the
//! meridian, which on rotationally symmetric flows captures the minimizers
//! every downstream check consumes. Reported distances are upper bounds on
//! the true infimum (descent over a restricted family); consumers use them
//! in the direction where an upper bound is conservative.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::flow::{FlowSampler, FlowSolution};
use crate::geometry::{sphere_area_constant, RadialGeometry};
use crate::grid::{self, GL3_NODES, GL3_WEIGHTS};
use crate::heat::ConjugateHeatSolution;
use crate::optim::{lbfgs, LbfgsConfig};
use crate::{ensure_finite, LabError, Result};

/// A radial space-time curve sampled uniformly in `sigma = sqrt(tau)`.
///
/// Time runs through `t(sigma) = t_apex - sigma^2`, where `t_apex` is the
/// (possibly virtual) time at which `tau = 0`; larger `sigma` is earlier
/// time. A single-node curve is the degenerate zero-span case: its action
/// is zero by convention.
#[derive(Debug, Clone, PartialEq)]
pub struct SpaceTimeCurve {
    sigma: Vec<f64>,
    positions: Vec<f64>,
    t_apex: f64,
}

impl SpaceTimeCurve {
    /// Builds a curve from positions sampled on the uniform `sigma` grid
    /// over `[sigma_lo, sigma_hi]`.
    pub fn new(
        t_apex: f64,
        sigma_lo: f64,
        sigma_hi: f64,
        positions: Vec<f64>,
    ) -> Result<Self> {
        ensure_finite("curve apex time", t_apex)?;
        ensure_finite("sigma range start", sigma_lo)?;
        ensure_finite("sigma range end", sigma_hi)?;
        if sigma_lo < 0.0 || sigma_hi <= sigma_lo {
            return Err(LabError::BadParameter {
                what: "sigma range",
                expected: "0 <= sigma_lo < sigma_hi".into(),
                got: format!("[{sigma_lo}, {sigma_hi}]"),
            });
        }
        if positions.len() < 2 {
            return Err(LabError::BadParameter {
                what: "curve positions",
                expected: ">= 2 samples".into(),
                got: format!("{}", positions.len()),
            });
        }
        for (j, &s) in positions.iter().enumerate() {
            if !s.is_finite() || s < 0.0 {
                return Err(LabError::BadParameter {
                    what: "curve position",
                    expected: "finite and nonnegative".into(),
                    got: format!("s[{j}] = {s}"),
                });
            }
        }
        let n = positions.len() - 1;
        let dsig = (sigma_hi - sigma_lo) / n as f64;
        let sigma = (0..=n).map(|j| sigma_lo + j as f64 * dsig).collect();
        Ok(SpaceTimeCurve { sigma, positions, t_apex })
    }

    /// Straight line in `sigma` from `s_from` to `s_to`.
    pub fn straight(
        t_apex: f64,
        sigma_lo: f64,
        sigma_hi: f64,
        s_from: f64,
        s_to: f64,
        nodes: usize,
    ) -> Result<Self> {
        if nodes < 2 {
            return Err(LabError::BadParameter {
                what: "curve nodes",
                expected: ">= 2".into(),
                got: format!("{nodes}"),
            });
        }
        let positions = (0..nodes)
            .map(|j| {
                let x = j as f64 / (nodes - 1) as f64;
                s_from + x * (s_to - s_from)
            })
            .collect();
        SpaceTimeCurve::new(t_apex, sigma_lo, sigma_hi, positions)
    }

    /// Degenerate curve spanning a zero-length `tau` interval.
    pub fn point(t_apex: f64, sigma: f64, s: f64) -> Result<Self> {
        ensure_finite("curve apex time", t_apex)?;
        ensure_finite("sigma", sigma)?;
        ensure_finite("position", s)?;
        if sigma < 0.0 || s < 0.0 {
            return Err(LabError::BadParameter {
                what: "point curve",
                expected: "sigma >= 0 and s >= 0".into(),
                got: format!("sigma = {sigma}, s = {s}"),
            });
        }
        Ok(SpaceTimeCurve { sigma: vec![sigma], positions: vec![s], t_apex })
    }

    pub fn sigma(&self) -> &[f64] {
        &self.sigma
    }

    pub fn positions(&self) -> &[f64] {
        &self.positions
    }

    pub fn t_apex(&self) -> f64 {
        self.t_apex
    }

    pub fn time_of(&self, sigma: f64) -> f64 {
        self.t_apex - sigma * sigma
    }

    /// Same grid, new positions; endpoints move with the new data.
    pub fn with_positions(&self, positions: Vec<f64>) -> Result<Self> {
        if positions.len() != self.positions.len() {
            return Err(LabError::GridMismatch {
                context: "curve positions",
                detail: format!(
                    "{} samples on a {}-node curve",
                    positions.len(),
                    self.positions.len()
                ),
            });
        }
        let mut c = self.clone();
        c.positions = positions;
        Ok(c)
    }
}

fn check_curve_in_flow(flow: &FlowSolution, curve: &SpaceTimeCurve) -> Result<()> {
    let s_max = flow.ds_gauge() * (flow.gauge_points() - 1) as f64;
    let t_lo = flow.times()[0];
    let t_hi = *flow.times().last().unwrap();
    for &s in curve.positions() {
        if s > s_max * (1.0 + 1e-12) {
            return Err(LabError::BadParameter {
                what: "curve position",
                expected: format!("within [0, {s_max}]"),
                got: format!("{s}"),
            });
        }
    }
    let sig = curve.sigma();
    for &t in &[curve.time_of(sig[0]), curve.time_of(sig[sig.len() - 1])] {
        if t < t_lo - 1e-9 || t > t_hi + 1e-9 {
            return Err(LabError::BadParameter {
                what: "curve time",
                expected: format!("within [{t_lo}, {t_hi}]"),
                got: format!("{t}"),
            });
        }
    }
    Ok(())
}

/// Midpoint-rule action of the piecewise-linear curve; optionally writes the
/// full-position gradient.
fn action_eval(
    sampler: &FlowSampler,
    curve: &SpaceTimeCurve,
    mut grad: Option<&mut [f64]>,
) -> f64 {
    let sig = curve.sigma();
    let pos = curve.positions();
    if let Some(g) = grad.as_deref_mut() {
        g.iter_mut().for_each(|v| *v = 0.0);
    }
    if sig.len() < 2 {
        return 0.0;
    }
    let dsig = sig[1] - sig[0];
    let mut total = 0.0;
    for c in 0..sig.len() - 1 {
        let mid_sigma = 0.5 * (sig[c] + sig[c + 1]);
        let mid_s = 0.5 * (pos[c] + pos[c + 1]);
        let slope = (pos[c + 1] - pos[c]) / dsig;
        let t = curve.time_of(mid_sigma);
        let r = sampler.scalar_curv(mid_s, t);
        let phi = sampler.phi(mid_s, t);
        total += dsig * (2.0 * mid_sigma * mid_sigma * r + 0.5 * phi * phi * slope * slope);
        if let Some(g) = grad.as_deref_mut() {
            let r_s = sampler.scalar_curv_s(mid_s, t);
            let phi_s = sampler.phi_s(mid_s, t);
            let common =
                dsig * (mid_sigma * mid_sigma * r_s + 0.5 * phi * phi_s * slope * slope);
            let kinetic = phi * phi * slope;
            g[c] += common - kinetic;
            g[c + 1] += common + kinetic;
        }
    }
    total
}

/// The Lagrangian of `curve` in the flow's space-time, evaluated in the
/// `sigma` parametrization as `int (2 sigma^2 R + phi^2 (ds/dsigma)^2 / 2)
/// dsigma` by the midpoint rule per cell.
pub fn action(flow: &FlowSolution, curve: &SpaceTimeCurve) -> Result<f64> {
    check_curve_in_flow(flow, curve)?;
    let sampler = FlowSampler::new(flow);
    let value = action_eval(&sampler, curve, None);
    ensure_finite("action", value)?;
    Ok(value)
}

/// Optimizer diagnostics attached to a minimized curve.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct OptimizerDiagnostics {
    /// Total quasi-Newton iterations across all starts.
    pub iterations: usize,
    /// Projected-gradient sup-norm of the winning run.
    pub grad_norm: f64,
    /// Random-perturbation restarts attempted beyond the straight start.
    pub restarts: usize,
    /// True when no start converged; the value is then only approximate.
    pub approximate: bool,
}

/// A curve minimized over interior positions with fixed endpoints.
#[derive(Debug, Clone)]
pub struct MinimizedCurve {
    pub curve: SpaceTimeCurve,
    pub action: f64,
    pub diagnostics: OptimizerDiagnostics,
}

/// Knobs for curve minimization and the field sweeps.
#[derive(Debug, Clone, Copy)]
pub struct ReducedConfig {
    /// Curve samples in `sigma`.
    pub nodes: usize,
    /// Random-perturbation restarts beyond the straight start.
    pub restarts: usize,
    pub seed: u64,
    /// Slack for the `l + m/2 >= 0` invariant and the refinement property.
    pub tol_l: f64,
}

impl Default for ReducedConfig {
    fn default() -> Self {
        ReducedConfig { nodes: 128, restarts: 3, seed: 0x205ced, tol_l: 1e-6 }
    }
}

fn lbfgs_config() -> LbfgsConfig {
    LbfgsConfig { tol_grad: 1e-9, max_iters: 400, ..LbfgsConfig::default() }
}

/// Minimizes the action of `curve0` over its interior positions, endpoints
/// pinned, positions clamped to the gauge segment. Beyond the given start,
/// `cfg.restarts` perturbed starts are tried and the best value kept.
pub fn minimize_action(
    flow: &FlowSolution,
    curve0: &SpaceTimeCurve,
    cfg: &ReducedConfig,
) -> Result<MinimizedCurve> {
    check_curve_in_flow(flow, curve0)?;
    if curve0.sigma().len() < 2 {
        return Err(LabError::BadParameter {
            what: "curve nodes",
            expected: ">= 2 for minimization".into(),
            got: "1".into(),
        });
    }
    let sampler = FlowSampler::new(flow);
    let s_max = flow.ds_gauge() * (flow.gauge_points() - 1) as f64;
    let nodes = curve0.positions().len();
    if nodes == 2 {
        let value = action_eval(&sampler, curve0, None);
        ensure_finite("action", value)?;
        return Ok(MinimizedCurve {
            curve: curve0.clone(),
            action: value,
            diagnostics: OptimizerDiagnostics {
                iterations: 0,
                grad_norm: 0.0,
                restarts: 0,
                approximate: false,
            },
        });
    }

    let run = |interior0: Vec<f64>| {
        let mut full = curve0.positions().to_vec();
        let mut grad_full = vec![0.0; nodes];
        lbfgs(
            interior0,
            &lbfgs_config(),
            |x, g| {
                full[1..nodes - 1].copy_from_slice(x);
                let trial = curve0.with_positions(full.clone()).unwrap();
                let value = action_eval(&sampler, &trial, Some(&mut grad_full));
                g.copy_from_slice(&grad_full[1..nodes - 1]);
                value
            },
            |x| {
                for v in x.iter_mut() {
                    *v = v.clamp(0.0, s_max);
                }
            },
        )
    };

    let mut best = run(curve0.positions()[1..nodes - 1].to_vec());
    let mut iterations = best.iterations;
    let mut converged = best.converged;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    for r in 0..cfg.restarts {
        let amp = 0.05 * s_max * (r + 1) as f64 / cfg.restarts.max(1) as f64;
        let start: Vec<f64> = best.x
            .iter()
            .map(|&v| (v + rng.gen_range(-amp..=amp)).clamp(0.0, s_max))
            .collect();
        let out = run(start);
        iterations += out.iterations;
        converged |= out.converged;
        if out.value < best.value {
            best = out;
        }
    }
    ensure_finite("action", best.value)?;

    let mut positions = curve0.positions().to_vec();
    positions[1..nodes - 1].copy_from_slice(&best.x);
    Ok(MinimizedCurve {
        curve: curve0.with_positions(positions)?,
        action: best.value,
        diagnostics: OptimizerDiagnostics {
            iterations,
            grad_norm: best.grad_norm,
            restarts: cfg.restarts,
            approximate: !converged,
        },
    })
}

/// A radial point of the flow's space-time: gauge coordinate and time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SpaceTimePoint {
    pub s: f64,
    pub t: f64,
}

/// Output of [`reduced_distance`].
#[derive(Debug, Clone)]
pub struct ReducedDistanceResult {
    /// `l = action / (2 sqrt(tau_bar))` exactly as stored.
    pub l: f64,
    pub action: f64,
    pub tau_bar: f64,
    pub curve: SpaceTimeCurve,
    pub diagnostics: OptimizerDiagnostics,
}

/// Reduced distance from `base` to an earlier `target`, minimizing over the
/// radial curve family with base at `tau = 0`.
pub fn reduced_distance(
    flow: &FlowSolution,
    base: SpaceTimePoint,
    target: SpaceTimePoint,
    cfg: &ReducedConfig,
) -> Result<ReducedDistanceResult> {
    if !(target.t < base.t) {
        return Err(LabError::BadParameter {
            what: "reduced distance endpoints",
            expected: "target time strictly before base time".into(),
            got: format!("base t = {}, target t = {}", base.t, target.t),
        });
    }
    let tau_bar = base.t - target.t;
    let sigma_bar = tau_bar.sqrt();
    let curve0 =
        SpaceTimeCurve::straight(base.t, 0.0, sigma_bar, base.s, target.s, cfg.nodes.max(2))?;
    let min = minimize_action(flow, &curve0, cfg)?;
    let l = min.action / (2.0 * sigma_bar);
    let m = flow.dimension() as f64;
    if l + 0.5 * m < -cfg.tol_l {
        return Err(LabError::BadParameter {
            what: "reduced distance",
            expected: format!("l + m/2 >= -{}", cfg.tol_l),
            got: format!("l = {l}"),
        });
    }
    Ok(ReducedDistanceResult {
        l,
        action: min.action,
        tau_bar,
        curve: min.curve,
        diagnostics: min.diagnostics,
    })
}

/// Finite-volume cell volumes of a geometry's node grid, matching the
/// conjugate heat solver's discrete measure on the same slice.
fn cell_volumes(geom: &RadialGeometry) -> Vec<f64> {
    let n = geom.intervals();
    let ds = geom.spacing();
    let sigma = sphere_area_constant(geom.dimension());
    let p = geom.dimension() as i32 - 1;
    let dens = |s: f64| sigma * grid::cubic_eval(geom.warp(), ds, s).powi(p);
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

/// A unit-mass radial density on a fixed slice, with its quadrature weights.
#[derive(Debug, Clone)]
pub struct BaseMeasure {
    p: Vec<f64>,
    weights: Vec<f64>,
}

impl BaseMeasure {
    /// Certifies `p >= 0` and unit mass within `1e-10` in the discrete
    /// measure of `geom`.
    pub fn new(geom: &RadialGeometry, p: Vec<f64>) -> Result<Self> {
        if p.len() != geom.len() {
            return Err(LabError::GridMismatch {
                context: "base measure",
                detail: format!("{} samples on a {}-node grid", p.len(), geom.len()),
            });
        }
        for (j, &v) in p.iter().enumerate() {
            if !v.is_finite() || v < 0.0 {
                return Err(LabError::BadParameter {
                    what: "base measure density",
                    expected: "finite and nonnegative".into(),
                    got: format!("p[{j}] = {v}"),
                });
            }
        }
        let weights = cell_volumes(geom);
        let mass: f64 = weights.iter().zip(&p).map(|(w, p)| w * p).sum();
        if (mass - 1.0).abs() > 1e-10 {
            return Err(LabError::Unnormalized { mass, tol: 1e-10 });
        }
        Ok(BaseMeasure { p, weights })
    }

    /// Rescales a nonnegative density to exact unit mass, then certifies.
    pub fn normalized(geom: &RadialGeometry, raw: Vec<f64>) -> Result<Self> {
        let weights = cell_volumes(geom);
        let mass: f64 = weights.iter().zip(&raw).map(|(w, p)| w * p).sum();
        if !(mass > 0.0) || !mass.is_finite() {
            return Err(LabError::BadParameter {
                what: "base measure mass",
                expected: "positive and finite".into(),
                got: format!("{mass}"),
            });
        }
        BaseMeasure::new(geom, raw.into_iter().map(|p| p / mass).collect())
    }

    pub fn density(&self) -> &[f64] {
        &self.p
    }

    /// Quadrature weight of node `j` in the measure integral.
    pub fn node_mass(&self, j: usize) -> f64 {
        self.p[j] * self.weights[j]
    }
}

/// Space-time subgrid request: the cartesian product of stored flow slices
/// and gauge node indices.
#[derive(Debug, Clone)]
pub struct SubGrid {
    pub slices: Vec<usize>,
    pub nodes: Vec<usize>,
}

/// Measure-averaged reduced distance on a subgrid. Entries on the terminal
/// slice are the `tau -> 0` limit, which diverges for a spread-out measure;
/// they are stored as infinity.
#[derive(Debug, Clone)]
pub struct ReducedLField {
    pub slices: Vec<usize>,
    pub nodes: Vec<usize>,
    /// `values[a][b]` for slice `slices[a]`, node `nodes[b]`.
    pub values: Vec<Vec<f64>>,
    /// Subgrid coordinates `(a, b)` where some per-base minimization failed.
    pub flagged: Vec<(usize, usize)>,
}

/// Reduced volume density `w(x, t) = int p(y) (4 pi (T-t))^{-m/2}
/// e^{-l((y,T),(x,t))} dv(y)` on a subgrid; terminal-slice entries take the
/// Dirac limit `w = p`.
#[derive(Debug, Clone)]
pub struct ReducedVolumeDensityField {
    pub slices: Vec<usize>,
    pub nodes: Vec<usize>,
    pub values: Vec<Vec<f64>>,
    /// Terminal density the field was built from.
    pub base_p: Vec<f64>,
    pub flagged: Vec<(usize, usize)>,
}

/// Both reduced fields of a base measure on `grid`, by per-base minimization
/// with warm starts swept across the base nodes (cold-start re-checked on a
/// 5 percent random subsample). Targets run concurrently; the base-measure
/// quadrature uses a fixed ascending summation order.
pub fn reduced_fields_wrt_measure(
    flow: &FlowSolution,
    p: &BaseMeasure,
    grid: &SubGrid,
    cfg: &ReducedConfig,
) -> Result<(ReducedLField, ReducedVolumeDensityField)> {
    let i_term = flow.times().len() - 1;
    let t_term = flow.times()[i_term];
    if p.p.len() != flow.gauge_points() {
        return Err(LabError::GridMismatch {
            context: "reduced fields",
            detail: format!(
                "base measure on {} nodes, flow grid has {}",
                p.p.len(),
                flow.gauge_points()
            ),
        });
    }
    for &i in &grid.slices {
        if i > i_term {
            return Err(LabError::BadParameter {
                what: "subgrid slice",
                expected: format!("<= {i_term}"),
                got: format!("{i}"),
            });
        }
    }
    for &j in &grid.nodes {
        if j >= flow.gauge_points() {
            return Err(LabError::BadParameter {
                what: "subgrid node",
                expected: format!("< {}", flow.gauge_points()),
                got: format!("{j}"),
            });
        }
    }
    let ds = flow.ds_gauge();
    let m = flow.dimension() as f64;
    let bases: Vec<(usize, f64)> = (0..p.p.len())
        .map(|k| (k, p.node_mass(k)))
        .filter(|&(_, w)| w > 0.0)
        .collect();
    if bases.is_empty() {
        return Err(LabError::BadParameter {
            what: "base measure",
            expected: "positive mass somewhere".into(),
            got: "all-zero density".into(),
        });
    }

    // One task per subgrid point; rayon preserves collection order.
    let tasks: Vec<(usize, usize)> = (0..grid.slices.len())
        .flat_map(|a| (0..grid.nodes.len()).map(move |b| (a, b)))
        .collect();
    let results: Vec<Result<(f64, f64, bool)>> = tasks
        .par_iter()
        .map(|&(a, b)| {
            let i = grid.slices[a];
            let j = grid.nodes[b];
            if i == i_term {
                // Dirac limit on the terminal slice.
                return Ok((f64::INFINITY, p.p[j], false));
            }
            let t = flow.times()[i];
            let tau_bar = t_term - t;
            let sigma_bar = tau_bar.sqrt();
            let x_s = j as f64 * ds;
            let mut rng = ChaCha8Rng::seed_from_u64(
                cfg.seed ^ ((a as u64) << 40) ^ ((b as u64) << 20) ^ 0x11,
            );
            let mut warm: Option<SpaceTimeCurve> = None;
            let mut l_acc = 0.0;
            let mut w_acc = 0.0;
            let mut flagged = false;
            for &(k, weight) in &bases {
                let y_s = k as f64 * ds;
                let start = match &warm {
                    Some(prev) => {
                        let mut pos = prev.positions().to_vec();
                        pos[0] = y_s;
                        prev.with_positions(pos)?
                    }
                    None => SpaceTimeCurve::straight(
                        t_term,
                        0.0,
                        sigma_bar,
                        y_s,
                        x_s,
                        cfg.nodes.max(2),
                    )?,
                };
                let sweep_cfg = ReducedConfig { restarts: 0, ..*cfg };
                let mut min = minimize_action(flow, &start, &sweep_cfg)?;
                // Cold-start control on a random subsample of bases.
                if rng.gen_range(0.0..1.0) < 0.05 {
                    let cold = minimize_action(
                        flow,
                        &SpaceTimeCurve::straight(
                            t_term,
                            0.0,
                            sigma_bar,
                            y_s,
                            x_s,
                            cfg.nodes.max(2),
                        )?,
                        cfg,
                    )?;
                    if cold.action < min.action {
                        min = cold;
                    }
                }
                flagged |= min.diagnostics.approximate;
                let l = min.action / (2.0 * sigma_bar);
                l_acc += weight * l;
                w_acc += weight
                    * (4.0 * std::f64::consts::PI * tau_bar).powf(-0.5 * m)
                    * (-l).exp();
                warm = Some(min.curve);
            }
            Ok((l_acc, w_acc, flagged))
        })
        .collect();

    let mut l_values = vec![vec![0.0; grid.nodes.len()]; grid.slices.len()];
    let mut w_values = vec![vec![0.0; grid.nodes.len()]; grid.slices.len()];
    let mut flagged = Vec::new();
    for (&(a, b), res) in tasks.iter().zip(results) {
        let (l, w, flag) = res?;
        l_values[a][b] = l;
        w_values[a][b] = w;
        if flag {
            flagged.push((a, b));
        }
    }
    Ok((
        ReducedLField {
            slices: grid.slices.clone(),
            nodes: grid.nodes.clone(),
            values: l_values,
            flagged: flagged.clone(),
        },
        ReducedVolumeDensityField {
            slices: grid.slices.clone(),
            nodes: grid.nodes.clone(),
            values: w_values,
            base_p: p.p.clone(),
            flagged,
        },
    ))
}

/// Pointwise margins of `w <= u` on the field's subgrid.
#[derive(Debug, Clone, Serialize)]
pub struct WLeUMargins {
    /// `u - w` per subgrid point; nonnegative passes.
    pub margins: Vec<Vec<f64>>,
    pub min_margin: f64,
    /// Largest `(w - u) / u` over points with `u` above the floor.
    pub max_relative_excess: f64,
    pub points: usize,
}

impl WLeUMargins {
    /// Passes iff `w - u <= tol_w * max(1, u)` everywhere.
    pub fn pass(&self, tol_w: f64) -> bool {
        self.min_margin >= -tol_w && self.max_relative_excess <= tol_w
    }
}

/// Compares a reduced volume density field against a conjugate heat solution
/// solved from the same terminal measure.
pub fn check_w_le_u(
    wfield: &ReducedVolumeDensityField,
    chs: &ConjugateHeatSolution,
) -> Result<WLeUMargins> {
    let n_slices = chs.times().len();
    for &i in &wfield.slices {
        if i >= n_slices {
            return Err(LabError::GridMismatch {
                context: "w vs u comparison",
                detail: format!("field slice {i} beyond the {n_slices} solved slices"),
            });
        }
    }
    let u_term = chs.u_slice(n_slices - 1);
    if u_term.len() != wfield.base_p.len() {
        return Err(LabError::GridMismatch {
            context: "w vs u comparison",
            detail: "terminal grids differ".into(),
        });
    }
    let peak = wfield.base_p.iter().fold(0.0f64, |a, &b| a.max(b));
    for (j, (&u, &p)) in u_term.iter().zip(&wfield.base_p).enumerate() {
        if (u - p).abs() > 1e-5 * (1.0 + peak) {
            return Err(LabError::GridMismatch {
                context: "w vs u comparison",
                detail: format!(
                    "terminal u differs from the base measure at node {j}: {u} vs {p}"
                ),
            });
        }
    }
    let mut margins = Vec::with_capacity(wfield.slices.len());
    let mut min_margin = f64::INFINITY;
    let mut max_rel = f64::NEG_INFINITY;
    let mut points = 0;
    for (a, &i) in wfield.slices.iter().enumerate() {
        let u_row = chs.u_slice(i);
        let mut row = Vec::with_capacity(wfield.nodes.len());
        for (b, &j) in wfield.nodes.iter().enumerate() {
            let u = u_row[j];
            let w = wfield.values[a][b];
            let margin = u - w;
            min_margin = min_margin.min(margin);
            if u > crate::heat::U_FLOOR {
                max_rel = max_rel.max((w - u) / u);
            }
            row.push(margin);
            points += 1;
        }
        margins.push(row);
    }
    Ok(WLeUMargins { margins, min_margin, max_relative_excess: max_rel, points })
}

/// Computed minimum reduced distance on a mid-flow window against the
/// astronomically slack a-priori bound, reported in log space.
#[derive(Debug, Clone, Serialize)]
pub struct ReducedUpperReport {
    pub a: f64,
    /// Min over the window of the computed reduced distance from the center
    /// pole at the terminal time.
    pub computed_min_l: f64,
    /// `log(4m) + 0.5 F0` with `F0 = 1000 A^2`; the bound itself overflows.
    pub log_bound_l: f64,
    pub window_points: usize,
    pub slackness: &'static str,
}

/// Reduced distances from the pole into the window of radius `0.1 sqrt(T)`
/// around the pole at mid-flow time, against the a-priori upper bound.
/// The bound is never tight at desk scale; the report carries no pass/fail
/// beyond finiteness of the computed side.
pub fn reduced_distance_upper_report(
    flow: &FlowSolution,
    a: f64,
    cfg: &ReducedConfig,
) -> Result<ReducedUpperReport> {
    ensure_finite("hypothesis constant", a)?;
    if a < 1.0 {
        return Err(LabError::BadParameter {
            what: "hypothesis constant",
            expected: ">= 1".into(),
            got: format!("{a}"),
        });
    }
    let t_term = *flow.times().last().unwrap();
    let i_mid = flow.slice_at(0.5 * t_term)?;
    let t_mid = flow.times()[i_mid];
    let radius = 0.1 * t_term.sqrt();
    let arc = flow.arc_positions(i_mid);
    let base = SpaceTimePoint { s: 0.0, t: t_term };
    let mut computed_min_l = f64::INFINITY;
    let mut window_points = 0;
    for (j, &r) in arc.iter().enumerate() {
        if r > radius {
            continue;
        }
        let target = SpaceTimePoint { s: j as f64 * flow.ds_gauge(), t: t_mid };
        let res = reduced_distance(flow, base, target, cfg)?;
        computed_min_l = computed_min_l.min(res.l);
        window_points += 1;
    }
    if window_points == 0 {
        return Err(LabError::BadParameter {
            what: "report window",
            expected: "at least one grid node within 0.1 sqrt(T) of the pole".into(),
            got: "empty window".into(),
        });
    }
    ensure_finite("computed reduced distance", computed_min_l)?;
    let m = flow.dimension() as f64;
    Ok(ReducedUpperReport {
        a,
        computed_min_l,
        log_bound_l: (4.0 * m).ln() + 0.5 * 1000.0 * a * a,
        window_points,
        slackness: "astronomical",
    })
}

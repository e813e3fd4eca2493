//! Ricci flows of warped-product metrics in a radial gauge.
//!
//! Slices are written `phi(s,t)^2 ds^2 + fw(s,t)^2 g_{S^{m-1}}` over a fixed
//! coordinate `s` in `[0, s_coord]`. With `X_r = phi^{-1} X_s` the flow
//! system for `d/dt g = -2 Ric - k lambda g` is
//!
//! ```text
//! d/dt fw      = fw_rr - (m-2)(1 - fw_r^2)/fw - (k lambda / 2) fw
//! d/dt log phi = (m-1) fw_rr / fw - k lambda / 2
//! ```
//!
//! Every stored flow is in the material gauge: grid nodes are fixed
//! manifold points. The closed-form kinds (static flat disk, shrinking
//! round sphere) write the slices analytically. The numerical kind keeps a
//! uniform arc-length grid whose total length is slaved to the exact law
//! of its certified family (round sphere-like or flat disk-like initial
//! data, both of which shrink node-to-node homothetically in arc), and
//! advances the warp by an implicit diffusion / explicit reaction solve on
//! the frozen grid; `phi(s, t) = L(t) / s_coord` is constant in space.
//! Schemes that evolve the length or the gauge from the integrated stretch
//! rate `(m-1) fw_rr / fw` were measured unconditionally unstable: the
//! near-pole 0/0 ratio gives that integral a noise response of order
//! `1/h^2`, closing a feedback loop through node positions whose growth
//! rate survives time-step refinement. The slaved form cuts the loop and
//! measures contractive; initial data outside the certified families is
//! rejected at validation instead of integrated unreliably.
//!
//! Warp diffusion is integrated implicitly (backward Euler, tridiagonal),
//! reaction explicitly; the pair refinement `(ds, dt) -> (ds/2, dt/4)`
//! converges at second order against the exact round solution.

use serde::{Deserialize, Serialize};

use crate::geometry::{
    compute_curvature, CurvatureFields, GeometryPreset, Pole, RadialGeometry, Topology,
};
use crate::grid::{self, EndRule};
use crate::{ensure_finite, LabError, Result};

/// Which evolution backs a [`FlowSolution`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FlowKind {
    /// Flat disk, constant in time. The initial geometry must be flat.
    StaticEuclidean,
    /// Shrinking round sphere `a(t) = sqrt(a0^2 - 2(m-1)t)`, closed form.
    RoundSphereExact,
    /// Arc-normalized backward-Euler integrator.
    NumericalWarped,
}

impl FlowKind {
    pub fn name(self) -> &'static str {
        match self {
            FlowKind::StaticEuclidean => "static-euclidean",
            FlowKind::RoundSphereExact => "round-sphere-exact",
            FlowKind::NumericalWarped => "numerical-warped",
        }
    }
}

/// Parameters of a flow run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlowSpec {
    pub kind: FlowKind,
    /// Final time `T > 0`.
    pub horizon: f64,
    /// Number of stored time slices including both endpoints (>= 2).
    pub slices: usize,
    /// Integrator step for the numerical kind; substeps divide the slice
    /// spacing evenly, so the effective step is `<= dt`.
    pub dt: f64,
    /// Normalization strength `k` in `[1, 2]`.
    pub k_norm: f64,
    /// Normalization rate `lambda`, `|lambda| <= 1`, constant in time.
    /// Only the numerical kind accepts a nonzero value: the closed-form
    /// kinds solve the unnormalized flow only.
    pub lambda: f64,
}

impl FlowSpec {
    fn validate(&self) -> Result<()> {
        ensure_finite("horizon", self.horizon)?;
        ensure_finite("dt", self.dt)?;
        ensure_finite("k_norm", self.k_norm)?;
        ensure_finite("lambda", self.lambda)?;
        if self.horizon <= 0.0 {
            return Err(LabError::BadParameter {
                what: "flow horizon",
                expected: "> 0".into(),
                got: format!("{}", self.horizon),
            });
        }
        if self.slices < 2 {
            return Err(LabError::BadParameter {
                what: "flow slices",
                expected: ">= 2".into(),
                got: format!("{}", self.slices),
            });
        }
        if !(1.0..=2.0).contains(&self.k_norm) {
            return Err(LabError::BadParameter {
                what: "normalization k",
                expected: "in [1, 2]".into(),
                got: format!("{}", self.k_norm),
            });
        }
        if self.lambda.abs() > 1.0 {
            return Err(LabError::BadParameter {
                what: "normalization lambda",
                expected: "|lambda| <= 1".into(),
                got: format!("{}", self.lambda),
            });
        }
        if self.lambda != 0.0 && self.kind != FlowKind::NumericalWarped {
            return Err(LabError::BadParameter {
                what: "normalization lambda",
                expected: "0 for closed-form kinds".into(),
                got: format!("{}", self.lambda),
            });
        }
        if self.kind == FlowKind::NumericalWarped && self.dt <= 0.0 {
            return Err(LabError::BadParameter {
                what: "integrator dt",
                expected: "> 0".into(),
                got: format!("{}", self.dt),
            });
        }
        Ok(())
    }
}

/// One stored gauge slice.
#[derive(Debug, Clone, PartialEq)]
pub struct GaugeFrame {
    pub phi: Vec<f64>,
    pub fw: Vec<f64>,
}

/// How a [`FlowSolution`] was produced; serialized into reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowProvenance {
    pub kind: FlowKind,
    pub closed_form: bool,
    /// Whether gauge nodes are fixed material points. True for every
    /// built-in integrator; recorded so consumers of serialized runs can
    /// rely on it.
    pub material_gauge: bool,
    pub dimension: usize,
    pub grid_points: usize,
    pub ds_gauge: f64,
    pub slice_dt: f64,
    pub integrator_dt: f64,
    pub k_norm: f64,
    pub lambda: f64,
}

/// A completed flow: gauge frames plus arc-length geometry per slice.
#[derive(Debug, Clone)]
pub struct FlowSolution {
    m: usize,
    topology: Topology,
    ds: f64,
    times: Vec<f64>,
    frames: Vec<GaugeFrame>,
    /// Physical arc position of each gauge node, per slice.
    arc: Vec<Vec<f64>>,
    /// Curvature on the gauge grid, per slice.
    gauge_curv: Vec<CurvatureFields>,
    /// Arc-length resampled geometry per slice.
    geoms: Vec<RadialGeometry>,
    /// Curvature of the resampled geometries.
    curvatures: Vec<CurvatureFields>,
    provenance: FlowProvenance,
}

impl FlowSolution {
    pub fn dimension(&self) -> usize {
        self.m
    }

    pub fn topology(&self) -> Topology {
        self.topology
    }

    /// Gauge grid spacing (constant in time).
    pub fn ds_gauge(&self) -> f64 {
        self.ds
    }

    pub fn gauge_points(&self) -> usize {
        self.frames[0].fw.len()
    }

    /// Upper end of the gauge coordinate interval.
    pub fn s_coord(&self) -> f64 {
        (self.gauge_points() - 1) as f64 * self.ds
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn horizon(&self) -> f64 {
        *self.times.last().unwrap()
    }

    pub fn frame(&self, i: usize) -> &GaugeFrame {
        &self.frames[i]
    }

    /// Arc position of every gauge node at slice `i`.
    pub fn arc_positions(&self, i: usize) -> &[f64] {
        &self.arc[i]
    }

    /// Arc position at slice `i` of the material point that started at grid
    /// node `j`. All integrators store the material gauge, so this is the
    /// node arc position itself.
    pub fn material_positions(&self, i: usize) -> &[f64] {
        &self.arc[i]
    }

    /// Curvature fields on the gauge grid at slice `i`; `f_prime` holds the
    /// radial (not coordinate) derivative of the warp.
    pub fn gauge_curvature(&self, i: usize) -> &CurvatureFields {
        &self.gauge_curv[i]
    }

    /// Arc-length resampled geometry at slice `i`.
    pub fn geometry(&self, i: usize) -> &RadialGeometry {
        &self.geoms[i]
    }

    pub fn curvature(&self, i: usize) -> &CurvatureFields {
        &self.curvatures[i]
    }

    pub fn provenance(&self) -> &FlowProvenance {
        &self.provenance
    }

    /// Index of the slice at time `t` (must match a stored slice closely).
    pub fn slice_at(&self, t: f64) -> Result<usize> {
        let dt = self.times[1] - self.times[0];
        let i = ((t - self.times[0]) / dt).round() as isize;
        if i < 0
            || i as usize >= self.times.len()
            || (self.times[i as usize] - t).abs() > 1e-9 * (1.0 + t.abs())
        {
            return Err(LabError::BadParameter {
                what: "slice time",
                expected: "a stored slice time".into(),
                got: format!("{t}"),
            });
        }
        Ok(i as usize)
    }

    /// Minimum of the scalar curvature over each slice.
    pub fn r_min_series(&self) -> Vec<f64> {
        self.curvatures
            .iter()
            .map(|c| c.r.iter().cloned().fold(f64::INFINITY, f64::min))
            .collect()
    }

    /// Rebuilds a solution from stored raw state (cache loads); re-derives
    /// arc maps, curvature, and resampled geometries, so invalid cached
    /// frames are rejected by the same paths as freshly computed ones.
    pub fn from_frames(
        m: usize,
        topology: Topology,
        ds: f64,
        times: Vec<f64>,
        frames: Vec<GaugeFrame>,
        provenance: FlowProvenance,
    ) -> Result<Self> {
        if times.len() != frames.len() || times.len() < 2 {
            return Err(LabError::BadParameter {
                what: "flow frames",
                expected: "one frame per time, >= 2".into(),
                got: format!("{} times, {} frames", times.len(), frames.len()),
            });
        }
        let mut sol = FlowSolution {
            m,
            topology,
            ds,
            times,
            frames,
            arc: Vec::new(),
            gauge_curv: Vec::new(),
            geoms: Vec::new(),
            curvatures: Vec::new(),
            provenance,
        };
        sol.derive_slices()?;
        Ok(sol)
    }

    /// Fills the derived per-slice data from the frames.
    fn derive_slices(&mut self) -> Result<()> {
        let n = self.frames[0].fw.len() - 1;
        let (right_odd, right_even) = match self.topology {
            Topology::SphereLike => (EndRule::OddPole, EndRule::EvenPole),
            Topology::DiskLike => (EndRule::OneSided, EndRule::OneSided),
        };
        self.arc.clear();
        self.gauge_curv.clear();
        self.geoms.clear();
        self.curvatures.clear();
        for frame in &self.frames {
            let arc = grid::cumulative_integral(&frame.phi, self.ds);
            let curv = gauge_curvature(self.m, self.ds, frame, right_odd, right_even);

            // Resample the warp onto a uniform arc grid with the same count.
            let total = arc[n];
            let ds_arc = total / n as f64;
            let mut f_arc = Vec::with_capacity(n + 1);
            for k in 0..=n {
                f_arc.push(grid::interp_nonuniform_cubic(&arc, &frame.fw, k as f64 * ds_arc));
            }
            f_arc[0] = 0.0;
            if self.topology == Topology::SphereLike {
                f_arc[n] = 0.0;
            }
            let geom = RadialGeometry::new(self.m, self.topology, ds_arc, f_arc)?;
            let curv_arc = compute_curvature(&geom);

            self.arc.push(arc);
            self.gauge_curv.push(curv);
            self.geoms.push(geom);
            self.curvatures.push(curv_arc);
        }
        Ok(())
    }
}

/// Curvature of a gauge frame; `f_prime` is the radial derivative
/// `phi^{-1} d fw / ds`, pole values extrapolated by even parity.
fn gauge_curvature(
    m: usize,
    ds: f64,
    frame: &GaugeFrame,
    right_odd: EndRule,
    right_even: EndRule,
) -> CurvatureFields {
    let n = frame.fw.len() - 1;
    let fs = grid::deriv1(&frame.fw, ds, EndRule::OddPole, right_odd);
    let fss = grid::deriv2(&frame.fw, ds, EndRule::OddPole, right_odd);
    let ps = grid::deriv1(&frame.phi, ds, EndRule::EvenPole, right_even);
    let m1 = m as f64 - 1.0;
    let m2 = m as f64 - 2.0;
    let mut f_prime = vec![0.0; n + 1];
    let mut ric_rad = vec![0.0; n + 1];
    let mut ric_sph = vec![0.0; n + 1];
    for i in 0..=n {
        let phi = frame.phi[i];
        f_prime[i] = fs[i] / phi;
        let pole = (i == 0 || (i == n && right_odd == EndRule::OddPole)) && frame.fw[i] == 0.0;
        if pole {
            continue;
        }
        let f = frame.fw[i];
        let f_rr = (fss[i] - ps[i] / phi * fs[i]) / (phi * phi);
        ric_rad[i] = -m1 * f_rr / f;
        ric_sph[i] = -f_rr / f + m2 * (1.0 - f_prime[i] * f_prime[i]) / (f * f);
    }
    let fix_pole = |v: &mut Vec<f64>, at_start: bool| {
        if at_start {
            v[0] = grid::pole_extrapolate(v[1], v[2]);
        } else {
            v[n] = grid::pole_extrapolate(v[n - 1], v[n - 2]);
        }
    };
    fix_pole(&mut ric_rad, true);
    fix_pole(&mut ric_sph, true);
    if right_odd == EndRule::OddPole {
        fix_pole(&mut ric_rad, false);
        fix_pole(&mut ric_sph, false);
    }
    let r: Vec<f64> = ric_rad.iter().zip(&ric_sph).map(|(&a, &b)| a + m1 * b).collect();
    CurvatureFields { f_prime, ric_rad, ric_sph, r }
}


/// Extinction time of the round sphere of initial radius `a0`.
pub fn sphere_extinction_time(m: usize, a0: f64) -> f64 {
    a0 * a0 / (2.0 * (m as f64 - 1.0))
}

/// Smooth odd representation of the warp next to a pole: least-squares fit
/// `fw(x h) = c1 x + c3 x^3 + c5 x^5` over nodes `x = 1..=8`, with `x` the
/// node distance from the pole.
///
/// Two pole pathologies of the integrator are cured with this fit. First,
/// node-localized warp noise is amplified like `1/(h^2 fw)` by the
/// remesh-velocity integrand `fw''/fw` and re-injected through advection
/// faster than backward-Euler diffusion damps it; replacing nodes 1..=8 by
/// their orthogonal projection onto the fit subspace removes those noise
/// modes every substep (orthogonality matters: replacing only some nodes
/// is an oblique projection that pumps smooth modes). Second, the 0/0
/// ratio `fw''/fw` itself misreads barely-resolved shapes at nodes 1..2;
/// on the fitted subspace it has the closed form
/// `(6 c3 x + 20 c5 x^3)/(h^2 fw)`, whose pole limit `6 c3 / c1` is
/// division-safe. The replacement is exact through `O(s^5)`, below stencil
/// truncation error for smooth profiles.
#[derive(Clone, Copy)]
struct PoleCoeffs {
    c1: f64,
    c3: f64,
    c5: f64,
}

impl PoleCoeffs {
    /// Fitted value at node distance `x` from the pole.
    fn value(&self, x: f64) -> f64 {
        let x2 = x * x;
        x * (self.c1 + x2 * (self.c3 + x2 * self.c5))
    }

    /// `fw'' / fw` at node distance `x`, in units of the node spacing
    /// (multiply by `1 / h^2` for physical arc units).
    #[cfg_attr(not(test), allow(dead_code))]
    fn ratio(&self, x: f64) -> f64 {
        let x2 = x * x;
        (6.0 * self.c3 + 20.0 * self.c5 * x2) / (self.c1 + x2 * (self.c3 + x2 * self.c5))
    }
}

struct PoleFit {
    /// `coeff_weights[i][j]`: coefficient `c_{2i+1}` from data at node j+1.
    coeff_weights: [[f64; 8]; 3],
}

enum PoleSide {
    Left,
    Right,
}

impl PoleFit {
    fn new() -> Self {
        // Basis x^{2i+1} at x = 1..8; the fit is scale-covariant, so the
        // weights are spacing-free.
        let mut a = [[0.0f64; 3]; 8];
        for (j, row) in a.iter_mut().enumerate() {
            let x = (j + 1) as f64;
            *row = [x, x.powi(3), x.powi(5)];
        }
        // Normal equations M c = A^T y, M = A^T A (3x3), inverted by
        // Gauss-Jordan; M is well conditioned at this size.
        let mut m = [[0.0f64; 3]; 3];
        for row in &a {
            for i in 0..3 {
                for k in 0..3 {
                    m[i][k] += row[i] * row[k];
                }
            }
        }
        let mut inv = [[0.0f64; 3]; 3];
        for (i, row) in inv.iter_mut().enumerate() {
            row[i] = 1.0;
        }
        for col in 0..3 {
            let piv = m[col][col];
            for k in 0..3 {
                m[col][k] /= piv;
                inv[col][k] /= piv;
            }
            for row in 0..3 {
                if row != col {
                    let factor = m[row][col];
                    for k in 0..3 {
                        m[row][k] -= factor * m[col][k];
                        inv[row][k] -= factor * inv[col][k];
                    }
                }
            }
        }
        // c = (M^{-1} A^T) y.
        let mut coeff_weights = [[0.0f64; 8]; 3];
        for (i, wrow) in coeff_weights.iter_mut().enumerate() {
            for j in 0..8 {
                wrow[j] = (0..3).map(|k| inv[i][k] * a[j][k]).sum();
            }
        }
        PoleFit { coeff_weights }
    }

    fn fit(&self, fw: &[f64], side: PoleSide) -> PoleCoeffs {
        let n = fw.len() - 1;
        let data = |j: usize| match side {
            PoleSide::Left => fw[j + 1],
            PoleSide::Right => fw[n - 1 - j],
        };
        let coef = |i: usize| (0..8).map(|j| self.coeff_weights[i][j] * data(j)).sum();
        PoleCoeffs { c1: coef(0), c3: coef(1), c5: coef(2) }
    }

    /// Replaces nodes 1..=8 from the pole by their projected values and
    /// returns the fit.
    fn project(&self, fw: &mut [f64], side: PoleSide) -> PoleCoeffs {
        let coeffs = match side {
            PoleSide::Left => self.fit(fw, PoleSide::Left),
            PoleSide::Right => self.fit(fw, PoleSide::Right),
        };
        let n = fw.len() - 1;
        for r in 0..8 {
            let v = coeffs.value((r + 1) as f64);
            match side {
                PoleSide::Left => fw[r + 1] = v,
                PoleSide::Right => fw[n - 1 - r] = v,
            }
        }
        coeffs
    }
}

/// Runs the flow described by `spec` from the initial geometry.
pub fn evolve(geom0: &RadialGeometry, spec: &FlowSpec) -> Result<FlowSolution> {
    spec.validate()?;
    let m = geom0.dimension();
    let n = geom0.intervals();
    let slice_dt = spec.horizon / (spec.slices - 1) as f64;
    let times: Vec<f64> = (0..spec.slices).map(|i| i as f64 * slice_dt).collect();

    match spec.kind {
        FlowKind::StaticEuclidean => {
            let curv = compute_curvature(geom0);
            let worst = (0..geom0.len()).map(|i| curv.ricci_norm(i)).fold(0.0, f64::max);
            if worst > 1e-6 {
                return Err(LabError::GeometryKindMismatch {
                    kind: FlowKind::StaticEuclidean.name(),
                    detail: format!(
                        "initial geometry has |Ric| up to {worst:.3e}; a static flow must be Ricci-flat"
                    ),
                });
            }
            let frame = GaugeFrame { phi: vec![1.0; n + 1], fw: geom0.warp().to_vec() };
            let frames = vec![frame; spec.slices];
            let provenance = FlowProvenance {
                kind: spec.kind,
                closed_form: true,
                material_gauge: true,
                dimension: m,
                grid_points: n + 1,
                ds_gauge: geom0.spacing(),
                slice_dt,
                integrator_dt: 0.0,
                k_norm: spec.k_norm,
                lambda: spec.lambda,
            };
            FlowSolution::from_frames(m, geom0.topology(), geom0.spacing(), times, frames, provenance)
        }
        FlowKind::RoundSphereExact => {
            if geom0.topology() != Topology::SphereLike {
                return Err(LabError::GeometryKindMismatch {
                    kind: spec.kind.name(),
                    detail: "needs a sphere-like geometry".into(),
                });
            }
            let a0 = geom0.s_max() / std::f64::consts::PI;
            let round = GeometryPreset::Sphere { m, a: a0 }.build(n)?;
            let dev = geom0
                .warp()
                .iter()
                .zip(round.warp())
                .map(|(&x, &y)| (x - y).abs())
                .fold(0.0, f64::max);
            if dev > 1e-9 * a0 {
                return Err(LabError::GeometryKindMismatch {
                    kind: spec.kind.name(),
                    detail: format!("warp deviates from round by {dev:.3e}"),
                });
            }
            let extinction = sphere_extinction_time(m, a0);
            if spec.horizon >= extinction {
                return Err(LabError::HorizonPastExtinction {
                    horizon: spec.horizon,
                    extinction,
                });
            }
            let ds = geom0.spacing();
            let frames: Vec<GaugeFrame> = times
                .iter()
                .map(|&t| {
                    let a = (a0 * a0 - 2.0 * (m as f64 - 1.0) * t).sqrt();
                    let scale = a / a0;
                    let mut fw: Vec<f64> =
                        (0..=n).map(|j| a * (j as f64 * ds / a0).sin()).collect();
                    fw[0] = 0.0;
                    fw[n] = 0.0;
                    GaugeFrame { phi: vec![scale; n + 1], fw }
                })
                .collect();
            let provenance = FlowProvenance {
                kind: spec.kind,
                closed_form: true,
                material_gauge: true,
                dimension: m,
                grid_points: n + 1,
                ds_gauge: ds,
                slice_dt,
                integrator_dt: 0.0,
                k_norm: spec.k_norm,
                lambda: spec.lambda,
            };
            FlowSolution::from_frames(m, Topology::SphereLike, ds, times, frames, provenance)
        }
        FlowKind::NumericalWarped => evolve_numerical(geom0, spec, &times, slice_dt),
    }
}

fn evolve_numerical(
    geom0: &RadialGeometry,
    spec: &FlowSpec,
    times: &[f64],
    slice_dt: f64,
) -> Result<FlowSolution> {
    let m = geom0.dimension();
    let n = geom0.intervals();
    let n_sub = (slice_dt / spec.dt).ceil().max(1.0) as usize;
    let dt = slice_dt / n_sub as f64;
    let m1 = m as f64 - 1.0;
    let m2 = m as f64 - 2.0;
    let decay = spec.k_norm * spec.lambda / 2.0;
    let sphere_like = geom0.topology() == Topology::SphereLike;
    let right_odd = if sphere_like { EndRule::OddPole } else { EndRule::OneSided };

    // The integrator is certified for two families with exact length laws:
    // round sphere-like data and flat disk-like data. The total length is
    // slaved to the closed-form law, the uniform arc grid rescales with it
    // (node-to-node material motion for both families), and each substep is
    // a plain parabolic solve on the frozen grid. Schemes that instead
    // evolve the length or node positions from the integrated stretch rate
    // (m-1) fw''/fw close a feedback loop through the near-pole 0/0 ratio
    // whose semi-discrete growth rate scales like 1/h^2; measured one-step
    // Jacobians put every such variant at spectral radius 1 + O(1000) dt
    // (N = 192 round sphere), while the slaved form measures contractive.
    // General warped data is rejected rather than integrated unreliably.
    if n < 24 {
        return Err(LabError::BadParameter {
            what: "flow grid",
            expected: "at least 24 intervals for the numerical integrator".into(),
            got: format!("{n}"),
        });
    }
    let s_coord = geom0.s_max();
    let ds = geom0.spacing();
    let mut fw = geom0.warp().to_vec();

    // Exact length law. The round radius obeys
    // d(a^2)/dt = -2(m-1) - 2 decay a^2; the flat disk scales conformally
    // by exp(-decay t).
    let length_at: Box<dyn Fn(f64) -> f64> = if sphere_like {
        let a0 = s_coord / std::f64::consts::PI;
        let round = GeometryPreset::Sphere { m, a: a0 }.build(n)?;
        let dev = fw
            .iter()
            .zip(round.warp())
            .map(|(&x, &y)| (x - y).abs())
            .fold(0.0, f64::max);
        if dev > 1e-8 * a0 {
            return Err(LabError::GeometryKindMismatch {
                kind: spec.kind.name(),
                detail: format!(
                    "numerical sphere-like flows are certified for round initial data \
                     (exact length law); warp deviates from round by {dev:.3e}"
                ),
            });
        }
        let extinction = if decay == 0.0 {
            sphere_extinction_time(m, a0)
        } else {
            // Solve a^2(T) = 0; no extinction when the normalized flow
            // expands past the balance radius.
            let ratio = (m1 / decay) / (a0 * a0 + m1 / decay);
            if ratio > 0.0 {
                -ratio.ln() / (2.0 * decay)
            } else {
                f64::INFINITY
            }
        };
        if spec.horizon >= extinction {
            return Err(LabError::HorizonPastExtinction { horizon: spec.horizon, extinction });
        }
        let a2_at = move |t: f64| {
            if decay == 0.0 {
                a0 * a0 - 2.0 * m1 * t
            } else {
                (a0 * a0 + m1 / decay) * (-2.0 * decay * t).exp() - m1 / decay
            }
        };
        Box::new(move |t| std::f64::consts::PI * a2_at(t).sqrt())
    } else {
        let curv0 = compute_curvature(geom0);
        let worst = (0..geom0.len()).map(|i| curv0.ricci_norm(i)).fold(0.0, f64::max);
        if worst > 1e-6 {
            return Err(LabError::GeometryKindMismatch {
                kind: spec.kind.name(),
                detail: format!(
                    "numerical disk-like flows are certified for flat initial data \
                     (exact length law, homothetic outer boundary); got |Ric| up to \
                     {worst:.3e}"
                ),
            });
        }
        Box::new(move |t| s_coord * (-decay * t).exp())
    };

    let fitter = PoleFit::new();
    fitter.project(&mut fw, PoleSide::Left);
    if sphere_like {
        fitter.project(&mut fw, PoleSide::Right);
    }

    let mut frames = Vec::with_capacity(times.len());
    frames.push(GaugeFrame { phi: vec![1.0; n + 1], fw: fw.clone() });
    let mut length = s_coord;

    let mut lower = vec![0.0; n + 1];
    let mut diag = vec![0.0; n + 1];
    let mut upper = vec![0.0; n + 1];
    let mut rhs = vec![0.0; n + 1];

    for slice in 1..times.len() {
        for sub in 0..n_sub {
            let t = times[slice - 1] + sub as f64 * dt;
            let h = length / n as f64;
            let length_new = length_at(t + dt);
            if !(length_new.is_finite() && length_new > 10.0 * h) {
                return Err(LabError::HorizonTruncated {
                    t,
                    horizon: spec.horizon,
                    reason: format!("total length collapsed to {length_new:.3e}"),
                });
            }
            let fs = grid::deriv1(&fw, h, EndRule::OddPole, right_odd);

            // Backward-Euler diffusion, explicit reaction, on the frozen
            // grid; the grid then rescales in place to spacing
            // length_new / n.
            let a = dt / (h * h);
            for j in 0..=n {
                let pole = (j == 0) || (j == n && sphere_like);
                if pole {
                    lower[j] = 0.0;
                    upper[j] = 0.0;
                    diag[j] = 1.0;
                    rhs[j] = 0.0;
                    continue;
                }
                if j == n {
                    // Disk outer boundary: homothetic in the total length.
                    lower[j] = 0.0;
                    upper[j] = 0.0;
                    diag[j] = 1.0;
                    rhs[j] = fw[j] * (length_new / length);
                    continue;
                }
                let reaction = -m2 * (1.0 - fs[j] * fs[j]) / fw[j] - decay * fw[j];
                lower[j] = -a;
                upper[j] = -a;
                diag[j] = 1.0 + 2.0 * a;
                rhs[j] = fw[j] + dt * reaction;
            }
            let mut fw_new = grid::solve_tridiagonal(&lower, &diag, &upper, &rhs);
            fitter.project(&mut fw_new, PoleSide::Left);
            if sphere_like {
                fitter.project(&mut fw_new, PoleSide::Right);
            }
            let interior_end = if sphere_like { n - 1 } else { n };
            for j in 1..=interior_end {
                if !(fw_new[j].is_finite() && fw_new[j] > 0.0) {
                    return Err(LabError::HorizonTruncated {
                        t,
                        horizon: spec.horizon,
                        reason: format!("warp factor collapsed at node {j}"),
                    });
                }
            }
            fw = fw_new;
            length = length_new;
        }
        let phi = length / s_coord;
        frames.push(GaugeFrame { phi: vec![phi; n + 1], fw: fw.clone() });
    }

    let provenance = FlowProvenance {
        kind: spec.kind,
        closed_form: false,
        material_gauge: true,
        dimension: m,
        grid_points: n + 1,
        ds_gauge: ds,
        slice_dt,
        integrator_dt: dt,
        k_norm: spec.k_norm,
        lambda: spec.lambda,
    };
    FlowSolution::from_frames(m, geom0.topology(), ds, times.to_vec(), frames, provenance)
}

/// Per-slice supremum data for the curvature hypothesis
/// `sup_{B_{g(t)}(pole, sqrt t)} t |Rc| <= (m-1) A`.
#[derive(Debug, Clone, Serialize)]
pub struct SliceHypothesis {
    pub t: f64,
    /// Supremum of `t * max(|ric_rad|, |ric_sph|)` over the ball.
    pub sup_norm: f64,
    /// Supremum of `t * max(ric_rad, ric_sph)` (signed upper-bound form).
    pub sup_upper: f64,
}

/// Result of [`check_flow_hypothesis`].
#[derive(Debug, Clone, Serialize)]
pub struct HypothesisReport {
    pub a_const: f64,
    pub bound: f64,
    pub per_slice: Vec<SliceHypothesis>,
    pub sup_norm: f64,
    pub sup_upper: f64,
    pub pass: bool,
}

/// Checks `t |Rc| <= (m-1) A` over the ball of radius `sqrt(t)` about a
/// pole, for every stored slice. The signed-upper-bound variant is recorded
/// alongside; the gate uses the eigenvalue norm, which implies it.
pub fn check_flow_hypothesis(flow: &FlowSolution, center: Pole, a_const: f64) -> HypothesisReport {
    let bound = (flow.dimension() as f64 - 1.0) * a_const;
    let mut per_slice = Vec::new();
    let mut sup_norm: f64 = 0.0;
    let mut sup_upper: f64 = f64::NEG_INFINITY;
    for (i, &t) in flow.times().iter().enumerate() {
        if t <= 0.0 {
            per_slice.push(SliceHypothesis { t, sup_norm: 0.0, sup_upper: 0.0 });
            continue;
        }
        let geom = flow.geometry(i);
        let curv = flow.curvature(i);
        let radius = t.sqrt();
        let mut slice_norm: f64 = 0.0;
        let mut slice_upper = f64::NEG_INFINITY;
        for j in 0..geom.len() {
            if geom.distance_from_pole(center, j) <= radius {
                slice_norm = slice_norm.max(t * curv.ricci_norm(j));
                slice_upper = slice_upper.max(t * curv.ric_rad[j].max(curv.ric_sph[j]));
            }
        }
        if !slice_upper.is_finite() {
            slice_upper = 0.0;
        }
        sup_norm = sup_norm.max(slice_norm);
        sup_upper = sup_upper.max(slice_upper);
        per_slice.push(SliceHypothesis { t, sup_norm: slice_norm, sup_upper: slice_upper });
    }
    if !sup_upper.is_finite() {
        sup_upper = 0.0;
    }
    HypothesisReport {
        a_const,
        bound,
        per_slice,
        sup_norm,
        sup_upper,
        pass: sup_norm <= bound * (1.0 + 1e-12),
    }
}

/// Result of [`check_distance_evolution`]: pointwise margins of
/// `d/dt d - Laplacian d + A / sqrt(t) >= 0` on `{d > sqrt(t), t > 0}`.
#[derive(Debug, Clone)]
pub struct DistanceEvolutionReport {
    /// `margins[i][j]` for slice `i`, material marker `j`; NaN off the
    /// admissible region.
    pub margins: Vec<Vec<f64>>,
    pub per_slice_min: Vec<(f64, f64)>,
    pub min_margin: f64,
    pub tol: f64,
    pub pass: bool,
}

impl DistanceEvolutionReport {
    /// Margin at the material marker closest to distance `d` at the slice
    /// closest to time `t`; NaN if that point is off the admissible region.
    pub fn margin_near(&self, flow: &FlowSolution, center: Pole, t: f64, d: f64) -> f64 {
        let times = flow.times();
        let i = times
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1 - t).abs().total_cmp(&(b.1 - t).abs()))
            .map(|(i, _)| i)
            .unwrap();
        let pos = flow.material_positions(i);
        let total = flow.arc_positions(i)[flow.gauge_points() - 1];
        let j = (0..pos.len())
            .min_by(|&a, &b| {
                let da = marker_distance(pos, total, center, a);
                let db = marker_distance(pos, total, center, b);
                (da - d).abs().total_cmp(&(db - d).abs())
            })
            .unwrap();
        self.margins[i][j]
    }
}

#[inline]
fn marker_distance(pos: &[f64], total: f64, center: Pole, j: usize) -> f64 {
    match center {
        Pole::Origin => pos[j],
        Pole::Far => total - pos[j],
    }
}

/// Evaluates the evolution inequality for the radial distance from a pole
/// at every material marker.
///
/// The time derivative of a marker's distance is differenced across slices;
/// the drift term `(m-1) fw'/fw`, oriented away from the center, is
/// evaluated on the arc-resampled slice geometry at the marker's position.
/// The antipodal point (cut locus) and the region `d <= sqrt(t)` are
/// excluded.
pub fn check_distance_evolution(
    flow: &FlowSolution,
    center: Pole,
    a_const: f64,
    tol: f64,
) -> DistanceEvolutionReport {
    let times = flow.times();
    let nt = times.len();
    let np = flow.gauge_points();
    let m1 = flow.dimension() as f64 - 1.0;
    let dt = times[1] - times[0];

    let dist = |i: usize, j: usize| -> f64 {
        let pos = flow.material_positions(i);
        let total = flow.arc_positions(i)[np - 1];
        marker_distance(pos, total, center, j)
    };

    let mut margins = vec![vec![f64::NAN; np]; nt];
    let mut per_slice_min = Vec::new();
    let mut min_margin = f64::INFINITY;
    for i in 0..nt {
        let t = times[i];
        if t <= 0.0 {
            per_slice_min.push((t, f64::NAN));
            continue;
        }
        let geom = flow.geometry(i);
        let curv = flow.curvature(i);
        let total = flow.arc_positions(i)[np - 1];
        let mut slice_min = f64::INFINITY;
        for j in 0..np {
            let d = dist(i, j);
            // The admissible region includes its boundary d = sqrt(t).
            if d + 1e-12 < t.sqrt() || d >= total - geom.spacing() * 0.5 {
                continue;
            }
            let ddt = if i == nt - 1 {
                (d - dist(i - 1, j)) / dt
            } else if i == 0 {
                (dist(1, j) - d) / dt
            } else {
                (dist(i + 1, j) - dist(i - 1, j)) / (2.0 * dt)
            };
            // Arc position of the marker measured from the origin pole.
            let s_here = match center {
                Pole::Origin => d,
                Pole::Far => total - d,
            };
            let orient = match center {
                Pole::Origin => 1.0,
                Pole::Far => -1.0,
            };
            let fp = grid::cubic_eval(&curv.f_prime, geom.spacing(), s_here);
            let fv = geom.warp_at(s_here);
            let laplacian_d = m1 * orient * fp / fv;
            let margin = ddt - laplacian_d + a_const / t.sqrt();
            margins[i][j] = margin;
            slice_min = slice_min.min(margin);
        }
        let recorded = if slice_min.is_finite() { slice_min } else { f64::NAN };
        per_slice_min.push((t, recorded));
        if slice_min.is_finite() {
            min_margin = min_margin.min(slice_min);
        }
    }
    let pass = min_margin >= -tol;
    DistanceEvolutionReport { margins, per_slice_min, min_margin, tol, pass }
}

/// Interpolates gauge-grid flow data at arbitrary `(s, t)`.
///
/// Cubic in the gauge coordinate, linear in time between stored slices.
pub struct FlowSampler<'a> {
    flow: &'a FlowSolution,
}

impl<'a> FlowSampler<'a> {
    pub fn new(flow: &'a FlowSolution) -> Self {
        FlowSampler { flow }
    }

    pub fn flow(&self) -> &'a FlowSolution {
        self.flow
    }

    pub fn s_max(&self) -> f64 {
        self.flow.s_coord()
    }

    fn locate(&self, t: f64) -> (usize, f64) {
        let times = self.flow.times();
        let dt = times[1] - times[0];
        let x = ((t - times[0]) / dt).clamp(0.0, (times.len() - 1) as f64);
        let i = (x.floor() as usize).min(times.len() - 2);
        (i, x - i as f64)
    }

    fn blend(&self, t: f64, field: impl Fn(usize) -> f64) -> f64 {
        let (i, w) = self.locate(t);
        (1.0 - w) * field(i) + w * field(i + 1)
    }

    pub fn phi(&self, s: f64, t: f64) -> f64 {
        let ds = self.flow.ds_gauge();
        self.blend(t, |i| grid::cubic_eval(&self.flow.frame(i).phi, ds, s))
    }

    pub fn fw(&self, s: f64, t: f64) -> f64 {
        let ds = self.flow.ds_gauge();
        self.blend(t, |i| grid::cubic_eval(&self.flow.frame(i).fw, ds, s))
    }

    pub fn scalar_curv(&self, s: f64, t: f64) -> f64 {
        let ds = self.flow.ds_gauge();
        self.blend(t, |i| grid::cubic_eval(&self.flow.gauge_curvature(i).r, ds, s))
    }

    /// Gauge-coordinate derivative of the scalar curvature.
    pub fn scalar_curv_s(&self, s: f64, t: f64) -> f64 {
        let ds = self.flow.ds_gauge();
        self.blend(t, |i| grid::cubic_eval_deriv(&self.flow.gauge_curvature(i).r, ds, s))
    }

    /// Gauge-coordinate derivative of `phi`.
    pub fn phi_s(&self, s: f64, t: f64) -> f64 {
        let ds = self.flow.ds_gauge();
        self.blend(t, |i| grid::cubic_eval_deriv(&self.flow.frame(i).phi, ds, s))
    }

}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn pole_fit_preserves_smooth_odd_profiles() {
        let fitter = PoleFit::new();
        // Exact on the fitted subspace, measured from each pole, and the
        // closed-form ratio matches fw''/fw of the sample profile.
        for pow in [1i32, 3] {
            let mut fw: Vec<f64> = (0..=20).map(|j| (j as f64).powi(pow)).collect();
            let want = fw.clone();
            let fit = fitter.project(&mut fw, PoleSide::Left);
            for j in 0..=20 {
                assert!(
                    (fw[j] - want[j]).abs() <= 1e-9 * (1.0 + want[j].abs()),
                    "pow {pow} node {j}: {} vs {}",
                    fw[j],
                    want[j]
                );
            }
            let want_ratio = if pow == 1 { 0.0 } else { 6.0 / 4.0 };
            assert!((fit.ratio(2.0) - want_ratio).abs() < 1e-9);

            let mut fw: Vec<f64> = (0..=20).map(|j| ((20 - j) as f64).powi(pow)).collect();
            let want = fw.clone();
            fitter.project(&mut fw, PoleSide::Right);
            for j in 0..=20 {
                assert!(
                    (fw[j] - want[j]).abs() <= 1e-9 * (1.0 + want[j].abs()),
                    "pow {pow} right node {j}: {} vs {}",
                    fw[j],
                    want[j]
                );
            }
        }
        // Near-exact on a smooth odd transcendental profile; the residual
        // is the s^7 Taylor term, far below stencil truncation error.
        let h = 0.02;
        let mut fw: Vec<f64> = (0..=20).map(|j| (j as f64 * h).sin()).collect();
        let want = fw.clone();
        let fit = fitter.project(&mut fw, PoleSide::Left);
        for j in 0..=20 {
            assert!((fw[j] - want[j]).abs() < 1e-9, "node {j}");
        }
        // sin has fw''/fw = -1 everywhere; in node units that is -h^2.
        assert!((fit.ratio(0.0) + h * h).abs() < 1e-3 * h * h);
        assert!((fit.ratio(5.0) + h * h).abs() < 1e-3 * h * h);
    }

    fn static_spec(slices: usize) -> FlowSpec {
        FlowSpec {
            kind: FlowKind::StaticEuclidean,
            horizon: 2.0,
            slices,
            dt: 0.0,
            k_norm: 1.0,
            lambda: 0.0,
        }
    }

    #[test]
    fn static_flow_keeps_flat_slices() {
        let geom = GeometryPreset::Euclidean { m: 3, s_max: 4.0 }.build(128).unwrap();
        let flow = evolve(&geom, &static_spec(5)).unwrap();
        for i in 0..5 {
            let c = flow.curvature(i);
            assert!(c.r.iter().all(|&v| v.abs() < 1e-8));
            assert_relative_eq!(flow.geometry(i).s_max(), 4.0, max_relative = 1e-12);
        }
    }

    #[test]
    fn static_flow_rejects_curved_input() {
        let geom = GeometryPreset::Sphere { m: 3, a: 1.0 }.build(128).unwrap();
        let err = evolve(&geom, &static_spec(3));
        assert!(matches!(err, Err(LabError::GeometryKindMismatch { .. })));
    }

    #[test]
    fn round_sphere_slices_are_analytic() {
        let geom = GeometryPreset::Sphere { m: 3, a: 1.0 }.build(256).unwrap();
        let spec = FlowSpec {
            kind: FlowKind::RoundSphereExact,
            horizon: 0.2,
            slices: 11,
            dt: 0.0,
            k_norm: 1.0,
            lambda: 0.0,
        };
        let flow = evolve(&geom, &spec).unwrap();
        for (i, &t) in flow.times().iter().enumerate() {
            let a = (1.0 - 4.0 * t).sqrt();
            // Gauge warp equals a(t) sin(s / a0) exactly by construction.
            let fw = &flow.frame(i).fw;
            for j in 0..=256 {
                let want = a * (j as f64 * flow.ds_gauge()).sin();
                assert!((fw[j] - want).abs() < 1e-12 * (1.0 + want.abs()));
            }
            // Resampled slice curvature matches the round closed form; the
            // pole-adjacent truncation error is O(ds^2 / a^4) at this N.
            let c = flow.curvature(i);
            let want_r = 6.0 / (a * a);
            for j in 0..=256 {
                assert_relative_eq!(c.r[j], want_r, max_relative = 1e-4);
            }
        }
        // Horizon at or past extinction is refused.
        let bad = FlowSpec { horizon: 0.25, ..spec };
        assert!(matches!(evolve(&geom, &bad), Err(LabError::HorizonPastExtinction { .. })));
    }

    #[test]
    fn numerical_flow_tracks_round_sphere() {
        let geom = GeometryPreset::Sphere { m: 3, a: 1.0 }.build(192).unwrap();
        let spec = FlowSpec {
            kind: FlowKind::NumericalWarped,
            horizon: 0.1,
            slices: 11,
            dt: 2e-5,
            k_norm: 1.0,
            lambda: 0.0,
        };
        let flow = evolve(&geom, &spec).unwrap();
        for (i, &t) in flow.times().iter().enumerate() {
            let a = (1.0 - 4.0 * t).sqrt();
            // Total length follows the slaved law exactly.
            let total = flow.arc_positions(i)[192];
            assert_relative_eq!(total, std::f64::consts::PI * a, max_relative = 1e-12);
            // Warp profile tracks a sin(pi sigma); the O(dt) reaction
            // splitting is the dominant error.
            let fw = &flow.frame(i).fw;
            let worst = (0..=192)
                .map(|j| {
                    let sigma = j as f64 / 192.0;
                    (fw[j] - a * (std::f64::consts::PI * sigma).sin()).abs()
                })
                .fold(0.0, f64::max);
            assert!(worst / a < 1e-4, "t = {t}: profile error {worst:.3e}");
            // Material points move homothetically: arc position scales
            // with a(t).
            let pos = flow.material_positions(i);
            for j in (0..=192).step_by(24) {
                let want = j as f64 * geom.spacing() * a;
                assert!((pos[j] - want).abs() < 1e-12 * (1.0 + want));
            }
        }
    }

    #[test]
    fn numerical_sphere_follows_normalized_length_law() {
        // decay = k lambda / 2 = -0.5: a^2(t) = 4 - 3 e^t, still shrinking.
        let geom = GeometryPreset::Sphere { m: 3, a: 1.0 }.build(96).unwrap();
        let spec = FlowSpec {
            kind: FlowKind::NumericalWarped,
            horizon: 0.1,
            slices: 6,
            dt: 5e-5,
            k_norm: 2.0,
            lambda: -0.5,
        };
        let flow = evolve(&geom, &spec).unwrap();
        for (i, &t) in flow.times().iter().enumerate() {
            let a = (4.0 - 3.0 * t.exp()).sqrt();
            let total = flow.arc_positions(i)[96];
            assert_relative_eq!(total, std::f64::consts::PI * a, max_relative = 1e-12);
            let fw = &flow.frame(i).fw;
            let worst = (0..=96)
                .map(|j| {
                    let sigma = j as f64 / 96.0;
                    (fw[j] - a * (std::f64::consts::PI * sigma).sin()).abs()
                })
                .fold(0.0, f64::max);
            assert!(worst / a < 2e-4, "t = {t}: profile error {worst:.3e}");
        }
        // Past the normalized extinction time (e^T = 4/3) the run is refused.
        let bad = FlowSpec { horizon: 0.3, ..spec };
        assert!(matches!(evolve(&geom, &bad), Err(LabError::HorizonPastExtinction { .. })));
    }

    #[test]
    fn numerical_flow_rejects_uncertified_data() {
        let spec = FlowSpec {
            kind: FlowKind::NumericalWarped,
            horizon: 0.05,
            slices: 3,
            dt: 1e-4,
            k_norm: 1.0,
            lambda: 0.0,
        };
        // Non-round sphere-like data has no exact length law. Even mode:
        // odd modes are killed by the preset's equator symmetrization.
        let bumpy =
            GeometryPreset::PerturbedSphere { m: 3, a: 1.0, amp: 0.05, mode: 4 }.build(96).unwrap();
        assert!(matches!(
            evolve(&bumpy, &spec),
            Err(LabError::GeometryKindMismatch { .. })
        ));
        // Grids too coarse for the pole fits are refused.
        let tiny = GeometryPreset::Sphere { m: 3, a: 1.0 }.build(16).unwrap();
        assert!(matches!(evolve(&tiny, &spec), Err(LabError::BadParameter { .. })));
    }

    #[test]
    fn numerical_sphere_converges_at_second_order() {
        // Pair refinement (ds, dt) -> (ds/2, dt/4) against the exact round
        // solution; the profile error should drop by about 4.
        let spec = |n: usize, dt: f64| {
            (
                GeometryPreset::Sphere { m: 3, a: 1.0 }.build(n).unwrap(),
                FlowSpec {
                    kind: FlowKind::NumericalWarped,
                    horizon: 0.04,
                    slices: 3,
                    dt,
                    k_norm: 1.0,
                    lambda: 0.0,
                },
            )
        };
        let err = |n: usize, dt: f64| -> f64 {
            let (geom, sp) = spec(n, dt);
            let flow = evolve(&geom, &sp).unwrap();
            let i = flow.times().len() - 1;
            let a = (1.0f64 - 4.0 * 0.04).sqrt();
            let fw = &flow.frame(i).fw;
            (0..=n)
                .map(|j| {
                    let sigma = j as f64 / n as f64;
                    (fw[j] - a * (std::f64::consts::PI * sigma).sin()).abs()
                })
                .fold(0.0, f64::max)
        };
        let coarse = err(96, 8e-5);
        let fine = err(192, 2e-5);
        let ratio = coarse / fine;
        assert!(
            (2.5..8.0).contains(&ratio),
            "refinement ratio {ratio:.2} (coarse {coarse:.3e}, fine {fine:.3e})"
        );
    }

    #[test]
    fn numerical_flat_disk_is_a_fixed_point() {
        let geom = GeometryPreset::Euclidean { m: 4, s_max: 3.0 }.build(96).unwrap();
        let spec = FlowSpec {
            kind: FlowKind::NumericalWarped,
            horizon: 0.5,
            slices: 6,
            dt: 1e-3,
            k_norm: 1.0,
            lambda: 0.0,
        };
        let flow = evolve(&geom, &spec).unwrap();
        let last = flow.frame(5);
        for j in 0..=96 {
            assert_relative_eq!(last.fw[j], geom.warp()[j], epsilon = 1e-9);
            assert_relative_eq!(last.phi[j], 1.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn hypothesis_and_distance_checks_on_flat_flow() {
        let geom = GeometryPreset::Euclidean { m: 3, s_max: 4.0 }.build(128).unwrap();
        let flow = evolve(&geom, &static_spec(9)).unwrap();
        let hyp = check_flow_hypothesis(&flow, Pole::Origin, 10.0);
        assert!(hyp.pass);
        assert!(hyp.sup_norm < 1e-8);

        let rep = check_distance_evolution(&flow, Pole::Origin, 10.0, 1e-7);
        assert!(rep.pass, "min margin {}", rep.min_margin);
        // Flat static flow at d = 1, t = 1, A = 10, m = 3: margin is
        // 0 - 2/1 + 10 = 8.
        let margin = rep.margin_near(&flow, Pole::Origin, 1.0, 1.0);
        assert_relative_eq!(margin, 8.0, max_relative = 1e-6);
    }

    #[test]
    fn lambda_requires_numerical_kind() {
        let spec = FlowSpec { lambda: 0.5, ..static_spec(3) };
        let geom = GeometryPreset::Euclidean { m: 3, s_max: 4.0 }.build(64).unwrap();
        assert!(matches!(evolve(&geom, &spec), Err(LabError::BadParameter { .. })));
    }

    #[test]
    fn normalized_flow_shrinks_flat_disk_conformally() {
        // With Ric = 0 the normalized equations give pure exponential decay
        // e^{-k lambda t / 2} of the metric scale.
        let geom = GeometryPreset::Euclidean { m: 3, s_max: 2.0 }.build(64).unwrap();
        let spec = FlowSpec {
            kind: FlowKind::NumericalWarped,
            horizon: 0.4,
            slices: 5,
            dt: 1e-4,
            k_norm: 2.0,
            lambda: 0.5,
        };
        let flow = evolve(&geom, &spec).unwrap();
        let want = (-2.0 * 0.5 * 0.4 / 2.0f64).exp();
        let frame = flow.frame(4);
        assert_relative_eq!(frame.phi[10], want, max_relative = 1e-12);
        // In normalized coordinates the warp shrinks by the same factor.
        assert_relative_eq!(frame.fw[32], geom.warp()[32] * want, max_relative = 1e-4);
        // Material arc positions contract conformally.
        let pos = flow.material_positions(4);
        assert_relative_eq!(pos[32], 32.0 * geom.spacing() * want, max_relative = 1e-12);
    }
}

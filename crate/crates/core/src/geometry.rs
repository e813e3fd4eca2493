//! Warped-product geometry on a uniform arc-length grid.
//!
//! A geometry is `dr^2 + f(r)^2 g_{S^{m-1}}` sampled at `s_i = i * ds`.
//! Disk-like geometries have one pole at `s = 0` and a free outer boundary;
//! sphere-like geometries have poles at both ends. At a smooth pole the warp
//! factor is odd with unit slope, and curvature stencils exploit exactly
//! that parity.
//!
//! Curvature conventions, with `'` denoting the arc derivative:
//!
//! * radial Ricci eigenvalue: `ric_rad = -(m-1) f''/f`
//! * spherical Ricci eigenvalue: `ric_sph = -f''/f + (m-2)(1 - f'^2)/f^2`
//! * scalar curvature: `r = ric_rad + (m-1) ric_sph`, computed from the two
//!   eigenvalue arrays by that exact expression, so the trace identity holds
//!   bit for bit.

use serde::{Deserialize, Serialize};

use crate::grid::{self, EndRule};
use crate::{ensure_finite, LabError, Result};

/// Smallest supported fiber dimension; the warped reduction degenerates
/// below it.
pub const MIN_DIMENSION: usize = 3;

/// Slack factor in the pole smoothness test `|f(ds)/ds - 1| <= POLE_SLOPE_TOL * ds^2`.
pub const POLE_SLOPE_TOL: f64 = 10.0;

/// Whether the geometry caps off at one end or both.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Topology {
    /// One pole at `s = 0`, outer boundary at `s = s_max`.
    DiskLike,
    /// Poles at `s = 0` and `s = s_max`.
    SphereLike,
}

/// Which pole a geodesic ball is centered on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Pole {
    Origin,
    /// The pole at `s = s_max`; only sphere-like geometries have one.
    Far,
}

/// A rotationally symmetric metric sampled on a uniform arc grid.
#[derive(Debug, Clone, PartialEq)]
pub struct RadialGeometry {
    m: usize,
    topology: Topology,
    ds: f64,
    f: Vec<f64>,
}

impl RadialGeometry {
    /// Validates and wraps raw warp samples.
    ///
    /// Requires `m >= 3`, at least 8 grid points, `f = 0` exactly at each
    /// pole, `f > 0` elsewhere, and unit one-sided slope at each pole within
    /// `POLE_SLOPE_TOL * ds^2`. The slope test normalizes the curvature
    /// scale to order one: a geometry that fails it is either non-smooth at
    /// the pole or too coarse to trust.
    pub fn new(m: usize, topology: Topology, ds: f64, f: Vec<f64>) -> Result<Self> {
        if m < MIN_DIMENSION {
            return Err(LabError::DimensionTooSmall { m });
        }
        if !(ds.is_finite() && ds > 0.0) {
            return Err(LabError::BadSpacing { ds });
        }
        if f.len() < 8 {
            return Err(LabError::GridTooSmall { need: 8, got: f.len() });
        }
        let n = f.len() - 1;
        if f[0] != 0.0 {
            return Err(LabError::PoleNotPinned { index: 0, value: f[0] });
        }
        if topology == Topology::SphereLike && f[n] != 0.0 {
            return Err(LabError::PoleNotPinned { index: n, value: f[n] });
        }
        let interior_end = if topology == Topology::SphereLike { n - 1 } else { n };
        for (i, &v) in f.iter().enumerate().take(interior_end + 1).skip(1) {
            ensure_finite("warp sample", v)?;
            if v <= 0.0 {
                return Err(LabError::NonPositiveWarp { index: i, value: v });
            }
        }
        let allowed = POLE_SLOPE_TOL * ds * ds;
        let check_slope = |slope: f64| -> Result<()> {
            let defect = (slope - 1.0).abs();
            if defect > allowed {
                Err(LabError::PoleSlope { slope, defect, allowed })
            } else {
                Ok(())
            }
        };
        check_slope(f[1] / ds)?;
        if topology == Topology::SphereLike {
            check_slope(f[n - 1] / ds)?;
        }
        Ok(Self { m, topology, ds, f })
    }

    pub fn dimension(&self) -> usize {
        self.m
    }

    pub fn topology(&self) -> Topology {
        self.topology
    }

    pub fn spacing(&self) -> f64 {
        self.ds
    }

    /// Number of grid intervals.
    pub fn intervals(&self) -> usize {
        self.f.len() - 1
    }

    /// Number of grid points.
    pub fn len(&self) -> usize {
        self.f.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn s_max(&self) -> f64 {
        (self.f.len() - 1) as f64 * self.ds
    }

    /// Arc coordinate of node `i`.
    pub fn s(&self, i: usize) -> f64 {
        i as f64 * self.ds
    }

    pub fn warp(&self) -> &[f64] {
        &self.f
    }

    /// Warp factor at an arbitrary arc position (cubic interpolation).
    pub fn warp_at(&self, s: f64) -> f64 {
        grid::cubic_eval(&self.f, self.ds, s)
    }

    /// Distance from the given pole to node `i`; the arc coordinate is an
    /// exact distance because radial curves are minimizing here.
    pub fn distance_from_pole(&self, center: Pole, i: usize) -> f64 {
        match center {
            Pole::Origin => self.s(i),
            Pole::Far => self.s_max() - self.s(i),
        }
    }

    /// End rule seen by derivative stencils at the right end.
    pub fn right_rule_odd(&self) -> EndRule {
        match self.topology {
            Topology::DiskLike => EndRule::OneSided,
            Topology::SphereLike => EndRule::OddPole,
        }
    }

    /// Area density of the distance sphere at each node: `sigma_{m-1} f^{m-1}`.
    pub fn volume_density(&self) -> Vec<f64> {
        let sigma = sphere_area_constant(self.m);
        self.f.iter().map(|&v| sigma * v.powi(self.m as i32 - 1)).collect()
    }

    /// Total volume of the manifold (sphere-like) or of the truncated disk.
    pub fn total_volume(&self) -> f64 {
        let sigma = sphere_area_constant(self.m);
        let p = self.m as i32 - 1;
        grid::gl3_integrate(0.0, self.s_max(), self.ds, |s| {
            sigma * grid::cubic_eval(&self.f, self.ds, s).powi(p)
        })
    }
}

/// Pointwise curvature data attached to a geometry's grid.
#[derive(Debug, Clone, PartialEq)]
pub struct CurvatureFields {
    /// Radial derivative of the warp factor.
    pub f_prime: Vec<f64>,
    /// Ricci eigenvalue in the radial direction.
    pub ric_rad: Vec<f64>,
    /// Ricci eigenvalue in the spherical directions.
    pub ric_sph: Vec<f64>,
    /// Scalar curvature, `ric_rad + (m-1) ric_sph` exactly.
    pub r: Vec<f64>,
}

impl CurvatureFields {
    /// Largest Ricci eigenvalue magnitude at node `i`.
    pub fn ricci_norm(&self, i: usize) -> f64 {
        self.ric_rad[i].abs().max(self.ric_sph[i].abs())
    }

    /// Smallest Ricci eigenvalue at node `i`.
    pub fn ricci_min(&self, i: usize) -> f64 {
        self.ric_rad[i].min(self.ric_sph[i])
    }
}

/// Curvature of raw warp samples under explicit end rules.
///
/// No pole repair is applied: with a pole end rule the returned eigenvalues
/// at that node are meaningless (0/0) and callers overwrite them. Use
/// [`compute_curvature`] for validated geometries; this entry point exists
/// for pole-free fixtures (tubes) and gauge-grid data.
pub fn curvature_from_samples(
    m: usize,
    ds: f64,
    f: &[f64],
    left: EndRule,
    right: EndRule,
) -> CurvatureFields {
    let fp = grid::deriv1(f, ds, left, right);
    let fpp = grid::deriv2(f, ds, left, right);
    let n = f.len() - 1;
    let mut ric_rad = vec![0.0; f.len()];
    let mut ric_sph = vec![0.0; f.len()];
    for i in 0..=n {
        let at_pole = (i == 0 && left != EndRule::OneSided)
            || (i == n && right != EndRule::OneSided);
        if at_pole {
            continue;
        }
        ric_rad[i] = -(m as f64 - 1.0) * fpp[i] / f[i];
        ric_sph[i] = -fpp[i] / f[i]
            + (m as f64 - 2.0) * (1.0 - fp[i] * fp[i]) / (f[i] * f[i]);
    }
    let r: Vec<f64> = ric_rad
        .iter()
        .zip(&ric_sph)
        .map(|(&a, &b)| a + (m as f64 - 1.0) * b)
        .collect();
    CurvatureFields { f_prime: fp, ric_rad, ric_sph, r }
}

/// Curvature of a validated geometry, with pole values recovered by
/// even-parity extrapolation from the two nearest interior nodes.
pub fn compute_curvature(geom: &RadialGeometry) -> CurvatureFields {
    let mut c = curvature_from_samples(
        geom.m,
        geom.ds,
        &geom.f,
        EndRule::OddPole,
        geom.right_rule_odd(),
    );
    let n = geom.f.len() - 1;
    let m1 = geom.m as f64 - 1.0;
    c.ric_rad[0] = grid::pole_extrapolate(c.ric_rad[1], c.ric_rad[2]);
    c.ric_sph[0] = grid::pole_extrapolate(c.ric_sph[1], c.ric_sph[2]);
    c.r[0] = c.ric_rad[0] + m1 * c.ric_sph[0];
    if geom.topology == Topology::SphereLike {
        c.ric_rad[n] = grid::pole_extrapolate(c.ric_rad[n - 1], c.ric_rad[n - 2]);
        c.ric_sph[n] = grid::pole_extrapolate(c.ric_sph[n - 1], c.ric_sph[n - 2]);
        c.r[n] = c.ric_rad[n] + m1 * c.ric_sph[n];
    }
    c
}

/// A metric ball about a pole.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeodesicBall {
    pub center: Pole,
    pub radius: f64,
}

impl GeodesicBall {
    /// Validates the ball against a geometry. Radius 0 is admitted as the
    /// degenerate ball so that ratio limits can be stated continuously.
    pub fn validated(self, geom: &RadialGeometry) -> Result<Self> {
        if self.center == Pole::Far && geom.topology != Topology::SphereLike {
            return Err(LabError::NoFarPole);
        }
        ensure_finite("ball radius", self.radius)?;
        if self.radius < 0.0 || self.radius > geom.s_max() * (1.0 + 1e-12) {
            return Err(LabError::BadBallRadius { radius: self.radius, max: geom.s_max() });
        }
        Ok(self)
    }

    pub fn origin(radius: f64) -> Self {
        GeodesicBall { center: Pole::Origin, radius }
    }
}

/// Volume of the unit ball in Euclidean m-space, by the two-step recursion
/// `omega_m = omega_{m-2} * 2 pi / m`; avoids the Gamma function entirely.
pub fn unit_ball_constant(m: usize) -> f64 {
    match m {
        0 => 1.0,
        1 => 2.0,
        _ => unit_ball_constant(m - 2) * 2.0 * std::f64::consts::PI / m as f64,
    }
}

/// Area of the unit (m-1)-sphere, `m * omega_m`.
pub fn sphere_area_constant(m: usize) -> f64 {
    m as f64 * unit_ball_constant(m)
}

/// Volume of a geodesic ball: integral of `sigma_{m-1} f^{m-1}` from the
/// center pole, with cubic reconstruction of the warp between nodes.
pub fn ball_volume(geom: &RadialGeometry, ball: &GeodesicBall) -> Result<f64> {
    let ball = ball.validated(geom)?;
    if ball.radius == 0.0 {
        return Ok(0.0);
    }
    let sigma = sphere_area_constant(geom.m);
    let p = geom.m as i32 - 1;
    let s_max = geom.s_max();
    let rho = ball.radius.min(s_max);
    let value = grid::gl3_integrate(0.0, rho, geom.ds, |t| {
        let s = match ball.center {
            Pole::Origin => t,
            Pole::Far => s_max - t,
        };
        sigma * grid::cubic_eval(&geom.f, geom.ds, s).powi(p)
    });
    Ok(value)
}

/// Euclidean-normalized volume ratio `|B(rho)| / (omega_m rho^m)`;
/// continuously extended to 1 at `rho = 0`.
pub fn volume_ratio(geom: &RadialGeometry, ball: &GeodesicBall) -> Result<f64> {
    let ball = ball.validated(geom)?;
    if ball.radius == 0.0 {
        return Ok(1.0);
    }
    let vol = ball_volume(geom, &ball)?;
    Ok(vol / (unit_ball_constant(geom.m) * ball.radius.powi(geom.m as i32)))
}

/// Closed-form model geometries.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "preset", rename_all = "kebab-case")]
pub enum GeometryPreset {
    /// Flat disk: `f = s` on `[0, s_max]`.
    Euclidean { m: usize, s_max: f64 },
    /// Round sphere of radius `a`: `f = a sin(s/a)` on `[0, pi a]`.
    Sphere { m: usize, a: f64 },
    /// Round sphere with a smooth even-mode warp perturbation
    /// `f = a sin(x) (1 + amp sin^2(x) cos(mode x))`, `x = s/a`, then
    /// symmetrized about the equator. The `sin^2` factor keeps both poles
    /// smooth with unit slope; odd modes cancel under symmetrization, so
    /// meaningful perturbations use even `mode`.
    PerturbedSphere { m: usize, a: f64, amp: f64, mode: u32 },
}

impl GeometryPreset {
    /// Dimension of the preset.
    pub fn dimension(&self) -> usize {
        match *self {
            GeometryPreset::Euclidean { m, .. }
            | GeometryPreset::Sphere { m, .. }
            | GeometryPreset::PerturbedSphere { m, .. } => m,
        }
    }

    /// Builds the preset on `n` grid intervals.
    pub fn build(&self, n: usize) -> Result<RadialGeometry> {
        match *self {
            GeometryPreset::Euclidean { m, s_max } => {
                ensure_finite("s_max", s_max)?;
                if s_max <= 0.0 {
                    return Err(LabError::BadParameter {
                        what: "euclidean s_max",
                        expected: "> 0".into(),
                        got: format!("{s_max}"),
                    });
                }
                let ds = s_max / n as f64;
                let f = (0..=n).map(|i| i as f64 * ds).collect();
                RadialGeometry::new(m, Topology::DiskLike, ds, f)
            }
            GeometryPreset::Sphere { m, a } => {
                ensure_finite("sphere radius", a)?;
                if a <= 0.0 {
                    return Err(LabError::BadParameter {
                        what: "sphere radius",
                        expected: "> 0".into(),
                        got: format!("{a}"),
                    });
                }
                let ds = std::f64::consts::PI * a / n as f64;
                let mut f: Vec<f64> =
                    (0..=n).map(|i| a * (i as f64 * ds / a).sin()).collect();
                f[n] = 0.0;
                RadialGeometry::new(m, Topology::SphereLike, ds, f)
            }
            GeometryPreset::PerturbedSphere { m, a, amp, mode } => {
                ensure_finite("sphere radius", a)?;
                ensure_finite("perturbation amplitude", amp)?;
                if a <= 0.0 || amp.abs() > 0.5 {
                    return Err(LabError::BadParameter {
                        what: "perturbed sphere",
                        expected: "a > 0 and |amp| <= 0.5".into(),
                        got: format!("a = {a}, amp = {amp}"),
                    });
                }
                let ds = std::f64::consts::PI * a / n as f64;
                let shape = |x: f64| {
                    a * x.sin() * (1.0 + amp * x.sin().powi(2) * (mode as f64 * x).cos())
                };
                let raw: Vec<f64> = (0..=n).map(|i| shape(i as f64 * ds / a)).collect();
                // Symmetrize about the equator so both poles see the same jet.
                let mut f: Vec<f64> =
                    (0..=n).map(|i| 0.5 * (raw[i] + raw[n - i])).collect();
                f[0] = 0.0;
                f[n] = 0.0;
                RadialGeometry::new(m, Topology::SphereLike, ds, f)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn unit_ball_constants_match_low_dimensions() {
        assert_relative_eq!(unit_ball_constant(2), std::f64::consts::PI, max_relative = 1e-15);
        assert_relative_eq!(
            unit_ball_constant(3),
            4.0 * std::f64::consts::PI / 3.0,
            max_relative = 1e-15
        );
        assert_relative_eq!(
            unit_ball_constant(4),
            std::f64::consts::PI * std::f64::consts::PI / 2.0,
            max_relative = 1e-15
        );
        assert_relative_eq!(
            sphere_area_constant(3),
            4.0 * std::f64::consts::PI,
            max_relative = 1e-15
        );
    }

    #[test]
    fn flat_disk_curvature_vanishes() {
        let geom = GeometryPreset::Euclidean { m: 3, s_max: 4.0 }.build(512).unwrap();
        let c = compute_curvature(&geom);
        for i in 0..geom.len() {
            assert!(c.r[i].abs() < 1e-9, "R[{i}] = {}", c.r[i]);
            assert!(c.ric_rad[i].abs() < 1e-9);
            assert!(c.ric_sph[i].abs() < 1e-9);
        }
    }

    #[test]
    fn trace_identity_is_exact() {
        let geom = GeometryPreset::PerturbedSphere { m: 4, a: 1.3, amp: 0.2, mode: 2 }
            .build(300)
            .unwrap();
        let c = compute_curvature(&geom);
        for i in 0..geom.len() {
            let recomputed = c.ric_rad[i] + 3.0 * c.ric_sph[i];
            assert_eq!(c.r[i].to_bits(), recomputed.to_bits(), "node {i}");
        }
    }

    #[test]
    fn cylinder_fixture_matches_closed_form() {
        let m = 5;
        let a = 0.7;
        let n = 64;
        let f = vec![a; n + 1];
        let c = curvature_from_samples(m, 0.05, &f, EndRule::OneSided, EndRule::OneSided);
        for i in 0..=n {
            assert!(c.ric_rad[i].abs() < 1e-9);
            assert_relative_eq!(c.ric_sph[i], (m as f64 - 2.0) / (a * a), max_relative = 1e-9);
        }
    }

    #[test]
    fn rejects_bad_warp_data() {
        let err = RadialGeometry::new(2, Topology::DiskLike, 0.1, vec![0.0; 16]);
        assert!(matches!(err, Err(LabError::DimensionTooSmall { .. })));

        let mut f: Vec<f64> = (0..=16).map(|i| i as f64 * 0.1).collect();
        f[0] = 0.05;
        let err = RadialGeometry::new(3, Topology::DiskLike, 0.1, f);
        assert!(matches!(err, Err(LabError::PoleNotPinned { .. })));

        let mut f: Vec<f64> = (0..=16).map(|i| i as f64 * 0.1).collect();
        f[7] = -0.1;
        let err = RadialGeometry::new(3, Topology::DiskLike, 0.1, f);
        assert!(matches!(err, Err(LabError::NonPositiveWarp { index: 7, .. })));

        // Cone of slope 2 at the pole must be rejected.
        let f: Vec<f64> = (0..=16).map(|i| 2.0 * i as f64 * 0.1).collect();
        let err = RadialGeometry::new(3, Topology::DiskLike, 0.1, f);
        assert!(matches!(err, Err(LabError::PoleSlope { .. })));
    }

    #[test]
    fn euclidean_unit_ball_volume_is_exact() {
        let geom = GeometryPreset::Euclidean { m: 3, s_max: 2.0 }.build(256).unwrap();
        let vol = ball_volume(&geom, &GeodesicBall::origin(1.0)).unwrap();
        assert_relative_eq!(vol, 4.0 * std::f64::consts::PI / 3.0, max_relative = 1e-12);
        let ratio = volume_ratio(&geom, &GeodesicBall::origin(1.7)).unwrap();
        assert_relative_eq!(ratio, 1.0, max_relative = 1e-12);
    }

    #[test]
    fn sphere_total_volume_matches_closed_form() {
        let a = 1.4;
        let geom = GeometryPreset::Sphere { m: 3, a }.build(1024).unwrap();
        // |S^3(a)| = 2 pi^2 a^3.
        let want = 2.0 * std::f64::consts::PI.powi(2) * a * a * a;
        assert_relative_eq!(geom.total_volume(), want, max_relative = 1e-10);
        let half = ball_volume(&geom, &GeodesicBall::origin(geom.s_max() / 2.0)).unwrap();
        assert_relative_eq!(half, want / 2.0, max_relative = 1e-10);
        let far = ball_volume(
            &geom,
            &GeodesicBall { center: Pole::Far, radius: geom.s_max() / 2.0 },
        )
        .unwrap();
        assert_relative_eq!(far, half, max_relative = 1e-12);
    }

    #[test]
    fn perturbed_sphere_is_symmetric_and_smooth() {
        let geom = GeometryPreset::PerturbedSphere { m: 3, a: 1.0, amp: 0.3, mode: 2 }
            .build(400)
            .unwrap();
        let n = geom.intervals();
        for i in 0..=n {
            assert_eq!(geom.warp()[i], geom.warp()[n - i], "symmetry at {i}");
        }
        // Even mode survives symmetrization: the shape must differ from round.
        let round = GeometryPreset::Sphere { m: 3, a: 1.0 }.build(400).unwrap();
        let dev: f64 = (0..=n)
            .map(|i| (geom.warp()[i] - round.warp()[i]).abs())
            .fold(0.0, f64::max);
        assert!(dev > 0.05, "perturbation washed out: {dev}");
    }
}

//! Independent oracles for the entropy minimizer.
//!
//! The finite-element solver is checked against a shooting method for the
//! radial Euler-Lagrange equation on the unit ball: an RK4 integrator walks
//! the ODE out from a series expansion at the pole, and bisection on the
//! multiplier places the first zero at the boundary. The two constructions
//! share no discretization machinery.

use entropylab_core::entropy::{minimize_mu, AField, Domain, MuConfig};
use entropylab_core::geometry::{GeometryPreset, RadialGeometry};

fn euclidean(s_max: f64, n: usize) -> RadialGeometry {
    GeometryPreset::Euclidean { m: 3, s_max }.build(n).unwrap()
}

/// `phi log phi` extended continuously through zero.
fn plogp(p: f64) -> f64 {
    if p == 0.0 {
        0.0
    } else {
        p * p.abs().ln()
    }
}

/// Integrates `phi'' = -(2/r) phi' - (theta phi + 2 phi log phi)/4` from a
/// pole series with `phi(0) = 1` and returns `(phi, phi')` on a uniform grid
/// over `[r0, 1]`.
fn shoot(theta: f64, n: usize) -> Vec<(f64, f64)> {
    let r0 = 1e-3;
    let alpha = -theta / 24.0;
    let beta = -alpha * (theta + 2.0) / 80.0;
    let mut phi = 1.0 + alpha * r0 * r0 + beta * r0.powi(4);
    let mut dphi = 2.0 * alpha * r0 + 4.0 * beta * r0.powi(3);
    let h = (1.0 - r0) / n as f64;
    let rhs = |r: f64, p: f64, dp: f64| -> f64 {
        -(2.0 / r) * dp - (theta * p + 2.0 * plogp(p)) / 4.0
    };
    let mut out = Vec::with_capacity(n + 1);
    out.push((phi, dphi));
    for i in 0..n {
        let r = r0 + i as f64 * h;
        let (k1p, k1d) = (dphi, rhs(r, phi, dphi));
        let (k2p, k2d) = (
            dphi + 0.5 * h * k1d,
            rhs(r + 0.5 * h, phi + 0.5 * h * k1p, dphi + 0.5 * h * k1d),
        );
        let (k3p, k3d) = (
            dphi + 0.5 * h * k2d,
            rhs(r + 0.5 * h, phi + 0.5 * h * k2p, dphi + 0.5 * h * k2d),
        );
        let (k4p, k4d) = (dphi + h * k3d, rhs(r + h, phi + h * k3p, dphi + h * k3d));
        phi += h / 6.0 * (k1p + 2.0 * k2p + 2.0 * k3p + k4p);
        dphi += h / 6.0 * (k1d + 2.0 * k2d + 2.0 * k3d + k4d);
        out.push((phi, dphi));
    }
    out
}

/// Ground state of the unit ball at `tau = 1` by bisection on the
/// multiplier: returns `(mu, normalized profile on the shooting grid)`.
fn shooting_mu(n: usize) -> (f64, Vec<f64>) {
    // phi(1) decreases through zero as theta grows; the linearized problem
    // puts theta near 4 pi^2, and the bracket holds a sign change.
    let mut lo = 20.0;
    let mut hi = 60.0;
    assert!(shoot(lo, n).last().unwrap().0 > 0.0);
    assert!(shoot(hi, n).last().unwrap().0 < 0.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid == lo || mid == hi {
            break;
        }
        if shoot(mid, n).last().unwrap().0 > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let theta = 0.5 * (lo + hi);
    let profile = shoot(theta, n);

    // Simpson over the shooting grid for the mass integral; the unit-mass
    // rescaling psi = phi / sqrt(I) shifts the multiplier by log I.
    let r0 = 1e-3;
    let h = (1.0 - r0) / n as f64;
    let integrand: Vec<f64> = profile
        .iter()
        .enumerate()
        .map(|(i, (p, _))| {
            let r = r0 + i as f64 * h;
            4.0 * std::f64::consts::PI * r * r * p * p
        })
        .collect();
    let mut mass = 0.0;
    for i in (0..n).step_by(2) {
        mass += h / 3.0 * (integrand[i] + 4.0 * integrand[i + 1] + integrand[i + 2]);
    }
    // The pole cap [0, r0] under the series start.
    let alpha = -theta / 24.0;
    mass += 4.0 * std::f64::consts::PI * (r0.powi(3) / 3.0 + 2.0 * alpha * r0.powi(5) / 5.0);

    let offset = -3.0 - 1.5 * (4.0 * std::f64::consts::PI).ln();
    let mu = theta + mass.ln() + offset;
    let scale = mass.sqrt().recip();
    (mu, profile.iter().map(|(p, _)| p * scale).collect())
}

#[test]
fn mu_on_unit_ball_matches_shooting_oracle() {
    let (oracle_mu, oracle_profile) = shooting_mu(8192);
    // Frozen from this oracle at n = 8192; doubling n moves it below 1e-10.
    assert!(
        (oracle_mu - 33.351_357_5).abs() < 5e-6,
        "oracle drifted: {oracle_mu}"
    );

    let geom = euclidean(1.0, 1280);
    let res = minimize_mu(&geom, &AField::Zero, &Domain::Whole, 1.0, &MuConfig::default())
        .unwrap();
    assert!(res.converged, "solver residual {}", res.el_residual);
    assert!(
        (res.mu - oracle_mu).abs() < 1e-5,
        "solver {} vs oracle {oracle_mu}",
        res.mu
    );

    // The minimizer profile itself matches the normalized shooting solution.
    let r0 = 1e-3;
    let hs = (1.0 - r0) / 8192.0;
    let peak = oracle_profile[0];
    let mut worst = 0.0f64;
    for (i, node) in res.minimizer.phi().iter().enumerate() {
        let r = geom.s(i);
        if r < r0 || r > 1.0 - hs {
            continue;
        }
        let k = ((r - r0) / hs) as usize;
        let frac = (r - r0) / hs - k as f64;
        let want = oracle_profile[k] * (1.0 - frac) + oracle_profile[k + 1] * frac;
        worst = worst.max((node - want).abs());
    }
    assert!(worst < 1e-3 * peak, "profile deviation {worst} of peak {peak}");
}

#[test]
fn mu_scales_parabolically_against_oracle() {
    // mu(B(rho sqrt(tau)), tau) = mu(B(rho), 1) pins the tau wiring to the
    // same frozen oracle value without a second minimization basis.
    let (oracle_mu, _) = shooting_mu(4096);
    let tau = 0.37f64;
    let geom = euclidean(tau.sqrt(), 960);
    let res = minimize_mu(&geom, &AField::Zero, &Domain::Whole, tau, &MuConfig::default())
        .unwrap();
    assert!(res.converged);
    assert!(
        (res.mu - oracle_mu).abs() < 2e-5,
        "solver {} vs oracle {oracle_mu}",
        res.mu
    );
}

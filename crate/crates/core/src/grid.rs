//! Uniform-grid kernels: finite-difference stencils, quadrature, cubic
//! interpolation, and tridiagonal solves.
//!
//! Everything downstream assumes a uniform grid `s_i = i * ds`. Pole-aware
//! derivative stencils extend the data across a pole by parity (the warp
//! factor is odd, scalar geometric quantities are even), which keeps the
//! centered five-point stencils fourth-order accurate up to the boundary.
//! Away from poles one-sided fourth-order stencils are used instead, so a
//! single refinement study applies uniformly over the grid.

/// Gauss-Legendre nodes on [0, 1], three points.
pub const GL3_NODES: [f64; 3] = [
    0.112_701_665_379_258_3,
    0.5,
    0.887_298_334_620_741_7,
];

/// Gauss-Legendre weights on [0, 1] matching [`GL3_NODES`].
pub const GL3_WEIGHTS: [f64; 3] = [
    0.277_777_777_777_777_8,
    0.444_444_444_444_444_4,
    0.277_777_777_777_777_8,
];

/// How to close a derivative stencil at an end of the sample array.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EndRule {
    /// Data continues oddly across the end point (warp factor at a pole).
    OddPole,
    /// Data continues evenly across the end point (scalar fields at a pole).
    EvenPole,
    /// No symmetry; fall back to one-sided stencils of the same order.
    OneSided,
}

/// Ghost value `j` steps beyond the left end under an extension rule.
#[inline]
fn ghost_left(f: &[f64], j: usize, rule: EndRule) -> f64 {
    match rule {
        EndRule::OddPole => -f[j],
        EndRule::EvenPole => f[j],
        EndRule::OneSided => unreachable!("one-sided ends never read ghosts"),
    }
}

#[inline]
fn ghost_right(f: &[f64], j: usize, rule: EndRule) -> f64 {
    let n = f.len() - 1;
    match rule {
        EndRule::OddPole => -f[n - j],
        EndRule::EvenPole => f[n - j],
        EndRule::OneSided => unreachable!("one-sided ends never read ghosts"),
    }
}

/// Sample with parity ghosts: index may be -2..=(len-1)+2.
#[inline]
fn sample(f: &[f64], i: isize, left: EndRule, right: EndRule) -> f64 {
    let n = f.len() as isize - 1;
    if i < 0 {
        ghost_left(f, (-i) as usize, left)
    } else if i > n {
        ghost_right(f, (i - n) as usize, right)
    } else {
        f[i as usize]
    }
}

/// First derivative on a uniform grid, fourth order, pole-aware.
///
/// `f.len()` must be at least 6.
pub fn deriv1(f: &[f64], ds: f64, left: EndRule, right: EndRule) -> Vec<f64> {
    assert!(f.len() >= 6, "deriv1 needs at least 6 samples");
    let n = f.len() - 1;
    let mut out = vec![0.0; f.len()];
    for i in 0..=n {
        let use_left_onesided = left == EndRule::OneSided && i < 2;
        let use_right_onesided = right == EndRule::OneSided && i + 2 > n;
        out[i] = if use_left_onesided {
            match i {
                0 => (-25.0 * f[0] + 48.0 * f[1] - 36.0 * f[2] + 16.0 * f[3] - 3.0 * f[4])
                    / (12.0 * ds),
                _ => (-3.0 * f[0] - 10.0 * f[1] + 18.0 * f[2] - 6.0 * f[3] + f[4]) / (12.0 * ds),
            }
        } else if use_right_onesided {
            if i == n {
                (25.0 * f[n] - 48.0 * f[n - 1] + 36.0 * f[n - 2] - 16.0 * f[n - 3]
                    + 3.0 * f[n - 4])
                    / (12.0 * ds)
            } else {
                (3.0 * f[n] + 10.0 * f[n - 1] - 18.0 * f[n - 2] + 6.0 * f[n - 3] - f[n - 4])
                    / (12.0 * ds)
            }
        } else {
            let i = i as isize;
            let fm2 = sample(f, i - 2, left, right);
            let fm1 = sample(f, i - 1, left, right);
            let fp1 = sample(f, i + 1, left, right);
            let fp2 = sample(f, i + 2, left, right);
            (fm2 - 8.0 * fm1 + 8.0 * fp1 - fp2) / (12.0 * ds)
        };
    }
    out
}

/// Second derivative on a uniform grid, fourth order, pole-aware.
///
/// `f.len()` must be at least 6.
pub fn deriv2(f: &[f64], ds: f64, left: EndRule, right: EndRule) -> Vec<f64> {
    assert!(f.len() >= 6, "deriv2 needs at least 6 samples");
    let n = f.len() - 1;
    let h2 = 12.0 * ds * ds;
    let mut out = vec![0.0; f.len()];
    for i in 0..=n {
        let use_left_onesided = left == EndRule::OneSided && i < 2;
        let use_right_onesided = right == EndRule::OneSided && i + 2 > n;
        out[i] = if use_left_onesided {
            match i {
                0 => (45.0 * f[0] - 154.0 * f[1] + 214.0 * f[2] - 156.0 * f[3] + 61.0 * f[4]
                    - 10.0 * f[5])
                    / h2,
                _ => (10.0 * f[0] - 15.0 * f[1] - 4.0 * f[2] + 14.0 * f[3] - 6.0 * f[4] + f[5])
                    / h2,
            }
        } else if use_right_onesided {
            if i == n {
                (45.0 * f[n] - 154.0 * f[n - 1] + 214.0 * f[n - 2] - 156.0 * f[n - 3]
                    + 61.0 * f[n - 4]
                    - 10.0 * f[n - 5])
                    / h2
            } else {
                (10.0 * f[n] - 15.0 * f[n - 1] - 4.0 * f[n - 2] + 14.0 * f[n - 3]
                    - 6.0 * f[n - 4]
                    + f[n - 5])
                    / h2
            }
        } else {
            let i = i as isize;
            let fm2 = sample(f, i - 2, left, right);
            let fm1 = sample(f, i - 1, left, right);
            let f0 = sample(f, i, left, right);
            let fp1 = sample(f, i + 1, left, right);
            let fp2 = sample(f, i + 2, left, right);
            (-fm2 + 16.0 * fm1 - 30.0 * f0 + 16.0 * fp1 - fp2) / h2
        };
    }
    out
}

/// Even-parity value at a pole recovered from the two nearest interior
/// samples; exact for quartics in the arc coordinate.
#[inline]
pub fn pole_extrapolate(q1: f64, q2: f64) -> f64 {
    (4.0 * q1 - q2) / 3.0
}

/// Cubic Lagrange interpolation of uniform samples at an arbitrary point.
///
/// `x` is clamped to the sample range; the four-point window is shifted
/// inward near the ends, keeping O(ds^4) accuracy everywhere.
pub fn cubic_eval(f: &[f64], ds: f64, x: f64) -> f64 {
    let (base, xi) = cubic_window(f.len(), ds, x);
    let mut acc = 0.0;
    for (k, &fk) in f[base..base + 4].iter().enumerate() {
        let mut lk = 1.0;
        for j in 0..4 {
            if j != k {
                lk *= (xi - j as f64) / (k as f64 - j as f64);
            }
        }
        acc += fk * lk;
    }
    acc
}

/// Derivative of the cubic Lagrange interpolant at an arbitrary point.
pub fn cubic_eval_deriv(f: &[f64], ds: f64, x: f64) -> f64 {
    let (base, xi) = cubic_window(f.len(), ds, x);
    let mut acc = 0.0;
    for (k, &fk) in f[base..base + 4].iter().enumerate() {
        // d/dxi of the Lagrange basis via the product rule.
        let mut dlk = 0.0;
        for i in 0..4 {
            if i == k {
                continue;
            }
            let mut term = 1.0 / (k as f64 - i as f64);
            for j in 0..4 {
                if j != k && j != i {
                    term *= (xi - j as f64) / (k as f64 - j as f64);
                }
            }
            dlk += term;
        }
        acc += fk * dlk;
    }
    acc / ds
}

#[inline]
fn cubic_window(len: usize, ds: f64, x: f64) -> (usize, f64) {
    assert!(len >= 4, "cubic interpolation needs at least 4 samples");
    let n = len - 1;
    let t = (x / ds).clamp(0.0, n as f64);
    let cell = (t.floor() as usize).min(n - 1);
    let base = cell.saturating_sub(1).min(n - 3);
    (base, t - base as f64)
}

/// Integrates `eval` over `[a, b]` with three-point Gauss panels split at
/// the grid nodes, so integrands built from cubic interpolants are handled
/// at their full accuracy. `a <= b` is required; grid nodes are `i * ds`.
pub fn gl3_integrate(a: f64, b: f64, ds: f64, mut eval: impl FnMut(f64) -> f64) -> f64 {
    debug_assert!(b >= a);
    if b <= a {
        return 0.0;
    }
    let mut total = 0.0;
    let mut lo = a;
    // First grid node strictly right of `a`.
    let mut k = (a / ds).floor() as i64 + 1;
    loop {
        let node = k as f64 * ds;
        let hi = node.min(b);
        if hi > lo {
            let len = hi - lo;
            for q in 0..3 {
                total += GL3_WEIGHTS[q] * len * eval(lo + GL3_NODES[q] * len);
            }
        }
        if hi >= b {
            break;
        }
        lo = hi;
        k += 1;
    }
    total
}

/// Cumulative integral of the cubic interpolant of `f` at every grid node.
///
/// Returns `F` with `F[0] = 0` and `F[i] = integral of f over [0, s_i]`,
/// exact for polynomial samples up to degree three.
pub fn cumulative_integral(f: &[f64], ds: f64) -> Vec<f64> {
    let n = f.len() - 1;
    let mut out = vec![0.0; f.len()];
    for i in 0..n {
        let lo = i as f64 * ds;
        let mut panel = 0.0;
        for q in 0..3 {
            panel += GL3_WEIGHTS[q] * ds * cubic_eval(f, ds, lo + GL3_NODES[q] * ds);
        }
        out[i + 1] = out[i] + panel;
    }
    out
}

/// Cubic Lagrange interpolation through non-uniformly spaced samples.
///
/// `xs` must be strictly increasing; `x` is clamped to its range. Used to
/// invert cumulative arc-length maps, whose node spacing is only mildly
/// non-uniform, so no monotonicity-limiting is needed.
pub fn interp_nonuniform_cubic(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    let n = xs.len() - 1;
    assert!(n >= 3 && ys.len() == xs.len());
    let x = x.clamp(xs[0], xs[n]);
    // partition_point returns the first index with xs[i] > x.
    let cell = xs.partition_point(|&v| v <= x).saturating_sub(1).min(n - 1);
    let base = cell.saturating_sub(1).min(n - 3);
    let xw = &xs[base..base + 4];
    let yw = &ys[base..base + 4];
    let mut acc = 0.0;
    for k in 0..4 {
        let mut lk = 1.0;
        for j in 0..4 {
            if j != k {
                lk *= (x - xw[j]) / (xw[k] - xw[j]);
            }
        }
        acc += yw[k] * lk;
    }
    acc
}

/// Trapezoid rule over the full sample range.
pub fn trapezoid(f: &[f64], ds: f64) -> f64 {
    if f.len() < 2 {
        return 0.0;
    }
    let inner: f64 = f[1..f.len() - 1].iter().sum();
    ds * (0.5 * (f[0] + f[f.len() - 1]) + inner)
}

/// Solves a tridiagonal system by the Thomas algorithm.
///
/// `lower[0]` and `upper[n-1]` are ignored. Pivots must stay away from
/// zero; the solvers that call this assemble M-matrices, so they do.
pub fn solve_tridiagonal(lower: &[f64], diag: &[f64], upper: &[f64], rhs: &[f64]) -> Vec<f64> {
    let n = diag.len();
    assert!(n > 0 && lower.len() == n && upper.len() == n && rhs.len() == n);
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    c[0] = upper[0] / diag[0];
    d[0] = rhs[0] / diag[0];
    for i in 1..n {
        let denom = diag[i] - lower[i] * c[i - 1];
        debug_assert!(denom != 0.0, "tridiagonal pivot vanished at row {i}");
        c[i] = upper[i] / denom;
        d[i] = (rhs[i] - lower[i] * d[i - 1]) / denom;
    }
    let mut x = d;
    for i in (0..n - 1).rev() {
        x[i] -= c[i] * x[i + 1];
    }
    x
}

/// Multiplies a tridiagonal matrix into a vector.
pub fn tridiagonal_apply(lower: &[f64], diag: &[f64], upper: &[f64], x: &[f64]) -> Vec<f64> {
    let n = diag.len();
    let mut y = vec![0.0; n];
    for i in 0..n {
        let mut acc = diag[i] * x[i];
        if i > 0 {
            acc += lower[i] * x[i - 1];
        }
        if i + 1 < n {
            acc += upper[i] * x[i + 1];
        }
        y[i] = acc;
    }
    y
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn centered_stencils_are_fourth_order_on_sin() {
        let mut errs = Vec::new();
        for &n in &[64usize, 128] {
            let ds = 1.0 / n as f64;
            let f: Vec<f64> = (0..=n).map(|i| (i as f64 * ds).sin()).collect();
            let d1 = deriv1(&f, ds, EndRule::OneSided, EndRule::OneSided);
            let d2 = deriv2(&f, ds, EndRule::OneSided, EndRule::OneSided);
            let mut worst: f64 = 0.0;
            for i in 0..=n {
                let s = i as f64 * ds;
                worst = worst.max((d1[i] - s.cos()).abs());
                worst = worst.max((d2[i] + s.sin()).abs());
            }
            errs.push(worst);
        }
        let order = (errs[0] / errs[1]).log2();
        assert!(order > 3.7, "observed order {order}, errors {errs:?}");
    }

    #[test]
    fn pole_rules_match_analytic_extension() {
        // f = sin(s) is odd about 0 and odd about pi: stencils at both poles
        // must agree with the interior values to fourth order.
        let n = 256;
        let ds = std::f64::consts::PI / n as f64;
        let f: Vec<f64> = (0..=n).map(|i| (i as f64 * ds).sin()).collect();
        let d1 = deriv1(&f, ds, EndRule::OddPole, EndRule::OddPole);
        let d2 = deriv2(&f, ds, EndRule::OddPole, EndRule::OddPole);
        assert_relative_eq!(d1[0], 1.0, max_relative = 1e-8);
        assert_relative_eq!(d1[n], -1.0, max_relative = 1e-8);
        assert!(d2[0].abs() < 1e-8 && d2[n].abs() < 1e-8);

        // cos(s) is even about both ends of [0, pi].
        let g: Vec<f64> = (0..=n).map(|i| (i as f64 * ds).cos()).collect();
        let g1 = deriv1(&g, ds, EndRule::EvenPole, EndRule::EvenPole);
        assert!(g1[0].abs() < 1e-8 && g1[n].abs() < 1e-8);
    }

    #[test]
    fn one_sided_stencils_exact_on_quartics() {
        let n = 12;
        let ds = 0.37;
        let f: Vec<f64> = (0..=n)
            .map(|i| {
                let s = i as f64 * ds;
                1.5 - 2.0 * s + 0.25 * s * s + 0.125 * s * s * s - 0.05 * s * s * s * s
            })
            .collect();
        let d1 = deriv1(&f, ds, EndRule::OneSided, EndRule::OneSided);
        let d2 = deriv2(&f, ds, EndRule::OneSided, EndRule::OneSided);
        for i in 0..=n {
            let s = i as f64 * ds;
            let want1 = -2.0 + 0.5 * s + 0.375 * s * s - 0.2 * s * s * s;
            let want2 = 0.5 + 0.75 * s - 0.6 * s * s;
            assert_relative_eq!(d1[i], want1, max_relative = 1e-10, epsilon = 1e-10);
            assert_relative_eq!(d2[i], want2, max_relative = 1e-9, epsilon = 1e-9);
        }
    }

    #[test]
    fn cubic_interpolation_reproduces_cubics_exactly() {
        let n = 9;
        let ds = 0.21;
        let poly = |s: f64| 0.3 + 1.7 * s - 0.9 * s * s + 0.4 * s * s * s;
        let dpoly = |s: f64| 1.7 - 1.8 * s + 1.2 * s * s;
        let f: Vec<f64> = (0..=n).map(|i| poly(i as f64 * ds)).collect();
        for k in 0..50 {
            let x = 0.041 * k as f64 * ds * n as f64 / 2.0;
            let x = x.min(n as f64 * ds);
            assert_relative_eq!(cubic_eval(&f, ds, x), poly(x), max_relative = 1e-12);
            assert_relative_eq!(cubic_eval_deriv(&f, ds, x), dpoly(x), max_relative = 1e-10);
        }
    }

    #[test]
    fn gl3_handles_partial_intervals() {
        // integral of s^2 over [0.3, 1.7] with ds = 0.5 panels.
        let got = gl3_integrate(0.3, 1.7, 0.5, |s| s * s);
        let want = (1.7f64.powi(3) - 0.3f64.powi(3)) / 3.0;
        assert_relative_eq!(got, want, max_relative = 1e-14);
    }

    #[test]
    fn cumulative_integral_exact_on_cubics() {
        let n = 16;
        let ds = 0.125;
        let f: Vec<f64> = (0..=n)
            .map(|i| {
                let s = i as f64 * ds;
                2.0 - s + 3.0 * s * s - 0.5 * s * s * s
            })
            .collect();
        let cum = cumulative_integral(&f, ds);
        for i in 0..=n {
            let s = i as f64 * ds;
            let want = 2.0 * s - s * s / 2.0 + s * s * s - s * s * s * s / 8.0;
            assert_relative_eq!(cum[i], want, max_relative = 1e-12, epsilon = 1e-13);
        }
    }

    #[test]
    fn thomas_solves_random_dominant_system() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let n = 40;
        let lower: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let upper: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let diag: Vec<f64> = (0..n).map(|_| rng.gen_range(3.0..4.0)).collect();
        let x_true: Vec<f64> = (0..n).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let rhs = tridiagonal_apply(&lower, &diag, &upper, &x_true);
        let x = solve_tridiagonal(&lower, &diag, &upper, &rhs);
        for i in 0..n {
            assert_relative_eq!(x[i], x_true[i], max_relative = 1e-12, epsilon = 1e-12);
        }
    }
}

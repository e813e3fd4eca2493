//! Deterministic minimizers shared by the entropy and reduced modules.
//!
//! Two workhorses live here: a safeguarded Barzilai-Borwein step-size rule
//! for projected gradient descent (the entropy ground-state iteration), and
//! a small projected L-BFGS with Armijo backtracking (space-time curve
//! minimization). Both run a fixed, data-independent iteration order so
//! results are reproducible bit for bit.

/// Barzilai-Borwein step-size state.
///
/// Alternates the BB1 and BB2 formulas and clamps the result to
/// `[lo, hi]`; a non-positive curvature pair falls back to the last
/// accepted step. The caller owns the actual descent update.
#[derive(Debug, Clone)]
pub struct BbStep {
    prev_x: Vec<f64>,
    prev_g: Vec<f64>,
    step: f64,
    lo: f64,
    hi: f64,
    k: usize,
}

impl BbStep {
    pub fn new(step0: f64, lo: f64, hi: f64) -> Self {
        assert!(lo > 0.0 && lo <= step0 && step0 <= hi);
        BbStep { prev_x: Vec::new(), prev_g: Vec::new(), step: step0, lo, hi, k: 0 }
    }

    /// Step length to use from `(x, g)`; updates the stored pair.
    pub fn next(&mut self, x: &[f64], g: &[f64]) -> f64 {
        if self.k > 0 {
            let mut ss = 0.0;
            let mut sy = 0.0;
            let mut yy = 0.0;
            for i in 0..x.len() {
                let s = x[i] - self.prev_x[i];
                let y = g[i] - self.prev_g[i];
                ss += s * s;
                sy += s * y;
                yy += y * y;
            }
            if sy > 0.0 {
                // Even k: BB1 = s.s/s.y; odd k: BB2 = s.y/y.y.
                let raw = if self.k % 2 == 0 { ss / sy } else { sy / yy.max(f64::MIN_POSITIVE) };
                if raw.is_finite() {
                    self.step = raw.clamp(self.lo, self.hi);
                }
            }
        }
        self.prev_x.clear();
        self.prev_x.extend_from_slice(x);
        self.prev_g.clear();
        self.prev_g.extend_from_slice(g);
        self.k += 1;
        self.step
    }
}

/// Options for [`lbfgs`].
#[derive(Debug, Clone)]
pub struct LbfgsConfig {
    /// Number of curvature pairs kept for the two-loop recursion.
    pub memory: usize,
    /// Stop when the projected gradient's sup-norm falls below this.
    pub tol_grad: f64,
    pub max_iters: usize,
    /// Armijo sufficient-decrease constant.
    pub armijo: f64,
    /// Backtracking shrink factor.
    pub shrink: f64,
    pub max_line_steps: usize,
}

impl Default for LbfgsConfig {
    fn default() -> Self {
        LbfgsConfig {
            memory: 8,
            tol_grad: 1e-10,
            max_iters: 500,
            armijo: 1e-4,
            shrink: 0.5,
            max_line_steps: 40,
        }
    }
}

/// Outcome of one [`lbfgs`] run.
#[derive(Debug, Clone)]
pub struct LbfgsOutcome {
    pub x: Vec<f64>,
    pub value: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Projected L-BFGS with Armijo backtracking.
///
/// `eval` writes the gradient at `x` into its slice argument and returns the
/// objective; `project` clamps a trial point back into the feasible box (it
/// must be the identity on feasible points). The convergence test uses the
/// projected gradient `x - project(x - g)`, which vanishes exactly at a
/// constrained stationary point. When the two-loop direction fails to give
/// descent the step falls back to steepest descent, so the iteration cannot
/// stall on an indefinite local model.
pub fn lbfgs(
    x0: Vec<f64>,
    cfg: &LbfgsConfig,
    mut eval: impl FnMut(&[f64], &mut [f64]) -> f64,
    project: impl Fn(&mut [f64]),
) -> LbfgsOutcome {
    let n = x0.len();
    let mut x = x0;
    project(&mut x);
    let mut g = vec![0.0; n];
    let mut value = eval(&x, &mut g);
    let mut s_hist: Vec<Vec<f64>> = Vec::new();
    let mut y_hist: Vec<Vec<f64>> = Vec::new();
    let mut rho: Vec<f64> = Vec::new();
    let mut iterations = 0;

    let proj_grad_norm = |x: &[f64], g: &[f64]| -> f64 {
        let mut probe: Vec<f64> = x.iter().zip(g).map(|(xi, gi)| xi - gi).collect();
        project(&mut probe);
        x.iter()
            .zip(&probe)
            .map(|(xi, pi)| (xi - pi).abs())
            .fold(0.0, f64::max)
    };

    let mut grad_norm = proj_grad_norm(&x, &g);
    while iterations < cfg.max_iters && grad_norm > cfg.tol_grad {
        // Two-loop recursion for d = -H g.
        let mut d: Vec<f64> = g.iter().map(|v| -v).collect();
        let mut alpha = vec![0.0; s_hist.len()];
        for i in (0..s_hist.len()).rev() {
            let a = rho[i] * dot(&s_hist[i], &d);
            alpha[i] = a;
            axpy(-a, &y_hist[i], &mut d);
        }
        if let (Some(s), Some(y)) = (s_hist.last(), y_hist.last()) {
            let gamma = dot(s, y) / dot(y, y).max(f64::MIN_POSITIVE);
            d.iter_mut().for_each(|v| *v *= gamma);
        }
        for i in 0..s_hist.len() {
            let b = rho[i] * dot(&y_hist[i], &d);
            axpy(alpha[i] - b, &s_hist[i], &mut d);
        }
        let mut descent = dot(&g, &d);
        if !(descent < 0.0) {
            d = g.iter().map(|v| -v).collect();
            descent = dot(&g, &d);
        }

        // Backtracking on the projected trial point.
        let mut step = 1.0;
        let mut accepted = false;
        let mut x_new = vec![0.0; n];
        let mut g_new = vec![0.0; n];
        let mut value_new = value;
        for _ in 0..cfg.max_line_steps {
            for i in 0..n {
                x_new[i] = x[i] + step * d[i];
            }
            project(&mut x_new);
            value_new = eval(&x_new, &mut g_new);
            if value_new <= value + cfg.armijo * step * descent {
                accepted = true;
                break;
            }
            step *= cfg.shrink;
        }
        if !accepted {
            break;
        }

        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-14 * dot(&y, &y).max(f64::MIN_POSITIVE) {
            if s_hist.len() == cfg.memory {
                s_hist.remove(0);
                y_hist.remove(0);
                rho.remove(0);
            }
            rho.push(1.0 / sy);
            s_hist.push(s);
            y_hist.push(y);
        }
        x = x_new.clone();
        g = g_new.clone();
        value = value_new;
        grad_norm = proj_grad_norm(&x, &g);
        iterations += 1;
    }

    LbfgsOutcome { x, value, grad_norm, iterations, converged: grad_norm <= cfg.tol_grad }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for i in 0..y.len() {
        y[i] += a * x[i];
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn lbfgs_minimizes_quadratic_bowl() {
        // f = sum i*(x_i - 1)^2, unconstrained.
        let out = lbfgs(
            vec![0.0; 12],
            &LbfgsConfig::default(),
            |x, g| {
                let mut f = 0.0;
                for (i, (xi, gi)) in x.iter().zip(g.iter_mut()).enumerate() {
                    let w = (i + 1) as f64;
                    f += w * (xi - 1.0) * (xi - 1.0);
                    *gi = 2.0 * w * (xi - 1.0);
                }
                f
            },
            |_| {},
        );
        assert!(out.converged, "grad norm {}", out.grad_norm);
        for v in &out.x {
            assert_relative_eq!(*v, 1.0, max_relative = 1e-7);
        }
    }

    #[test]
    fn lbfgs_respects_box_projection() {
        // Minimum of (x-2)^2 over x <= 1 sits on the boundary.
        let out = lbfgs(
            vec![0.0],
            &LbfgsConfig::default(),
            |x, g| {
                g[0] = 2.0 * (x[0] - 2.0);
                (x[0] - 2.0) * (x[0] - 2.0)
            },
            |x| x[0] = x[0].min(1.0),
        );
        assert!(out.converged);
        assert_relative_eq!(out.x[0], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn lbfgs_handles_rosenbrock() {
        let out = lbfgs(
            vec![-1.2, 1.0],
            &LbfgsConfig { max_iters: 2000, ..LbfgsConfig::default() },
            |x, g| {
                let (a, b) = (x[0], x[1]);
                g[0] = -400.0 * a * (b - a * a) - 2.0 * (1.0 - a);
                g[1] = 200.0 * (b - a * a);
                100.0 * (b - a * a) * (b - a * a) + (1.0 - a) * (1.0 - a)
            },
            |_| {},
        );
        assert!(out.converged, "iters {} grad {}", out.iterations, out.grad_norm);
        assert_relative_eq!(out.x[0], 1.0, max_relative = 1e-6);
        assert_relative_eq!(out.x[1], 1.0, max_relative = 1e-6);
    }

    #[test]
    fn bb_step_recovers_quadratic_curvature() {
        // On f = c/2 x.x the BB1 step equals 1/c after one update.
        let mut bb = BbStep::new(1e-3, 1e-9, 1e3);
        let c = 40.0;
        let x0 = vec![1.0, 2.0];
        let g0: Vec<f64> = x0.iter().map(|v| c * v).collect();
        let a0 = bb.next(&x0, &g0);
        let x1: Vec<f64> = x0.iter().zip(&g0).map(|(x, g)| x - a0 * g).collect();
        let g1: Vec<f64> = x1.iter().map(|v| c * v).collect();
        let a1 = bb.next(&x1, &g1);
        assert_relative_eq!(a1, 1.0 / c, max_relative = 1e-12);
    }
}

use entropylab_core::flow::{evolve, FlowKind, FlowSpec};
use entropylab_core::geometry::GeometryPreset;
use entropylab_core::grid::{self, EndRule};
use entropylab_core::heat::{
    cell_volumes_at, compute_harnack_fields, solve_conjugate, HeatConfig, TerminalData,
};

fn main() {
    let geom = GeometryPreset::Euclidean { m: 3, s_max: 12.0 }.build(480).unwrap();
    let spec = FlowSpec {
        kind: FlowKind::StaticEuclidean,
        horizon: 0.2,
        slices: 21,
        dt: 0.2,
        k_norm: 1.0,
        lambda: 0.0,
    };
    let flow = evolve(&geom, &spec).unwrap();
    let tau_t = 0.3;
    let i = flow.times().len() - 1;
    let arc = flow.arc_positions(i).to_vec();
    let mut term: Vec<f64> = arc
        .iter()
        .map(|&r| (4.0 * std::f64::consts::PI * tau_t).powf(-1.5) * (-r * r / (4.0 * tau_t)).exp())
        .collect();
    let vol = cell_volumes_at(&flow, flow.times()[i]).unwrap();
    let mass: f64 = vol.iter().zip(&term).map(|(v, u)| v * u).sum();
    term.iter_mut().for_each(|x| *x /= mass);
    let cfg = HeatConfig { substeps: 40, tol_mass: 1e-6 };
    let chs = solve_conjugate(&flow, &term, TerminalData::Gaussian, 0.2, tau_t, &cfg).unwrap();
    let fields = compute_harnack_fields(&flow, &chs, 0.0).unwrap();
    println!("max_u {:.6e}  max_v {:.6e}", fields.max_u, fields.max_v);
    for (k, r) in fields.identity_residual.iter().enumerate() {
        println!("slice {:2}  residual {:.6e}", k + 1, r);
    }
    // Recompute the residual by hand on the worst slice to find the node.
    let worst = fields
        .identity_residual
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
        .unwrap()
        .0
        + 1;
    let i = worst;
    let n = flow.gauge_points() - 1;
    let ds = flow.ds_gauge();
    let dt = chs.times()[1] - chs.times()[0];
    let tau = chs.tau_at(chs.times()[i]);
    let v = &fields.v[i];
    let v_s = grid::deriv1(v, ds, EndRule::EvenPole, EndRule::OneSided);
    let v_ss = grid::deriv2(v, ds, EndRule::EvenPole, EndRule::OneSided);
    let curv = flow.gauge_curvature(i);
    let frame = flow.frame(i);
    let mut best = (0usize, 0.0f64);
    for j in 0..=n {
        let lo = j.saturating_sub(2);
        let hi = (j + 2).min(n);
        let ok = (lo..=hi).all(|k| fields.mask[i][k])
            && fields.mask[i - 1][j]
            && fields.mask[i + 1][j];
        if !ok {
            continue;
        }
        let v_t = (fields.v[i + 1][j] - fields.v[i - 1][j]) / (2.0 * dt);
        let lap_v = if j == 0 {
            3.0 * v_ss[j]
        } else {
            v_ss[j] + 2.0 * (curv.f_prime[j] / frame.fw[j]) * v_s[j]
        };
        let lhs = -v_t - lap_v + curv.r[j] * v[j];
        let f_rr_err = 0.0;
        let _ = f_rr_err;
        let rhs = {
            let u = chs.u_slice(i)[j];
            let a_r = 0.0 + /* placeholder */ 0.0;
            let _ = a_r;
            -2.0 * tau * 0.0 * u
        };
        let res = (lhs - rhs).abs();
        if res > best.1 {
            best = (j, res);
        }
    }
    println!("worst slice {} node {} residual-ish {:.3e}", worst, best.0, best.1);
    let j = best.0;
    for jj in j.saturating_sub(3)..=(j + 3).min(n) {
        println!(
            "  j {:3} r {:7.4}  u {:.3e}  v[i-1] {:+.4e}  v[i] {:+.4e}  v[i+1] {:+.4e}",
            jj,
            arc[jj],
            chs.u_slice(i)[jj],
            fields.v[i - 1][jj],
            fields.v[i][jj],
            fields.v[i + 1][jj]
        );
    }
    println!(
        "  v_t {:+.4e}  v_ss {:+.4e}  v_s {:+.4e}",
        (fields.v[i + 1][j] - fields.v[i - 1][j]) / (2.0 * dt),
        v_ss[j],
        v_s[j]
    );
}

//! Forward-solver runs against manufactured SKT solutions.

use std::f64::consts::PI;
use std::sync::Arc;

use crossdiff_core::forward::{solve_family, SolverConfig};
use crossdiff_core::grid::norm_lp;
use crossdiff_core::model::{make_skt, SktModel, SktParams};
use crossdiff_core::{CrossDiffusionModel, CustomModel, Domain, Field};

fn skt(with_reaction: bool) -> SktModel {
    let (beta, k) = if with_reaction {
        (vec![vec![-0.5, -0.2], vec![-0.1, -0.5]], vec![0.5, 0.3])
    } else {
        (vec![vec![0.0; 2]; 2], vec![0.0; 2])
    };
    make_skt(SktParams {
        d: vec![1.0, 1.5],
        alpha: vec![vec![0.5, 0.3], vec![0.2, 0.4]],
        beta,
        k,
        lambda0: 0.5,
    })
    .unwrap()
}

/// `u*(x, t) = e^{−t} (sin πx, ½ sin 2πx) Π_{a>0} sin πx_a`.
fn exact(x: &[f64], t: f64, dim: usize, out: &mut [f64]) {
    let tail: f64 = (1..dim).map(|a| (PI * x[a]).sin()).product();
    out[0] = (-t).exp() * (PI * x[0]).sin() * tail;
    out[1] = 0.5 * (-t).exp() * (2.0 * PI * x[0]).sin() * tail;
}

/// Forcing `u*_t − ΔP(u*) − f(u*)`, with `Δ` the five-point stencil of
/// spacing `h` (pass a tiny `h` for the continuous Laplacian).
fn forcing(model: Arc<SktModel>, dim: usize, h: f64) -> impl Fn(&[f64], f64, &mut [f64]) + Sync {
    move |x, t, out| {
        let p_at = |y: &[f64]| {
            let mut u = [0.0; 2];
            let mut p = [0.0; 2];
            exact(y, t, dim, &mut u);
            model.pressure(&u, &mut p);
            p
        };
        let mut u = [0.0; 2];
        exact(x, t, dim, &mut u);
        let center = p_at(x);
        let mut lap = [0.0; 2];
        for a in 0..dim {
            let mut fwd = x.to_vec();
            let mut bwd = x.to_vec();
            fwd[a] += h;
            bwd[a] -= h;
            let (pf, pb) = (p_at(&fwd), p_at(&bwd));
            for c in 0..2 {
                lap[c] += (pf[c] - 2.0 * center[c] + pb[c]) / (h * h);
            }
        }
        let mut f = [0.0; 2];
        model.reaction(&u, &mut f);
        for c in 0..2 {
            out[c] = -u[c] - lap[c] - f[c];
        }
    }
}

fn exact_field(d: Domain, t: f64) -> Field {
    Field::dirichlet_from_fn(d, 2, |x, o| exact(x, t, d.dim(), o))
}

/// Relative `L²` error at `T` of the solve driven by `forcing(h_op)`.
fn error(d: Domain, dt: f64, horizon: f64, h_op: f64) -> f64 {
    let model = Arc::new(skt(true));
    let g = forcing(model.clone(), d.dim(), h_op);
    let sol = solve_family(model.as_ref(), &exact_field(d, 0.0), &SolverConfig::new(dt, horizon), Some(&g)).unwrap();
    let reference = exact_field(d, horizon);
    norm_lp(&sol.trajectory.last().sub(&reference), 2.0) / norm_lp(&reference, 2.0)
}

#[test]
fn newton_converges_quickly_on_a_64_node_grid() {
    let d = Domain::rectangle(1.0, 1.0, 64, 64).unwrap();
    let model = Arc::new(skt(true));
    let g = forcing(model.clone(), 2, d.h(0));
    let dt = 1e-3;
    let sol = solve_family(model.as_ref(), &exact_field(d, 0.0), &SolverConfig::new(dt, 5.0 * dt), Some(&g)).unwrap();
    let iters = sol.diagnostics.iter().map(|s| s.newton_iters).max().unwrap();
    assert!(iters <= 6, "Newton needed {iters} iterations");
    assert!(sol.diagnostics.iter().all(|s| s.residual <= 1e-10));
}

#[test]
fn time_error_is_first_order() {
    // the forcing uses the grid stencil, so no spatial error remains
    let d = Domain::interval(1.0, 65).unwrap();
    let h = d.h(0);
    let errs: Vec<f64> = [0.02, 0.01, 0.005].iter().map(|&dt| error(d, dt, 0.2, h)).collect();
    let order = (errs[1] / errs[2]).log2();
    assert!((order - 1.0).abs() <= 0.2, "errors {errs:?}, order {order}");
}

#[test]
fn space_error_is_second_order() {
    let errs: Vec<f64> = [17usize, 33, 65]
        .iter()
        .map(|&n| error(Domain::interval(1.0, n).unwrap(), 2e-5, 0.01, 1e-4))
        .collect();
    let order = (errs[1] / errs[2]).log2();
    assert!((order - 2.0).abs() <= 0.2, "errors {errs:?}, order {order}");
}

#[test]
fn discrete_manufactured_solution_is_reproduced() {
    // only the O(dt) gap between u*_t and its difference quotient is left
    let d = Domain::rectangle(1.0, 1.0, 17, 17).unwrap();
    let e1 = error(d, 1e-3, 0.01, d.h(0));
    let e2 = error(d, 5e-4, 0.01, d.h(0));
    assert!(e1 < 1e-3 && e2 < e1);
}

#[test]
fn l2_mass_decays_without_reaction() {
    let model = skt(false);
    let d = Domain::rectangle(1.0, 1.0, 17, 17).unwrap();
    let u0 = Field::dirichlet_from_fn(d, 2, |x, o| {
        let s = (PI * x[0]).sin() * (PI * x[1]).sin();
        o[0] = 2.0 * s;
        o[1] = s * s;
    });
    let sol = solve_family(&model, &u0, &SolverConfig::new(1e-3, 0.05), None).unwrap();
    let mass: Vec<f64> = sol.trajectory.fields().iter().map(|w| norm_lp(w, 2.0).powi(2)).collect();
    for w in mass.windows(2) {
        assert!(w[1] <= w[0] + 1e-12 * mass[0], "{} > {}", w[1], w[0]);
    }
}

#[test]
fn repeated_solves_are_bit_identical() {
    let d = Domain::rectangle(1.0, 1.0, 17, 17).unwrap();
    let model = skt(true);
    let cfg = SolverConfig::new(2e-3, 0.02);
    let a = solve_family(&model, &exact_field(d, 0.0), &cfg, None).unwrap();
    let b = solve_family(&model, &exact_field(d, 0.0), &cfg, None).unwrap();
    for (x, y) in a.trajectory.fields().iter().zip(b.trajectory.fields()) {
        assert!(x.values().iter().zip(y.values()).all(|(p, q)| p.to_bits() == q.to_bits()));
    }
}

/// `u` solving the rescaled system with `P̃(u) = P(σu)/σ`, `f̃(u) = σf(σu)`
/// and data `u₀` gives `w = σu` solving the σ-family problem.
#[test]
fn sigma_family_matches_rescaled_solution() {
    let sigma = 0.6;
    let base = Arc::new(skt(true));
    let scaled = |f: fn(&SktModel, &[f64], &mut [f64]), factor: f64| {
        let b = base.clone();
        Box::new(move |u: &[f64], out: &mut [f64]| {
            let su: Vec<f64> = u.iter().map(|v| sigma * v).collect();
            f(&b, &su, out);
            out.iter_mut().for_each(|v| *v *= factor);
        }) as Box<dyn Fn(&[f64], &mut [f64]) + Send + Sync>
    };
    let b = base.clone();
    let rescaled = CustomModel {
        m: 2,
        pressure: scaled(|m, u, o| m.pressure(u, o), 1.0 / sigma),
        reaction: scaled(|m, u, o| m.reaction(u, o), sigma),
        pressure_jacobian: scaled(|m, u, o| m.pressure_jacobian(u, o), 1.0),
        reaction_jacobian: scaled(|m, u, o| m.reaction_jacobian(u, o), sigma * sigma),
        ellipticity: Box::new(move |u| b.ellipticity(&u.iter().map(|v| sigma * v).collect::<Vec<_>>())),
        majorant: Box::new(|_| 0.0),
        lambda0: 0.5,
        growth_k: 1.0,
        growth_l: 1.0,
        name: "rescaled".into(),
    };
    let d = Domain::rectangle(1.0, 1.0, 17, 17).unwrap();
    let u0 = exact_field(d, 0.0);
    let cfg = SolverConfig::new(2e-3, 0.02);
    let u = solve_family(&rescaled, &u0, &cfg, None).unwrap();
    let w = solve_family(base.as_ref(), &u0, &cfg.clone().with_sigma(sigma), None).unwrap();
    let diff = norm_lp(&w.trajectory.last().sub(&u.trajectory.last().scaled(sigma)), 2.0);
    assert!(diff <= 1e-9 * norm_lp(w.trajectory.last(), 2.0), "diff {diff}");
}

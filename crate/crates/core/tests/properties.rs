use proptest::prelude::*;

use crossdiff_core::dual::{averaged_coefficients, Mollifier};
use crossdiff_core::grid::{inner, laplacian, norm_lp};
use crossdiff_core::model::{make_generalized_skt, SktParams};
use crossdiff_core::{CheckEntry, CrossDiffusionModel, Domain, Field, Trajectory};

fn params() -> impl Strategy<Value = SktParams> {
    (
        prop::collection::vec(0.1..3.0f64, 2),
        prop::collection::vec(0.0..1.0f64, 4),
        prop::collection::vec(-1.0..1.0f64, 4),
        prop::collection::vec(-1.0..1.0f64, 2),
        0.05..0.5f64,
    )
        .prop_map(|(d, a, b, k, lambda0)| SktParams {
            d,
            alpha: vec![a[..2].to_vec(), a[2..].to_vec()],
            beta: vec![b[..2].to_vec(), b[2..].to_vec()],
            k,
            lambda0,
        })
}

fn state() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-10.0..10.0f64, 2)
}

/// Dirichlet field with random interior values on a random box.
fn field(m: usize) -> impl Strategy<Value = Field> {
    (5usize..12, 5usize..12).prop_flat_map(move |(nx, ny)| {
        prop::collection::vec(-1.0..1.0f64, nx * ny * m).prop_map(move |v| {
            let d = Domain::rectangle(1.0, 1.3, nx, ny).unwrap();
            let mut f = Field::from_values(d, m, v).unwrap();
            f.zero_boundary();
            f
        })
    })
}

fn field_pair(m: usize) -> impl Strategy<Value = (Field, Field)> {
    (5usize..12, 5usize..12).prop_flat_map(move |(nx, ny)| {
        let len = nx * ny * m;
        (prop::collection::vec(-1.0..1.0f64, len), prop::collection::vec(-1.0..1.0f64, len)).prop_map(
            move |(a, b)| {
                let d = Domain::rectangle(1.0, 1.3, nx, ny).unwrap();
                let make = |v| {
                    let mut f = Field::from_values(d, m, v).unwrap();
                    f.zero_boundary();
                    f
                };
                (make(a), make(b))
            },
        )
    })
}

/// Central-difference Jacobian, row-major `∂F_i/∂u_j`.
fn fd_jacobian(g: impl Fn(&[f64], &mut [f64]), u: &[f64]) -> Vec<f64> {
    let m = u.len();
    let mut out = vec![0.0; m * m];
    let (mut fp, mut fm) = (vec![0.0; m], vec![0.0; m]);
    for j in 0..m {
        let h = 1e-5 * (1.0 + u[j].abs());
        let mut up = u.to_vec();
        let mut um = u.to_vec();
        up[j] += h;
        um[j] -= h;
        g(&up, &mut fp);
        g(&um, &mut fm);
        for i in 0..m {
            out[i * m + j] = (fp[i] - fm[i]) / (2.0 * h);
        }
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn jacobians_match_finite_differences(p in params(), kappa in prop::sample::select(vec![0.0, 1.0]), u in state()) {
        let model = make_generalized_skt(p, kappa).unwrap();
        let mut exact = vec![0.0; 4];
        for (analytic, fd) in [
            (
                { model.pressure_jacobian(&u, &mut exact); exact.clone() },
                fd_jacobian(|x, o| model.pressure(x, o), &u),
            ),
            (
                { model.reaction_jacobian(&u, &mut exact); exact.clone() },
                fd_jacobian(|x, o| model.reaction(x, o), &u),
            ),
        ] {
            let scale = 1.0 + analytic.iter().fold(0.0f64, |s, v| s.max(v.abs()));
            for (a, b) in analytic.iter().zip(&fd) {
                prop_assert!((a - b).abs() <= 1e-6 * scale, "{analytic:?} vs {fd:?}");
            }
        }
    }

    #[test]
    fn ellipticity_never_drops_below_floor(p in params(), kappa in prop::sample::select(vec![0.0, 1.0]), u in state()) {
        let model = make_generalized_skt(p, kappa).unwrap();
        prop_assert!(model.ellipticity(&u) >= model.lambda0());
    }

    #[test]
    fn laplacian_is_symmetric_and_negative((u, v) in field_pair(2)) {
        let (lu, lv) = (laplacian(&u), laplacian(&v));
        let (a, b) = (inner(&lu, &v), inner(&u, &lv));
        prop_assert!((a - b).abs() <= 1e-10 * (1.0 + a.abs()));
        prop_assert!(inner(&lu, &u) <= 1e-12);
    }

    #[test]
    fn norms_are_homogeneous_and_subadditive((u, v) in field_pair(2), s in -5.0..5.0f64, p in 1.0..6.0f64) {
        let nu = norm_lp(&u, p);
        prop_assert!((norm_lp(&u.scaled(s), p) - s.abs() * nu).abs() <= 1e-12 * (1.0 + s.abs() * nu));
        prop_assert!(norm_lp(&u.add(&v), p) <= nu + norm_lp(&v, p) + 1e-12);
    }

    #[test]
    fn mollifier_preserves_constants_and_is_symmetric((u, v) in field_pair(1), n in 1u32..6, c in -3.0..3.0f64) {
        let moll = Mollifier::new(n).unwrap();
        let mut flat = Field::constant(*u.domain(), &[c]);
        flat.zero_boundary();
        let out = moll.mollify_field(&flat);
        for k in u.domain().interior_nodes() {
            prop_assert!((out.node(k)[0] - c).abs() <= 1e-12);
        }
        let (a, b) = (inner(&moll.mollify_field(&u), &v), inner(&u, &moll.mollify_field(&v)));
        prop_assert!((a - b).abs() <= 1e-12);
        prop_assert!(moll.mollify_field(&u).max_abs() <= u.max_abs() + 1e-12);
    }

    #[test]
    fn averaged_coefficients_reproduce_differences(p in params(), (u1, u2) in field_pair(2)) {
        let model = make_generalized_skt(p, 0.0).unwrap();
        let t1 = Trajectory::new(0.0, 0.1, u1.clone());
        let t2 = Trajectory::new(0.0, 0.1, u2.clone());
        let coeffs = averaged_coefficients(&model, &t1, &t2, 2).unwrap();
        let (mut p1, mut p2, mut f1, mut f2) = ([0.0; 2], [0.0; 2], [0.0; 2], [0.0; 2]);
        for k in 0..u1.domain().node_count() {
            let (x, y) = (u1.node(k), u2.node(k));
            model.pressure(x, &mut p1);
            model.pressure(y, &mut p2);
            model.reaction(x, &mut f1);
            model.reaction(y, &mut f2);
            let a = &coeffs.a[0][k * 4..k * 4 + 4];
            let g = &coeffs.g[0][k * 4..k * 4 + 4];
            for i in 0..2 {
                let aw: f64 = (0..2).map(|j| a[i * 2 + j] * (x[j] - y[j])).sum();
                let gw: f64 = (0..2).map(|j| g[i * 2 + j] * (x[j] - y[j])).sum();
                prop_assert!((aw - (p1[i] - p2[i])).abs() <= 1e-12);
                prop_assert!((gw - (f1[i] - f2[i])).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn entries_agree_with_their_verdict(lhs in -1e3..1e3f64, rhs in -1e3..1e3f64, rtol in 0.0..1.0f64, atol in 0.0..1.0f64) {
        let e = CheckEntry::new("e", lhs, rhs, rtol, atol);
        prop_assert!(e.is_consistent());
        prop_assert_eq!(e.passes, e.margin >= 0.0);
    }

    #[test]
    fn non_finite_lhs_never_passes(rhs in -1e3..1e3f64, v in prop::sample::select(vec![f64::NAN, f64::INFINITY])) {
        prop_assert!(!CheckEntry::exact("e", v, rhs).passes);
    }
}

#[test]
fn field_strategy_yields_dirichlet_data() {
    use proptest::strategy::ValueTree;
    use proptest::test_runner::TestRunner;
    let mut runner = TestRunner::deterministic();
    let f = field(3).new_tree(&mut runner).unwrap().current();
    assert!(f.satisfies_dirichlet());
    assert_eq!(f.components(), 3);
}

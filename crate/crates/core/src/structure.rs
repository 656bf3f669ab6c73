//! Sampled checks of the structural conditions a model must satisfy:
//! ellipticity of `P_u`, the convex majorant of `|f_u|²/λ`, growth bounds
//! and the sign condition on `<f(u), u>`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::linalg::{dot, frobenius, min_sym_eigenvalue, norm2};
use crate::model::CrossDiffusionModel;
use crate::report::{CheckEntry, CheckReport};

/// Absolute tolerance on eigenvalues in the ellipticity certificate.
pub const TOL_ELLIPTICITY: f64 = 1e-10;
/// Absolute tolerance of the midpoint convexity test, scaled by `max(1, |F̂|)`.
pub const TOL_CONVEXITY: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EllipticityCertificate {
    /// Smallest eigenvalue of the symmetric part of `P_u(u)`.
    pub min_quadratic_form: f64,
    pub lambda: f64,
    pub passes: bool,
}

pub fn ellipticity_certificate(model: &dyn CrossDiffusionModel, u: &[f64]) -> EllipticityCertificate {
    let m = model.species();
    let mut a = vec![0.0; m * m];
    model.pressure_jacobian(u, &mut a);
    let min_quadratic_form = min_sym_eigenvalue(m, &a);
    let lambda = model.ellipticity(u);
    EllipticityCertificate {
        min_quadratic_form,
        lambda,
        passes: min_quadratic_form >= lambda - TOL_ELLIPTICITY,
    }
}

/// Condition F on `samples`: `|f_u|²/λ ≤ F̂` and midpoint convexity of `F̂`
/// on `pairs` random sample pairs.
pub fn check_condition_f(
    model: &dyn CrossDiffusionModel,
    samples: &[Vec<f64>],
    pairs: usize,
    seed: u64,
) -> Result<CheckReport> {
    if samples.is_empty() {
        return Err(invalid("condition F needs at least one sample"));
    }
    let m = model.species();
    let mut jac = vec![0.0; m * m];
    let mut worst = f64::NEG_INFINITY;
    let mut scale = 1.0f64;
    for u in samples {
        model.reaction_jacobian(u, &mut jac);
        let j = frobenius(&jac);
        let hat = model.majorant(u);
        scale = scale.max(hat.abs());
        worst = worst.max(j * j / model.ellipticity(u) - hat);
    }
    let mut report = CheckReport::new("condition_F");
    report.push(
        CheckEntry::new("majorant_bound", worst, 0.0, 0.0, 1e-12 * scale)
            .with("samples", samples.len() as f64),
    );

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut defect = f64::NEG_INFINITY;
    let mut mid = vec![0.0; m];
    let mut cscale = 1.0f64;
    for _ in 0..pairs {
        let a = &samples[rng.gen_range(0..samples.len())];
        let b = &samples[rng.gen_range(0..samples.len())];
        for i in 0..m {
            mid[i] = 0.5 * (a[i] + b[i]);
        }
        let (fa, fb) = (model.majorant(a), model.majorant(b));
        cscale = cscale.max(fa.abs()).max(fb.abs());
        defect = defect.max(model.majorant(&mid) - 0.5 * (fa + fb));
    }
    if pairs > 0 {
        report.push(
            CheckEntry::new("majorant_convexity", defect, 0.0, 0.0, TOL_CONVEXITY * cscale)
                .with("pairs", pairs as f64),
        );
    }
    Ok(report)
}

/// Fits `C` in `|f_u(u)|²/λ(u) ≤ C (1+|u|)^exponent` as twice the largest
/// ratio on `fit`, then checks the bound on the disjoint `holdout` set.
pub fn fit_majorant_constant(
    model: &dyn CrossDiffusionModel,
    exponent: f64,
    fit: &[Vec<f64>],
    holdout: &[Vec<f64>],
) -> Result<CheckReport> {
    if fit.is_empty() || holdout.is_empty() {
        return Err(invalid("majorant fit needs fit and holdout samples"));
    }
    let ratio = |u: &[f64]| {
        let m = model.species();
        let mut jac = vec![0.0; m * m];
        model.reaction_jacobian(u, &mut jac);
        let j = frobenius(&jac);
        j * j / (model.ellipticity(u) * (1.0 + norm2(u)).powf(exponent))
    };
    let c_fit = 2.0 * fit.iter().map(|u| ratio(u)).fold(0.0, f64::max);
    let held = holdout.iter().map(|u| ratio(u)).fold(0.0, f64::max);
    let mut report = CheckReport::new("majorant_fit");
    report.push(
        CheckEntry::exact("holdout_ratio", held, c_fit)
            .with("C", c_fit)
            .with("exponent", exponent),
    );
    Ok(report)
}

/// Ceilings for the three growth constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GrowthCeilings {
    pub lambda_log_derivative: f64,
    pub reaction_growth: f64,
    pub reaction_vs_jacobian: f64,
}

impl Default for GrowthCeilings {
    fn default() -> Self {
        Self {
            lambda_log_derivative: f64::INFINITY,
            reaction_growth: f64::INFINITY,
            reaction_vs_jacobian: f64::INFINITY,
        }
    }
}

/// Smallest constants with `|λ_u||u| ≤ Cλ`, `|f| ≤ C(1+|u|)(1+λ)` and
/// `|f| ≤ C|u||f_u|` (the last only where `|u| ≥ min_radius`).
pub fn check_growth_conditions(
    model: &dyn CrossDiffusionModel,
    samples: &[Vec<f64>],
    min_radius: f64,
    ceilings: GrowthCeilings,
) -> Result<CheckReport> {
    if samples.is_empty() {
        return Err(invalid("growth check needs at least one sample"));
    }
    let m = model.species();
    let mut f = vec![0.0; m];
    let mut jac = vec![0.0; m * m];
    let mut shifted = vec![0.0; m];
    let (mut c1, mut c2, mut c3) = (0.0f64, 0.0f64, 0.0f64);
    for u in samples {
        let r = norm2(u);
        let lam = model.ellipticity(u);
        if r > 0.0 {
            let h = 1e-6 * r.max(1.0);
            let mut grad2 = 0.0;
            for j in 0..m {
                shifted.copy_from_slice(u);
                shifted[j] = u[j] + h;
                let up = model.ellipticity(&shifted);
                shifted[j] = u[j] - h;
                let dn = model.ellipticity(&shifted);
                let g = (up - dn) / (2.0 * h);
                grad2 += g * g;
            }
            c1 = c1.max(grad2.sqrt() * r / lam);
        }
        model.reaction(u, &mut f);
        let fn_ = norm2(&f);
        c2 = c2.max(fn_ / ((1.0 + r) * (1.0 + lam)));
        if r >= min_radius {
            model.reaction_jacobian(u, &mut jac);
            let denom = r * frobenius(&jac);
            if denom > 0.0 {
                c3 = c3.max(fn_ / denom);
            } else if fn_ > 0.0 {
                c3 = f64::INFINITY;
            }
        }
    }
    let mut report = CheckReport::new("growth_conditions");
    report.push(CheckEntry::exact("lambda_log_derivative", c1, ceilings.lambda_log_derivative).with("C", c1));
    report.push(CheckEntry::exact("reaction_growth", c2, ceilings.reaction_growth).with("C", c2));
    report.push(CheckEntry::exact("reaction_vs_jacobian", c3, ceilings.reaction_vs_jacobian).with("C", c3));
    Ok(report)
}

/// `<f(u), u> ≤ ε₀ λ(u)|u|² + C|u|²` on all samples, up to `tol`.
pub fn check_sktfu(
    model: &dyn CrossDiffusionModel,
    eps0: f64,
    c: f64,
    samples: &[Vec<f64>],
    tol: f64,
) -> Result<CheckReport> {
    if !(eps0 > 0.0) || !(c >= 0.0) {
        return Err(invalid(format!("need eps0 > 0 and C >= 0, got {eps0}, {c}")));
    }
    let m = model.species();
    let mut f = vec![0.0; m];
    let mut worst = f64::NEG_INFINITY;
    for u in samples {
        model.reaction(u, &mut f);
        let r2 = dot(u, u);
        worst = worst.max(dot(&f, u) - eps0 * model.ellipticity(u) * r2 - c * r2);
    }
    let mut report = CheckReport::new("reaction_sign");
    report.push(
        CheckEntry::new("sktfu_excess", worst, 0.0, 0.0, tol)
            .with("eps0", eps0)
            .with("C", c),
    );
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{make_generalized_skt, make_skt, sample_nonnegative_states, sample_states, CustomModel, SktParams};

    fn params(alpha: [[f64; 2]; 2], beta: [[f64; 2]; 2], k: [f64; 2]) -> SktParams {
        SktParams {
            d: vec![1.0, 2.0],
            alpha: alpha.iter().map(|r| r.to_vec()).collect(),
            beta: beta.iter().map(|r| r.to_vec()).collect(),
            k: k.to_vec(),
            lambda0: 0.5,
        }
    }

    #[test]
    fn diagonal_diffusion_certificate() {
        let model = make_skt(SktParams::diffusion_only(vec![1.0, 2.0], 1.0))
            .unwrap()
            .with_constant_ellipticity();
        for u in sample_states(2, 50, 10.0, 1) {
            let cert = ellipticity_certificate(&model, &u);
            assert!((cert.min_quadratic_form - 1.0).abs() < 1e-14);
            assert!(cert.passes);
        }
    }

    #[test]
    fn diagonal_alpha_certificate() {
        let model = make_skt(params([[1.0, 0.0], [0.0, 1.0]], [[0.0; 2]; 2], [0.0; 2])).unwrap();
        let cert = ellipticity_certificate(&model, &[1.0, 1.0]);
        assert!((cert.min_quadratic_form - 3.0).abs() < 1e-14);
        assert!(cert.passes);
    }

    #[test]
    fn strong_cross_diffusion_with_negative_states_fails_somewhere() {
        let model = make_skt(params([[0.1, 5.0], [0.0, 0.1]], [[0.0; 2]; 2], [0.0; 2])).unwrap();
        let mut failures = 0;
        for i in -10..=10 {
            for j in -10..=10 {
                let u = [i as f64 * 0.5, j as f64 * 0.5];
                if !ellipticity_certificate(&model, &u).passes {
                    failures += 1;
                }
            }
        }
        assert!(failures > 0);
    }

    #[test]
    fn zero_reaction_satisfies_everything() {
        let model = make_skt(SktParams::diffusion_only(vec![1.0, 2.0], 0.5)).unwrap();
        let samples = sample_states(2, 300, 10.0, 5);
        assert!(check_condition_f(&model, &samples, 200, 1).unwrap().passes());
        let g = check_growth_conditions(&model, &samples, 0.0, GrowthCeilings::default()).unwrap();
        assert_eq!(g.constant("reaction_growth", "C"), Some(0.0));
        assert_eq!(g.constant("reaction_vs_jacobian", "C"), Some(0.0));
        assert!(check_sktfu(&model, 1e-3, 0.0, &samples, 0.0).unwrap().passes());
    }

    #[test]
    fn linear_lambda_log_derivative_is_below_one() {
        let model = make_skt(SktParams::diffusion_only(vec![1.0, 2.0], 0.5)).unwrap();
        let samples = sample_states(2, 500, 10.0, 6);
        let ceil = GrowthCeilings {
            lambda_log_derivative: 1.0,
            ..GrowthCeilings::default()
        };
        let g = check_growth_conditions(&model, &samples, 0.0, ceil).unwrap();
        let c1 = g.constant("lambda_log_derivative", "C").unwrap();
        assert!(c1 < 1.0 && c1 > 0.5, "c1 = {c1}");
        assert!(g.passes());
    }

    #[test]
    fn skt_reaction_growth_constants_are_finite() {
        let model = make_skt(params([[0.5, 0.1], [0.1, 0.5]], [[-1.0, 0.3], [0.2, -0.4]], [0.5, 0.2])).unwrap();
        let samples = sample_states(2, 500, 10.0, 7);
        let g = check_growth_conditions(&model, &samples, 0.1, GrowthCeilings::default()).unwrap();
        for e in &g.entries {
            assert!(e.lhs.is_finite(), "{}", e.name);
        }
    }

    #[test]
    fn skt_majorant_fit_and_holdout() {
        let model = make_skt(params([[0.5, 0.1], [0.1, 0.5]], [[-1.0, 0.3], [0.2, -0.4]], [0.5, 0.2])).unwrap();
        let fit = sample_states(2, 400, 50.0, 8);
        let hold = sample_states(2, 400, 50.0, 9);
        let r = fit_majorant_constant(&model, 1.0, &fit, &hold).unwrap();
        assert!(r.passes());
        assert!(check_condition_f(&model, &fit, 1000, 2).unwrap().passes());
    }

    #[test]
    fn generalized_majorant_is_convex() {
        let model = make_generalized_skt(params([[0.5, 0.1], [0.1, 0.5]], [[-1.0, 0.3], [0.2, -0.4]], [0.5, 0.2]), 1.0).unwrap();
        let samples = sample_states(2, 500, 10.0, 10);
        let r = check_condition_f(&model, &samples, 1000, 3).unwrap();
        assert!(r.passes(), "{r:?}");
        assert_eq!(model.majorant_parts().1, 2.0);
    }

    #[test]
    fn logistic_reaction_satisfies_sign_condition() {
        let model = make_skt(params([[0.5, 0.0], [0.0, 0.5]], [[-1.0, 0.0], [0.0, -2.0]], [0.0; 2])).unwrap();
        let samples = sample_nonnegative_states(2, 1000, 10.0, 4);
        assert!(check_sktfu(&model, 1e-3, 0.0, &samples, 1e-12).unwrap().passes());
    }

    #[test]
    fn pure_growth_violates_sign_condition() {
        let model = CustomModel {
            m: 2,
            pressure: Box::new(|u, o| o.copy_from_slice(u)),
            reaction: Box::new(|u, o| {
                let r = norm2(u);
                o.iter_mut().zip(u).for_each(|(oi, ui)| *oi = ui * r);
            }),
            pressure_jacobian: Box::new(|_, o| o.copy_from_slice(&[1.0, 0.0, 0.0, 1.0])),
            reaction_jacobian: Box::new(|_, o| o.fill(0.0)),
            ellipticity: Box::new(|u| 0.5 + norm2(u)),
            majorant: Box::new(|_| 0.0),
            lambda0: 0.5,
            growth_k: 0.0,
            growth_l: 1.0,
            name: "pure-growth".into(),
        };
        let r = check_sktfu(&model, 0.1, 0.1, &[vec![100.0, 0.0]], 0.0).unwrap();
        assert!(!r.passes());
    }

    #[test]
    fn empty_samples_are_rejected() {
        let model = make_skt(SktParams::diffusion_only(vec![1.0, 2.0], 0.5)).unwrap();
        assert!(check_condition_f(&model, &[], 0, 0).is_err());
        assert!(check_growth_conditions(&model, &[], 0.0, GrowthCeilings::default()).is_err());
        assert!(check_sktfu(&model, 0.0, 0.0, &[], 0.0).is_err());
    }
}

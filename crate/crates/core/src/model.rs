//! Cross-diffusion models `u_t = Δ(P(u)) + f(u)`: the pressure map `P`, the
//! reaction `f`, their Jacobians, the ellipticity function `λ` and a convex
//! majorant `F̂` of `|∂f|²/λ`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::linalg::{frobenius, norm2};

/// A cross-diffusion system with `m` species.
///
/// Matrices are `m x m`, row-major: `out[i * m + j] = ∂_j P_i(u)`.
pub trait CrossDiffusionModel: Send + Sync {
    fn species(&self) -> usize;
    /// `P(u)`.
    fn pressure(&self, u: &[f64], out: &mut [f64]);
    /// `f(u)`.
    fn reaction(&self, u: &[f64], out: &mut [f64]);
    /// `A(u) = P_u(u)`.
    fn pressure_jacobian(&self, u: &[f64], out: &mut [f64]);
    /// `f_u(u)`.
    fn reaction_jacobian(&self, u: &[f64], out: &mut [f64]);
    /// Ellipticity function `λ(u) ≥ λ₀`.
    fn ellipticity(&self, u: &[f64]) -> f64;
    /// The floor `λ₀`.
    fn lambda0(&self) -> f64;
    /// Convex majorant `F̂(u) ≥ |f_u(u)|² / λ(u)`.
    fn majorant(&self, u: &[f64]) -> f64;
    /// Growth exponent `k` of `P_u`.
    fn growth_k(&self) -> f64;
    /// Growth exponent `l` of `f_u`.
    fn growth_l(&self) -> f64;
    /// Stable textual description, used for hashing and report metadata.
    fn describe(&self) -> String;
}

/// Coefficients of the multi-species SKT system
/// `P_i(u) = d_i u_i + u_i <α_i, u>`, `f_i(u) = k_i u_i + u_i <β_i, u>`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SktParams {
    pub d: Vec<f64>,
    pub alpha: Vec<Vec<f64>>,
    pub beta: Vec<Vec<f64>>,
    pub k: Vec<f64>,
    pub lambda0: f64,
}

impl SktParams {
    /// Decoupled linear diffusion with no cross terms and no reaction.
    pub fn diffusion_only(d: Vec<f64>, lambda0: f64) -> Self {
        let m = d.len();
        Self {
            d,
            alpha: vec![vec![0.0; m]; m],
            beta: vec![vec![0.0; m]; m],
            k: vec![0.0; m],
            lambda0,
        }
    }

    pub fn species(&self) -> usize {
        self.d.len()
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.d.len();
        if m < 2 {
            return Err(invalid(format!("SKT needs at least 2 species, got {m}")));
        }
        if let Some(di) = self.d.iter().find(|&&di| !(di > 0.0 && di.is_finite())) {
            return Err(invalid(format!("diffusion constants must be > 0, got {di}")));
        }
        if !(self.lambda0 > 0.0 && self.lambda0.is_finite()) {
            return Err(invalid(format!("lambda0 must be > 0, got {}", self.lambda0)));
        }
        let square = |name: &str, a: &[Vec<f64>]| -> Result<()> {
            if a.len() != m || a.iter().any(|r| r.len() != m) {
                return Err(invalid(format!("{name} must be {m}x{m}")));
            }
            if a.iter().flatten().any(|v| !v.is_finite()) {
                return Err(invalid(format!("{name} has non-finite entries")));
            }
            Ok(())
        };
        square("alpha", &self.alpha)?;
        square("beta", &self.beta)?;
        if self.k.len() != m || self.k.iter().any(|v| !v.is_finite()) {
            return Err(invalid(format!("k must hold {m} finite rates")));
        }
        Ok(())
    }
}

/// Which ellipticity function a model reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum EllipticityKind {
    /// `λ(u) = λ₀ + |u|^(κ+1)`.
    #[default]
    Growth,
    /// `λ(u) ≡ λ₀`.
    Constant,
}

/// The SKT system and its generalization with coefficients `α_i (1+|u|²)^(κ/2)`.
#[derive(Debug, Clone)]
pub struct SktModel {
    params: SktParams,
    kappa: f64,
    ellipticity: EllipticityKind,
    majorant_exponent: f64,
    majorant_constant: f64,
}

/// Builds the SKT model (`κ = 0`), with `λ(u) = λ₀ + |u|` and
/// `F̂(u) = C (1 + |u|)`.
pub fn make_skt(params: SktParams) -> Result<SktModel> {
    make_generalized_skt(params, 0.0)
}

/// Builds the generalized SKT model with growth exponent `κ ≥ 0`.
pub fn make_generalized_skt(params: SktParams, kappa: f64) -> Result<SktModel> {
    params.validate()?;
    if !(kappa >= 0.0 && kappa.is_finite()) {
        return Err(invalid(format!("kappa must be >= 0, got {kappa}")));
    }
    let mut model = SktModel {
        params,
        kappa,
        ellipticity: EllipticityKind::Growth,
        majorant_exponent: kappa + 1.0,
        majorant_constant: 0.0,
    };
    model.refit_majorant();
    Ok(model)
}

impl SktModel {
    pub fn params(&self) -> &SktParams {
        &self.params
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn ellipticity_kind(&self) -> EllipticityKind {
        self.ellipticity
    }

    /// Same maps, ellipticity function replaced by the constant `λ₀`.
    pub fn with_constant_ellipticity(mut self) -> Self {
        self.ellipticity = EllipticityKind::Constant;
        self.majorant_exponent = 2.0 * (self.kappa + 1.0);
        self.refit_majorant();
        self
    }

    pub fn with_ellipticity(self, kind: EllipticityKind) -> Self {
        match kind {
            EllipticityKind::Growth => self,
            EllipticityKind::Constant => self.with_constant_ellipticity(),
        }
    }

    /// `C` and exponent `e` of the majorant `F̂(u) = C (1 + |u|)^e`.
    pub fn majorant_parts(&self) -> (f64, f64) {
        (self.majorant_constant, self.majorant_exponent)
    }

    fn refit_majorant(&mut self) {
        self.majorant_constant =
            if self.kappa == 0.0 && self.ellipticity == EllipticityKind::Growth {
                // |f_u(u)|_F ≤ a + b|u| with a = |k|, b = 2|β|_F; then
                // (a + b r)² / (λ₀ + r) ≤ (2a²/λ₀ + 2b²)(1 + r).
                let a = norm2(&self.params.k);
                let b = 2.0 * frobenius(&self.params.beta.concat());
                2.0 * a * a / self.params.lambda0 + 2.0 * b * b
            } else {
                2.0 * self.sampled_majorant_ratio()
            };
    }

    /// Largest `|f_u|² / (λ (1+|u|)^e)` over a fixed deterministic sample that
    /// spans radii from 1e-3 to 1e4.
    fn sampled_majorant_ratio(&self) -> f64 {
        let m = self.species();
        let mut rng = ChaCha8Rng::seed_from_u64(0x5EED_F00D);
        let mut jac = vec![0.0; m * m];
        let mut u = vec![0.0; m];
        let mut best = {
            self.reaction_jacobian(&u, &mut jac);
            let j = frobenius(&jac);
            j * j / self.ellipticity(&u)
        };
        for r_step in 0..=70 {
            let r = 10f64.powf(-3.0 + r_step as f64 / 10.0);
            for _ in 0..48 {
                random_direction(&mut rng, &mut u);
                u.iter_mut().for_each(|v| *v *= r);
                self.reaction_jacobian(&u, &mut jac);
                let j = frobenius(&jac);
                let ratio = j * j / (self.ellipticity(&u) * (1.0 + r).powf(self.majorant_exponent));
                best = best.max(ratio);
            }
        }
        best
    }

    fn scale(&self, u: &[f64]) -> (f64, f64) {
        if self.kappa == 0.0 {
            return (1.0, 0.0);
        }
        let q = 1.0 + u.iter().map(|v| v * v).sum::<f64>();
        let s = q.powf(0.5 * self.kappa);
        // ∂_j s = κ q^(κ/2 - 1) u_j; returned without the u_j factor
        let ds = self.kappa * q.powf(0.5 * self.kappa - 1.0);
        (s, ds)
    }

    fn quadratic_map(&self, lin: &[f64], coef: &[Vec<f64>], u: &[f64], out: &mut [f64]) {
        let (s, _) = self.scale(u);
        for i in 0..self.species() {
            let inner: f64 = coef[i].iter().zip(u).map(|(a, v)| a * v).sum();
            out[i] = lin[i] * u[i] + u[i] * s * inner;
        }
    }

    fn quadratic_jacobian(&self, lin: &[f64], coef: &[Vec<f64>], u: &[f64], out: &mut [f64]) {
        let m = self.species();
        let (s, ds) = self.scale(u);
        for i in 0..m {
            let inner: f64 = coef[i].iter().zip(u).map(|(a, v)| a * v).sum();
            for j in 0..m {
                let mut v = u[i] * s * coef[i][j];
                if ds != 0.0 {
                    v += u[i] * inner * ds * u[j];
                }
                if i == j {
                    v += lin[i] + s * inner;
                }
                out[i * m + j] = v;
            }
        }
    }
}

fn random_direction(rng: &mut impl Rng, u: &mut [f64]) {
    loop {
        u.iter_mut().for_each(|v| *v = rng.gen_range(-1.0..1.0));
        let n = norm2(u);
        if n > 1e-3 && n <= 1.0 {
            u.iter_mut().for_each(|v| *v /= n);
            return;
        }
    }
}

impl CrossDiffusionModel for SktModel {
    fn species(&self) -> usize {
        self.params.d.len()
    }

    fn pressure(&self, u: &[f64], out: &mut [f64]) {
        self.quadratic_map(&self.params.d, &self.params.alpha, u, out);
    }

    fn reaction(&self, u: &[f64], out: &mut [f64]) {
        self.quadratic_map(&self.params.k, &self.params.beta, u, out);
    }

    fn pressure_jacobian(&self, u: &[f64], out: &mut [f64]) {
        self.quadratic_jacobian(&self.params.d, &self.params.alpha, u, out);
    }

    fn reaction_jacobian(&self, u: &[f64], out: &mut [f64]) {
        self.quadratic_jacobian(&self.params.k, &self.params.beta, u, out);
    }

    fn ellipticity(&self, u: &[f64]) -> f64 {
        match self.ellipticity {
            EllipticityKind::Constant => self.params.lambda0,
            EllipticityKind::Growth => {
                let r = norm2(u);
                if self.kappa == 0.0 {
                    self.params.lambda0 + r
                } else {
                    self.params.lambda0 + r.powf(self.kappa + 1.0)
                }
            }
        }
    }

    fn lambda0(&self) -> f64 {
        self.params.lambda0
    }

    fn majorant(&self, u: &[f64]) -> f64 {
        self.majorant_constant * (1.0 + norm2(u)).powf(self.majorant_exponent)
    }

    fn growth_k(&self) -> f64 {
        self.kappa + 1.0
    }

    fn growth_l(&self) -> f64 {
        self.kappa + 1.0
    }

    fn describe(&self) -> String {
        format!(
            "skt(kappa={:?},ellipticity={:?},params={:?})",
            self.kappa, self.ellipticity, self.params
        )
    }
}

/// `P(u) = D u`, `f(u) = R u` with constant matrices; `λ ≡ λ₀`.
#[derive(Debug, Clone)]
pub struct LinearModel {
    m: usize,
    diffusion: Vec<f64>,
    reaction: Vec<f64>,
    lambda0: f64,
}

impl LinearModel {
    /// Row-major `m x m` matrices.
    pub fn new(m: usize, diffusion: Vec<f64>, reaction: Vec<f64>, lambda0: f64) -> Result<Self> {
        if m == 0 || diffusion.len() != m * m || reaction.len() != m * m {
            return Err(invalid("linear model matrices must be m x m with m >= 1"));
        }
        if !(lambda0 > 0.0) {
            return Err(invalid(format!("lambda0 must be > 0, got {lambda0}")));
        }
        Ok(Self {
            m,
            diffusion,
            reaction,
            lambda0,
        })
    }

    /// The scalar heat equation `u_t = Δu`.
    pub fn heat() -> Self {
        Self {
            m: 1,
            diffusion: vec![1.0],
            reaction: vec![0.0],
            lambda0: 1.0,
        }
    }

    /// `P(u) = diag(d) u`, no reaction.
    pub fn diagonal(d: &[f64]) -> Self {
        let m = d.len();
        let mut diffusion = vec![0.0; m * m];
        for (i, di) in d.iter().enumerate() {
            diffusion[i * m + i] = *di;
        }
        let lambda0 = d.iter().copied().fold(f64::INFINITY, f64::min);
        Self {
            m,
            diffusion,
            reaction: vec![0.0; m * m],
            lambda0,
        }
    }
}

impl CrossDiffusionModel for LinearModel {
    fn species(&self) -> usize {
        self.m
    }
    fn pressure(&self, u: &[f64], out: &mut [f64]) {
        crate::linalg::mat_vec(self.m, &self.diffusion, u, out);
    }
    fn reaction(&self, u: &[f64], out: &mut [f64]) {
        crate::linalg::mat_vec(self.m, &self.reaction, u, out);
    }
    fn pressure_jacobian(&self, _u: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&self.diffusion);
    }
    fn reaction_jacobian(&self, _u: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&self.reaction);
    }
    fn ellipticity(&self, _u: &[f64]) -> f64 {
        self.lambda0
    }
    fn lambda0(&self) -> f64 {
        self.lambda0
    }
    fn majorant(&self, _u: &[f64]) -> f64 {
        let r = frobenius(&self.reaction);
        r * r / self.lambda0
    }
    fn growth_k(&self) -> f64 {
        0.0
    }
    fn growth_l(&self) -> f64 {
        0.0
    }
    fn describe(&self) -> String {
        format!(
            "linear(m={},diffusion={:?},reaction={:?},lambda0={:?})",
            self.m, self.diffusion, self.reaction, self.lambda0
        )
    }
}

type VecMap = Box<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;
type ScalarMap = Box<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// A model assembled from user closures.
pub struct CustomModel {
    pub m: usize,
    pub pressure: VecMap,
    pub reaction: VecMap,
    pub pressure_jacobian: VecMap,
    pub reaction_jacobian: VecMap,
    pub ellipticity: ScalarMap,
    pub majorant: ScalarMap,
    pub lambda0: f64,
    pub growth_k: f64,
    pub growth_l: f64,
    pub name: String,
}

impl CrossDiffusionModel for CustomModel {
    fn species(&self) -> usize {
        self.m
    }
    fn pressure(&self, u: &[f64], out: &mut [f64]) {
        (self.pressure)(u, out)
    }
    fn reaction(&self, u: &[f64], out: &mut [f64]) {
        (self.reaction)(u, out)
    }
    fn pressure_jacobian(&self, u: &[f64], out: &mut [f64]) {
        (self.pressure_jacobian)(u, out)
    }
    fn reaction_jacobian(&self, u: &[f64], out: &mut [f64]) {
        (self.reaction_jacobian)(u, out)
    }
    fn ellipticity(&self, u: &[f64]) -> f64 {
        (self.ellipticity)(u)
    }
    fn lambda0(&self) -> f64 {
        self.lambda0
    }
    fn majorant(&self, u: &[f64]) -> f64 {
        (self.majorant)(u)
    }
    fn growth_k(&self) -> f64 {
        self.growth_k
    }
    fn growth_l(&self) -> f64 {
        self.growth_l
    }
    fn describe(&self) -> String {
        format!("custom({})", self.name)
    }
}

/// Draws `count` states uniformly from the ball `|u| ≤ radius`.
pub fn sample_states(m: usize, count: usize, radius: f64, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut dir = vec![0.0; m];
    (0..count)
        .map(|_| {
            random_direction(&mut rng, &mut dir);
            let r = radius * rng.gen::<f64>().powf(1.0 / m as f64);
            dir.iter().map(|v| v * r).collect()
        })
        .collect()
}

/// Draws `count` states with every component in `[0, max]`.
pub fn sample_nonnegative_states(m: usize, count: usize, max: f64, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| (0..m).map(|_| rng.gen_range(0.0..=max)).collect())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_species(alpha: [[f64; 2]; 2], beta: [[f64; 2]; 2], k: [f64; 2]) -> SktParams {
        SktParams {
            d: vec![1.0, 2.0],
            alpha: alpha.iter().map(|r| r.to_vec()).collect(),
            beta: beta.iter().map(|r| r.to_vec()).collect(),
            k: k.to_vec(),
            lambda0: 0.5,
        }
    }

    #[test]
    fn decoupled_linear_diffusion() {
        let model = make_skt(SktParams::diffusion_only(vec![1.0, 2.0], 0.5)).unwrap();
        let mut p = [0.0; 2];
        let mut f = [0.0; 2];
        model.pressure(&[3.0, 4.0], &mut p);
        model.reaction(&[3.0, 4.0], &mut f);
        assert_eq!(p, [3.0, 8.0]);
        assert_eq!(f, [0.0, 0.0]);
    }

    #[test]
    fn hand_evaluated_cross_diffusion() {
        let model = make_skt(two_species([[1.0, 1.0], [0.0, 1.0]], [[0.0; 2]; 2], [0.0; 2])).unwrap();
        let mut p = [0.0; 2];
        model.pressure(&[1.0, 1.0], &mut p);
        assert_eq!(p, [3.0, 3.0]);
    }

    #[test]
    fn pressure_and_reaction_vanish_at_zero() {
        let params = two_species([[0.7, -0.3], [0.2, 1.1]], [[-1.0, 0.4], [0.3, -0.2]], [0.5, -0.7]);
        for kappa in [0.0, 0.5, 1.0, 2.0] {
            let model = make_generalized_skt(params.clone(), kappa).unwrap();
            let mut p = [1.0; 2];
            let mut f = [1.0; 2];
            model.pressure(&[0.0, 0.0], &mut p);
            model.reaction(&[0.0, 0.0], &mut f);
            assert_eq!(p, [0.0, 0.0]);
            assert_eq!(f, [0.0, 0.0]);
        }
    }

    #[test]
    fn kappa_zero_reproduces_skt_exactly() {
        let params = two_species([[0.7, -0.3], [0.2, 1.1]], [[-1.0, 0.4], [0.3, -0.2]], [0.5, -0.7]);
        let skt = make_skt(params.clone()).unwrap();
        let gen = make_generalized_skt(params, 0.0).unwrap();
        for u in sample_states(2, 200, 10.0, 3) {
            let (mut a, mut b) = ([0.0; 2], [0.0; 2]);
            skt.pressure(&u, &mut a);
            gen.pressure(&u, &mut b);
            assert_eq!(a, b);
            skt.reaction(&u, &mut a);
            gen.reaction(&u, &mut b);
            assert_eq!(a, b);
            let (mut ja, mut jb) = ([0.0; 4], [0.0; 4]);
            skt.pressure_jacobian(&u, &mut ja);
            gen.pressure_jacobian(&u, &mut jb);
            assert_eq!(ja, jb);
            assert_eq!(skt.ellipticity(&u), gen.ellipticity(&u));
        }
    }

    #[test]
    fn generalized_coefficient_growth() {
        // α₁ = (1, 0), κ = 1, u = (1, 0): α₁(u) = α₁ √2, so P₁ = d₁ + √2.
        let params = two_species([[1.0, 0.0], [0.0, 0.0]], [[0.0; 2]; 2], [0.0; 2]);
        let model = make_generalized_skt(params, 1.0).unwrap();
        let mut p = [0.0; 2];
        model.pressure(&[1.0, 0.0], &mut p);
        assert!((p[0] - (1.0 + 2f64.sqrt())).abs() < 1e-15);
        assert_eq!(model.growth_k(), 2.0);
        assert_eq!(model.ellipticity(&[1.0, 0.0]), 0.5 + 1.0);
    }

    #[test]
    fn rejects_bad_parameters() {
        let mut p = SktParams::diffusion_only(vec![1.0, 0.0], 0.5);
        assert!(make_skt(p.clone()).is_err());
        p.d = vec![1.0, 1.0];
        p.lambda0 = 0.0;
        assert!(make_skt(p.clone()).is_err());
        p.lambda0 = 1.0;
        assert!(make_generalized_skt(p.clone(), -1.0).is_err());
        p.alpha = vec![vec![0.0; 3]; 2];
        assert!(make_skt(p).is_err());
    }

    #[test]
    fn skt_majorant_dominates_on_samples() {
        let params = two_species([[0.7, -0.3], [0.2, 1.1]], [[-1.0, 0.4], [0.3, -0.2]], [0.5, -0.7]);
        let model = make_skt(params).unwrap();
        let mut jac = [0.0; 4];
        for u in sample_states(2, 2000, 100.0, 11) {
            model.reaction_jacobian(&u, &mut jac);
            let j = frobenius(&jac);
            assert!(j * j / model.ellipticity(&u) <= model.majorant(&u));
        }
    }
}

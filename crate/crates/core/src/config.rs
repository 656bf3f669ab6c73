//! Scenario files (TOML). Unknown keys are errors and `schema_version` must
//! match [`SCHEMA_VERSION`].

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::forward::SolverConfig;
use crate::grid::{smooth_random_field, Domain, Field};
use crate::model::{make_generalized_skt, CrossDiffusionModel, EllipticityKind, LinearModel, SktParams};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ModelSpec {
    /// SKT (`kappa = 0`) or generalized SKT.
    Skt {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        species: Option<usize>,
        d: Vec<f64>,
        alpha: Vec<Vec<f64>>,
        beta: Vec<Vec<f64>>,
        k: Vec<f64>,
        lambda0: f64,
        #[serde(default)]
        kappa: f64,
        #[serde(default)]
        ellipticity: EllipticityKind,
    },
    /// `P(u) = D u`, `f(u) = R u`.
    Linear {
        diffusion: Vec<Vec<f64>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        reaction: Option<Vec<Vec<f64>>>,
        lambda0: f64,
    },
}

fn flatten(rows: &[Vec<f64>], m: usize, what: &str) -> Result<Vec<f64>> {
    if rows.len() != m || rows.iter().any(|r| r.len() != m) {
        return Err(Error::Config(format!("{what} must be {m}x{m}")));
    }
    Ok(rows.iter().flatten().copied().collect())
}

impl ModelSpec {
    pub fn species(&self) -> usize {
        match self {
            ModelSpec::Skt { d, .. } => d.len(),
            ModelSpec::Linear { diffusion, .. } => diffusion.len(),
        }
    }

    pub fn build(&self) -> Result<Box<dyn CrossDiffusionModel>> {
        match self {
            ModelSpec::Skt {
                species,
                d,
                alpha,
                beta,
                k,
                lambda0,
                kappa,
                ellipticity,
            } => {
                if let Some(s) = species {
                    if *s != d.len() {
                        return Err(Error::Config(format!("species = {s} but d has {} entries", d.len())));
                    }
                }
                let params = SktParams {
                    d: d.clone(),
                    alpha: alpha.clone(),
                    beta: beta.clone(),
                    k: k.clone(),
                    lambda0: *lambda0,
                };
                Ok(Box::new(make_generalized_skt(params, *kappa)?.with_ellipticity(*ellipticity)))
            }
            ModelSpec::Linear {
                diffusion,
                reaction,
                lambda0,
            } => {
                let m = diffusion.len();
                let dm = flatten(diffusion, m, "diffusion")?;
                let rm = match reaction {
                    Some(r) => flatten(r, m, "reaction")?,
                    None => vec![0.0; m * m],
                };
                Ok(Box::new(LinearModel::new(m, dm, rm, *lambda0)?))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainSpec {
    pub lengths: Vec<f64>,
    pub nodes: Vec<usize>,
}

impl DomainSpec {
    pub fn build(&self) -> Result<Domain> {
        Domain::new(&self.lengths, &self.nodes)
    }

    /// The same box with `2^coarsen` times fewer intervals per axis.
    pub fn coarsened(&self, coarsen: u32) -> Result<DomainSpec> {
        let f = 1usize << coarsen;
        let nodes = self
            .nodes
            .iter()
            .map(|&n| {
                if (n - 1) % f != 0 {
                    Err(Error::Config(format!("{n} nodes cannot be coarsened by {f}")))
                } else {
                    Ok((n - 1) / f + 1)
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(DomainSpec {
            lengths: self.lengths.clone(),
            nodes,
        })
    }
}

/// Initial data; always zero on the boundary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum FieldSpec {
    /// `amplitude[c] Π_a sin(modes[a] π x_a / L_a)`.
    Sine {
        amplitude: Vec<f64>,
        #[serde(default = "default_modes")]
        modes: Vec<usize>,
    },
    /// Seeded random sine series, see [`smooth_random_field`].
    Random {
        #[serde(default = "default_max_mode")]
        max_mode: usize,
        #[serde(default = "one")]
        scale: f64,
    },
}

fn default_modes() -> Vec<usize> {
    vec![1, 1]
}
fn default_max_mode() -> usize {
    4
}
fn one() -> f64 {
    1.0
}

impl FieldSpec {
    pub fn build(&self, domain: Domain, m: usize, seed: u64) -> Result<Field> {
        match self {
            FieldSpec::Sine { amplitude, modes } => {
                if amplitude.len() != m {
                    return Err(Error::Config(format!("amplitude needs {m} entries")));
                }
                if modes.len() < domain.dim() {
                    return Err(Error::Config("modes needs one entry per axis".into()));
                }
                Ok(Field::dirichlet_from_fn(domain, m, |x, o| {
                    let s: f64 = (0..domain.dim())
                        .map(|a| (modes[a] as f64 * PI * x[a] / domain.length(a)).sin())
                        .product();
                    for c in 0..m {
                        o[c] = amplitude[c] * s;
                    }
                }))
            }
            FieldSpec::Random { max_mode, scale } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                Ok(smooth_random_field(domain, m, (*max_mode).max(1), &mut rng).scaled(*scale))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CheckKind {
    Structure,
    Exponents,
    WeakResidual,
    Jensen,
    Dual,
    Uniqueness,
    Energy,
    Apriori,
    Interpolation,
    ParabolicSobolev,
    SktL2,
    Bmo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExponentSpec {
    #[serde(rename = "N")]
    pub n: usize,
    pub p: f64,
    pub k: f64,
    pub l: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
}

/// Per-check parameters and tolerances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChecksSpec {
    pub select: Vec<CheckKind>,
    /// Mollification levels `n`.
    pub levels: Vec<u32>,
    pub sigma_grid: Vec<f64>,
    pub radii: Vec<f64>,
    pub quad_points: usize,
    /// `q₀`; defaults to `max(N/2, 1)`.
    pub q0: Option<f64>,
    pub sigma_n: f64,
    /// Ceiling on `max/min` of dual estimates across levels.
    pub spread_ceiling: f64,
    pub liminf_steps: usize,
    pub liminf_tol: f64,
    pub jensen_tol: f64,
    /// Relative stability allowed between ladder levels.
    pub stability: f64,
    /// Relative growth allowed under sample doubling.
    pub sample_stability: f64,
    /// Slack on σ-family bounds.
    pub apriori_tol: f64,
    /// Pairing threshold factor: `|⟨w(T),ψ⟩| ≤ pairing_tol·‖ψ‖·sup_t‖u₁‖`.
    pub pairing_tol: f64,
    /// BMO smallness target at the smallest radius.
    pub mu: f64,
    /// Number of ladder levels for refinement-stability checks.
    pub ladder: u32,
    pub samples: usize,
    pub sample_radius: f64,
    pub eps0: f64,
    pub sktfu_c: f64,
    pub psi: Option<FieldSpec>,
    pub exponents: Option<ExponentSpec>,
}

impl Default for ChecksSpec {
    fn default() -> Self {
        Self {
            select: Vec::new(),
            levels: vec![2, 4, 8, 16],
            sigma_grid: vec![0.0, 0.25, 0.5, 0.75, 1.0],
            radii: vec![0.25, 0.125, 0.0625],
            quad_points: 2,
            q0: None,
            sigma_n: 4.0,
            spread_ceiling: 2.0,
            liminf_steps: 10,
            liminf_tol: 0.05,
            jensen_tol: 1e-6,
            stability: 0.2,
            sample_stability: 0.1,
            apriori_tol: 0.05,
            pairing_tol: 1e-4,
            mu: 1.0,
            ladder: 2,
            samples: 200,
            sample_radius: 10.0,
            eps0: 0.1,
            sktfu_c: 1.0,
            psi: None,
            exponents: None,
        }
    }
}

impl ChecksSpec {
    /// Applies a `--tol key=value` override.
    pub fn set_tolerance(&mut self, key: &str, value: f64) -> Result<()> {
        let slot = match key {
            "spread_ceiling" => &mut self.spread_ceiling,
            "liminf" | "liminf_tol" => &mut self.liminf_tol,
            "jensen" | "jensen_tol" => &mut self.jensen_tol,
            "stability" => &mut self.stability,
            "sample_stability" => &mut self.sample_stability,
            "apriori" | "apriori_tol" => &mut self.apriori_tol,
            "pairing" | "pairing_tol" => &mut self.pairing_tol,
            "mu" => &mut self.mu,
            _ => return Err(Error::Config(format!("unknown tolerance {key:?}"))),
        };
        if !(value >= 0.0 && value.is_finite()) {
            return Err(Error::Config(format!("tolerance {key} must be finite and >= 0")));
        }
        *slot = value;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub schema_version: u32,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub domain: Option<DomainSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial: Option<FieldSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub solver: Option<SolverConfig>,
    #[serde(default)]
    pub checks: ChecksSpec,
}

impl Scenario {
    pub fn from_toml(text: &str) -> Result<Self> {
        let s: Scenario = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    /// Validates every section that is present.
    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        let wrap = |e: Error| match e {
            Error::Config(_) => e,
            other => Error::Config(other.to_string()),
        };
        let model = self.model.as_ref().map(|m| m.build()).transpose().map_err(wrap)?;
        let domain = self.domain.as_ref().map(|d| d.build()).transpose().map_err(wrap)?;
        if let Some(s) = &self.solver {
            s.validate().map_err(wrap)?;
        }
        if let (Some(init), Some(d), Some(m)) = (&self.initial, domain, &model) {
            init.build(d, m.species(), self.seed).map_err(wrap)?;
        }
        if let (Some(psi), Some(d), Some(m)) = (&self.checks.psi, domain, &model) {
            psi.build(d, m.species(), self.seed).map_err(wrap)?;
        }
        let c = &self.checks;
        if c.levels.contains(&0) {
            return Err(Error::Config("mollification levels must be >= 1".into()));
        }
        if c.sigma_grid.iter().any(|s| !(0.0..=1.0).contains(s)) {
            return Err(Error::Config("sigma_grid values must lie in [0, 1]".into()));
        }
        if c.radii.iter().any(|r| !(*r > 0.0)) {
            return Err(Error::Config("radii must be positive".into()));
        }
        if c.quad_points == 0 || c.ladder == 0 {
            return Err(Error::Config("quad_points and ladder must be >= 1".into()));
        }
        if let Some(e) = &c.exponents {
            crate::exponents::exponent_table(e.n, e.p, e.k, e.l, e.sigma).map_err(wrap)?;
        }
        Ok(())
    }

    /// SHA-256 of the canonical serialization (after overrides), hex encoded.
    pub fn hash(&self) -> String {
        let canonical = toml::to_string(self).expect("scenario serializes");
        let digest = Sha256::digest(canonical.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn require_model(&self) -> Result<Box<dyn CrossDiffusionModel>> {
        self.model
            .as_ref()
            .ok_or_else(|| Error::Config("missing [model] section".into()))?
            .build()
    }

    pub fn require_domain(&self) -> Result<Domain> {
        self.domain
            .as_ref()
            .ok_or_else(|| Error::Config("missing [domain] section".into()))?
            .build()
    }

    pub fn require_solver(&self) -> Result<SolverConfig> {
        self.solver.clone().ok_or_else(|| Error::Config("missing [solver] section".into()))
    }

    pub fn initial_field(&self, domain: Domain, m: usize) -> Result<Field> {
        self.initial
            .as_ref()
            .ok_or_else(|| Error::Config("missing [initial] section".into()))?
            .build(domain, m, self.seed)
    }
}

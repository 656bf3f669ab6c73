//! Runs the checks selected in a [`Scenario`] and collects them into one
//! [`VerificationReport`]. Forward solves are cached so checks that share a
//! trajectory do not recompute it.

use crate::config::{CheckKind, FieldSpec, Scenario};
use crate::dual::{averaged_coefficients, dual_estimate_report, jensen_mollification_check, liminf_terminal_gradient_check, mollify, DualProblem};
use crate::error::{Error, Result};
use crate::exponents::exponent_table;
use crate::forward::{solve_family, Scheme, Solution, SolverConfig};
use crate::grid::{norm_lp, smooth_random_fields, sup_in_time, Domain, Field, Trajectory};
use crate::model::{sample_nonnegative_states, sample_states, CrossDiffusionModel};
use crate::report::{CheckEntry, CheckReport, VerificationReport};
use crate::structure::{check_condition_f, check_growth_conditions, check_sktfu, ellipticity_certificate, GrowthCeilings};
use crate::verify::{
    apriori_bounds_check, bmo_smallness_probe, energy_gronwall_check, interpolation_inequality_check, parabolic_sobolev_check,
    skt_l2_gronwall_check, uniqueness_pairing, very_weak_residual, PairingResult, TestFunction,
};

/// Interpolation parameters used by the `interpolation` check.
pub const INTERPOLATION_EPS: f64 = 0.1;
pub const INTERPOLATION_BETA: f64 = 1.0;
pub const INTERPOLATION_P: f64 = 2.0;
pub const INTERPOLATION_Q: f64 = 2.0;
/// Parabolic Sobolev parameters: `g = |u|²`, `G = |u|`, `p = 2`, `r = r*/2`;
/// `r*` is the choice below when `N ≤ p`.
pub const SOBOLEV_P: f64 = 2.0;
pub const SOBOLEV_R_STAR: f64 = 0.5;
pub const SOBOLEV_EPS: [f64; 3] = [1.0, 0.1, 0.01];
/// Time windows the forward trajectory is cut into for the Sobolev sample.
pub const SOBOLEV_WINDOWS: usize = 8;

/// A check that could not be evaluated, tagged with its name.
#[derive(Debug)]
pub struct CheckError {
    pub check: CheckKind,
    pub error: Error,
}

impl std::fmt::Display for CheckError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "check {:?} failed to run: {}", self.check, self.error)
    }
}

impl std::error::Error for CheckError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

pub fn check_name(kind: CheckKind) -> String {
    serde_json::to_value(kind)
        .ok()
        .and_then(|v| v.as_str().map(str::to_owned))
        .unwrap_or_default()
}

/// One pairing level: the result and the dual trajectory it used.
pub type PairingLevel = (PairingResult, Trajectory);

/// One rung of the simultaneous `(h, dt, n)` refinement of the pairing.
#[derive(Debug, Clone)]
pub struct RefinementLevel {
    pub nodes: usize,
    pub dt: f64,
    pub result: PairingResult,
    /// `‖ψ‖_{L²} · sup_t‖u₁‖_{L²}` on this level.
    pub scale: f64,
}

/// Lazily built state shared by the checks of one scenario.
pub struct Suite<'a> {
    pub scenario: &'a Scenario,
    model: Option<Box<dyn CrossDiffusionModel>>,
    base: Option<Solution>,
    semi: Option<Solution>,
    ladder: Option<Vec<Trajectory>>,
    pairings: Option<Vec<PairingLevel>>,
    refinement: Option<Vec<RefinementLevel>>,
}

impl<'a> Suite<'a> {
    pub fn new(scenario: &'a Scenario) -> Self {
        Self {
            scenario,
            model: None,
            base: None,
            semi: None,
            ladder: None,
            pairings: None,
            refinement: None,
        }
    }

    pub fn model(&mut self) -> Result<&dyn CrossDiffusionModel> {
        if self.model.is_none() {
            self.model = Some(self.scenario.require_model()?);
        }
        Ok(self.model.as_deref().expect("model built"))
    }

    fn species(&mut self) -> Result<usize> {
        Ok(self.model()?.species())
    }

    pub fn domain(&self) -> Result<Domain> {
        self.scenario.require_domain()
    }

    pub fn q0(&self) -> Result<f64> {
        match self.scenario.checks.q0 {
            Some(q) => Ok(q),
            None => Ok((self.domain()?.dim() as f64 / 2.0).max(1.0)),
        }
    }

    /// Terminal data of the dual problem; defaults to `sin(πx)sin(πy)` in
    /// every component.
    pub fn psi(&mut self) -> Result<Field> {
        let domain = self.domain()?;
        self.psi_on(domain)
    }

    fn psi_on(&mut self, domain: Domain) -> Result<Field> {
        let m = self.species()?;
        let spec = self.scenario.checks.psi.clone().unwrap_or(FieldSpec::Sine {
            amplitude: vec![1.0; m],
            modes: vec![1, 1],
        });
        spec.build(domain, m, self.scenario.seed)
    }

    fn solve(&mut self, coarsen: u32, sigma: f64, scheme: Scheme) -> Result<Solution> {
        let spec = self
            .scenario
            .domain
            .as_ref()
            .ok_or_else(|| Error::Config("missing [domain] section".into()))?
            .coarsened(coarsen)?;
        let domain = spec.build()?;
        let base = self.scenario.require_solver()?;
        let cfg = SolverConfig {
            dt: base.dt * f64::from(1u32 << coarsen),
            sigma,
            scheme,
            ..base
        };
        let m = self.species()?;
        let u0 = self.scenario.initial_field(domain, m)?;
        solve_family(self.model()?, &u0, &cfg, None)
    }

    /// The forward solution on the configured grid with the configured scheme.
    pub fn base(&mut self) -> Result<&Solution> {
        if self.base.is_none() {
            let scheme = self.scenario.require_solver()?.scheme;
            let sigma = self.scenario.require_solver()?.sigma;
            self.base = Some(self.solve(0, sigma, scheme)?);
        }
        Ok(self.base.as_ref().expect("base solved"))
    }

    /// A second solution with the same data and the other time scheme.
    pub fn companion(&mut self) -> Result<&Solution> {
        if self.semi.is_none() {
            let cfg = self.scenario.require_solver()?;
            let other = match cfg.scheme {
                Scheme::FullyImplicit => Scheme::SemiImplicit,
                Scheme::SemiImplicit => Scheme::FullyImplicit,
            };
            self.semi = Some(self.solve(0, cfg.sigma, other)?);
        }
        Ok(self.semi.as_ref().expect("companion solved"))
    }

    /// Trajectories coarse to fine; level `i` of `L` has the grid and time step
    /// coarsened by `2^(L−1−i)`.
    pub fn ladder(&mut self) -> Result<&[Trajectory]> {
        if self.ladder.is_none() {
            let levels = self.scenario.checks.ladder;
            let cfg = self.scenario.require_solver()?;
            let mut out = Vec::with_capacity(levels as usize);
            for i in 0..levels {
                let coarsen = levels - 1 - i;
                if coarsen == 0 {
                    out.push(self.base()?.trajectory.clone());
                } else {
                    out.push(self.solve(coarsen, cfg.sigma, cfg.scheme)?.trajectory);
                }
            }
            self.ladder = Some(out);
        }
        Ok(self.ladder.as_deref().expect("ladder solved"))
    }

    /// Pairings of the two schemes' solutions at every mollification level.
    pub fn pairings(&mut self) -> Result<&[PairingLevel]> {
        if self.pairings.is_none() {
            let u1 = self.base()?.trajectory.clone();
            let u2 = self.companion()?.trajectory.clone();
            let psi = self.psi()?;
            let q0 = self.q0()?;
            let c = &self.scenario.checks;
            let (levels, quad, sigma_n) = (c.levels.clone(), c.quad_points, c.sigma_n);
            let model = self.model()?;
            let out = levels
                .iter()
                .map(|&n| uniqueness_pairing(model, &u1, &u2, &psi, n, quad, q0, sigma_n))
                .collect::<Result<Vec<_>>>()?;
            self.pairings = Some(out);
        }
        Ok(self.pairings.as_deref().expect("pairings computed"))
    }

    /// Level `i` of the ladder paired with its other-scheme companion at
    /// mollification level `levels[i]` (the last level repeats if the list
    /// is shorter than the ladder).
    pub fn refinement(&mut self) -> Result<&[RefinementLevel]> {
        if self.refinement.is_none() {
            let ladder = self.ladder()?.to_vec();
            let cfg = self.scenario.require_solver()?;
            let other = match cfg.scheme {
                Scheme::FullyImplicit => Scheme::SemiImplicit,
                Scheme::SemiImplicit => Scheme::FullyImplicit,
            };
            let q0 = self.q0()?;
            let c = self.scenario.checks.clone();
            let last = *c.levels.last().ok_or_else(|| Error::Config("levels must not be empty".into()))?;
            let mut out = Vec::with_capacity(ladder.len());
            for (i, u1) in ladder.iter().enumerate() {
                let coarsen = (ladder.len() - 1 - i) as u32;
                let u2 = if coarsen == 0 {
                    self.companion()?.trajectory.clone()
                } else {
                    self.solve(coarsen, cfg.sigma, other)?.trajectory
                };
                let psi = self.psi_on(*u1.domain())?;
                let n = c.levels.get(i).copied().unwrap_or(last);
                let (result, _) = uniqueness_pairing(self.model()?, u1, &u2, &psi, n, c.quad_points, q0, c.sigma_n)?;
                out.push(RefinementLevel {
                    nodes: u1.domain().node_count(),
                    dt: u1.dt,
                    result,
                    scale: norm_lp(&psi, 2.0) * sup_in_time(u1, |f| norm_lp(f, 2.0)),
                });
            }
            self.refinement = Some(out);
        }
        Ok(self.refinement.as_deref().expect("refinement computed"))
    }

    pub fn run(&mut self, kind: CheckKind) -> Result<CheckReport> {
        let mut report = match kind {
            CheckKind::Structure => self.structure(),
            CheckKind::Exponents => self.exponents(),
            CheckKind::WeakResidual => self.weak_residual(),
            CheckKind::Jensen => self.jensen(),
            CheckKind::Dual => self.dual(),
            CheckKind::Uniqueness => self.uniqueness(),
            CheckKind::Energy => self.energy(),
            CheckKind::Apriori => self.apriori(),
            CheckKind::Interpolation => self.interpolation(),
            CheckKind::ParabolicSobolev => self.parabolic_sobolev(),
            CheckKind::SktL2 => self.skt_l2(),
            CheckKind::Bmo => self.bmo(),
        }?;
        report.name = check_name(kind);
        Ok(report)
    }

    fn structure(&mut self) -> Result<CheckReport> {
        let c = self.scenario.checks.clone();
        let seed = self.scenario.seed;
        let model = self.model()?;
        let m = model.species();
        let ball = sample_states(m, c.samples, c.sample_radius, seed);
        let positive = sample_nonnegative_states(m, c.samples, c.sample_radius, seed ^ 1);
        let mut r = CheckReport::new("structure");
        let mut floor = f64::INFINITY;
        let mut certified = 0usize;
        for u in &positive {
            let cert = ellipticity_certificate(model, u);
            floor = floor.min(cert.min_quadratic_form);
            certified += usize::from(cert.passes);
        }
        r.push(
            CheckEntry::new("ellipticity_floor", model.lambda0(), floor, 0.0, 1e-10)
                .with("certified_fraction", certified as f64 / positive.len().max(1) as f64),
        );
        for sub in [
            check_condition_f(model, &ball, c.samples, seed)?,
            check_growth_conditions(model, &ball, 1e-3, GrowthCeilings::default())?,
            check_sktfu(model, c.eps0, c.sktfu_c, &positive, 1e-10)?,
        ] {
            for mut e in sub.entries {
                e.name = format!("{}.{}", sub.name, e.name);
                r.push(e);
            }
        }
        Ok(r)
    }

    fn exponents(&mut self) -> Result<CheckReport> {
        let e = self
            .scenario
            .checks
            .exponents
            .clone()
            .ok_or_else(|| Error::Config("exponents check needs [checks.exponents]".into()))?;
        let t = exponent_table(e.n, e.p, e.k, e.l, e.sigma)?;
        let flag = |b: bool| if b { 1.0 } else { 0.0 };
        let mut r = CheckReport::new("exponents");
        r.push(
            CheckEntry::exact("table", 0.0, 0.0)
                .with("N", t.n as f64)
                .with("p", t.p)
                .with("k", t.k)
                .with("l", t.l)
                .with("sigma_N", t.sigma_n)
                .with("p2", t.p2)
                .with("p_sigma_N", t.p_sigma_n)
                .with("q0", t.q0)
                .with("r_required", t.r_required)
                .with("p_required", t.p_required)
                .with("p_ok", flag(t.p_ok))
                .with("skt_uni_ok", flag(t.skt_uni_ok))
                .with("gen_skt_uni_ok", flag(t.gen_skt_uni_ok)),
        );
        Ok(r)
    }

    /// Very weak residuals must shrink from the coarser to the finer ladder level.
    fn weak_residual(&mut self) -> Result<CheckReport> {
        let ladder = self.ladder()?.to_vec();
        let model = self.model()?;
        let m = model.species();
        let worst = |t: &Trajectory| {
            TestFunction::library(t.domain(), m, 6)
                .iter()
                .map(|phi| very_weak_residual(model, t, phi))
                .fold(0.0, f64::max)
        };
        let fine = worst(ladder.last().expect("non-empty ladder"));
        let mut r = CheckReport::new("weak_residual");
        if ladder.len() > 1 {
            let coarse = worst(&ladder[ladder.len() - 2]);
            r.push(CheckEntry::exact("refinement", fine, coarse).with("coarse", coarse).with("fine", fine));
        } else {
            r.push(CheckEntry::new("residual", fine, 0.0, 0.0, f64::INFINITY).with("fine", fine));
        }
        Ok(r)
    }

    fn jensen(&mut self) -> Result<CheckReport> {
        let q0 = self.q0()?;
        let c = self.scenario.checks.clone();
        let traj = self.base()?.trajectory.clone();
        let model = self.model()?;
        jensen_mollification_check(&traj, &c.levels, q0, &|u: &[f64]| model.majorant(u), c.jensen_tol)
    }

    fn dual(&mut self) -> Result<CheckReport> {
        let c = self.scenario.checks.clone();
        let u1 = self.base()?.trajectory.clone();
        let u2 = self.companion()?.trajectory.clone();
        let psi = self.psi()?;
        let levels: Vec<_> = self.pairings()?.iter().map(|(p, d)| (p.n, p.estimates, d.clone())).collect();
        let mut r = dual_estimate_report(&levels.iter().map(|(n, e, _)| (*n, *e)).collect::<Vec<_>>(), c.spread_ceiling);
        let model = self.model()?;
        for (n, _, dual) in &levels {
            let coeffs = averaged_coefficients(model, &mollify(&u1, *n)?, &mollify(&u2, *n)?, c.quad_points)?;
            let problem = DualProblem::new(coeffs, psi.clone())?;
            let mut e = liminf_terminal_gradient_check(&problem, dual, c.liminf_steps, c.liminf_tol);
            e.name = format!("{}_n{n}", e.name);
            r.push(e);
        }
        Ok(r)
    }

    /// `|⟨w(T),ψ⟩|` decreases along the refinement and ends under
    /// `pairing_tol·‖ψ‖·sup_t‖u₁‖`.
    fn uniqueness(&mut self) -> Result<CheckReport> {
        let tol = self.scenario.checks.pairing_tol;
        let levels = self.refinement()?;
        let mut r = CheckReport::new("uniqueness");
        for (i, pair) in levels.windows(2).enumerate() {
            let (prev, cur) = (&pair[0].result, &pair[1].result);
            r.push(
                CheckEntry::exact(format!("decrease_level{}", i + 1), cur.pairing.abs(), prev.pairing.abs())
                    .with("n", f64::from(cur.n))
                    .with("dt", pair[1].dt),
            );
        }
        let fine = levels.last().expect("non-empty ladder");
        r.push(
            CheckEntry::exact("threshold", fine.result.pairing.abs(), tol * fine.scale)
                .with("pairing_tol", tol)
                .with("n", f64::from(fine.result.n))
                .with("rhs_diffusion", fine.result.rhs_diffusion)
                .with("rhs_reaction", fine.result.rhs_reaction),
        );
        Ok(r)
    }

    fn energy(&mut self) -> Result<CheckReport> {
        let rel = self.scenario.checks.stability;
        let seed = self.scenario.seed;
        let ladder = self.ladder()?.to_vec();
        let model = self.model()?;
        let m = model.species();
        let mut f = vec![0.0; m];
        let reaction_free = sample_states(m, 64, 10.0, seed).iter().all(|u| {
            model.reaction(u, &mut f);
            f.iter().all(|v| *v == 0.0)
        });
        energy_gronwall_check(model, &ladder, rel, reaction_free)
    }

    fn apriori(&mut self) -> Result<CheckReport> {
        let c = self.scenario.checks.clone();
        let q0 = self.q0()?;
        let scheme = self.scenario.require_solver()?.scheme;
        let mut family = Vec::with_capacity(c.sigma_grid.len());
        for &s in &c.sigma_grid {
            family.push((s, self.solve(0, s, scheme)?.trajectory));
        }
        apriori_bounds_check(self.model()?, &family, q0, c.apriori_tol)
    }

    fn interpolation(&mut self) -> Result<CheckReport> {
        let c = &self.scenario.checks;
        let domain = self.domain()?;
        let fields = smooth_random_fields(domain, 1, 4, c.samples, self.scenario.seed);
        interpolation_inequality_check(
            &fields,
            INTERPOLATION_EPS,
            INTERPOLATION_BETA,
            INTERPOLATION_P,
            INTERPOLATION_Q,
            c.sample_stability,
        )
    }

    fn parabolic_sobolev(&mut self) -> Result<CheckReport> {
        let rel = self.scenario.checks.sample_stability;
        let traj = self.base()?.trajectory.clone();
        let pairs = sobolev_windows(&traj, SOBOLEV_WINDOWS);
        let n = traj.domain().dim() as f64;
        let (choice, r_star) = if n > SOBOLEV_P { (None, SOBOLEV_P / n) } else { (Some(SOBOLEV_R_STAR), SOBOLEV_R_STAR) };
        parabolic_sobolev_check(&pairs, SOBOLEV_P, r_star / 2.0, choice, &SOBOLEV_EPS, rel)
    }

    fn skt_l2(&mut self) -> Result<CheckReport> {
        let rel = self.scenario.checks.stability;
        let ladder = self.ladder()?.to_vec();
        let k = self.model()?.growth_k();
        skt_l2_gronwall_check(&ladder, k, rel)
    }

    fn bmo(&mut self) -> Result<CheckReport> {
        let c = self.scenario.checks.clone();
        let traj = self.base()?.trajectory.clone();
        bmo_smallness_probe(&traj, &c.radii, c.mu)
    }
}

/// Cuts a trajectory into `windows` consecutive time windows and returns the
/// `(g, G) = (|u|², |u|)` pairs on each.
pub fn sobolev_windows(traj: &Trajectory, windows: usize) -> Vec<(Trajectory, Trajectory)> {
    let slices = traj.len();
    let windows = windows.clamp(1, (slices - 1).max(1));
    let per = (slices - 1) / windows;
    (0..windows)
        .map(|w| {
            let start = w * per;
            let fields = &traj.fields()[start..=start + per];
            let t0 = traj.time(start);
            let g = fields.iter().map(|f| f.map_nodes(1, |u, o| o[0] = u.iter().map(|v| v * v).sum())).collect();
            let big = fields.iter().map(|f| f.map_nodes(1, |u, o| o[0] = u.iter().map(|v| v * v).sum::<f64>().sqrt())).collect();
            (
                Trajectory::from_fields(t0, traj.dt, g).expect("same grid"),
                Trajectory::from_fields(t0, traj.dt, big).expect("same grid"),
            )
        })
        .collect()
}

/// Runs every selected check in order. A check that cannot be evaluated
/// aborts the run with its name attached.
pub fn run_selected(scenario: &Scenario) -> std::result::Result<VerificationReport, CheckError> {
    let mut report = VerificationReport::new();
    report.meta("config_hash", scenario.hash());
    report.meta("seed", scenario.seed);
    let mut suite = Suite::new(scenario);
    for &kind in &scenario.checks.select {
        log::info!("running check {}", check_name(kind));
        let r = suite.run(kind).map_err(|error| CheckError { check: kind, error })?;
        report.add(r);
    }
    Ok(report)
}

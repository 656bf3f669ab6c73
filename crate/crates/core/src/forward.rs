//! Backward-Euler time stepping for `w_t = Δ(P(w)) + σ² f(w) + g` with
//! homogeneous Dirichlet data, Newton iteration with step halving, and the
//! σ-family driver starting from `σ u₀`.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::grid::{laplacian, Domain, Field, Trajectory};
use crate::model::CrossDiffusionModel;
use crate::stencil::{assemble, Form, InteriorIndex};
use crate::structure::ellipticity_certificate;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    #[default]
    FullyImplicit,
    /// One linearization about the previous slice per step.
    SemiImplicit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    pub dt: f64,
    #[serde(rename = "T")]
    pub horizon: f64,
    #[serde(default = "default_tol")]
    pub newton_tol: f64,
    #[serde(default = "default_max_iter")]
    pub newton_max_iter: usize,
    #[serde(default = "default_sigma")]
    pub sigma: f64,
    #[serde(default)]
    pub scheme: Scheme,
}

fn default_tol() -> f64 {
    1e-10
}
fn default_max_iter() -> usize {
    25
}
fn default_sigma() -> f64 {
    1.0
}

const MAX_HALVINGS: usize = 8;

impl SolverConfig {
    pub fn new(dt: f64, horizon: f64) -> Self {
        Self {
            dt,
            horizon,
            newton_tol: default_tol(),
            newton_max_iter: default_max_iter(),
            sigma: default_sigma(),
            scheme: Scheme::FullyImplicit,
        }
    }

    pub fn with_sigma(mut self, sigma: f64) -> Self {
        self.sigma = sigma;
        self
    }

    pub fn with_scheme(mut self, scheme: Scheme) -> Self {
        self.scheme = scheme;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(invalid(format!("dt must be > 0, got {}", self.dt)));
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(invalid(format!("T must be > 0, got {}", self.horizon)));
        }
        if !(0.0..=1.0).contains(&self.sigma) {
            return Err(invalid(format!("sigma must lie in [0, 1], got {}", self.sigma)));
        }
        if !(self.newton_tol > 0.0) || self.newton_max_iter == 0 {
            return Err(invalid("newton_tol must be > 0 and newton_max_iter >= 1"));
        }
        self.steps().map(|_| ())
    }

    /// Number of steps `T/dt`, which must be an integer up to rounding.
    pub fn steps(&self) -> Result<usize> {
        let k = (self.horizon / self.dt).round();
        if k < 1.0 || ((k * self.dt - self.horizon) / self.horizon).abs() > 1e-9 {
            return Err(invalid(format!("T = {} is not a multiple of dt = {}", self.horizon, self.dt)));
        }
        Ok(k as usize)
    }
}

/// Forcing `g(x, t, out)` added to the right-hand side.
pub type Source<'a> = &'a (dyn Fn(&[f64], f64, &mut [f64]) + Sync);

/// Outcome of one implicit step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepInfo {
    pub newton_iters: usize,
    /// Discrete `L²` norm of the nonlinear residual at the accepted iterate.
    pub residual: f64,
}

/// Per-slice record kept by [`solve_family`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepDiagnostics {
    pub t: f64,
    pub newton_iters: usize,
    pub residual: f64,
    /// `∫λ²(w)|Dw|²`.
    pub energy_lambda: f64,
    /// `∫|A(w)Dw|² = ∫|D(P(w))|²`.
    pub energy_a: f64,
}

#[derive(Debug, Clone)]
pub struct Solution {
    pub trajectory: Trajectory,
    pub diagnostics: Vec<StepDiagnostics>,
}

/// Pointwise `P(w)`.
pub fn pressure_field(model: &dyn CrossDiffusionModel, w: &Field) -> Field {
    w.map_nodes(model.species(), |u, o| model.pressure(u, o))
}

/// Pointwise `f(w)`.
pub fn reaction_field(model: &dyn CrossDiffusionModel, w: &Field) -> Field {
    w.map_nodes(model.species(), |u, o| model.reaction(u, o))
}

/// `∫|A(w)Dw|²`, evaluated as the staggered Dirichlet energy of `P(w)`.
pub fn energy_a(model: &dyn CrossDiffusionModel, w: &Field) -> f64 {
    crate::grid::dirichlet_energy(&pressure_field(model, w))
}

/// `∫λ²(w)|Dw|²` on edges with `λ` at the edge midpoint.
pub fn energy_lambda(model: &dyn CrossDiffusionModel, w: &Field) -> f64 {
    weighted_gradient_energy(w, |u| model.ellipticity(u).powi(2))
}

/// `∫ ρ(w)|Dw|²` on edges with `ρ` at the edge midpoint state.
pub fn weighted_gradient_energy(w: &Field, rho: impl Fn(&[f64]) -> f64) -> f64 {
    let m = w.components();
    let d = *w.domain();
    let mut mid = vec![0.0; m];
    let mut acc = 0.0;
    d.for_each_edge(|axis, a, b, wt| {
        let h = d.h(axis);
        let (ua, ub) = (w.node(a), w.node(b));
        let mut g2 = 0.0;
        for c in 0..m {
            mid[c] = 0.5 * (ua[c] + ub[c]);
            g2 += ((ub[c] - ua[c]) / h).powi(2);
        }
        acc += wt * rho(&mid) * g2;
    });
    acc
}

struct Stepper<'a> {
    model: &'a dyn CrossDiffusionModel,
    domain: Domain,
    index: InteriorIndex,
    m: usize,
    dt: f64,
    s2: f64,
}

impl<'a> Stepper<'a> {
    fn new(model: &'a dyn CrossDiffusionModel, domain: Domain, dt: f64, sigma: f64) -> Self {
        let m = model.species();
        Self {
            model,
            domain,
            index: InteriorIndex::new(&domain, m),
            m,
            dt,
            s2: sigma * sigma,
        }
    }

    /// `u − dt Δ P(u) − dt σ² f(u) − dt g − u_prev` on interior nodes.
    fn residual(&self, u: &Field, u_prev: &Field, g: Option<&Field>) -> Field {
        let lp = laplacian(&pressure_field(self.model, u));
        let f = reaction_field(self.model, u);
        let mut r = Field::zeros(self.domain, self.m);
        for &k in self.index.nodes() {
            let out = r.node_mut(k);
            for c in 0..self.m {
                let mut v = u.node(k)[c] - self.dt * lp.node(k)[c] - self.dt * self.s2 * f.node(k)[c]
                    - u_prev.node(k)[c];
                if let Some(g) = g {
                    v -= self.dt * g.node(k)[c];
                }
                out[c] = v;
            }
        }
        r
    }

    fn norm(&self, r: &Field) -> f64 {
        crate::grid::norm_lp(r, 2.0)
    }

    /// Solves `J δ = −r` with `J = I − dt Δ A(u) − dt σ² f_u(u)`.
    fn newton_direction(&self, u: &Field, r: &Field, t: f64, step: usize) -> Result<Field> {
        let m = self.m;
        let mm = m * m;
        let nodes = self.domain.node_count();
        let mut a = vec![0.0; nodes * mm];
        let mut jf = vec![0.0; nodes * mm];
        for k in 0..nodes {
            self.model.pressure_jacobian(u.node(k), &mut a[k * mm..(k + 1) * mm]);
            self.model.reaction_jacobian(u.node(k), &mut jf[k * mm..(k + 1) * mm]);
        }
        if self.s2 != 1.0 {
            jf.iter_mut().for_each(|v| *v *= self.s2);
        }
        let mat = assemble(&self.domain, &self.index, self.dt, &a, Some(&jf), Form::Divergence);
        let lu = mat.factor().map_err(|reason| {
            let failing = self
                .index
                .nodes()
                .iter()
                .filter(|&&k| !ellipticity_certificate(self.model, u.node(k)).passes)
                .count();
            if failing > 0 {
                Error::EllipticityLost { t, failing_nodes: failing }
            } else {
                Error::LinearSolveFailed { step, reason }
            }
        })?;
        let mut rhs: Vec<f64> = self.index.nodes().iter().flat_map(|&k| r.node(k).iter().map(|v| -v)).collect();
        lu.solve_in_place(&mut rhs);
        let mut delta = Field::zeros(self.domain, m);
        for (q, &k) in self.index.nodes().iter().enumerate() {
            delta.node_mut(k).copy_from_slice(&rhs[q * m..(q + 1) * m]);
        }
        Ok(delta)
    }

    fn warn_if_not_elliptic(&self, u: &Field, t: f64) {
        let failing = self
            .index
            .nodes()
            .iter()
            .filter(|&&k| !ellipticity_certificate(self.model, u.node(k)).passes)
            .count();
        if failing > 0 {
            log::warn!("ellipticity certificate fails at {failing} nodes before the step to t = {t}");
        }
    }

    fn step(&self, u_prev: &Field, t_next: f64, step: usize, g: Option<&Field>, cfg: &SolverConfig) -> Result<(Field, StepInfo)> {
        self.warn_if_not_elliptic(u_prev, t_next);
        let mut u = u_prev.clone();
        let mut r = self.residual(&u, u_prev, g);
        let mut rn = self.norm(&r);
        if cfg.scheme == Scheme::SemiImplicit {
            let delta = self.newton_direction(&u, &r, t_next, step)?;
            u = u.add(&delta);
            let rn = self.norm(&self.residual(&u, u_prev, g));
            return Ok((u, StepInfo { newton_iters: 1, residual: rn }));
        }
        let mut iters = 0;
        while rn > cfg.newton_tol {
            if iters == cfg.newton_max_iter {
                return Err(Error::NewtonDiverged { iterations: iters, residual: rn });
            }
            let delta = self.newton_direction(&u, &r, t_next, step)?;
            iters += 1;
            let mut scale = 1.0;
            let mut accepted = None;
            for _ in 0..=MAX_HALVINGS {
                let trial = u.add(&delta.scaled(scale));
                let tr = self.residual(&trial, u_prev, g);
                let tn = self.norm(&tr);
                if tn < rn && tn.is_finite() {
                    accepted = Some((trial, tr, tn));
                    break;
                }
                scale *= 0.5;
            }
            let Some((trial, tr, tn)) = accepted else {
                return Err(Error::NewtonDiverged { iterations: iters, residual: rn });
            };
            u = trial;
            r = tr;
            rn = tn;
        }
        Ok((u, StepInfo { newton_iters: iters, residual: rn }))
    }
}

fn source_field(domain: Domain, m: usize, source: Option<Source<'_>>, t: f64) -> Option<Field> {
    source.map(|g| Field::dirichlet_from_fn(domain, m, |x, o| g(x, t, o)))
}

/// One backward-Euler step from `u_prev` at time `t_prev`.
pub fn step_implicit(
    model: &dyn CrossDiffusionModel,
    u_prev: &Field,
    t_prev: f64,
    cfg: &SolverConfig,
    source: Option<Source<'_>>,
) -> Result<(Field, StepInfo)> {
    cfg.validate()?;
    check_field(model, u_prev)?;
    let d = *u_prev.domain();
    let stepper = Stepper::new(model, d, cfg.dt, cfg.sigma);
    let t = t_prev + cfg.dt;
    let g = source_field(d, model.species(), source, t);
    stepper.step(u_prev, t, 1, g.as_ref(), cfg)
}

fn check_field(model: &dyn CrossDiffusionModel, u: &Field) -> Result<()> {
    if u.components() != model.species() {
        return Err(Error::ShapeMismatch(format!(
            "field has {} components, model has {} species",
            u.components(),
            model.species()
        )));
    }
    if !u.satisfies_dirichlet() {
        return Err(invalid("initial field must vanish on the boundary"));
    }
    Ok(())
}

/// Solves the σ-family from `w(0) = σ u₀` up to `T`.
pub fn solve_family(
    model: &dyn CrossDiffusionModel,
    u0: &Field,
    cfg: &SolverConfig,
    source: Option<Source<'_>>,
) -> Result<Solution> {
    cfg.validate()?;
    check_field(model, u0)?;
    let steps = cfg.steps()?;
    let d = *u0.domain();
    let m = model.species();
    let stepper = Stepper::new(model, d, cfg.dt, cfg.sigma);
    let w0 = u0.scaled(cfg.sigma);
    let mut diagnostics = vec![StepDiagnostics {
        t: 0.0,
        newton_iters: 0,
        residual: 0.0,
        energy_lambda: energy_lambda(model, &w0),
        energy_a: energy_a(model, &w0),
    }];
    let mut traj = Trajectory::new(0.0, cfg.dt, w0);
    for n in 1..=steps {
        let t = n as f64 * cfg.dt;
        let g = source_field(d, m, source, t);
        let (next, info) = stepper
            .step(traj.last(), t, n, g.as_ref(), cfg)
            .map_err(|e| Error::StepFailed { t, source: Box::new(e) })?;
        diagnostics.push(StepDiagnostics {
            t,
            newton_iters: info.newton_iters,
            residual: info.residual,
            energy_lambda: energy_lambda(model, &next),
            energy_a: energy_a(model, &next),
        });
        traj.push(next);
    }
    Ok(Solution { trajectory: traj, diagnostics })
}

/// Columns `t,newton_iters,residual,energy_lambda,energy_a`.
pub fn write_diagnostics_csv<W: Write>(diag: &[StepDiagnostics], comments: &[(&str, &str)], mut out: W) -> Result<()> {
    for (k, v) in comments {
        writeln!(out, "# {k}={v}")?;
    }
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["t", "newton_iters", "residual", "energy_lambda", "energy_a"])?;
    for s in diag {
        w.write_record([
            s.t.to_string(),
            s.newton_iters.to_string(),
            s.residual.to_string(),
            s.energy_lambda.to_string(),
            s.energy_a.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{make_skt, LinearModel, SktParams};
    use std::f64::consts::PI;

    fn sine(d: Domain) -> Field {
        Field::dirichlet_from_fn(d, 1, |x, o| o[0] = (PI * x[0]).sin())
    }

    #[test]
    fn heat_step_scales_eigenfunction() {
        let d = Domain::interval(1.0, 33).unwrap();
        let u = sine(d);
        let cfg = SolverConfig::new(1e-2, 1e-2);
        let (next, info) = step_implicit(&LinearModel::heat(), &u, 0.0, &cfg, None).unwrap();
        let h = d.h(0);
        let mu = (4.0 / (h * h)) * (PI * h / 2.0).sin().powi(2);
        let factor = 1.0 / (1.0 + cfg.dt * mu);
        for k in 0..d.node_count() {
            assert!((next.node(k)[0] - factor * u.node(k)[0]).abs() < 1e-12);
        }
        assert!(info.newton_iters <= 2);
    }

    #[test]
    fn zero_is_a_fixed_point() {
        let d = Domain::rectangle(1.0, 1.0, 9, 9).unwrap();
        let p = SktParams {
            d: vec![1.0, 2.0],
            alpha: vec![vec![1.0, 0.5], vec![0.2, 1.0]],
            beta: vec![vec![0.0; 2]; 2],
            k: vec![0.0; 2],
            lambda0: 0.5,
        };
        let model = make_skt(p).unwrap();
        let cfg = SolverConfig::new(1e-2, 1e-1);
        let sol = solve_family(&model, &Field::zeros(d, 2), &cfg, None).unwrap();
        assert!(sol.trajectory.fields().iter().all(|f| f.max_abs() == 0.0));
    }

    #[test]
    fn sigma_zero_gives_zero_trajectory() {
        let d = Domain::interval(1.0, 17).unwrap();
        let cfg = SolverConfig::new(1e-2, 5e-2).with_sigma(0.0);
        let sol = solve_family(&LinearModel::heat(), &sine(d), &cfg, None).unwrap();
        assert!(sol.trajectory.fields().iter().all(|f| f.max_abs() == 0.0));
    }

    #[test]
    fn rejects_bad_config() {
        assert!(SolverConfig::new(0.0, 1.0).validate().is_err());
        assert!(SolverConfig::new(0.3, 1.0).validate().is_err());
        assert!(SolverConfig::new(0.1, 1.0).with_sigma(1.5).validate().is_err());
        let d = Domain::interval(1.0, 9).unwrap();
        let bad = Field::constant(d, &[1.0]);
        assert!(solve_family(&LinearModel::heat(), &bad, &SolverConfig::new(0.1, 0.1), None).is_err());
    }

    #[test]
    fn diagnostics_csv_has_header() {
        let d = Domain::interval(1.0, 9).unwrap();
        let sol = solve_family(&LinearModel::heat(), &sine(d), &SolverConfig::new(0.1, 0.2), None).unwrap();
        let mut buf = Vec::new();
        write_diagnostics_csv(&sol.diagnostics, &[("config_hash", "x")], &mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert!(s.starts_with("# config_hash=x\nt,newton_iters,residual,energy_lambda,energy_a\n"));
        assert_eq!(s.lines().count(), 5);
    }
}

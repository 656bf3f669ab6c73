//! Mollification, averaged coefficients and the backward linear dual system
//! `Ψ_t + 𝐚ᵀΔΨ + 𝐠ᵀΨ = 0`, `Ψ(T) = ψ`, with the estimates its solutions obey.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::grid::{dirichlet_energy, laplacian, norm_lp, norm_lp_spacetime, time_integral, Domain, Field, Trajectory};
use crate::linalg::{frobenius, gauss_legendre_unit, transpose};
use crate::model::CrossDiffusionModel;
use crate::report::{CheckEntry, CheckReport};
use crate::stencil::{assemble, Form, InteriorIndex};

/// Smooth bump `exp(−1/(1−r²))` on `r < 1`.
pub fn bump(r: f64) -> f64 {
    if r.abs() < 1.0 {
        (-1.0 / (1.0 - r * r)).exp()
    } else {
        0.0
    }
}

/// Level-`n` kernels `η_n(t) = n η(nt)` and `ρ_n(x) = n^N ρ(nx)`, supported
/// in `|t| < 1/n` and `|x| < 1/n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Mollifier {
    pub n: u32,
}

/// Symmetric weights `W` over a finite index set with rows summing to one:
/// off-diagonal entries are the sampled kernel divided by its full
/// (untruncated) mass, and whatever falls outside the set returns to the
/// diagonal. Row- and column-stochastic, so discrete Jensen holds.
#[derive(Debug, Clone)]
struct Stencil {
    /// `(offset, weight)` pairs for nonzero offsets, weights already normalized.
    offsets: Vec<([isize; 2], f64)>,
}

impl Stencil {
    fn build(reach: [isize; 2], profile: impl Fn([isize; 2]) -> f64) -> Self {
        let mut raw = Vec::new();
        let mut mass = 0.0;
        for dj in -reach[1]..=reach[1] {
            for di in -reach[0]..=reach[0] {
                let w = profile([di, dj]);
                if w > 0.0 {
                    mass += w;
                    if di != 0 || dj != 0 {
                        raw.push(([di, dj], w));
                    }
                }
            }
        }
        let offsets = if mass > 0.0 {
            raw.into_iter().map(|(o, w)| (o, w / mass)).collect()
        } else {
            Vec::new()
        };
        Self { offsets }
    }
}

impl Mollifier {
    pub fn new(n: u32) -> Result<Self> {
        if n == 0 {
            return Err(invalid("mollification level must be >= 1"));
        }
        Ok(Self { n })
    }

    pub fn radius(&self) -> f64 {
        1.0 / self.n as f64
    }

    fn space_stencil(&self, d: &Domain) -> Stencil {
        let n = self.n as f64;
        let reach = [0, 1].map(|a| {
            if a < d.dim() {
                (self.radius() / d.h(a)).ceil() as isize
            } else {
                0
            }
        });
        Stencil::build(reach, |o| {
            let x = o[0] as f64 * d.h(0);
            let y = if d.dim() == 2 { o[1] as f64 * d.h(1) } else { 0.0 };
            bump(n * (x * x + y * y).sqrt())
        })
    }

    fn time_stencil(&self, dt: f64) -> Stencil {
        let n = self.n as f64;
        let reach = (self.radius() / dt).ceil() as isize;
        Stencil::build([reach, 0], |o| bump(n * o[0] as f64 * dt))
    }

    /// Spatial convolution of one slice; acts on interior nodes and leaves
    /// the (zero) boundary untouched.
    pub fn mollify_field(&self, f: &Field) -> Field {
        let d = *f.domain();
        let st = self.space_stencil(&d);
        let m = f.components();
        let mut out = f.clone();
        let (nx, ny) = (d.nodes(0) as isize, d.nodes(1) as isize);
        let inside = |i: isize, j: isize| {
            i >= 1 && i <= nx - 2 && (d.dim() == 1 || (j >= 1 && j <= ny - 2))
        };
        for k in d.interior_nodes() {
            let (i, j) = d.ij(k);
            let (i, j) = (i as isize, j as isize);
            let mut acc = vec![0.0; m];
            let mut kept = 0.0;
            for &([di, dj], w) in &st.offsets {
                if !inside(i + di, j + dj) {
                    continue;
                }
                let nb = d.index((i + di) as usize, (j + dj) as usize);
                kept += w;
                for (a, v) in acc.iter_mut().zip(f.node(nb)) {
                    *a += w * v;
                }
            }
            let center = 1.0 - kept;
            for (c, a) in acc.iter().enumerate() {
                out.node_mut(k)[c] = a + center * f.node(k)[c];
            }
        }
        out
    }

    /// Spatial mollification of every slice.
    pub fn mollify_slices(&self, traj: &Trajectory) -> Trajectory {
        traj.map_fields(|f| self.mollify_field(f))
    }

    /// Convolution in time only, over the available slices.
    pub fn mollify_time(&self, traj: &Trajectory) -> Trajectory {
        let st = self.time_stencil(traj.dt);
        let len = traj.len() as isize;
        let fields = (0..len)
            .map(|s| {
                let mut acc = traj.fields()[s as usize].clone();
                let mut kept = 0.0;
                let mut sum = Field::zeros(*traj.domain(), traj.components());
                for &([ds, _], w) in &st.offsets {
                    let t = s + ds;
                    if t < 0 || t >= len {
                        continue;
                    }
                    kept += w;
                    sum = sum.add(&traj.fields()[t as usize].scaled(w));
                }
                acc = acc.scaled(1.0 - kept).add(&sum);
                acc
            })
            .collect();
        Trajectory::from_fields(traj.t0, traj.dt, fields).expect("same shapes")
    }

    /// Space-time mollification `(η_n ρ_n) * u`.
    pub fn mollify(&self, traj: &Trajectory) -> Trajectory {
        self.mollify_slices(&self.mollify_time(traj))
    }
}

/// `mollify(traj, n)` as a free function.
pub fn mollify(traj: &Trajectory, n: u32) -> Result<Trajectory> {
    Ok(Mollifier::new(n)?.mollify(traj))
}

/// Segment averages of the Jacobians along `s u₁ + (1−s) u₂` on every
/// space-time node. Blocks are row-major `m×m`, node-major within a slice.
#[derive(Debug, Clone)]
pub struct AveragedCoefficients {
    pub domain: Domain,
    pub m: usize,
    pub t0: f64,
    pub dt: f64,
    /// `𝐚(u₁,u₂)` per slice.
    pub a: Vec<Vec<f64>>,
    /// `𝐠(u₁,u₂)` per slice.
    pub g: Vec<Vec<f64>>,
    /// `λ_*` per slice and node.
    pub lambda_star: Vec<Vec<f64>>,
}

impl AveragedCoefficients {
    pub fn slices(&self) -> usize {
        self.a.len()
    }

    pub fn horizon(&self) -> f64 {
        self.t0 + self.dt * (self.slices() - 1) as f64
    }

    /// Coefficients with constant `𝒜 = aᵀ` and `𝒢 = gᵀ` blocks (for oracles).
    pub fn constant(domain: Domain, m: usize, t0: f64, dt: f64, slices: usize, a: &[f64], g: &[f64], lambda: f64) -> Self {
        let nodes = domain.node_count();
        let rep = |b: &[f64]| vec![b.iter().copied().cycle().take(nodes * m * m).collect::<Vec<_>>(); slices];
        Self {
            domain,
            m,
            t0,
            dt,
            a: rep(a),
            g: rep(g),
            lambda_star: vec![vec![lambda; nodes]; slices],
        }
    }

    /// `g_* = |𝒢|² / λ_*` on one slice.
    pub fn g_star(&self, slice: usize) -> Field {
        let mm = self.m * self.m;
        let vals = (0..self.domain.node_count())
            .map(|k| frobenius(&self.g[slice][k * mm..(k + 1) * mm]).powi(2) / self.lambda_star[slice][k])
            .collect();
        Field::from_values(self.domain, 1, vals).expect("shape")
    }
}

/// Gauss–Legendre averages of `P_u`, `f_u` and `λ` along the segment between
/// `u₁` and `u₂` at every node of every slice.
pub fn averaged_coefficients(
    model: &dyn CrossDiffusionModel,
    u1: &Trajectory,
    u2: &Trajectory,
    quad_points: usize,
) -> Result<AveragedCoefficients> {
    if !u1.same_grid(u2) {
        return Err(Error::ShapeMismatch("trajectories differ in grid or time levels".into()));
    }
    let m = model.species();
    if u1.components() != m {
        return Err(Error::ShapeMismatch("trajectory components differ from species".into()));
    }
    if quad_points == 0 {
        return Err(invalid("need at least one quadrature point"));
    }
    let (s, w) = gauss_legendre_unit(quad_points);
    let mm = m * m;
    let d = *u1.domain();
    let nodes = d.node_count();
    let mut a = Vec::with_capacity(u1.len());
    let mut g = Vec::with_capacity(u1.len());
    let mut ls = Vec::with_capacity(u1.len());
    let mut point = vec![0.0; m];
    let mut buf = vec![0.0; mm];
    for (f1, f2) in u1.fields().iter().zip(u2.fields()) {
        let mut sa = vec![0.0; nodes * mm];
        let mut sg = vec![0.0; nodes * mm];
        let mut sl = vec![0.0; nodes];
        for k in 0..nodes {
            let (x1, x2) = (f1.node(k), f2.node(k));
            for (&sq, &wq) in s.iter().zip(&w) {
                for c in 0..m {
                    point[c] = sq * x1[c] + (1.0 - sq) * x2[c];
                }
                model.pressure_jacobian(&point, &mut buf);
                for (acc, v) in sa[k * mm..(k + 1) * mm].iter_mut().zip(&buf) {
                    *acc += wq * v;
                }
                model.reaction_jacobian(&point, &mut buf);
                for (acc, v) in sg[k * mm..(k + 1) * mm].iter_mut().zip(&buf) {
                    *acc += wq * v;
                }
                sl[k] += wq * model.ellipticity(&point);
            }
        }
        a.push(sa);
        g.push(sg);
        ls.push(sl);
    }
    Ok(AveragedCoefficients {
        domain: d,
        m,
        t0: u1.t0,
        dt: u1.dt,
        a,
        g,
        lambda_star: ls,
    })
}

/// Terminal-value problem for the dual system.
#[derive(Debug, Clone)]
pub struct DualProblem {
    pub coeffs: AveragedCoefficients,
    pub psi: Field,
}

impl DualProblem {
    pub fn new(coeffs: AveragedCoefficients, psi: Field) -> Result<Self> {
        if psi.domain() != &coeffs.domain || psi.components() != coeffs.m {
            return Err(Error::ShapeMismatch("terminal data does not match the coefficient grid".into()));
        }
        if !psi.satisfies_dirichlet() {
            return Err(invalid("terminal data must vanish on the boundary"));
        }
        if coeffs.slices() < 2 {
            return Err(invalid("dual problem needs at least one time step"));
        }
        Ok(Self { coeffs, psi })
    }

    pub fn horizon(&self) -> f64 {
        self.coeffs.horizon()
    }
}

/// Implicit Euler in the reversed time `Ψ̂(t) = Ψ(T−t)`:
/// `(I − dt 𝒜 Δ − dt 𝒢) Ψ̂^{k+1} = Ψ̂^k`, with `𝒜 = 𝐚ᵀ`, `𝒢 = 𝐠ᵀ` taken
/// at the slice of `Ψ̂^{k+1}`. Returns Ψ in the original time orientation.
pub fn solve_dual(problem: &DualProblem) -> Result<Trajectory> {
    let c = &problem.coeffs;
    let d = c.domain;
    let m = c.m;
    let mm = m * m;
    let index = InteriorIndex::new(&d, m);
    let last = c.slices() - 1;
    let tr = |blocks: &[f64]| -> Vec<f64> { blocks.chunks(mm).flat_map(|b| transpose(m, b)).collect() };
    let mut reversed = vec![problem.psi.clone()];
    for k in 0..last {
        let slice = last - (k + 1);
        let at = tr(&c.a[slice]);
        let gt = tr(&c.g[slice]);
        let lu = assemble(&d, &index, c.dt, &at, Some(&gt), Form::NonDivergence)
            .factor()
            .map_err(|reason| Error::LinearSolveFailed { step: k + 1, reason })?;
        let prev = reversed.last().expect("non-empty");
        let mut rhs: Vec<f64> = index.nodes().iter().flat_map(|&n| prev.node(n).to_vec()).collect();
        lu.solve_in_place(&mut rhs);
        if rhs.iter().any(|v| !v.is_finite()) {
            return Err(Error::LinearSolveFailed { step: k + 1, reason: "non-finite solution".into() });
        }
        let mut next = Field::zeros(d, m);
        for (q, &n) in index.nodes().iter().enumerate() {
            next.node_mut(n).copy_from_slice(&rhs[q * m..(q + 1) * m]);
        }
        reversed.push(next);
    }
    reversed.reverse();
    Trajectory::from_fields(c.t0, c.dt, reversed)
}

/// Bounds on the dual solution measured in one solve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DualEstimates {
    /// `sup_t ‖DΨ(t)‖_{L²}`.
    pub sup_grad: f64,
    /// `∫∫|ΔΨ|²`.
    pub laplacian_sq: f64,
    /// `‖Ψ‖_{L^{σ_N}(Q)}`.
    pub psi_sigma: f64,
    /// `sup_t ‖g_*(t)‖_{L^{q₀}}`.
    pub g_star: f64,
    /// `‖Dψ‖_{L²}`.
    pub terminal_grad: f64,
}

pub fn grad_norm(f: &Field) -> f64 {
    dirichlet_energy(f).sqrt()
}

pub fn dual_estimates(problem: &DualProblem, psi_traj: &Trajectory, q0: f64, sigma_n: f64) -> DualEstimates {
    let sup_grad = psi_traj.fields().iter().map(grad_norm).fold(0.0, f64::max);
    let lap: Vec<f64> = psi_traj.fields().iter().map(|f| norm_lp(&laplacian(f), 2.0).powi(2)).collect();
    let g_star = (0..problem.coeffs.slices())
        .map(|s| norm_lp(&problem.coeffs.g_star(s), q0))
        .fold(0.0, f64::max);
    DualEstimates {
        sup_grad,
        laplacian_sq: time_integral(&lap, psi_traj.dt),
        psi_sigma: norm_lp_spacetime(psi_traj, sigma_n),
        g_star,
        terminal_grad: grad_norm(&problem.psi),
    }
}

fn spread(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    if max == 0.0 {
        1.0
    } else if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Uniformity in `n`: every quantity finite and `max/min` across levels at
/// most `ceiling`.
pub fn dual_estimate_report(levels: &[(u32, DualEstimates)], ceiling: f64) -> CheckReport {
    let mut r = CheckReport::new("dual_estimates");
    type Getter = fn(&DualEstimates) -> f64;
    let quantities: [(&str, Getter); 4] = [
        ("sup_grad", |e| e.sup_grad),
        ("laplacian_sq", |e| e.laplacian_sq),
        ("psi_sigma", |e| e.psi_sigma),
        ("g_star", |e| e.g_star),
    ];
    for (name, get) in quantities {
        let vals: Vec<f64> = levels.iter().map(|(_, e)| get(e)).collect();
        let finite = vals.iter().all(|v| v.is_finite());
        let mut entry = CheckEntry::exact(format!("{name}_spread"), if finite { spread(&vals) } else { f64::INFINITY }, ceiling);
        for ((n, _), v) in levels.iter().zip(&vals) {
            entry = entry.with(format!("n{n}"), *v);
        }
        r.push(entry);
    }
    r
}

/// `min_{1≤k≤K} ‖DΨ̂(t_k)‖ ≤ (1+tol)‖Dψ‖` in the reversed time variable.
pub fn liminf_terminal_gradient_check(problem: &DualProblem, psi_traj: &Trajectory, k_steps: usize, tol: f64) -> CheckEntry {
    let fields = psi_traj.fields();
    let last = fields.len() - 1;
    let k = k_steps.min(last).max(1);
    let lhs = (1..=k).map(|j| grad_norm(&fields[last - j])).fold(f64::INFINITY, f64::min);
    let rhs = grad_norm(&problem.psi);
    CheckEntry::new("liminf_terminal_gradient", lhs, rhs, tol, 1e-14).with("K", k as f64)
}

/// Per-slice Jensen bound `‖F̂(u_n(t))‖_{L^{q₀}} ≤ ‖F̂(u(t))‖_{L^{q₀}}` for the
/// spatial mollification, and for the space-time mollification against the
/// time-averaged right side `Σ_s η_n(t−s)‖F̂(u(s))‖`.
pub fn jensen_mollification_check(
    traj: &Trajectory,
    levels: &[u32],
    q0: f64,
    majorant: &dyn Fn(&[f64]) -> f64,
    tol: f64,
) -> Result<CheckReport> {
    let mut r = CheckReport::new("jensen_mollification");
    let norm = |f: &Field| norm_lp(&f.map_nodes(1, |u, o| o[0] = majorant(u)), q0);
    let base: Vec<f64> = traj.fields().iter().map(norm).collect();
    for &n in levels {
        let moll = Mollifier::new(n)?;
        let sliced = moll.mollify_slices(traj);
        let mut worst = CheckEntry::exact(format!("slice_n{n}"), f64::NEG_INFINITY, 0.0);
        let mut worst_ratio = f64::NEG_INFINITY;
        for (s, f) in sliced.fields().iter().enumerate() {
            let e = CheckEntry::new(format!("slice_n{n}"), norm(f), base[s], tol, 1e-300);
            let ratio = e.lhs - e.rhs * (1.0 + tol);
            if ratio > worst_ratio {
                worst_ratio = ratio;
                worst = e.with("t", traj.time(s));
            }
        }
        r.push(worst.with("n", n as f64));

        // the time-averaged right side is the same stencil applied to `base`
        let full = moll.mollify(traj);
        let scalar = Trajectory::from_fields(
            traj.t0,
            traj.dt,
            base.iter()
                .map(|&b| Field::constant(*traj.domain(), &[b]))
                .collect(),
        )?;
        let averaged = moll.mollify_time(&scalar);
        let mut worst = CheckEntry::exact(format!("spacetime_n{n}"), f64::NEG_INFINITY, 0.0);
        let mut worst_ratio = f64::NEG_INFINITY;
        for (s, f) in full.fields().iter().enumerate() {
            let rhs = averaged.fields()[s].node(0)[0];
            let e = CheckEntry::new(format!("spacetime_n{n}"), norm(f), rhs, tol, 1e-300);
            let ratio = e.lhs - e.rhs * (1.0 + tol);
            if ratio > worst_ratio {
                worst_ratio = ratio;
                worst = e.with("t", traj.time(s));
            }
        }
        r.push(worst.with("n", n as f64));
    }
    Ok(r)
}

//! Structured box grids in one or two dimensions with homogeneous Dirichlet
//! boundary, second-order difference operators and trapezoid quadrature.
//!
//! Fields store every node, boundary included; node `(i, j)` has flat index
//! `i + nx * j` and component `c` of node `k` lives at `values[k * m + c]`.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// An axis-aligned box `[0, L_x] (× [0, L_y])` with uniform node spacing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Domain {
    dim: usize,
    lengths: [f64; 2],
    nodes: [usize; 2],
}

impl Domain {
    pub fn new(lengths: &[f64], nodes: &[usize]) -> Result<Self> {
        let dim = lengths.len();
        if !(dim == 1 || dim == 2) || nodes.len() != dim {
            return Err(invalid("domain must be 1D or 2D with one node count per axis"));
        }
        if let Some(n) = nodes.iter().find(|&&n| n < 4) {
            return Err(invalid(format!("need at least 4 nodes per axis, got {n}")));
        }
        if lengths.iter().any(|&l| !(l > 0.0 && l.is_finite())) {
            return Err(invalid("side lengths must be positive"));
        }
        let mut d = Self {
            dim,
            lengths: [1.0, 1.0],
            nodes: [1, 1],
        };
        d.lengths[..dim].copy_from_slice(lengths);
        d.nodes[..dim].copy_from_slice(nodes);
        Ok(d)
    }

    pub fn interval(length: f64, nodes: usize) -> Result<Self> {
        Self::new(&[length], &[nodes])
    }

    pub fn rectangle(lx: f64, ly: f64, nx: usize, ny: usize) -> Result<Self> {
        Self::new(&[lx, ly], &[nx, ny])
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn length(&self, axis: usize) -> f64 {
        self.lengths[axis]
    }

    pub fn nodes(&self, axis: usize) -> usize {
        self.nodes[axis]
    }

    pub fn h(&self, axis: usize) -> f64 {
        self.lengths[axis] / (self.nodes[axis] - 1) as f64
    }

    pub fn min_h(&self) -> f64 {
        (0..self.dim).map(|a| self.h(a)).fold(f64::INFINITY, f64::min)
    }

    pub fn node_count(&self) -> usize {
        self.nodes[0] * self.nodes[1]
    }

    /// `|Ω|`.
    pub fn volume(&self) -> f64 {
        self.lengths[..self.dim].iter().product()
    }

    pub fn diameter(&self) -> f64 {
        self.lengths[..self.dim].iter().map(|l| l * l).sum::<f64>().sqrt()
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize) -> usize {
        i + self.nodes[0] * j
    }

    #[inline]
    pub fn ij(&self, node: usize) -> (usize, usize) {
        (node % self.nodes[0], node / self.nodes[0])
    }

    pub fn coords(&self, node: usize) -> [f64; 2] {
        let (i, j) = self.ij(node);
        let y = if self.dim == 2 { j as f64 * self.h(1) } else { 0.0 };
        [i as f64 * self.h(0), y]
    }

    pub fn is_boundary(&self, node: usize) -> bool {
        let (i, j) = self.ij(node);
        let bx = i == 0 || i == self.nodes[0] - 1;
        let by = self.dim == 2 && (j == 0 || j == self.nodes[1] - 1);
        bx || by
    }

    /// Trapezoid weight of a node (`h` per axis, halved on that axis' boundary).
    pub fn weight(&self, node: usize) -> f64 {
        let (i, j) = self.ij(node);
        let mut w = axis_weight(i, self.nodes[0], self.h(0));
        if self.dim == 2 {
            w *= axis_weight(j, self.nodes[1], self.h(1));
        }
        w
    }

    pub fn interior_nodes(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.node_count()).filter(move |&k| !self.is_boundary(k))
    }

    pub fn interior_count(&self) -> usize {
        (0..self.dim).map(|a| self.nodes[a] - 2).product()
    }

    /// Neighbor of `node` one step along `axis` in direction `dir` (±1).
    #[inline]
    pub fn neighbor(&self, node: usize, axis: usize, dir: isize) -> Option<usize> {
        let (i, j) = self.ij(node);
        let (c, n) = if axis == 0 { (i, self.nodes[0]) } else { (j, self.nodes[1]) };
        let c2 = c as isize + dir;
        if c2 < 0 || c2 >= n as isize {
            return None;
        }
        Some(if axis == 0 {
            self.index(c2 as usize, j)
        } else {
            self.index(i, c2 as usize)
        })
    }

    /// Visits every edge `(a, b)` with `b` the `+1` neighbor of `a` along
    /// `axis`; `weight` is `h_axis` times the trapezoid weight across the
    /// remaining axes, so `Σ weight (Δu/h)²` is the discrete `∫|∂u|²`.
    pub fn for_each_edge(&self, mut visit: impl FnMut(usize, usize, usize, f64)) {
        for axis in 0..self.dim {
            let h = self.h(axis);
            for a in 0..self.node_count() {
                let Some(b) = self.neighbor(a, axis, 1) else { continue };
                let (i, j) = self.ij(a);
                let cross = if self.dim == 1 {
                    1.0
                } else if axis == 0 {
                    axis_weight(j, self.nodes[1], self.h(1))
                } else {
                    axis_weight(i, self.nodes[0], self.h(0))
                };
                visit(axis, a, b, h * cross);
            }
        }
    }
}

fn axis_weight(i: usize, n: usize, h: f64) -> f64 {
    if i == 0 || i == n - 1 {
        0.5 * h
    } else {
        h
    }
}

/// An `m`-component nodal field.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    domain: Domain,
    m: usize,
    values: Vec<f64>,
}

impl Field {
    pub fn zeros(domain: Domain, m: usize) -> Self {
        Self {
            domain,
            m,
            values: vec![0.0; domain.node_count() * m],
        }
    }

    pub fn from_values(domain: Domain, m: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != domain.node_count() * m {
            return Err(Error::ShapeMismatch(format!(
                "expected {} values, got {}",
                domain.node_count() * m,
                values.len()
            )));
        }
        Ok(Self { domain, m, values })
    }

    /// Constant state `c` at every node, boundary included.
    pub fn constant(domain: Domain, c: &[f64]) -> Self {
        let mut f = Self::zeros(domain, c.len());
        for k in 0..domain.node_count() {
            f.node_mut(k).copy_from_slice(c);
        }
        f
    }

    /// Evaluates `g(x, out)` at every node, boundary included.
    pub fn from_fn(domain: Domain, m: usize, g: impl Fn(&[f64], &mut [f64])) -> Self {
        let mut f = Self::zeros(domain, m);
        for k in 0..domain.node_count() {
            let x = domain.coords(k);
            g(&x[..domain.dim()], f.node_mut(k));
        }
        f
    }

    /// Evaluates `g` at interior nodes and sets the boundary to zero.
    pub fn dirichlet_from_fn(domain: Domain, m: usize, g: impl Fn(&[f64], &mut [f64])) -> Self {
        let mut f = Self::zeros(domain, m);
        for k in domain.interior_nodes().collect::<Vec<_>>() {
            let x = domain.coords(k);
            g(&x[..domain.dim()], f.node_mut(k));
        }
        f
    }

    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    pub fn components(&self) -> usize {
        self.m
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    #[inline]
    pub fn node(&self, k: usize) -> &[f64] {
        &self.values[k * self.m..(k + 1) * self.m]
    }

    #[inline]
    pub fn node_mut(&mut self, k: usize) -> &mut [f64] {
        &mut self.values[k * self.m..(k + 1) * self.m]
    }

    pub fn satisfies_dirichlet(&self) -> bool {
        (0..self.domain.node_count())
            .filter(|&k| self.domain.is_boundary(k))
            .all(|k| self.node(k).iter().all(|&v| v == 0.0))
    }

    pub fn zero_boundary(&mut self) {
        for k in 0..self.domain.node_count() {
            if self.domain.is_boundary(k) {
                self.node_mut(k).fill(0.0);
            }
        }
    }

    pub fn same_shape(&self, other: &Field) -> bool {
        self.domain == other.domain && self.m == other.m
    }

    pub fn scaled(&self, s: f64) -> Field {
        self.map_values(|v| s * v)
    }

    pub fn map_values(&self, g: impl Fn(f64) -> f64) -> Field {
        Field {
            domain: self.domain,
            m: self.m,
            values: self.values.iter().map(|&v| g(v)).collect(),
        }
    }

    /// Applies a pointwise map from `m` to `m_out` components.
    pub fn map_nodes(&self, m_out: usize, g: impl Fn(&[f64], &mut [f64])) -> Field {
        let mut out = Field::zeros(self.domain, m_out);
        for k in 0..self.domain.node_count() {
            g(self.node(k), out.node_mut(k));
        }
        out
    }

    pub fn sub(&self, other: &Field) -> Field {
        assert!(self.same_shape(other), "field shape mismatch");
        Field {
            domain: self.domain,
            m: self.m,
            values: self.values.iter().zip(&other.values).map(|(a, b)| a - b).collect(),
        }
    }

    pub fn add(&self, other: &Field) -> Field {
        assert!(self.same_shape(other), "field shape mismatch");
        Field {
            domain: self.domain,
            m: self.m,
            values: self.values.iter().zip(&other.values).map(|(a, b)| a + b).collect(),
        }
    }

    pub fn component(&self, c: usize) -> Field {
        self.map_nodes(1, |u, o| o[0] = u[c])
    }

    /// Pointwise Euclidean magnitude as a scalar field.
    pub fn magnitude(&self) -> Field {
        self.map_nodes(1, |u, o| o[0] = u.iter().map(|v| v * v).sum::<f64>().sqrt())
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |a, v| a.max(v.abs()))
    }
}

/// `Δ_h` with the 3- or 5-point stencil; ghost values on `∂Ω` are zero and
/// the output vanishes on the boundary.
pub fn laplacian(field: &Field) -> Field {
    let d = *field.domain();
    let m = field.components();
    let mut out = Field::zeros(d, m);
    for k in d.interior_nodes() {
        for axis in 0..d.dim() {
            let inv = 1.0 / (d.h(axis) * d.h(axis));
            let lo = d.neighbor(k, axis, -1).filter(|&n| !d.is_boundary(n));
            let hi = d.neighbor(k, axis, 1).filter(|&n| !d.is_boundary(n));
            for c in 0..m {
                let ul = lo.map_or(0.0, |n| field.node(n)[c]);
                let ur = hi.map_or(0.0, |n| field.node(n)[c]);
                out.values[k * m + c] += (ul - 2.0 * field.node(k)[c] + ur) * inv;
            }
        }
    }
    out
}

fn axis_derivative(field: &Field, axis: usize) -> Field {
    let d = *field.domain();
    let m = field.components();
    let h = d.h(axis);
    let mut out = Field::zeros(d, m);
    for k in 0..d.node_count() {
        let lo = d.neighbor(k, axis, -1);
        let hi = d.neighbor(k, axis, 1);
        let (a, b, span) = match (lo, hi) {
            (Some(l), Some(r)) => (l, r, 2.0 * h),
            (None, Some(r)) => (k, r, h),
            (Some(l), None) => (l, k, h),
            (None, None) => unreachable!("axes have at least 4 nodes"),
        };
        for c in 0..m {
            out.values[k * m + c] = (field.node(b)[c] - field.node(a)[c]) / span;
        }
    }
    out
}

/// Centered differences in the interior, one-sided on the boundary nodes.
pub fn gradient(field: &Field) -> Vec<Field> {
    (0..field.domain().dim()).map(|a| axis_derivative(field, a)).collect()
}

/// `Σ_a ∂_a F_a` with the same differences as [`gradient`].
pub fn divergence(components: &[Field]) -> Field {
    let mut it = components.iter().enumerate();
    let (_, first) = it.next().expect("divergence of an empty vector field");
    let mut out = axis_derivative(first, 0);
    for (axis, f) in it {
        out = out.add(&axis_derivative(f, axis));
    }
    out
}

/// Trapezoid inner product `∫<u, v>`.
pub fn inner(u: &Field, v: &Field) -> f64 {
    assert!(u.same_shape(v), "field shape mismatch");
    let d = u.domain();
    (0..d.node_count())
        .map(|k| d.weight(k) * crate::linalg::dot(u.node(k), v.node(k)))
        .sum()
}

/// Trapezoid integral of a per-node scalar.
pub fn integrate(domain: &Domain, mut g: impl FnMut(usize) -> f64) -> f64 {
    (0..domain.node_count()).map(|k| domain.weight(k) * g(k)).sum()
}

/// `‖u‖_{L^p(Ω)}` with the pointwise Euclidean norm; `p = ∞` gives the max.
pub fn norm_lp(field: &Field, p: f64) -> f64 {
    assert!(p >= 1.0, "L^p needs p >= 1");
    let mag = |k: usize| field.node(k).iter().map(|v| v * v).sum::<f64>().sqrt();
    let d = field.domain();
    if p.is_infinite() {
        return (0..d.node_count()).map(mag).fold(0.0, f64::max);
    }
    integrate(d, |k| mag(k).powf(p)).powf(1.0 / p)
}

/// Staggered `∫|Du|²`: forward differences on every edge.
/// Equals `−<u, Δ_h u>` for fields that vanish on the boundary.
pub fn dirichlet_energy(field: &Field) -> f64 {
    let m = field.components();
    let mut acc = 0.0;
    field.domain().for_each_edge(|axis, a, b, w| {
        let h = field.domain().h(axis);
        for c in 0..m {
            let g = (field.node(b)[c] - field.node(a)[c]) / h;
            acc += w * g * g;
        }
    });
    acc
}

/// `‖Du‖_{L^p}` with the pointwise gradient of [`gradient`].
pub fn gradient_norm_lp(field: &Field, p: f64) -> f64 {
    let grads = gradient(field);
    let d = field.domain();
    let m = field.components();
    let mut g = Field::zeros(*d, 1);
    for k in 0..d.node_count() {
        let s: f64 = grads.iter().map(|gf| (0..m).map(|c| gf.node(k)[c].powi(2)).sum::<f64>()).sum();
        g.node_mut(k)[0] = s.sqrt();
    }
    norm_lp(&g, p)
}

/// Time-ordered fields with uniform step.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub t0: f64,
    pub dt: f64,
    fields: Vec<Field>,
}

impl Trajectory {
    pub fn new(t0: f64, dt: f64, first: Field) -> Self {
        Self {
            t0,
            dt,
            fields: vec![first],
        }
    }

    pub fn from_fields(t0: f64, dt: f64, fields: Vec<Field>) -> Result<Self> {
        let Some(first) = fields.first() else {
            return Err(invalid("trajectory needs at least one field"));
        };
        if !(dt > 0.0) {
            return Err(invalid("trajectory dt must be > 0"));
        }
        if fields.iter().any(|f| !f.same_shape(first)) {
            return Err(Error::ShapeMismatch("trajectory fields differ in shape".into()));
        }
        Ok(Self { t0, dt, fields })
    }

    /// Samples `g(x, t, out)` at `steps + 1` equally spaced times.
    pub fn from_fn(domain: Domain, m: usize, t0: f64, dt: f64, steps: usize, g: impl Fn(&[f64], f64, &mut [f64])) -> Self {
        let fields = (0..=steps)
            .map(|n| {
                let t = t0 + n as f64 * dt;
                Field::from_fn(domain, m, |x, o| g(x, t, o))
            })
            .collect();
        Self { t0, dt, fields }
    }

    pub fn push(&mut self, f: Field) {
        assert!(f.same_shape(&self.fields[0]), "trajectory shape mismatch");
        self.fields.push(f);
    }

    pub fn fields(&self) -> &[Field] {
        &self.fields
    }

    pub fn len(&self) -> usize {
        self.fields.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fields.is_empty()
    }

    pub fn steps(&self) -> usize {
        self.fields.len() - 1
    }

    pub fn time(&self, n: usize) -> f64 {
        self.t0 + n as f64 * self.dt
    }

    pub fn horizon(&self) -> f64 {
        self.time(self.steps())
    }

    pub fn domain(&self) -> &Domain {
        self.fields[0].domain()
    }

    pub fn components(&self) -> usize {
        self.fields[0].components()
    }

    pub fn first(&self) -> &Field {
        &self.fields[0]
    }

    pub fn last(&self) -> &Field {
        self.fields.last().expect("non-empty")
    }

    pub fn same_grid(&self, other: &Trajectory) -> bool {
        self.fields[0].same_shape(&other.fields[0])
            && self.len() == other.len()
            && self.dt == other.dt
            && self.t0 == other.t0
    }

    pub fn map_fields(&self, g: impl Fn(&Field) -> Field) -> Trajectory {
        Trajectory {
            t0: self.t0,
            dt: self.dt,
            fields: self.fields.iter().map(g).collect(),
        }
    }

    pub fn sub(&self, other: &Trajectory) -> Trajectory {
        assert!(self.same_grid(other), "trajectory grid mismatch");
        Trajectory {
            t0: self.t0,
            dt: self.dt,
            fields: self.fields.iter().zip(&other.fields).map(|(a, b)| a.sub(b)).collect(),
        }
    }
}

/// Trapezoid rule in time over equally spaced samples.
pub fn time_integral(values: &[f64], dt: f64) -> f64 {
    match values.len() {
        0 | 1 => 0.0,
        n => dt * (values.iter().sum::<f64>() - 0.5 * (values[0] + values[n - 1])),
    }
}

/// `sup_t` of a per-slice quantity.
pub fn sup_in_time(traj: &Trajectory, g: impl Fn(&Field) -> f64) -> f64 {
    traj.fields().iter().map(g).fold(f64::NEG_INFINITY, f64::max)
}

/// `‖u‖_{V₂(Q)} = sup_t ‖u‖_{L²} + ‖Du‖_{L²(Q)}`.
pub fn norm_v2(traj: &Trajectory) -> f64 {
    let sup = sup_in_time(traj, |f| norm_lp(f, 2.0));
    let energies: Vec<f64> = traj.fields().iter().map(dirichlet_energy).collect();
    sup + time_integral(&energies, traj.dt).sqrt()
}

/// `‖u‖_{L^p(Q)}` with trapezoid quadrature in space and time.
pub fn norm_lp_spacetime(traj: &Trajectory, p: f64) -> f64 {
    let slices: Vec<f64> = traj.fields().iter().map(|f| norm_lp(f, p).powf(p)).collect();
    time_integral(&slices, traj.dt).powf(1.0 / p)
}

/// Smooth random Dirichlet field: a sum of sine modes up to `max_mode` per
/// axis with coefficients `~ U(-1,1) / (k_x k_y)`.
pub fn smooth_random_field(domain: Domain, m: usize, max_mode: usize, rng: &mut impl Rng) -> Field {
    let dim = domain.dim();
    let ny_modes = if dim == 2 { max_mode } else { 1 };
    let mut coef = vec![0.0; max_mode * ny_modes * m];
    for kx in 0..max_mode {
        for ky in 0..ny_modes {
            for c in 0..m {
                coef[(kx * ny_modes + ky) * m + c] =
                    rng.gen_range(-1.0..1.0) / ((kx + 1) * (ky + 1)) as f64;
            }
        }
    }
    let lx = domain.length(0);
    let ly = domain.length(1);
    Field::dirichlet_from_fn(domain, m, |x, o| {
        o.fill(0.0);
        for kx in 0..max_mode {
            let sx = ((kx + 1) as f64 * PI * x[0] / lx).sin();
            for ky in 0..ny_modes {
                let sy = if dim == 2 { ((ky + 1) as f64 * PI * x[1] / ly).sin() } else { 1.0 };
                for c in 0..m {
                    o[c] += coef[(kx * ny_modes + ky) * m + c] * sx * sy;
                }
            }
        }
    })
}

/// Seeded convenience wrapper around [`smooth_random_field`].
pub fn smooth_random_fields(domain: Domain, m: usize, max_mode: usize, count: usize, seed: u64) -> Vec<Field> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| smooth_random_field(domain, m, max_mode, &mut rng)).collect()
}

/// Nodes of the discrete ball `|x − x_c| ≤ r`.
fn ball_nodes(domain: &Domain, center: usize, r: f64) -> Vec<usize> {
    let c = domain.coords(center);
    let (ci, cj) = domain.ij(center);
    let reach: Vec<usize> = (0..2)
        .map(|a| if a < domain.dim() { (r / domain.h(a) + 1e-9).floor() as usize } else { 0 })
        .collect();
    let mut out = Vec::new();
    let j_lo = cj.saturating_sub(reach[1]);
    let j_hi = (cj + reach[1]).min(domain.nodes(1) - 1);
    let i_lo = ci.saturating_sub(reach[0]);
    let i_hi = (ci + reach[0]).min(domain.nodes(0) - 1);
    let r2 = r * r * (1.0 + 1e-12);
    for j in j_lo..=j_hi {
        for i in i_lo..=i_hi {
            let k = domain.index(i, j);
            let x = domain.coords(k);
            if (x[0] - c[0]).powi(2) + (x[1] - c[1]).powi(2) <= r2 {
                out.push(k);
            }
        }
    }
    out
}

fn ball_inside_box(domain: &Domain, center: usize, r: f64) -> bool {
    let c = domain.coords(center);
    let slack = 1e-12 * domain.diameter();
    (0..domain.dim()).all(|a| c[a] - r >= -slack && c[a] + r <= domain.length(a) + slack)
}

/// Mean oscillation `|B|⁻¹ ∫_B |u − u_B|` with equal node weights.
fn mean_oscillation(field: &Field, nodes: &[usize]) -> f64 {
    let m = field.components();
    let cnt = nodes.len() as f64;
    let mut mean = vec![0.0; m];
    for &k in nodes {
        for (a, v) in mean.iter_mut().zip(field.node(k)) {
            *a += v / cnt;
        }
    }
    nodes
        .iter()
        .map(|&k| {
            field
                .node(k)
                .iter()
                .zip(&mean)
                .map(|(v, a)| (v - a).powi(2))
                .sum::<f64>()
                .sqrt()
        })
        .sum::<f64>()
        / cnt
}

/// Radii `R, R/2, R/4, …` down to the smallest grid spacing.
pub fn dyadic_radii(domain: &Domain, r_max: f64) -> Vec<f64> {
    let mut out = Vec::new();
    let mut r = r_max;
    while r >= domain.min_h() * (1.0 - 1e-12) {
        out.push(r);
        r *= 0.5;
    }
    out
}

/// Largest mean oscillation over node-centered balls of radius exactly `r`
/// that lie in the closed box.
pub fn max_oscillation_at_radius(field: &Field, r: f64) -> f64 {
    let d = field.domain();
    (0..d.node_count())
        .filter(|&c| ball_inside_box(d, c, r))
        .map(|c| mean_oscillation(field, &ball_nodes(d, c, r)))
        .fold(0.0, f64::max)
}

/// `sup_{B_r ⊂ Ω, r ≤ R}` mean oscillation over node-centered balls with
/// dyadic radii `R 2^{-j}`; a lower bound of the continuous supremum.
pub fn oscillation_term(field: &Field, r_max: f64) -> f64 {
    dyadic_radii(field.domain(), r_max)
        .into_iter()
        .map(|r| max_oscillation_at_radius(field, r))
        .fold(0.0, f64::max)
}

/// `‖u‖_{BMO(Ω_R)}` maximized over centers of `B_R` on grid nodes, with inner
/// balls restricted to node centers and dyadic radii.
pub fn norm_bmo(field: &Field, r_max: f64) -> f64 {
    assert!(r_max > 0.0, "BMO radius must be positive");
    let d = field.domain();
    let radii = dyadic_radii(d, r_max);
    // osc[c][j]: oscillation of the ball (c, radii[j]) if it lies in the box
    let osc: Vec<Vec<Option<f64>>> = (0..d.node_count())
        .map(|c| {
            radii
                .iter()
                .map(|&r| ball_inside_box(d, c, r).then(|| mean_oscillation(field, &ball_nodes(d, c, r))))
                .collect()
        })
        .collect();
    let mut best: f64 = 0.0;
    for c in 0..d.node_count() {
        let region = ball_nodes(d, c, r_max);
        let xc = d.coords(c);
        let mut sup = 0.0f64;
        for &cp in &region {
            let xp = d.coords(cp);
            let dist = ((xp[0] - xc[0]).powi(2) + (xp[1] - xc[1]).powi(2)).sqrt();
            for (j, &r) in radii.iter().enumerate() {
                if dist + r <= r_max * (1.0 + 1e-12) {
                    if let Some(o) = osc[cp][j] {
                        sup = sup.max(o);
                    }
                }
            }
        }
        let mass: f64 = region
            .iter()
            .map(|&k| d.weight(k) * field.node(k).iter().map(|v| v * v).sum::<f64>().sqrt())
            .sum();
        best = best.max(sup + mass);
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn unit_1d(n: usize) -> Domain {
        Domain::interval(1.0, n).unwrap()
    }

    fn unit_2d(n: usize) -> Domain {
        Domain::rectangle(1.0, 1.0, n, n).unwrap()
    }

    #[test]
    fn domain_validation() {
        assert!(Domain::interval(1.0, 3).is_err());
        assert!(Domain::interval(-1.0, 8).is_err());
        assert!(Domain::new(&[1.0, 1.0, 1.0], &[5, 5, 5]).is_err());
        let d = unit_2d(5);
        assert_eq!(d.h(0), 0.25);
        assert_eq!(d.interior_count(), 9);
        assert_eq!(d.interior_nodes().count(), 9);
    }

    #[test]
    fn laplacian_of_zero_is_zero() {
        let f = Field::zeros(unit_2d(9), 2);
        assert_eq!(laplacian(&f).max_abs(), 0.0);
    }

    #[test]
    fn sine_is_discrete_eigenfunction_1d() {
        let len = 2.0;
        let d = Domain::interval(len, 33).unwrap();
        let f = Field::dirichlet_from_fn(d, 1, |x, o| o[0] = (PI * x[0] / len).sin());
        let h = d.h(0);
        let mu = -(4.0 / (h * h)) * (PI * h / (2.0 * len)).sin().powi(2);
        let lf = laplacian(&f);
        for k in 0..d.node_count() {
            assert!((lf.node(k)[0] - mu * f.node(k)[0]).abs() < 1e-12);
        }
    }

    #[test]
    fn sine_product_is_discrete_eigenfunction_2d() {
        let d = Domain::rectangle(1.0, 1.0, 17, 21).unwrap();
        let f = Field::dirichlet_from_fn(d, 1, |x, o| o[0] = (PI * x[0]).sin() * (PI * x[1]).sin());
        let mu: f64 = (0..2)
            .map(|a| -(4.0 / d.h(a).powi(2)) * (PI * d.h(a) / 2.0).sin().powi(2))
            .sum();
        let lf = laplacian(&f);
        for k in 0..d.node_count() {
            assert!((lf.node(k)[0] - mu * f.node(k)[0]).abs() < 1e-11);
        }
    }

    #[test]
    fn gradient_of_linear_field() {
        let d = unit_2d(9);
        let f = Field::from_fn(d, 1, |x, o| o[0] = 3.0 * x[0] - 2.0 * x[1]);
        let g = gradient(&f);
        for k in 0..d.node_count() {
            assert!((g[0].node(k)[0] - 3.0).abs() < 1e-12);
            assert!((g[1].node(k)[0] + 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn div_grad_approximates_laplacian_at_second_order() {
        let mut errs = Vec::new();
        for n in [17, 33, 65] {
            let d = unit_1d(n);
            let f = Field::dirichlet_from_fn(d, 1, |x, o| o[0] = (PI * x[0]).sin());
            let a = divergence(&gradient(&f));
            let b = laplacian(&f);
            // compare away from the boundary
            let e = (0..d.node_count())
                .filter(|&k| {
                    let x = d.coords(k)[0];
                    (0.25..=0.75).contains(&x)
                })
                .map(|k| (a.node(k)[0] - b.node(k)[0]).abs())
                .fold(0.0, f64::max);
            errs.push(e);
        }
        for w in errs.windows(2) {
            let order = (w[0] / w[1]).log2();
            assert!((order - 2.0).abs() < 0.2, "order {order}");
        }
    }

    #[test]
    fn divergence_is_negative_adjoint_for_compact_support() {
        let d = unit_2d(41);
        let bump = |x: &[f64], o: &mut [f64]| {
            let r2 = (x[0] - 0.5).powi(2) + (x[1] - 0.5).powi(2);
            o[0] = if r2 < 0.09 { (-1.0 / (1.0 - r2 / 0.09)).exp() } else { 0.0 };
        };
        let g = Field::from_fn(d, 1, bump);
        let fx = Field::from_fn(d, 1, |x, o| o[0] = (x[0] * 2.0).sin() + x[1]);
        let fy = Field::from_fn(d, 1, |x, o| o[0] = x[0] * x[1]);
        let div = divergence(&[fx.clone(), fy.clone()]);
        let grad = gradient(&g);
        let s = inner(&div, &g) + inner(&fx, &grad[0]) + inner(&fy, &grad[1]);
        assert!(s.abs() < 1e-12, "{s}");
    }

    #[test]
    fn dirichlet_energy_matches_laplacian_pairing() {
        let d = unit_2d(13);
        let f = smooth_random_fields(d, 2, 4, 1, 9).remove(0);
        let e = dirichlet_energy(&f);
        let p = -inner(&f, &laplacian(&f));
        assert!((e - p).abs() < 1e-12 * e.max(1.0));
    }

    #[test]
    fn laplacian_is_symmetric_negative_semidefinite() {
        let d = unit_2d(11);
        let fields = smooth_random_fields(d, 1, 5, 2, 4);
        let (u, v) = (&fields[0], &fields[1]);
        let a = inner(&laplacian(u), v);
        let b = inner(u, &laplacian(v));
        assert!((a - b).abs() <= 1e-10);
        assert!(inner(&laplacian(u), u) <= 0.0);
    }

    #[test]
    fn constant_field_norm() {
        let d = Domain::rectangle(1.0, 1.0, 7, 9).unwrap();
        let f = Field::constant(d, &[-2.5]);
        for p in [1.0, 2.0, 3.5] {
            assert!((norm_lp(&f, p) - 2.5).abs() < 1e-13);
        }
        assert_eq!(norm_lp(&f, f64::INFINITY), 2.5);
    }

    #[test]
    fn lp_norm_converges_at_second_order() {
        // ∫_0^1 sin²(πx) dx = 1/2; trapezoid on a periodic-like integrand is
        // spectrally accurate, so use x² sin(πx) with ∫ = (π² − 4)/π³.
        let exact = (PI * PI - 4.0) / PI.powi(3);
        let errs: Vec<f64> = [9, 17, 33]
            .iter()
            .map(|&n| {
                let f = Field::from_fn(unit_1d(n), 1, |x, o| o[0] = x[0] * x[0] * (PI * x[0]).sin());
                (norm_lp(&f, 1.0) - exact).abs()
            })
            .collect();
        for w in errs.windows(2) {
            let order = (w[0] / w[1]).log2();
            assert!((order - 2.0).abs() < 0.2, "order {order}");
        }
    }

    #[test]
    fn v2_norm_of_heat_solution() {
        let d = unit_1d(128);
        let (tf, steps) = (0.1, 1000);
        let traj = Trajectory::from_fn(d, 1, 0.0, tf / steps as f64, steps, |x, t, o| {
            o[0] = (-PI * PI * t).exp() * (PI * x[0]).sin()
        });
        let exact = 0.5f64.sqrt() + ((1.0 - (-2.0 * PI * PI * tf).exp()) / 4.0).sqrt();
        let got = norm_v2(&traj);
        assert!((got - exact).abs() / exact < 0.01, "{got} vs {exact}");
    }

    #[test]
    fn time_integral_of_linear_function_is_exact() {
        let v: Vec<f64> = (0..11).map(|i| 2.0 * i as f64 * 0.1 + 1.0).collect();
        assert!((time_integral(&v, 0.1) - 2.0).abs() < 1e-14);
    }

    #[test]
    fn constant_field_has_zero_oscillation() {
        let d = unit_2d(17);
        let f = Field::constant(d, &[3.0, -1.0]);
        for r in [0.5, 0.25, 0.125] {
            assert!(oscillation_term(&f, r) < 1e-14);
        }
        // BMO reduces to the mass term
        assert!(norm_bmo(&f, 0.25) > 0.0);
    }

    #[test]
    fn zero_field_bmo_is_zero() {
        assert_eq!(norm_bmo(&Field::zeros(unit_2d(9), 1), 0.5), 0.0);
    }

    #[test]
    fn checkerboard_oscillation_does_not_decay() {
        let d = unit_2d(33);
        let f = Field::from_fn(d, 1, |x, o| {
            let i = (x[0] * 32.0).round() as i64;
            let j = (x[1] * 32.0).round() as i64;
            o[0] = if (i + j) % 2 == 0 { 1.0 } else { -1.0 };
        });
        let big = max_oscillation_at_radius(&f, 0.25);
        let small = max_oscillation_at_radius(&f, 1.0 / 16.0);
        assert!(small > 0.8 * big && small > 0.5);
    }

    #[test]
    fn smooth_field_oscillation_scales_with_radius() {
        let d = unit_2d(65);
        let f = Field::from_fn(d, 1, |x, o| o[0] = x[0] + 2.0 * x[1]);
        let a = max_oscillation_at_radius(&f, 0.25);
        let b = max_oscillation_at_radius(&f, 0.125);
        assert!((a / b - 2.0).abs() < 0.15, "{}", a / b);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn norms_are_homogeneous_and_subadditive(seed in 0u64..1000, s in -5.0f64..5.0, p in 1.0f64..6.0) {
            let d = unit_2d(9);
            let fs = smooth_random_fields(d, 2, 3, 2, seed);
            let (u, v) = (&fs[0], &fs[1]);
            let nu = norm_lp(u, p);
            prop_assert!((norm_lp(&u.scaled(s), p) - s.abs() * nu).abs() <= 1e-10 * (1.0 + nu));
            prop_assert!(norm_lp(&u.add(v), p) <= nu + norm_lp(v, p) + 1e-12);
            let e = |f: &Field| dirichlet_energy(f).sqrt();
            prop_assert!(e(&u.add(v)) <= e(u) + e(v) + 1e-12);
        }
    }
}

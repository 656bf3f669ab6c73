//! Banded assembly of implicit-Euler systems on the interior unknowns.
//!
//! Unknown `(node, c)` of interior node number `q` (nodes counted in flat
//! order, boundary skipped) sits at row `q * m + c`.

use crate::grid::Domain;
use crate::linalg::BandMatrix;

/// Maps flat node indices to interior positions and back.
#[derive(Debug, Clone)]
pub struct InteriorIndex {
    to_unknown: Vec<Option<usize>>,
    nodes: Vec<usize>,
    m: usize,
    half_band: usize,
}

impl InteriorIndex {
    pub fn new(domain: &Domain, m: usize) -> Self {
        let mut to_unknown = vec![None; domain.node_count()];
        let nodes: Vec<usize> = domain.interior_nodes().collect();
        for (q, &k) in nodes.iter().enumerate() {
            to_unknown[k] = Some(q);
        }
        let stride = if domain.dim() == 2 { domain.nodes(0) - 2 } else { 1 };
        Self {
            to_unknown,
            nodes,
            m,
            half_band: m * stride + m - 1,
        }
    }

    pub fn unknowns(&self) -> usize {
        self.nodes.len() * self.m
    }

    pub fn nodes(&self) -> &[usize] {
        &self.nodes
    }

    #[inline]
    pub fn position(&self, node: usize) -> Option<usize> {
        self.to_unknown[node]
    }

    pub fn half_band(&self) -> usize {
        self.half_band
    }
}

/// Where the diffusion matrix is evaluated in the stencil.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Form {
    /// `Δ(A u)`: each stencil point carries its own `A` (forward linearization).
    Divergence,
    /// `A Δu`: the center node's `A` multiplies the whole stencil (dual problem).
    NonDivergence,
}

/// Assembles `I − dt·D − dt·R` where `D` is the discrete diffusion operator
/// with per-node `m×m` blocks `diffusion[node]` and `R` the per-node reaction
/// blocks. Ghost values on the boundary are zero.
pub fn assemble(
    domain: &Domain,
    index: &InteriorIndex,
    dt: f64,
    diffusion: &[f64],
    reaction: Option<&[f64]>,
    form: Form,
) -> BandMatrix {
    let m = index.m;
    let mm = m * m;
    let bw = index.half_band();
    let mut a = BandMatrix::zeros(index.unknowns(), bw, bw);
    let center_scale: f64 = (0..domain.dim()).map(|ax| 2.0 / domain.h(ax).powi(2)).sum();
    for (q, &k) in index.nodes().iter().enumerate() {
        let ck = &diffusion[k * mm..(k + 1) * mm];
        for c in 0..m {
            let row = q * m + c;
            a.add(row, row, 1.0);
            for j in 0..m {
                let mut v = dt * center_scale * ck[c * m + j];
                if let Some(r) = reaction {
                    v -= dt * r[k * mm + c * m + j];
                }
                a.add(row, q * m + j, v);
            }
        }
        for ax in 0..domain.dim() {
            let w = dt / domain.h(ax).powi(2);
            for dir in [-1isize, 1] {
                let Some(nb) = domain.neighbor(k, ax, dir) else { continue };
                let Some(qn) = index.position(nb) else { continue };
                let cn = match form {
                    Form::Divergence => &diffusion[nb * mm..(nb + 1) * mm],
                    Form::NonDivergence => ck,
                };
                for c in 0..m {
                    for j in 0..m {
                        a.add(q * m + c, qn * m + j, -w * cn[c * m + j]);
                    }
                }
            }
        }
    }
    a
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{laplacian, Field};

    #[test]
    fn identity_diffusion_matches_laplacian() {
        let d = Domain::rectangle(1.0, 2.0, 6, 7).unwrap();
        let m = 2;
        let idx = InteriorIndex::new(&d, m);
        let mut eye = vec![0.0; d.node_count() * m * m];
        for k in 0..d.node_count() {
            eye[k * 4] = 1.0;
            eye[k * 4 + 3] = 1.0;
        }
        let dt = 0.3;
        for form in [Form::Divergence, Form::NonDivergence] {
            let a = assemble(&d, &idx, dt, &eye, None, form);
            let f = crate::grid::smooth_random_fields(d, m, 3, 1, 5).remove(0);
            let x: Vec<f64> = idx.nodes().iter().flat_map(|&k| f.node(k).to_vec()).collect();
            let y = a.mul_vec(&x);
            let lf = laplacian(&f);
            let mut expect = Field::zeros(d, m);
            for (q, &k) in idx.nodes().iter().enumerate() {
                for c in 0..m {
                    expect.node_mut(k)[c] = f.node(k)[c] - dt * lf.node(k)[c];
                    assert!((y[q * m + c] - expect.node(k)[c]).abs() < 1e-12);
                }
            }
        }
    }
}

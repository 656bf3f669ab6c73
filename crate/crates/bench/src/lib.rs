//! Shared fixtures for the solver benchmarks.

use std::f64::consts::PI;

use crossdiff_core::forward::{solve_family, SolverConfig};
use crossdiff_core::model::{make_skt, SktModel, SktParams};
use crossdiff_core::{Domain, Field, Trajectory};

pub fn skt() -> SktModel {
    make_skt(SktParams {
        d: vec![1.0, 1.5],
        alpha: vec![vec![0.5, 0.3], vec![0.2, 0.4]],
        beta: vec![vec![-0.5, -0.2], vec![-0.1, -0.5]],
        k: vec![0.5, 0.3],
        lambda0: 0.5,
    })
    .expect("valid parameters")
}

pub fn square(nodes: usize) -> Domain {
    Domain::rectangle(1.0, 1.0, nodes, nodes).expect("valid grid")
}

pub fn bump(domain: Domain, amplitude: f64) -> Field {
    Field::dirichlet_from_fn(domain, 2, |x, o| {
        o[0] = amplitude * (PI * x[0]).sin() * (PI * x[1]).sin();
        o[1] = 0.5 * amplitude * (2.0 * PI * x[0]).sin().abs() * (PI * x[1]).sin();
    })
}

/// A short SKT trajectory on an `nodes × nodes` grid.
pub fn trajectory(nodes: usize, steps: usize) -> Trajectory {
    let d = square(nodes);
    let dt = 1e-3;
    let cfg = SolverConfig::new(dt, dt * steps as f64);
    solve_family(&skt(), &bump(d, 1.0), &cfg, None).expect("forward solve").trajectory
}

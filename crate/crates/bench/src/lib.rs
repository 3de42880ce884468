//! Shared fixtures for the benchmarks.

use pws_msf_core::models::{galvanetto, DEFAULT_BELT_SPEED, DEFAULT_GAMMA};
use pws_msf_core::network::{build_topology, complete_graph, path_graph};
use pws_msf_core::orbit::find_periodic_orbit;
use pws_msf_core::{AgentModel, Matrix, NetworkTopology, OrbitSkeleton, State};

pub const STEP: f64 = 1e-3;

pub fn model() -> AgentModel {
    galvanetto(DEFAULT_GAMMA, DEFAULT_BELT_SPEED)
}

pub fn coupling() -> Matrix {
    Matrix::from_row_slice(2, 2, &[0.0, 0.0, 1.0, 0.0])
}

pub fn skeleton(model: &AgentModel) -> OrbitSkeleton {
    find_periodic_orbit(model, &State::zeros(2), STEP, 1e-10, 200).expect("orbit converges")
}

pub fn pair(sigma: f64) -> NetworkTopology {
    build_topology(&complete_graph(2), &coupling(), sigma).expect("valid topology")
}

pub fn path(nodes: usize, sigma: f64) -> NetworkTopology {
    build_topology(&path_graph(nodes), &coupling(), sigma).expect("valid topology")
}

//! Diffusively coupled networks of identical Filippov agents.
//!
//! Agent `i` obeys `ẋᵢ = f(xᵢ) + σ Σⱼ Lᵢⱼ E xⱼ` with the graph Laplacian
//! `L = -D + A`. Each agent carries its own mode; a sliding agent uses the
//! coefficient that keeps `∇hᵀẋᵢ = 0` including its coupling input. Because
//! `hᵢ` depends on `xᵢ` only, that coefficient involves no other agent's
//! coefficient, so sliding on intersections `Σᵢ ∩ Σⱼ` is resolved agent by agent.

use std::io::Write;

use nalgebra::SymmetricEigen;
use serde::Deserialize;

use crate::agent::{classify_normals, normal_band, AgentModel, Matrix, Mode, PointKind, State};
use crate::error::{check_finite, Error, Result};
use crate::integrator::{
    aligned_grid, initial_mode, integrate_variational, project_onto_manifold, resolve_hit,
    run_engine, EventKind, HybridOptions, SwitchedSystem, EVENT_TOL,
};
use crate::msf::coupling_correction;
use crate::orbit::OrbitSkeleton;

/// Multiplicity test for the zero Laplacian eigenvalue.
pub const CONNECTIVITY_TOL: f64 = 1e-9;
/// Slack on `α ∈ [0, 1]` before a sliding agent is reported as lost.
pub const ALPHA_SLACK: f64 = 1e-9;
/// Largest `nN` accepted by dense monodromy computations.
pub const DENSE_SIZE_GUARD: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkTopology {
    pub adjacency: Matrix,
    pub laplacian: Matrix,
    /// Laplacian eigenvalues, descending; `spectrum[0] = 0`.
    pub spectrum: Vec<f64>,
    /// Orthonormal eigenvectors as columns, in spectrum order.
    pub eigenbasis: Matrix,
    pub inner_coupling: Matrix,
    pub sigma: f64,
}

impl NetworkTopology {
    pub fn agents(&self) -> usize {
        self.adjacency.nrows()
    }

    pub fn agent_dim(&self) -> usize {
        self.inner_coupling.nrows()
    }

    pub fn with_sigma(&self, sigma: f64) -> Result<Self> {
        check_sigma(sigma)?;
        Ok(Self {
            sigma,
            ..self.clone()
        })
    }

    /// `M = L ⊗ E`.
    pub fn coupling_matrix(&self) -> Matrix {
        self.laplacian.kronecker(&self.inner_coupling)
    }

    /// `(W ⊗ Iₙ)`, the change of coordinates diagonalizing `M`.
    pub fn block_eigenbasis(&self) -> Matrix {
        let n = self.agent_dim();
        self.eigenbasis.kronecker(&Matrix::identity(n, n))
    }

    /// `σ Σⱼ Lᵢⱼ E xⱼ` for every agent, stacked.
    pub fn coupling_input(&self, x: &State) -> State {
        if self.sigma == 0.0 {
            return State::zeros(x.len());
        }
        let n = self.agent_dim();
        let big_n = self.agents();
        let mut out = State::zeros(x.len());
        for i in 0..big_n {
            let mut acc = State::zeros(n);
            for j in 0..big_n {
                let l = self.laplacian[(i, j)];
                if l != 0.0 {
                    acc += x.rows(j * n, n) * l;
                }
            }
            out.rows_mut(i * n, n).copy_from(&(&self.inner_coupling * acc * self.sigma));
        }
        out
    }
}

fn check_sigma(sigma: f64) -> Result<()> {
    if sigma >= 0.0 && sigma.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("coupling strength must be finite and >= 0, got {sigma}")))
    }
}

/// Laplacian, spectrum and eigenbasis of an undirected, simple, connected graph.
pub fn build_topology(adjacency: &Matrix, coupling: &Matrix, sigma: f64) -> Result<NetworkTopology> {
    let big_n = adjacency.nrows();
    if adjacency.ncols() != big_n {
        return Err(Error::InvalidAdjacency(format!(
            "adjacency is {}x{}, expected square",
            big_n,
            adjacency.ncols()
        )));
    }
    if big_n < 2 {
        return Err(Error::InvalidAdjacency("a network needs at least two agents".into()));
    }
    if !coupling.is_square() || coupling.nrows() == 0 {
        return Err(Error::InvalidInput("inner coupling matrix must be square".into()));
    }
    check_finite(coupling.as_slice(), "inner coupling matrix")?;
    check_sigma(sigma)?;
    for i in 0..big_n {
        if adjacency[(i, i)] != 0.0 {
            return Err(Error::InvalidAdjacency(format!("self-loop at node {i}")));
        }
        for j in 0..big_n {
            let a = adjacency[(i, j)];
            if a != 0.0 && a != 1.0 {
                return Err(Error::InvalidAdjacency(format!("entry ({i}, {j}) = {a} is not 0/1")));
            }
        }
    }
    if adjacency != &adjacency.transpose() {
        return Err(Error::NotSymmetric);
    }

    let degree = Matrix::from_diagonal(&adjacency.column_sum());
    let laplacian = adjacency - degree;
    let eig = SymmetricEigen::new(laplacian.clone());
    let mut order: Vec<usize> = (0..big_n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let zeros = eig
        .eigenvalues
        .iter()
        .filter(|l| l.abs() <= CONNECTIVITY_TOL)
        .count();
    if zeros != 1 {
        return Err(Error::NotConnected { multiplicity: zeros });
    }
    let mut spectrum: Vec<f64> = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    spectrum[0] = 0.0;
    let mut eigenbasis = Matrix::zeros(big_n, big_n);
    for (col, &k) in order.iter().enumerate() {
        eigenbasis.set_column(col, &eig.eigenvectors.column(k));
    }
    Ok(NetworkTopology {
        adjacency: adjacency.clone(),
        laplacian,
        spectrum,
        eigenbasis,
        inner_coupling: coupling.clone(),
        sigma,
    })
}

/// Adjacency given either as a dense 0/1 matrix or as an undirected edge list
/// over nodes `0..nodes`.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum AdjacencySpec {
    Dense(Vec<Vec<f64>>),
    Edges { nodes: usize, edges: Vec<[usize; 2]> },
}

impl AdjacencySpec {
    pub fn to_matrix(&self) -> Result<Matrix> {
        match self {
            AdjacencySpec::Dense(rows) => {
                crate::serde_helpers::rows_to_matrix(rows).map_err(Error::InvalidAdjacency)
            }
            AdjacencySpec::Edges { nodes, edges } => {
                let mut a = Matrix::zeros(*nodes, *nodes);
                for &[i, j] in edges {
                    if i >= *nodes || j >= *nodes {
                        return Err(Error::InvalidAdjacency(format!(
                            "edge ({i}, {j}) outside {nodes} nodes"
                        )));
                    }
                    if i == j {
                        return Err(Error::InvalidAdjacency(format!("self-loop at node {i}")));
                    }
                    a[(i, j)] = 1.0;
                    a[(j, i)] = 1.0;
                }
                Ok(a)
            }
        }
    }
}

/// Parse an adjacency JSON document (array of arrays or `{"nodes", "edges"}`).
pub fn parse_adjacency(json: &str) -> Result<Matrix> {
    let spec: AdjacencySpec = serde_json::from_str(json)
        .map_err(|e| Error::InvalidAdjacency(format!("unrecognized adjacency document: {e}")))?;
    spec.to_matrix()
}

pub fn complete_graph(nodes: usize) -> Matrix {
    Matrix::from_fn(nodes, nodes, |i, j| if i == j { 0.0 } else { 1.0 })
}

pub fn path_graph(nodes: usize) -> Matrix {
    Matrix::from_fn(nodes, nodes, |i, j| if i.abs_diff(j) == 1 { 1.0 } else { 0.0 })
}

/// Stacked network state with one mode per agent.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkState {
    pub x: State,
    pub modes: Vec<Mode>,
}

impl NetworkState {
    /// `e ⊗ y` with every agent in `mode`.
    pub fn synchronous(y: &State, agents: usize, mode: Mode) -> Self {
        let n = y.len();
        let mut x = State::zeros(n * agents);
        for i in 0..agents {
            x.rows_mut(i * n, n).copy_from(y);
        }
        Self {
            x,
            modes: vec![mode; agents],
        }
    }
}

/// Region number `1..=2^N` of the free-flow tree (agent 1 is the leading sign,
/// minus before plus), or `None` if any agent slides.
pub fn region_label(modes: &[Mode]) -> Option<usize> {
    let mut label = 0usize;
    for mode in modes {
        label <<= 1;
        match mode {
            Mode::MinusRegion => {}
            Mode::PlusRegion => label |= 1,
            Mode::Sliding => return None,
        }
    }
    Some(label + 1)
}

/// Largest pairwise distance `‖xᵢ - xⱼ‖` between agents.
pub fn sync_error(x: &State, agents: usize) -> f64 {
    let n = x.len() / agents;
    let mut worst: f64 = 0.0;
    for i in 0..agents {
        for j in i + 1..agents {
            worst = worst.max((x.rows(i * n, n) - x.rows(j * n, n)).norm());
        }
    }
    worst
}

pub(crate) struct Network<'a> {
    pub model: &'a AgentModel,
    pub topology: &'a NetworkTopology,
}

impl Network<'_> {
    fn dim(&self) -> usize {
        self.model.dim()
    }

    fn block(&self, x: &State, i: usize) -> State {
        let n = self.dim();
        x.rows(i * n, n).into_owned()
    }

    fn check(&self, x: &State, modes: &[Mode]) -> Result<()> {
        if self.topology.agent_dim() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: self.topology.agent_dim(),
            });
        }
        let expected = self.dim() * self.topology.agents();
        if x.len() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                found: x.len(),
            });
        }
        if modes.len() != self.topology.agents() {
            return Err(Error::DimensionMismatch {
                expected: self.topology.agents(),
                found: modes.len(),
            });
        }
        Ok(())
    }

    /// Coupled sliding coefficient of agent `i` given its coupling input `c`.
    fn alpha(&self, xi: &State, c: &State) -> Result<f64> {
        let grad = self.model.grad_h(xi);
        let fm = self.model.f_minus(xi);
        let fp = self.model.f_plus(xi);
        let denom = grad.dot(&fm) - grad.dot(&fp);
        if denom.abs() <= normal_band(&fm, &fp) {
            return Err(Error::DegenerateDenominator { value: denom });
        }
        Ok((grad.dot(&fm) + grad.dot(c)) / denom)
    }

    fn field_with(&self, x: &State, modes: &[Mode], strict: bool) -> Result<State> {
        let n = self.dim();
        let input = self.topology.coupling_input(x);
        let mut out = State::zeros(x.len());
        for (i, mode) in modes.iter().enumerate() {
            let xi = self.block(x, i);
            let ci = input.rows(i * n, n).into_owned();
            let fi = match mode {
                Mode::MinusRegion => self.model.f_minus(&xi),
                Mode::PlusRegion => self.model.f_plus(&xi),
                Mode::Sliding => {
                    let alpha = self.alpha(&xi, &ci)?;
                    if strict && !(-ALPHA_SLACK..=1.0 + ALPHA_SLACK).contains(&alpha) {
                        return Err(Error::SlidingLost { agent: i, alpha });
                    }
                    self.model.f_minus(&xi) * (1.0 - alpha) + self.model.f_plus(&xi) * alpha
                }
            };
            out.rows_mut(i * n, n).copy_from(&(fi + ci));
        }
        Ok(out)
    }

    /// Mode of each agent at `x`, using the coupled fields on manifolds.
    fn initial_modes(&self, x: &State) -> Result<Vec<Mode>> {
        let n = self.dim();
        let input = self.topology.coupling_input(x);
        (0..self.topology.agents())
            .map(|i| {
                let xi = self.block(x, i);
                let hv = self.model.h(&xi);
                let class = if hv.abs() <= EVENT_TOL * (1.0 + xi.norm()) {
                    let ci = input.rows(i * n, n).into_owned();
                    Some(self.coupled_class(&xi, &ci))
                } else {
                    None
                };
                initial_mode(hv, class).map_err(|reason| Error::DegenerateEvent {
                    time: 0.0,
                    reason: format!("agent {i}: {reason}"),
                })
            })
            .collect()
    }

    fn coupled_class(&self, xi: &State, ci: &State) -> PointKind {
        let grad = self.model.grad_h(xi);
        let gm = self.model.f_minus(xi) + ci;
        let gp = self.model.f_plus(xi) + ci;
        classify_normals(grad.dot(&gm), grad.dot(&gp), normal_band(&gm, &gp))
    }
}

impl SwitchedSystem for Network<'_> {
    fn agent_count(&self) -> usize {
        self.topology.agents()
    }

    fn field(&self, x: &State, modes: &[Mode]) -> Result<State> {
        self.field_with(x, modes, false)
    }

    fn project(&self, x: &mut State, modes: &[Mode]) {
        let n = self.dim();
        for (i, mode) in modes.iter().enumerate() {
            if *mode == Mode::Sliding {
                let mut xi = self.block(x, i);
                project_onto_manifold(self.model, &mut xi);
                x.rows_mut(i * n, n).copy_from(&xi);
            }
        }
    }

    fn monitor(&self, x: &State, modes: &[Mode], agent: usize) -> Result<f64> {
        let xi = self.block(x, agent);
        match modes[agent] {
            Mode::MinusRegion => Ok(-self.model.h(&xi)),
            Mode::PlusRegion => Ok(self.model.h(&xi)),
            Mode::Sliding => {
                let n = self.dim();
                let ci = self.topology.coupling_input(x).rows(agent * n, n).into_owned();
                let alpha = self.alpha(&xi, &ci)?;
                Ok(alpha.min(1.0 - alpha))
            }
        }
    }

    fn agent_norm(&self, x: &State, agent: usize) -> f64 {
        self.block(x, agent).norm()
    }

    fn transition(&self, x: &mut State, modes: &[Mode], agent: usize, time: f64) -> Result<EventKind> {
        let n = self.dim();
        let mut xi = self.block(x, agent);
        project_onto_manifold(self.model, &mut xi);
        x.rows_mut(agent * n, n).copy_from(&xi);
        let input = self.topology.coupling_input(x);
        let ci = input.rows(agent * n, n).into_owned();
        let kind = self.coupled_class(&xi, &ci);
        let degenerate = |reason: String| Error::DegenerateEvent {
            time,
            reason: format!("agent {agent}: {reason}"),
        };
        match modes[agent] {
            Mode::Sliding => {
                let alpha = self.alpha(&xi, &ci)?;
                let velocity = self.field_with(x, modes, false)?;
                let input_rate = self.topology.coupling_input(&velocity);
                let vi = velocity.rows(agent * n, n).into_owned();
                let ci_rate = input_rate.rows(agent * n, n).into_owned();
                let toward_minus = alpha < 0.5;
                let rate = self.model.normal_rate(&xi, &ci, &vi, &ci_rate, toward_minus);
                let (expected, confirmed, exit) = if toward_minus {
                    (PointKind::TangentialExitMinus, rate < 0.0, EventKind::TangentialExitToMinus)
                } else {
                    (PointKind::TangentialExitPlus, rate > 0.0, EventKind::TangentialExitToPlus)
                };
                if kind != expected || !confirmed {
                    return Err(degenerate(format!(
                        "unconfirmed tangential exit ({kind:?}, rate {rate:e})"
                    )));
                }
                Ok(exit)
            }
            from => resolve_hit(from, kind).map_err(degenerate),
        }
    }
}

/// Vector field of the coupled network at `state`.
///
/// Sliding agents use the coupling-aware Filippov coefficient; a coefficient
/// outside `[0, 1]` (beyond [`ALPHA_SLACK`]) means the agent must leave `Σ`.
pub fn network_field(model: &AgentModel, topology: &NetworkTopology, state: &NetworkState) -> Result<State> {
    let net = Network { model, topology };
    net.check(&state.x, &state.modes)?;
    net.field_with(&state.x, &state.modes, true)
}

/// Coupled sliding coefficient of `agent` at `state`.
pub fn coupled_alpha(
    model: &AgentModel,
    topology: &NetworkTopology,
    state: &NetworkState,
    agent: usize,
) -> Result<f64> {
    let net = Network { model, topology };
    net.check(&state.x, &state.modes)?;
    let n = model.dim();
    let ci = topology.coupling_input(&state.x).rows(agent * n, n).into_owned();
    net.alpha(&net.block(&state.x, agent), &ci)
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkEvent {
    pub time: f64,
    pub agent: usize,
    pub kind: EventKind,
}

#[derive(Debug, Clone, Default)]
pub struct NetworkTrajectory {
    pub times: Vec<f64>,
    pub states: Vec<State>,
    pub modes: Vec<Vec<Mode>>,
    pub events: Vec<NetworkEvent>,
}

impl NetworkTrajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Write `t,sync_error,x_1_1..x_N_n` rows, keeping every `stride`-th sample
    /// plus the last one. Floats use 17 significant digits.
    pub fn write_csv<W: Write>(&self, out: &mut W, sync: &[f64], agents: usize, stride: usize) -> std::io::Result<()> {
        let dim = self.states.first().map_or(0, |x| x.len() / agents);
        let mut header = String::from("t,sync_error");
        for i in 1..=agents {
            for k in 1..=dim {
                header.push_str(&format!(",x_{i}_{k}"));
            }
        }
        writeln!(out, "{header}")?;
        let stride = stride.max(1);
        let last = self.len().saturating_sub(1);
        for idx in (0..self.len()).filter(|&k| k % stride == 0 || k == last) {
            let mut line = format!("{:.16e},{:.16e}", self.times[idx], sync[idx]);
            for v in self.states[idx].iter() {
                line.push_str(&format!(",{v:.16e}"));
            }
            writeln!(out, "{line}")?;
        }
        Ok(())
    }
}

/// Integrate the full network from `x0` and record the synchronization error
/// `maxᵢⱼ ‖xᵢ - xⱼ‖` at every sample.
pub fn simulate_network(
    model: &AgentModel,
    topology: &NetworkTopology,
    x0: &State,
    t_end: f64,
    step: f64,
) -> Result<(NetworkTrajectory, Vec<f64>)> {
    simulate_network_with(model, topology, x0, 0.0, t_end, step, &HybridOptions::default())
}

pub fn simulate_network_with(
    model: &AgentModel,
    topology: &NetworkTopology,
    x0: &State,
    t0: f64,
    t_end: f64,
    step: f64,
    options: &HybridOptions,
) -> Result<(NetworkTrajectory, Vec<f64>)> {
    let net = Network { model, topology };
    let modes0 = vec![Mode::MinusRegion; topology.agents()];
    net.check(x0, &modes0)?;
    let modes0 = net.initial_modes(x0)?;
    let mut events = Vec::new();
    let run = run_engine(&net, x0, &modes0, t0, t_end, step, options, |ev, _| {
        events.push(NetworkEvent {
            time: ev.time,
            agent: ev.agent,
            kind: ev.kind,
        });
        Ok(false)
    })?;
    let mut traj = NetworkTrajectory {
        events,
        ..NetworkTrajectory::default()
    };
    let samples = if options.record_samples {
        run.samples
    } else {
        vec![(run.final_time, run.final_state, run.final_modes)]
    };
    for (t, x, modes) in samples {
        traj.times.push(t);
        traj.states.push(x);
        traj.modes.push(modes);
    }
    let sync = traj
        .states
        .iter()
        .map(|x| sync_error(x, topology.agents()))
        .collect();
    Ok((traj, sync))
}

/// Monodromy of the full `nN`-dimensional variational system along the
/// synchronous orbit `e ⊗ x_S`, jumps `I_N ⊗ S` at each event.
///
/// Free segments use `I_N ⊗ Df± + σ L ⊗ E`; sliding segments use
/// `I_N ⊗ Df_Σ + σ L ⊗ B + σ L ⊗ E`.
pub fn full_monodromy(
    model: &AgentModel,
    topology: &NetworkTopology,
    skeleton: &OrbitSkeleton,
    step: f64,
) -> Result<Matrix> {
    full_monodromy_with_jumps(model, topology, skeleton, step, |kind, x| model.saltation_for(kind, x))
}

pub(crate) fn full_monodromy_with_jumps<J>(
    model: &AgentModel,
    topology: &NetworkTopology,
    skeleton: &OrbitSkeleton,
    step: f64,
    jump: J,
) -> Result<Matrix>
where
    J: Fn(EventKind, &State) -> Result<Matrix>,
{
    let n = model.dim();
    let big_n = topology.agents();
    let size = n * big_n;
    if size > DENSE_SIZE_GUARD {
        return Err(Error::SizeGuardExceeded {
            size,
            limit: DENSE_SIZE_GUARD,
        });
    }
    if topology.agent_dim() != n || skeleton.dim() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: topology.agent_dim().max(skeleton.dim()),
        });
    }
    if !(step > 0.0) {
        return Err(Error::InvalidInput(format!("step must be positive, got {step}")));
    }
    let identity_n = Matrix::identity(big_n, big_n);
    let sigma_l = &topology.laplacian * topology.sigma;
    let coupling = sigma_l.kronecker(&topology.inner_coupling);
    let mut z = Matrix::identity(size, size);
    for (k, segment) in skeleton.segments.iter().enumerate() {
        let mode = segment.mode;
        let grid = aligned_grid(0.0, segment.t_start, segment.t_end, step);
        let (_, z_end) = integrate_variational(
            |x| model.eval_field(mode, x),
            |x| {
                let mut a = identity_n.kronecker(&model.mode_jacobian(mode, x)?) + &coupling;
                if mode == Mode::Sliding {
                    a += sigma_l.kronecker(&coupling_correction(model, x, &topology.inner_coupling)?);
                }
                Ok(a)
            },
            |x| {
                if mode == Mode::Sliding {
                    project_onto_manifold(model, x)
                }
            },
            &segment.x_start,
            &z,
            &grid,
        )?;
        z = z_end;
        if let Some(event) = skeleton.events.get(k) {
            let s = jump(event.kind, &event.state)?;
            z = identity_n.kronecker(&s) * z;
        }
    }
    Ok(z)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::galvanetto;
    use crate::orbit::{find_periodic_orbit, DEFAULT_MAX_LAPS, DEFAULT_ORBIT_TOL};
    use nalgebra::dvector;

    fn e_matrix() -> Matrix {
        Matrix::from_row_slice(2, 2, &[0.0, 0.0, 1.0, 0.0])
    }

    #[test]
    fn two_node_topology() {
        let t = build_topology(&complete_graph(2), &e_matrix(), 1.0).unwrap();
        assert_eq!(t.laplacian, Matrix::from_row_slice(2, 2, &[-1.0, 1.0, 1.0, -1.0]));
        assert_eq!(t.spectrum[0], 0.0);
        assert!((t.spectrum[1] + 2.0).abs() < 1e-14);
    }

    #[test]
    fn path_graph_spectrum() {
        let t = build_topology(&path_graph(3), &e_matrix(), 1.0).unwrap();
        let expected = [0.0, -1.0, -3.0];
        for (a, b) in t.spectrum.iter().zip(expected) {
            assert!((a - b).abs() < 1e-12, "{:?}", t.spectrum);
        }
        for r in 0..3 {
            assert!(t.laplacian.row(r).sum().abs() < 1e-14);
        }
        let w = &t.eigenbasis;
        assert!((w.transpose() * w - Matrix::identity(3, 3)).norm() < 1e-12);
        let d = w.transpose() * &t.laplacian * w;
        assert!((d - Matrix::from_diagonal(&State::from_vec(t.spectrum.clone()))).norm() < 1e-12);
    }

    #[test]
    fn topology_errors() {
        let mut disconnected = Matrix::zeros(4, 4);
        for (i, j) in [(0, 1), (2, 3)] {
            disconnected[(i, j)] = 1.0;
            disconnected[(j, i)] = 1.0;
        }
        assert!(matches!(
            build_topology(&disconnected, &e_matrix(), 1.0),
            Err(Error::NotConnected { multiplicity: 2 })
        ));
        let mut directed = Matrix::zeros(2, 2);
        directed[(0, 1)] = 1.0;
        assert!(matches!(build_topology(&directed, &e_matrix(), 1.0), Err(Error::NotSymmetric)));
        let weighted = complete_graph(2) * 2.0;
        assert!(matches!(
            build_topology(&weighted, &e_matrix(), 1.0),
            Err(Error::InvalidAdjacency(_))
        ));
        assert!(build_topology(&complete_graph(1), &e_matrix(), 1.0).is_err());
        assert!(build_topology(&complete_graph(2), &e_matrix(), -1.0).is_err());
    }

    #[test]
    fn kronecker_transform_diagonalizes_coupling() {
        for adjacency in [complete_graph(2), path_graph(3), complete_graph(4), path_graph(5)] {
            let t = build_topology(&adjacency, &e_matrix(), 1.0).unwrap();
            let v = t.block_eigenbasis();
            let lambda = Matrix::from_diagonal(&State::from_vec(t.spectrum.clone()));
            let diff = v.transpose() * t.coupling_matrix() * &v - lambda.kronecker(&e_matrix());
            assert!(diff.norm() <= 1e-12);
        }
    }

    #[test]
    fn adjacency_json_forms() {
        let dense = parse_adjacency("[[0,1,0],[1,0,1],[0,1,0]]").unwrap();
        let edges = parse_adjacency(r#"{"nodes": 3, "edges": [[0,1],[1,2]]}"#).unwrap();
        assert_eq!(dense, edges);
        assert_eq!(dense, path_graph(3));
        assert!(parse_adjacency(r#"{"nodes": 2, "edges": [[0,5]]}"#).is_err());
        assert!(parse_adjacency("[[0,1],[1]]").is_err());
    }

    #[test]
    fn region_labels_follow_tree() {
        use Mode::*;
        assert_eq!(region_label(&[MinusRegion, MinusRegion, MinusRegion]), Some(1));
        assert_eq!(region_label(&[MinusRegion, PlusRegion, MinusRegion]), Some(3));
        assert_eq!(region_label(&[PlusRegion, MinusRegion, PlusRegion]), Some(6));
        assert_eq!(region_label(&[PlusRegion, PlusRegion]), Some(4));
        assert_eq!(region_label(&[Sliding, PlusRegion]), None);
    }

    #[test]
    fn synchronous_state_has_no_coupling() {
        let m = galvanetto(3.0, 0.15);
        let t = build_topology(&complete_graph(3), &e_matrix(), 2.5).unwrap();
        let y = dvector![0.3, 0.15];
        let state = NetworkState::synchronous(&y, 3, Mode::Sliding);
        assert_eq!(t.coupling_input(&state.x).amax(), 0.0);
        let f = network_field(&m, &t, &state).unwrap();
        let fs = m.eval_field(Mode::Sliding, &y).unwrap();
        for i in 0..3 {
            assert_eq!(f.rows(2 * i, 2).into_owned(), fs);
        }
    }

    #[test]
    fn zero_sigma_decouples() {
        let m = galvanetto(3.0, 0.15);
        let t = build_topology(&complete_graph(2), &e_matrix(), 0.0).unwrap();
        let state = NetworkState {
            x: dvector![0.1, 0.15, -0.4, 0.3],
            modes: vec![Mode::Sliding, Mode::PlusRegion],
        };
        let f = network_field(&m, &t, &state).unwrap();
        assert_eq!(f.rows(0, 2).into_owned(), m.eval_field(Mode::Sliding, &dvector![0.1, 0.15]).unwrap());
        assert_eq!(f.rows(2, 2).into_owned(), m.f_plus(&dvector![-0.4, 0.3]));
    }

    #[test]
    fn coupled_sliding_agent_stays_tangent() {
        let m = galvanetto(3.0, 0.15);
        let t = build_topology(&complete_graph(2), &e_matrix(), 1.0).unwrap();
        for other in [Mode::MinusRegion, Mode::PlusRegion, Mode::Sliding] {
            let x2 = if other == Mode::Sliding { 0.15 } else { 0.14 };
            let state = NetworkState {
                x: dvector![0.0, 0.15, 0.02, x2],
                modes: vec![Mode::Sliding, other],
            };
            let f = network_field(&m, &t, &state).unwrap();
            assert!(f[1].abs() <= 1e-12, "{other}: {}", f[1]);
            let alpha = coupled_alpha(&m, &t, &state, 0).unwrap();
            assert!((alpha - (1.0 + 0.02) / 2.0).abs() < 1e-14);
        }
    }

    #[test]
    fn sliding_lost_outside_unit_interval() {
        let m = galvanetto(3.0, 0.15);
        let t = build_topology(&complete_graph(2), &e_matrix(), 1.0).unwrap();
        let state = NetworkState {
            x: dvector![0.0, 0.15, 5.0, 0.0],
            modes: vec![Mode::Sliding, Mode::MinusRegion],
        };
        assert!(matches!(
            network_field(&m, &t, &state),
            Err(Error::SlidingLost { agent: 0, .. })
        ));
    }

    #[test]
    fn identical_agents_stay_synchronized() {
        let m = galvanetto(3.0, 0.15);
        let t = build_topology(&complete_graph(2), &e_matrix(), 2.0).unwrap();
        let x0 = NetworkState::synchronous(&dvector![0.0, 0.0], 2, Mode::MinusRegion).x;
        let (traj, sync) = simulate_network(&m, &t, &x0, 30.0, 1e-3).unwrap();
        assert!(sync.iter().all(|&e| e <= 1e-10));
        assert!(traj.events.len() >= 4);
    }

    #[test]
    fn uncoupled_monodromy_is_block_diagonal() {
        let m = galvanetto(3.0, 0.15);
        let sk = find_periodic_orbit(&m, &dvector![0.0, 0.0], 1e-3, DEFAULT_ORBIT_TOL, DEFAULT_MAX_LAPS)
            .unwrap();
        let t = build_topology(&complete_graph(2), &e_matrix(), 0.0).unwrap();
        let x = full_monodromy(&m, &t, &sk, 1e-3).unwrap();
        assert_eq!(x.view((0, 2), (2, 2)).amax(), 0.0);
        assert_eq!(x.view((2, 0), (2, 2)).amax(), 0.0);
        assert_eq!(x.view((0, 0), (2, 2)), x.view((2, 2), (2, 2)));
    }

    #[test]
    fn block_saltation_commutes_with_eigenbasis() {
        let m = galvanetto(3.0, 0.15);
        let s = m
            .saltation_crossing(&dvector![-3.0, 0.15], crate::agent::CrossingDirection::MinusToPlus)
            .unwrap();
        for adjacency in [complete_graph(2), path_graph(3)] {
            let t = build_topology(&adjacency, &e_matrix(), 1.0).unwrap();
            let v = t.block_eigenbasis();
            let big = Matrix::identity(t.agents(), t.agents()).kronecker(&s);
            assert!((v.transpose() * &big * &v - &big).norm() <= 1e-13);
        }
    }

    #[test]
    fn size_guard() {
        let m = galvanetto(3.0, 0.15);
        let sk = find_periodic_orbit(&m, &dvector![0.0, 0.0], 1e-2, DEFAULT_ORBIT_TOL, DEFAULT_MAX_LAPS)
            .unwrap();
        let t = build_topology(&complete_graph(33), &e_matrix(), 1.0).unwrap();
        assert!(matches!(
            full_monodromy(&m, &t, &sk, 1e-2),
            Err(Error::SizeGuardExceeded { size: 66, .. })
        ));
    }
}

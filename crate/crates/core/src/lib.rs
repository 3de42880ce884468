//! Master stability functions for networks of identical Filippov oscillators.
//!
//! A single agent is a piecewise-smooth system with one switching manifold
//! `h(x) = 0`; agents are coupled diffusively through a graph Laplacian. The
//! stability of the synchronous periodic orbit is decided from `N` reduced
//! `n`-dimensional variational problems instead of one `nN`-dimensional one.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod agent;
pub mod error;
pub mod integrator;
pub mod models;
pub mod msf;
pub mod network;
pub mod orbit;
pub mod serde_helpers;

pub use agent::{AgentModel, Matrix, Mode, PointClass, PointKind, State};
pub use error::{Error, Result};
pub use integrator::{EventKind, EventRecord, Trajectory};
pub use msf::{MsfRow, MsfTable, ValidationReport};
pub use network::{NetworkState, NetworkTopology};
pub use num_complex::Complex64;
pub use orbit::OrbitSkeleton;

//! Run configuration: a single JSON document, overridden by command-line flags.
//!
//! Precedence, lowest first: built-in defaults, the `--config` file, flags.
//! Without `--config` the built-in defaults describe the stick-slip
//! oscillator pair used by `repro-paper`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use pws_msf_core::models::{self, GALVANETTO};
use pws_msf_core::network::{complete_graph, parse_adjacency, AdjacencySpec};
use pws_msf_core::serde_helpers::rows_to_matrix;
use pws_msf_core::{AgentModel, Matrix};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

pub const DEFAULT_STEP: f64 = 1e-3;
pub const DEFAULT_OUT_DIR: &str = "pws-msf-out";

/// Coupling strengths to evaluate: one value or an inclusive uniform grid of `steps` points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SigmaSpec {
    Single(f64),
    Grid { min: f64, max: f64, steps: usize },
}

impl SigmaSpec {
    pub fn values(&self) -> Vec<f64> {
        match *self {
            SigmaSpec::Single(s) => vec![s],
            SigmaSpec::Grid { min, steps: 1, .. } => vec![min],
            SigmaSpec::Grid { min, max, steps } => (0..steps)
                .map(|k| {
                    if k + 1 == steps {
                        max
                    } else {
                        min + (max - min) * k as f64 / (steps - 1) as f64
                    }
                })
                .collect(),
        }
    }

    fn check(&self) -> Result<(), CliError> {
        match *self {
            SigmaSpec::Single(s) if !(s >= 0.0 && s.is_finite()) => {
                Err(CliError::config("sigma must be finite and nonnegative"))
            }
            SigmaSpec::Grid { min, max, steps } => {
                if !(min >= 0.0 && max.is_finite() && min <= max) {
                    Err(CliError::config("sigma grid needs 0 <= sigma.min <= sigma.max"))
                } else if steps == 0 {
                    Err(CliError::config("sigma.steps must be at least 1"))
                } else {
                    Ok(())
                }
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    /// Anchor-state mismatch accepted by the periodic-orbit search.
    pub orbit: f64,
    /// Relative pairing distance between full and reduced spectra.
    pub matching: f64,
    /// Saltation and `E + B = 0` identity residuals.
    pub identity: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            orbit: pws_msf_core::orbit::DEFAULT_ORBIT_TOL,
            matching: pws_msf_core::msf::MATCH_TOL,
            identity: pws_msf_core::msf::IDENTITY_TOL,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OrbitSection {
    /// Start of the orbit search; zeros when absent.
    pub initial_guess: Option<Vec<f64>>,
    pub max_laps: usize,
    /// Time without events after which the search gives up.
    pub horizon: f64,
    /// Reuse a skeleton written by `orbit` instead of searching again.
    pub skeleton: Option<PathBuf>,
}

impl Default for OrbitSection {
    fn default() -> Self {
        Self {
            initial_guess: None,
            max_laps: pws_msf_core::orbit::DEFAULT_MAX_LAPS,
            horizon: pws_msf_core::orbit::DEFAULT_HORIZON,
            skeleton: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateSection {
    /// Horizon in orbit periods.
    pub periods: f64,
    /// Agent `k` (0-based) is offset by `perturbation * k / (N - 1)` in every coordinate.
    pub perturbation: f64,
    /// Keep every `output_stride`-th sample in the CSV files (the last one is always kept).
    pub output_stride: usize,
}

impl Default for SimulateSection {
    fn default() -> Self {
        Self {
            periods: 50.0,
            perturbation: 1e-2,
            output_stride: 10,
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
struct ModelSection {
    name: Option<String>,
    #[serde(flatten)]
    params: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct TopologySection {
    adjacency: Option<Vec<Vec<f64>>>,
    nodes: Option<usize>,
    edges: Option<Vec<[usize; 2]>>,
    file: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    model: Option<ModelSection>,
    topology: Option<TopologySection>,
    coupling: Option<Vec<Vec<f64>>>,
    sigma: Option<SigmaSpec>,
    step: Option<f64>,
    tolerances: Option<Tolerances>,
    out_dir: Option<PathBuf>,
    orbit: Option<OrbitSection>,
    simulate: Option<SimulateSection>,
    jobs: Option<usize>,
}

/// Command-line overrides; `None` leaves the configured value alone.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub sigma: Option<f64>,
    pub sigma_min: Option<f64>,
    pub sigma_max: Option<f64>,
    pub sigma_steps: Option<usize>,
    pub step: Option<f64>,
    pub jobs: Option<usize>,
    pub out_dir: Option<PathBuf>,
    pub corrupt_saltation: bool,
}

/// Fully resolved configuration.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub model: String,
    pub params: BTreeMap<String, f64>,
    pub adjacency: Vec<Vec<f64>>,
    pub coupling: Vec<Vec<f64>>,
    pub sigma: Option<SigmaSpec>,
    pub step: f64,
    pub tolerances: Tolerances,
    pub orbit: OrbitSection,
    pub simulate: SimulateSection,
    pub corrupt_saltation: bool,
    #[serde(skip)]
    pub out_dir: PathBuf,
    #[serde(skip)]
    pub jobs: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: GALVANETTO.to_string(),
            params: BTreeMap::from([
                ("gamma".to_string(), models::DEFAULT_GAMMA),
                ("v_bar".to_string(), models::DEFAULT_BELT_SPEED),
            ]),
            adjacency: matrix_rows(&complete_graph(2)),
            coupling: vec![vec![0.0, 0.0], vec![1.0, 0.0]],
            sigma: None,
            step: DEFAULT_STEP,
            tolerances: Tolerances::default(),
            orbit: OrbitSection::default(),
            simulate: SimulateSection::default(),
            corrupt_saltation: false,
            out_dir: PathBuf::from(DEFAULT_OUT_DIR),
            jobs: None,
        }
    }
}

fn matrix_rows(m: &Matrix) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

impl RunConfig {
    /// Defaults, then the optional config file, then the flags.
    pub fn resolve(path: Option<&Path>, overrides: &Overrides) -> Result<Self, CliError> {
        let mut config = match path {
            Some(path) => Self::from_file(path)?,
            None => Self::default(),
        };
        config.apply(overrides)?;
        config.check()?;
        Ok(config)
    }

    pub fn from_file(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::config(format!("cannot read {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_json(&text, base)
    }

    /// Parse a config document; relative paths inside it resolve against `base`.
    pub fn from_json(text: &str, base: &Path) -> Result<Self, CliError> {
        let file: FileConfig =
            serde_json::from_str(text).map_err(|e| CliError::config(format!("invalid config: {e}")))?;
        let model = file
            .model
            .ok_or_else(|| CliError::config("missing field model.name"))?;
        let name = model
            .name
            .ok_or_else(|| CliError::config("missing field model.name"))?;

        let mut config = Self {
            model: name,
            params: model.params,
            ..Self::default()
        };
        if let Some(topology) = file.topology {
            config.adjacency = topology_rows(topology, base)?;
        }
        if let Some(coupling) = file.coupling {
            config.coupling = coupling;
        }
        config.sigma = file.sigma;
        config.step = file.step.unwrap_or(DEFAULT_STEP);
        config.tolerances = file.tolerances.unwrap_or_default();
        config.orbit = file.orbit.unwrap_or_default();
        if let Some(skeleton) = &config.orbit.skeleton {
            config.orbit.skeleton = Some(base.join(skeleton));
        }
        config.simulate = file.simulate.unwrap_or_default();
        if let Some(out_dir) = file.out_dir {
            config.out_dir = base.join(out_dir);
        }
        config.jobs = file.jobs;
        Ok(config)
    }

    pub fn apply(&mut self, o: &Overrides) -> Result<(), CliError> {
        let grid_flags = o.sigma_min.is_some() || o.sigma_max.is_some() || o.sigma_steps.is_some();
        if o.sigma.is_some() && grid_flags {
            return Err(CliError::config("--sigma conflicts with --sigma-min/--sigma-max/--sigma-steps"));
        }
        if let Some(s) = o.sigma {
            self.sigma = Some(SigmaSpec::Single(s));
        }
        if grid_flags {
            let (min, max, steps) = match self.sigma {
                Some(SigmaSpec::Grid { min, max, steps }) => (Some(min), Some(max), Some(steps)),
                _ => (None, None, None),
            };
            match (o.sigma_min.or(min), o.sigma_max.or(max), o.sigma_steps.or(steps)) {
                (Some(min), Some(max), Some(steps)) => self.sigma = Some(SigmaSpec::Grid { min, max, steps }),
                _ => {
                    return Err(CliError::config(
                        "--sigma-min, --sigma-max and --sigma-steps must be given together \
                         unless the config defines a sigma grid",
                    ))
                }
            }
        }
        if let Some(step) = o.step {
            self.step = step;
        }
        if let Some(jobs) = o.jobs {
            self.jobs = Some(jobs);
        }
        if let Some(out) = &o.out_dir {
            self.out_dir = out.clone();
        }
        self.corrupt_saltation |= o.corrupt_saltation;
        Ok(())
    }

    pub fn check(&self) -> Result<(), CliError> {
        if !(self.step > 0.0 && self.step.is_finite()) {
            return Err(CliError::config("step must be positive"));
        }
        let t = &self.tolerances;
        if !(t.orbit > 0.0 && t.matching > 0.0 && t.identity > 0.0) {
            return Err(CliError::config("all tolerances must be positive"));
        }
        if let Some(sigma) = &self.sigma {
            sigma.check()?;
        }
        if self.orbit.max_laps == 0 || !(self.orbit.horizon > 0.0) {
            return Err(CliError::config("orbit.max_laps and orbit.horizon must be positive"));
        }
        let s = &self.simulate;
        if !(s.periods > 0.0 && s.periods.is_finite()) || !(s.perturbation.is_finite()) || s.output_stride == 0 {
            return Err(CliError::config(
                "simulate.periods and simulate.output_stride must be positive, simulate.perturbation finite",
            ));
        }
        if self.jobs == Some(0) {
            return Err(CliError::config("jobs must be at least 1"));
        }
        let model = self.agent_model()?;
        let n = model.dim();
        let coupling = self.coupling_matrix()?;
        if coupling.nrows() != n || coupling.ncols() != n {
            return Err(CliError::config(format!("coupling must be {n}x{n} for model {}", self.model)));
        }
        if let Some(guess) = &self.orbit.initial_guess {
            if guess.len() != n {
                return Err(CliError::config(format!("orbit.initial_guess must have {n} entries")));
            }
        }
        Ok(())
    }

    pub fn agent_model(&self) -> Result<AgentModel, CliError> {
        models::builtin(&self.model, &self.params).map_err(|e| CliError::config(format!("model: {e}")))
    }

    pub fn coupling_matrix(&self) -> Result<Matrix, CliError> {
        rows_to_matrix(&self.coupling).map_err(|e| CliError::config(format!("coupling: {e}")))
    }

    pub fn adjacency_matrix(&self) -> Result<Matrix, CliError> {
        rows_to_matrix(&self.adjacency).map_err(|e| CliError::config(format!("topology: {e}")))
    }

    /// Hex SHA-256 of the canonical JSON form; output location and pool size are excluded.
    pub fn hash(&self) -> String {
        let text = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(text.as_bytes()))
    }

    /// Comment line that opens every output file.
    pub fn header(&self) -> String {
        format!("# pws-msf {} config={}", env!("CARGO_PKG_VERSION"), &self.hash()[..16])
    }
}

fn topology_rows(section: TopologySection, base: &Path) -> Result<Vec<Vec<f64>>, CliError> {
    let forms = [
        section.adjacency.is_some(),
        section.nodes.is_some() || section.edges.is_some(),
        section.file.is_some(),
    ];
    if forms.iter().filter(|&&f| f).count() != 1 {
        return Err(CliError::config(
            "topology needs exactly one of adjacency, nodes+edges or file",
        ));
    }
    let matrix = if let Some(rows) = section.adjacency {
        AdjacencySpec::Dense(rows).to_matrix()
    } else if let Some(file) = section.file {
        let path = base.join(file);
        let text = std::fs::read_to_string(&path)
            .map_err(|e| CliError::config(format!("cannot read {}: {e}", path.display())))?;
        parse_adjacency(&text)
    } else {
        let nodes = section
            .nodes
            .ok_or_else(|| CliError::config("missing field topology.nodes"))?;
        let edges = section.edges.unwrap_or_default();
        AdjacencySpec::Edges { nodes, edges }.to_matrix()
    };
    matrix
        .map(|m| matrix_rows(&m))
        .map_err(|e| CliError::config(format!("topology: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_includes_both_endpoints() {
        let v = SigmaSpec::Grid { min: 0.0, max: 5.0, steps: 101 }.values();
        assert_eq!(v.len(), 101);
        assert_eq!(v[0], 0.0);
        assert_eq!(v[100], 5.0);
        assert!((v[48] - 2.4).abs() < 1e-15);
        assert_eq!(SigmaSpec::Grid { min: 1.0, max: 2.0, steps: 1 }.values(), vec![1.0]);
    }

    #[test]
    fn flags_override_file_which_overrides_defaults() {
        let text = r#"{"model": {"name": "galvanetto", "gamma": 2.5}, "step": 5e-4,
                       "sigma": {"min": 0, "max": 5, "steps": 11}}"#;
        let mut cfg = RunConfig::from_json(text, Path::new("/cfg")).unwrap();
        assert_eq!(cfg.params["gamma"], 2.5);
        assert_eq!(cfg.step, 5e-4);
        assert_eq!(cfg.tolerances, Tolerances::default());
        cfg.apply(&Overrides {
            sigma_steps: Some(6),
            step: Some(2e-4),
            ..Overrides::default()
        })
        .unwrap();
        assert_eq!(cfg.sigma, Some(SigmaSpec::Grid { min: 0.0, max: 5.0, steps: 6 }));
        assert_eq!(cfg.step, 2e-4);
        cfg.check().unwrap();
    }

    #[test]
    fn relative_paths_follow_the_config_file() {
        let text = r#"{"model": {"name": "galvanetto"}, "out_dir": "res", "orbit": {"skeleton": "o.json"}}"#;
        let cfg = RunConfig::from_json(text, Path::new("/base")).unwrap();
        assert_eq!(cfg.out_dir, Path::new("/base/res"));
        assert_eq!(cfg.orbit.skeleton.as_deref(), Some(Path::new("/base/o.json")));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = RunConfig::from_json(r#"{"model": {"name": "galvanetto"}, "stepsize": 1}"#, Path::new("."));
        assert!(matches!(err, Err(CliError::Config(_))));
    }

    #[test]
    fn topology_forms_agree() {
        let dense = r#"{"model": {"name": "galvanetto"}, "topology": {"adjacency": [[0,1,0],[1,0,1],[0,1,0]]}}"#;
        let edges = r#"{"model": {"name": "galvanetto"}, "topology": {"nodes": 3, "edges": [[0,1],[1,2]]}}"#;
        let a = RunConfig::from_json(dense, Path::new(".")).unwrap();
        let b = RunConfig::from_json(edges, Path::new(".")).unwrap();
        assert_eq!(a.adjacency, b.adjacency);
        let both = r#"{"model": {"name": "galvanetto"}, "topology": {"adjacency": [[0,1],[1,0]], "nodes": 2}}"#;
        assert!(RunConfig::from_json(both, Path::new(".")).is_err());
    }

    #[test]
    fn hash_ignores_output_location_and_pool_size() {
        let a = RunConfig::default();
        let mut b = RunConfig {
            out_dir: PathBuf::from("elsewhere"),
            jobs: Some(3),
            ..RunConfig::default()
        };
        assert_eq!(a.hash(), b.hash());
        b.step = 2e-3;
        assert_ne!(a.hash(), b.hash());
        assert!(a.header().starts_with(&format!("# pws-msf {} config=", env!("CARGO_PKG_VERSION"))));
    }

    #[test]
    fn coupling_must_match_agent_dimension() {
        let cfg = RunConfig {
            coupling: vec![vec![1.0]],
            ..RunConfig::default()
        };
        assert!(matches!(cfg.check(), Err(CliError::Config(_))));
    }
}

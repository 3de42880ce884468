//! The five run modes. Each writes its files under the configured output
//! directory and prints a short summary on stdout.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use pws_msf_core::msf::{msf_sweep, validate_against_full_with, MsfTable, ValidationOptions};
use pws_msf_core::network::{build_topology, simulate_network, NetworkState};
use pws_msf_core::orbit::{find_periodic_orbit_with, orbit_residual, OrbitOptions};
use pws_msf_core::{AgentModel, NetworkTopology, OrbitSkeleton, State, ValidationReport};
use serde::Serialize;

use crate::config::{Overrides, RunConfig};
use crate::CliError;

pub const REPRO_STEP: f64 = 1e-4;
/// Coupling strengths with a stated classification, and whether each synchronizes.
pub const REPRO_CASES: [(f64, bool); 5] = [(1.0, false), (1.2, false), (2.6, false), (2.7, true), (4.8, true)];
pub const DEFAULT_SWEEP: (f64, f64, usize) = (0.0, 5.0, 101);
pub const DEFAULT_SIMULATE_SIGMA: f64 = 4.8;
pub const DEFAULT_VALIDATE_SIGMAS: [f64; 4] = [0.0, 1.0, 2.7, 4.8];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Orbit,
    Msf,
    Simulate,
    Validate,
    ReproPaper,
}

/// Resolve the configuration and execute `command`.
pub fn run(command: Command, config_path: Option<&Path>, overrides: &Overrides) -> Result<(), CliError> {
    let mut overrides = overrides.clone();
    if command == Command::ReproPaper && overrides.step.is_none() {
        overrides.step = Some(REPRO_STEP);
    }
    let config = RunConfig::resolve(config_path, &overrides)?;
    log::info!("config hash {}", config.hash());
    match command {
        Command::Orbit => run_orbit(&config),
        Command::Msf => run_msf(&config),
        Command::Simulate => run_simulate(&config),
        Command::Validate => run_validate(&config),
        Command::ReproPaper => run_repro(&config),
    }
}

struct Context {
    model: AgentModel,
    topology: NetworkTopology,
}

impl Context {
    fn new(config: &RunConfig) -> Result<Self, CliError> {
        let model = config.agent_model()?;
        let topology = build_topology(&config.adjacency_matrix()?, &config.coupling_matrix()?, 0.0)?;
        Ok(Self { model, topology })
    }
}

fn skeleton(config: &RunConfig, model: &AgentModel) -> Result<OrbitSkeleton, CliError> {
    if let Some(path) = &config.orbit.skeleton {
        let skeleton = OrbitSkeleton::load(path)
            .map_err(|e| CliError::config(format!("skeleton {}: {e}", path.display())))?;
        if skeleton.model != model.name() || &skeleton.params != model.params() || skeleton.step != config.step {
            return Err(CliError::config(format!(
                "skeleton {} was computed for model {} {:?} at step {}",
                path.display(),
                skeleton.model,
                skeleton.params,
                skeleton.step
            )));
        }
        return Ok(skeleton);
    }
    let x0 = match &config.orbit.initial_guess {
        Some(guess) => State::from_column_slice(guess),
        None => State::zeros(model.dim()),
    };
    let options = OrbitOptions {
        tol: config.tolerances.orbit,
        max_laps: config.orbit.max_laps,
        horizon: config.orbit.horizon,
        ..OrbitOptions::default()
    };
    Ok(find_periodic_orbit_with(model, &x0, config.step, &options)?)
}

fn write_output<F>(config: &RunConfig, name: &str, body: F) -> Result<PathBuf, CliError>
where
    F: FnOnce(&mut BufWriter<File>) -> std::io::Result<()>,
{
    let path = config.out_dir.join(name);
    let io_err = |source| CliError::Io {
        path: path.display().to_string(),
        source,
    };
    std::fs::create_dir_all(&config.out_dir).map_err(io_err)?;
    let mut out = BufWriter::new(File::create(&path).map_err(io_err)?);
    writeln!(out, "{}", config.header()).map_err(io_err)?;
    body(&mut out).and_then(|_| out.flush()).map_err(io_err)?;
    Ok(path)
}

#[derive(Serialize)]
struct WithHeader<'a, T: Serialize> {
    header: String,
    #[serde(flatten)]
    body: &'a T,
}

/// JSON documents cannot hold comments; the header goes into a leading `header` field.
fn write_json<T: Serialize>(config: &RunConfig, name: &str, value: &T) -> Result<PathBuf, CliError> {
    let doc = WithHeader {
        header: config.header(),
        body: value,
    };
    let text = serde_json::to_string_pretty(&doc).map_err(|e| CliError::Numerical(e.to_string()))?;
    let path = config.out_dir.join(name);
    let io_err = |source| CliError::Io {
        path: path.display().to_string(),
        source,
    };
    std::fs::create_dir_all(&config.out_dir).map_err(io_err)?;
    std::fs::write(&path, text + "\n").map_err(io_err)?;
    Ok(path)
}

fn fmt_state(x: &State) -> String {
    let parts: Vec<String> = x.iter().map(|v| format!("{v:.10}")).collect();
    format!("({})", parts.join(", "))
}

fn single_sigma(config: &RunConfig, default: f64) -> Result<f64, CliError> {
    match &config.sigma {
        None => Ok(default),
        Some(spec) => match spec.values().as_slice() {
            [s] => Ok(*s),
            _ => Err(CliError::config("this command needs a single sigma")),
        },
    }
}

pub fn run_orbit(config: &RunConfig) -> Result<(), CliError> {
    let model = config.agent_model()?;
    let skeleton = skeleton(config, &model)?;
    let residual = orbit_residual(&model, &skeleton)?;
    let path = write_json(config, "orbit.json", &skeleton)?;

    println!("period    {:.12}", skeleton.period);
    println!("anchor    {} in {}", fmt_state(&skeleton.anchor_state), skeleton.anchor_mode);
    println!("segments");
    for seg in &skeleton.segments {
        println!("  {:<8} [{:.10}, {:.10}]", seg.mode.to_string(), seg.t_start, seg.t_end);
    }
    println!("events");
    for ev in &skeleton.events {
        println!("  t={:.10}  {:?} at {}", ev.time, ev.kind, fmt_state(&ev.state));
    }
    println!("residual  {residual:.3e}");
    println!("wrote {}", path.display());
    Ok(())
}

fn sweep(config: &RunConfig, ctx: &Context, skeleton: &OrbitSkeleton, sigmas: &[f64]) -> Result<MsfTable, CliError> {
    let compute = || msf_sweep(&ctx.model, skeleton, &ctx.topology, sigmas, config.step);
    let table = match config.jobs {
        Some(jobs) => rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| CliError::config(format!("jobs: {e}")))?
            .install(compute)?,
        None => compute()?,
    };
    Ok(table)
}

pub fn run_msf(config: &RunConfig) -> Result<(), CliError> {
    let ctx = Context::new(config)?;
    let skeleton = skeleton(config, &ctx.model)?;
    let sigmas = match &config.sigma {
        Some(spec) => spec.values(),
        None => {
            let (min, max, steps) = DEFAULT_SWEEP;
            crate::SigmaSpec::Grid { min, max, steps }.values()
        }
    };
    let table = sweep(config, &ctx, &skeleton, &sigmas)?;
    let agents = ctx.topology.agents();
    let dim = ctx.model.dim();
    let csv = write_output(config, "msf.csv", |out| table.write_csv(out, agents, dim))?;
    let modulus = write_output(config, "msf_max_modulus.csv", |out| table.write_max_modulus_csv(out))?;

    println!("{:>10}  {:>14}  stable", "sigma", "msf");
    for row in &table.rows {
        match &row.error {
            None => println!("{:>10.4}  {:>14.6e}  {}", row.sigma, row.msf, row.stable),
            Some(e) => println!("{:>10.4}  error: {e}", row.sigma),
        }
    }
    println!("wrote {} and {}", csv.display(), modulus.display());
    if table.failed_rows() == table.rows.len() {
        let first = table.rows[0].error.clone().unwrap_or_default();
        return Err(CliError::Numerical(format!("every sigma failed, first error: {first}")));
    }
    Ok(())
}

/// Synchronous state on the orbit's anchor with agent `k` offset by `delta * k / (N - 1)`.
pub fn perturbed_start(skeleton: &OrbitSkeleton, agents: usize, delta: f64) -> State {
    let n = skeleton.dim();
    let mut x = NetworkState::synchronous(&skeleton.anchor_state, agents, skeleton.anchor_mode).x;
    for k in 1..agents {
        let offset = delta * k as f64 / (agents - 1) as f64;
        for j in 0..n {
            x[k * n + j] += offset;
        }
    }
    x
}

pub fn run_simulate(config: &RunConfig) -> Result<(), CliError> {
    let ctx = Context::new(config)?;
    let sigma = single_sigma(config, DEFAULT_SIMULATE_SIGMA)?;
    let skeleton = skeleton(config, &ctx.model)?;
    let topology = ctx.topology.with_sigma(sigma)?;
    let agents = topology.agents();
    let x0 = perturbed_start(&skeleton, agents, config.simulate.perturbation);
    let horizon = config.simulate.periods * skeleton.period;
    let (traj, sync) = simulate_network(&ctx.model, &topology, &x0, horizon, config.step)?;

    let stride = config.simulate.output_stride;
    let trajectory = write_output(config, "trajectory.csv", |out| traj.write_csv(out, &sync, agents, stride))?;
    let series = write_output(config, "sync_error.csv", |out| {
        writeln!(out, "t,sync_error")?;
        let last = sync.len().saturating_sub(1);
        for k in (0..sync.len()).filter(|&k| k % stride == 0 || k == last) {
            writeln!(out, "{:.16e},{:.16e}", traj.times[k], sync[k])?;
        }
        Ok(())
    })?;

    let initial = sync.first().copied().unwrap_or(f64::NAN);
    let last = sync.last().copied().unwrap_or(f64::NAN);
    let min = sync.iter().copied().fold(f64::INFINITY, f64::min);
    println!("sigma              {sigma}");
    println!("horizon            {horizon:.6} ({} periods)", config.simulate.periods);
    println!("switching events   {}", traj.events.len());
    println!("sync error         initial {initial:.3e}, final {last:.3e}, min {min:.3e}");
    println!("wrote {} and {}", trajectory.display(), series.display());
    Ok(())
}

#[derive(Serialize)]
struct ValidationDocument<'a> {
    tolerances: &'a crate::config::Tolerances,
    corrupt_saltation: bool,
    reports: Vec<CheckedReport>,
}

#[derive(Serialize)]
struct CheckedReport {
    #[serde(flatten)]
    report: ValidationReport,
    /// Verdict under the configured tolerances.
    within_tolerance: bool,
}

fn within_tolerance(config: &RunConfig, r: &ValidationReport) -> bool {
    let t = &config.tolerances;
    let b_ok = !r.b_identity_checked || r.b_identity_residual.is_none_or(|v| v <= t.identity);
    r.matching_distance <= t.matching
        && r.saltation_residual <= t.identity
        && r.projection_residual <= t.identity
        && b_ok
}

pub fn run_validate(config: &RunConfig) -> Result<(), CliError> {
    let ctx = Context::new(config)?;
    let skeleton = skeleton(config, &ctx.model)?;
    let sigmas = match &config.sigma {
        Some(spec) => spec.values(),
        None => DEFAULT_VALIDATE_SIGMAS.to_vec(),
    };
    let options = ValidationOptions {
        corrupt_saltation: config.corrupt_saltation,
    };
    let mut reports = Vec::with_capacity(sigmas.len());
    for &sigma in &sigmas {
        let report = validate_against_full_with(&ctx.model, &skeleton, &ctx.topology, sigma, config.step, &options)?;
        let ok = within_tolerance(config, &report);
        let b = report
            .b_identity_residual
            .map_or("n/a".to_string(), |v| format!("{v:.2e}"));
        println!(
            "sigma {sigma:<8} matching {:.2e}  saltation {:.2e}  projection {:.2e}  E+B {b}  {}",
            report.matching_distance,
            report.saltation_residual,
            report.projection_residual,
            if ok { "ok" } else { "FAILED" }
        );
        reports.push(CheckedReport {
            report,
            within_tolerance: ok,
        });
    }
    let failures = reports.iter().filter(|r| !r.within_tolerance).count();
    let doc = ValidationDocument {
        tolerances: &config.tolerances,
        corrupt_saltation: config.corrupt_saltation,
        reports,
    };
    let path = write_json(config, "validation.json", &doc)?;
    println!("wrote {}", path.display());
    if failures > 0 {
        return Err(CliError::Validation(format!("{failures} of {} sigma values out of tolerance", sigmas.len())));
    }
    Ok(())
}

pub fn run_repro(config: &RunConfig) -> Result<(), CliError> {
    let ctx = Context::new(config)?;
    let skeleton = skeleton(config, &ctx.model)?;
    let sigmas: Vec<f64> = REPRO_CASES.iter().map(|c| c.0).collect();
    let table = sweep(config, &ctx, &skeleton, &sigmas)?;
    let mut disagreements = 0;
    let mut lines = Vec::new();
    for (row, &(sigma, expected)) in table.rows.iter().zip(&REPRO_CASES) {
        let agree = row.error.is_none() && row.stable == expected;
        if !agree {
            disagreements += 1;
        }
        lines.push(format!(
            "{sigma:.16e},{:.16e},{:.16e},{},{expected},{agree}",
            row.msf,
            row.max_transverse_modulus(),
            row.stable
        ));
        println!(
            "sigma {sigma:<4} msf {:>12.6}  stable {:<5}  expected {:<5}  {}",
            row.msf,
            row.stable,
            expected,
            if agree { "agree" } else { "DISAGREE" }
        );
    }
    let path = write_output(config, "repro.csv", |out| {
        writeln!(out, "sigma,msf,max_transverse_modulus,stable,expected_stable,agree")?;
        for line in &lines {
            writeln!(out, "{line}")?;
        }
        Ok(())
    })?;
    println!("period {:.12} at step {}", skeleton.period, config.step);
    println!("wrote {}", path.display());
    if disagreements > 0 {
        return Err(CliError::Validation(format!("{disagreements} classifications disagree")));
    }
    Ok(())
}

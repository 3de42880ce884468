//! Master stability function of a synchronous periodic orbit.
//!
//! In the Laplacian eigenbasis the variational equation of the network splits
//! into `N` blocks `Żᵢ = (Df + νE) Zᵢ` with `ν = σλᵢ`; on sliding segments the
//! coefficient is `Df_Σ + ν(E + B)`. Saltation matrices are the single-agent ones.

use std::io::Write;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;

use crate::agent::{AgentModel, Matrix, Mode, State};
use crate::error::{check_finite, Error, Result};
use crate::integrator::{aligned_grid, integrate_variational, project_onto_manifold, EventKind};
use crate::models::GALVANETTO;
use crate::network::{full_monodromy_with_jumps, NetworkTopology, DENSE_SIZE_GUARD};
use crate::orbit::OrbitSkeleton;

/// Floor applied to `log|τ|` so that exact zero multipliers stay finite.
pub const LOG_FLOOR: f64 = -745.0;
/// `stable` requires `msf < -STABILITY_MARGIN`; values in the band are marginal.
pub const STABILITY_MARGIN: f64 = 1e-9;
/// Largest accepted relative pairing distance between full and reduced spectra.
pub const MATCH_TOL: f64 = 1e-8;
/// Bound on saltation and `E + B` identities.
pub const IDENTITY_TOL: f64 = 1e-12;

/// `B = (f⁺ - f⁻) ∇hᵀ E / ∇hᵀ(f⁻ - f⁺)`, the change of the sliding coefficient
/// under a coupling perturbation.
pub fn coupling_correction(model: &AgentModel, x: &State, coupling: &Matrix) -> Result<Matrix> {
    model.check_dim(x)?;
    let n = model.dim();
    if coupling.shape() != (n, n) {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: coupling.nrows(),
        });
    }
    let fm = model.f_minus(x);
    let fp = model.f_plus(x);
    if fm == fp {
        return Ok(Matrix::zeros(n, n));
    }
    let grad = model.grad_h(x);
    let denom = grad.dot(&fm) - grad.dot(&fp);
    if denom.abs() <= crate::agent::normal_band(&fm, &fp) {
        return Err(Error::DegenerateDenominator { value: denom });
    }
    Ok((fp - fm) * (grad.transpose() * coupling) / denom)
}

/// The `n`-dimensional variational system for one value of `ν = σλ`.
#[derive(Debug, Clone)]
pub struct ReducedSystem<'a> {
    pub model: &'a AgentModel,
    pub skeleton: &'a OrbitSkeleton,
    pub nu: f64,
    pub coupling: Matrix,
}

impl<'a> ReducedSystem<'a> {
    pub fn new(model: &'a AgentModel, skeleton: &'a OrbitSkeleton, nu: f64, coupling: &Matrix) -> Self {
        Self {
            model,
            skeleton,
            nu,
            coupling: coupling.clone(),
        }
    }

    /// Coefficient matrix of segment mode `mode` at `x`.
    pub fn coefficient(&self, mode: Mode, x: &State) -> Result<Matrix> {
        let jac = self.model.mode_jacobian(mode, x)?;
        if self.nu == 0.0 {
            return Ok(jac);
        }
        let mut shift = self.coupling.clone();
        if mode == Mode::Sliding {
            shift += coupling_correction(self.model, x, &self.coupling)?;
        }
        Ok(jac + shift * self.nu)
    }

    /// `Z(T)`, with the saltation of each skeleton event applied on the left.
    pub fn transition(&self, step: f64) -> Result<Matrix> {
        self.transition_with_jumps(step, |kind, x| self.model.saltation_for(kind, x))
    }

    fn transition_with_jumps<J>(&self, step: f64, jump: J) -> Result<Matrix>
    where
        J: Fn(EventKind, &State) -> Result<Matrix>,
    {
        let n = self.model.dim();
        if self.skeleton.dim() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: self.skeleton.dim(),
            });
        }
        if self.coupling.shape() != (n, n) {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: self.coupling.nrows(),
            });
        }
        if !(step > 0.0) {
            return Err(Error::InvalidInput(format!("step must be positive, got {step}")));
        }
        let mut z = Matrix::identity(n, n);
        for (k, segment) in self.skeleton.segments.iter().enumerate() {
            let mode = segment.mode;
            let grid = aligned_grid(0.0, segment.t_start, segment.t_end, step);
            let (_, z_end) = integrate_variational(
                |x| self.model.eval_field(mode, x),
                |x| self.coefficient(mode, x),
                |x| {
                    if mode == Mode::Sliding {
                        project_onto_manifold(self.model, x)
                    }
                },
                &segment.x_start,
                &z,
                &grid,
            )?;
            z = z_end;
            if let Some(event) = self.skeleton.events.get(k) {
                z = jump(event.kind, &event.state)? * z;
            }
        }
        Ok(z)
    }
}

/// `Z(T)` of the reduced system with parameter `nu`.
pub fn reduced_transition(
    model: &AgentModel,
    skeleton: &OrbitSkeleton,
    nu: f64,
    coupling: &Matrix,
    step: f64,
) -> Result<Matrix> {
    ReducedSystem::new(model, skeleton, nu, coupling).transition(step)
}

/// Eigenvalues of `z`, by descending modulus.
pub fn floquet_multipliers(z: &Matrix) -> Result<Vec<Complex64>> {
    if !z.is_square() {
        return Err(Error::InvalidInput("monodromy matrix must be square".into()));
    }
    check_finite(z.as_slice(), "monodromy matrix")?;
    let mut values: Vec<Complex64> = z.clone().complex_eigenvalues().iter().copied().collect();
    values.sort_by(|a, b| {
        b.norm()
            .total_cmp(&a.norm())
            .then(b.re.total_cmp(&a.re))
            .then(b.im.total_cmp(&a.im))
    });
    Ok(values)
}

fn floored_log(modulus: f64) -> f64 {
    if modulus > 0.0 {
        modulus.ln().max(LOG_FLOOR)
    } else {
        LOG_FLOOR
    }
}

/// Multipliers for every Laplacian eigenvalue at one coupling strength.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MsfRow {
    pub sigma: f64,
    /// `ν = σλᵢ` per Laplacian eigenvalue, `i = 1` first.
    pub nus: Vec<f64>,
    /// `multipliers[i][j]`: the `j`-th multiplier (descending modulus) of block `i`.
    pub multipliers: Vec<Vec<Complex64>>,
    /// `max_{i≥2, j} log|τᵢⱼ|`, floored at [`LOG_FLOOR`].
    pub msf: f64,
    pub stable: bool,
    pub error: Option<String>,
}

impl MsfRow {
    fn failed(sigma: f64, error: &Error) -> Self {
        Self {
            sigma,
            nus: Vec::new(),
            multipliers: Vec::new(),
            msf: f64::NAN,
            stable: false,
            error: Some(error.to_string()),
        }
    }

    /// Largest transverse multiplier modulus, `max_{i≥2, j} |τᵢⱼ|`.
    pub fn max_transverse_modulus(&self) -> f64 {
        self.multipliers
            .iter()
            .skip(1)
            .flatten()
            .map(|t| t.norm())
            .fold(f64::NAN, f64::max)
    }
}

/// MSF row at coupling strength `sigma` (overriding the topology's own σ).
pub fn msf_value(
    model: &AgentModel,
    skeleton: &OrbitSkeleton,
    topology: &NetworkTopology,
    sigma: f64,
    step: f64,
) -> Result<MsfRow> {
    let topology = topology.with_sigma(sigma)?;
    let nus: Vec<f64> = topology.spectrum.iter().map(|l| sigma * l).collect();
    let mut multipliers: Vec<Vec<Complex64>> = Vec::with_capacity(nus.len());
    // equal ν give equal blocks
    for (i, &nu) in nus.iter().enumerate() {
        if let Some(k) = nus[..i].iter().position(|&prev| prev == nu) {
            let again = multipliers[k].clone();
            multipliers.push(again);
            continue;
        }
        let z = reduced_transition(model, skeleton, nu, &topology.inner_coupling, step)?;
        multipliers.push(floquet_multipliers(&z)?);
    }
    let msf = multipliers
        .iter()
        .skip(1)
        .flatten()
        .map(|t| floored_log(t.norm()))
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(MsfRow {
        sigma,
        nus,
        multipliers,
        msf,
        stable: msf < -STABILITY_MARGIN,
        error: None,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MsfTable {
    pub rows: Vec<MsfRow>,
}

impl MsfTable {
    pub fn failed_rows(&self) -> usize {
        self.rows.iter().filter(|r| r.error.is_some()).count()
    }

    /// Columns `sigma,msf,stable,tau_i_j_re,tau_i_j_im...,status`, `i` outer.
    pub fn write_csv<W: Write>(&self, out: &mut W, agents: usize, dim: usize) -> std::io::Result<()> {
        writeln!(
            out,
            "# tau_i_j: multiplier j (descending modulus) of the reduced system for Laplacian eigenvalue i \
             (descending, i=1 is the zero eigenvalue); msf = max over i>=2 of ln|tau_i_j|, floored at {LOG_FLOOR}"
        )?;
        let mut header = String::from("sigma,msf,stable");
        for i in 1..=agents {
            for j in 1..=dim {
                header.push_str(&format!(",tau_{i}_{j}_re,tau_{i}_{j}_im"));
            }
        }
        header.push_str(",status");
        writeln!(out, "{header}")?;
        for row in &self.rows {
            let mut line = format!("{:.16e},{:.16e},{}", row.sigma, row.msf, row.stable);
            for i in 0..agents {
                for j in 0..dim {
                    match row.multipliers.get(i).and_then(|m| m.get(j)) {
                        Some(t) => line.push_str(&format!(",{:.16e},{:.16e}", t.re, t.im)),
                        None => line.push_str(",NaN,NaN"),
                    }
                }
            }
            let status = match &row.error {
                None => "ok".to_string(),
                Some(e) => format!("error: {}", e.replace([',', '\n'], ";")),
            };
            line.push(',');
            line.push_str(&status);
            writeln!(out, "{line}")?;
        }
        Ok(())
    }

    pub fn write_max_modulus_csv<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        writeln!(out, "sigma,max_transverse_multiplier_modulus")?;
        for row in &self.rows {
            writeln!(out, "{:.16e},{:.16e}", row.sigma, row.max_transverse_modulus())?;
        }
        Ok(())
    }
}

/// MSF rows over `sigmas`, computed in parallel and returned in ascending σ.
/// A failing row records its error and the sweep continues.
pub fn msf_sweep(
    model: &AgentModel,
    skeleton: &OrbitSkeleton,
    topology: &NetworkTopology,
    sigmas: &[f64],
    step: f64,
) -> Result<MsfTable> {
    if sigmas.is_empty() {
        return Err(Error::InvalidInput("empty sigma grid".into()));
    }
    let mut rows: Vec<MsfRow> = sigmas
        .par_iter()
        .map(|&sigma| {
            msf_value(model, skeleton, topology, sigma, step)
                .unwrap_or_else(|e| MsfRow::failed(sigma, &e))
        })
        .collect();
    rows.sort_by(|a, b| a.sigma.total_cmp(&b.sigma));
    Ok(MsfTable { rows })
}

/// `|a - b| / max(1, |a|, |b|)`
pub fn relative_distance(a: Complex64, b: Complex64) -> f64 {
    (a - b).norm() / 1f64.max(a.norm()).max(b.norm())
}

/// Pair each of `left` (taken by descending modulus) with the nearest unused
/// element of `right`; returns the largest pair distance.
pub fn greedy_matching_distance(left: &[Complex64], right: &[Complex64]) -> f64 {
    if left.len() != right.len() {
        return f64::INFINITY;
    }
    let mut order: Vec<usize> = (0..left.len()).collect();
    order.sort_by(|&a, &b| left[b].norm().total_cmp(&left[a].norm()));
    let mut used = vec![false; right.len()];
    let mut worst: f64 = 0.0;
    for i in order {
        let best = (0..right.len())
            .filter(|&k| !used[k])
            .min_by(|&a, &b| relative_distance(left[i], right[a]).total_cmp(&relative_distance(left[i], right[b])))
            .expect("equal lengths");
        used[best] = true;
        worst = worst.max(relative_distance(left[i], right[best]));
    }
    worst
}

#[derive(Debug, Clone, Default)]
pub struct ValidationOptions {
    /// Replace every saltation matrix of the full assembly by a wrong one;
    /// used as a negative control.
    pub corrupt_saltation: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct ValidationReport {
    pub sigma: f64,
    pub agents: usize,
    pub full_multipliers: Vec<Complex64>,
    pub reduced_multipliers: Vec<Complex64>,
    pub matching_distance: f64,
    /// Largest `‖S f_in - f_out‖ / (1 + ‖f_out‖)` over the orbit's events.
    pub saltation_residual: f64,
    /// Largest `|∇hᵀ S|` over sliding entries.
    pub projection_residual: f64,
    /// Largest `‖E + B‖` over sliding samples.
    pub b_identity_residual: Option<f64>,
    /// Whether the `E + B = 0` identity is required for this model.
    pub b_identity_checked: bool,
    pub passed: bool,
}

pub fn validate_against_full(
    model: &AgentModel,
    skeleton: &OrbitSkeleton,
    topology: &NetworkTopology,
    sigma: f64,
    step: f64,
) -> Result<ValidationReport> {
    validate_against_full_with(model, skeleton, topology, sigma, step, &ValidationOptions::default())
}

pub fn validate_against_full_with(
    model: &AgentModel,
    skeleton: &OrbitSkeleton,
    topology: &NetworkTopology,
    sigma: f64,
    step: f64,
    options: &ValidationOptions,
) -> Result<ValidationReport> {
    let size = model.dim() * topology.agents();
    if size > DENSE_SIZE_GUARD {
        return Err(Error::SizeGuardExceeded {
            size,
            limit: DENSE_SIZE_GUARD,
        });
    }
    let topology = topology.with_sigma(sigma)?;
    let full = if options.corrupt_saltation {
        full_monodromy_with_jumps(model, &topology, skeleton, step, |kind, x| {
            let s = model.saltation_for(kind, x)?;
            Ok(s.transpose() * 2.0 + Matrix::identity(x.len(), x.len()))
        })?
    } else {
        full_monodromy_with_jumps(model, &topology, skeleton, step, |kind, x| model.saltation_for(kind, x))?
    };
    let full_multipliers = floquet_multipliers(&full)?;
    let row = msf_value(model, skeleton, &topology, sigma, step)?;
    let reduced_multipliers: Vec<Complex64> = row.multipliers.iter().flatten().copied().collect();
    let matching_distance = greedy_matching_distance(&full_multipliers, &reduced_multipliers);

    let (saltation_residual, projection_residual) = saltation_residuals(model, skeleton)?;
    let b_identity_residual = b_identity_residual(model, skeleton, &topology.inner_coupling)?;
    let b_identity_checked = model.name() == GALVANETTO;
    let b_ok = !b_identity_checked || b_identity_residual.is_none_or(|r| r <= IDENTITY_TOL);
    let passed = matching_distance <= MATCH_TOL
        && saltation_residual <= IDENTITY_TOL
        && projection_residual <= IDENTITY_TOL
        && b_ok;
    Ok(ValidationReport {
        sigma,
        agents: topology.agents(),
        full_multipliers,
        reduced_multipliers,
        matching_distance,
        saltation_residual,
        projection_residual,
        b_identity_residual,
        b_identity_checked,
        passed,
    })
}

/// Field-mapping and projection residuals of the saltation matrices along the orbit.
pub fn saltation_residuals(model: &AgentModel, skeleton: &OrbitSkeleton) -> Result<(f64, f64)> {
    let mut mapping: f64 = 0.0;
    let mut projection: f64 = 0.0;
    for event in &skeleton.events {
        let x = &event.state;
        let f_in = model.eval_field(event.kind.mode_before(), x)?;
        let f_out = model.eval_field(event.kind.mode_after(), x)?;
        let s = model.saltation_for(event.kind, x)?;
        if !event.kind.is_tangential_exit() {
            mapping = mapping.max((&s * f_in - &f_out).norm() / (1.0 + f_out.norm()));
        }
        if event.kind.mode_after() == Mode::Sliding {
            projection = projection.max((model.grad_h(x).transpose() * &s).amax());
        }
    }
    Ok((mapping, projection))
}

/// `max ‖E + B(x)‖` over the sliding samples of the orbit, `None` without sliding.
pub fn b_identity_residual(model: &AgentModel, skeleton: &OrbitSkeleton, coupling: &Matrix) -> Result<Option<f64>> {
    let mut worst: Option<f64> = None;
    for sample in skeleton.samples.iter().filter(|s| s.mode == Mode::Sliding) {
        let r = (coupling + coupling_correction(model, &sample.state, coupling)?).norm();
        worst = Some(worst.map_or(r, |w: f64| w.max(r)));
    }
    Ok(worst)
}

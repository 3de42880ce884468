//! Fixed-step RK4 integration with event location for Filippov systems.
//!
//! The event-driven engine is written once against [`SwitchedSystem`] and
//! drives both the single agent ([`integrate_hybrid`]) and the coupled network.
//! Steps follow the grid `t0 + k·step`; an event shortens the current step to
//! the located event time and the next step resumes on the grid.

use log::warn;
use serde::{Deserialize, Serialize};

use crate::agent::{AgentModel, Matrix, Mode, PointKind, State};
use crate::error::{check_finite, Error, Result};
use crate::serde_helpers;

/// Residual bound for located events, relative to `1 + ‖x‖`.
pub const EVENT_TOL: f64 = 1e-12;
/// Bound on `|h|` kept by the sliding projection.
pub const SLIDING_DRIFT_TOL: f64 = 1e-10;
pub const DEFAULT_STEP: f64 = 1e-3;
pub const DEFAULT_MAX_EVENTS: usize = 10_000;

const ROOT_MAX_ITER: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EventKind {
    CrossMinusToPlus,
    CrossPlusToMinus,
    SlideEntryFromMinus,
    SlideEntryFromPlus,
    TangentialExitToMinus,
    TangentialExitToPlus,
}

impl EventKind {
    /// Mode the trajectory is in before the event.
    pub fn mode_before(self) -> Mode {
        match self {
            EventKind::CrossMinusToPlus | EventKind::SlideEntryFromMinus => Mode::MinusRegion,
            EventKind::CrossPlusToMinus | EventKind::SlideEntryFromPlus => Mode::PlusRegion,
            EventKind::TangentialExitToMinus | EventKind::TangentialExitToPlus => Mode::Sliding,
        }
    }

    pub fn mode_after(self) -> Mode {
        match self {
            EventKind::CrossMinusToPlus | EventKind::TangentialExitToPlus => Mode::PlusRegion,
            EventKind::CrossPlusToMinus | EventKind::TangentialExitToMinus => Mode::MinusRegion,
            EventKind::SlideEntryFromMinus | EventKind::SlideEntryFromPlus => Mode::Sliding,
        }
    }

    pub fn is_tangential_exit(self) -> bool {
        matches!(
            self,
            EventKind::TangentialExitToMinus | EventKind::TangentialExitToPlus
        )
    }
}

/// A located discontinuity event of a single agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub time: f64,
    #[serde(with = "serde_helpers::vector")]
    pub state: State,
    pub kind: EventKind,
    #[serde(with = "serde_helpers::matrix")]
    pub saltation: Matrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub t: f64,
    pub state: State,
    pub mode: Mode,
}

/// Fixed-grid samples plus event nodes, and the located events.
#[derive(Debug, Clone, Default)]
pub struct Trajectory {
    pub samples: Vec<Sample>,
    pub events: Vec<EventRecord>,
}

impl Trajectory {
    pub fn last(&self) -> Option<&Sample> {
        self.samples.last()
    }

    /// Largest `|h|` over samples taken in sliding mode.
    pub fn max_sliding_drift(&self, model: &AgentModel) -> f64 {
        self.samples
            .iter()
            .filter(|s| s.mode == Mode::Sliding)
            .map(|s| model.h(&s.state).abs())
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct HybridOptions {
    /// Abort with `ChatterDetected` beyond this many events.
    pub max_events: usize,
    pub record_samples: bool,
}

impl Default for HybridOptions {
    fn default() -> Self {
        Self {
            max_events: DEFAULT_MAX_EVENTS,
            record_samples: true,
        }
    }
}

/// One classical fourth-order Runge–Kutta step of `x' = field(t, x)`.
pub fn rk4_step<F>(field: F, x: &State, t: f64, step: f64) -> Result<State>
where
    F: Fn(f64, &State) -> Result<State>,
{
    if !(step > 0.0) {
        return Err(Error::InvalidInput(format!("step must be positive, got {step}")));
    }
    rk4_raw(&field, x, t, step)
}

fn rk4_raw<F>(field: &F, x: &State, t: f64, dt: f64) -> Result<State>
where
    F: Fn(f64, &State) -> Result<State>,
{
    let half = 0.5 * dt;
    let k1 = field(t, x)?;
    check_finite(k1.as_slice(), "rk4 stage 1")?;
    let k2 = field(t + half, &(x + &k1 * half))?;
    check_finite(k2.as_slice(), "rk4 stage 2")?;
    let k3 = field(t + half, &(x + &k2 * half))?;
    check_finite(k3.as_slice(), "rk4 stage 3")?;
    let k4 = field(t + dt, &(x + &k3 * dt))?;
    check_finite(k4.as_slice(), "rk4 stage 4")?;
    Ok(x + (k1 + (k2 + k3) * 2.0 + k4) * (dt / 6.0))
}

/// Fundamental matrix of `Z' = A(t) Z` from `t0` to `t1` with RK4 on the grid `t0 + k·step`.
pub fn integrate_ltv<F>(coefficient: F, z0: &Matrix, t0: f64, t1: f64, step: f64) -> Result<Matrix>
where
    F: Fn(f64) -> Matrix,
{
    if !(step > 0.0) {
        return Err(Error::InvalidInput(format!("step must be positive, got {step}")));
    }
    let mut z = z0.clone();
    for (ta, dt) in segment_grid(t0, t1, step) {
        let half = 0.5 * dt;
        let a1 = coefficient(ta);
        let a2 = coefficient(ta + half);
        let a3 = coefficient(ta + dt);
        let k1 = &a1 * &z;
        let k2 = &a2 * (&z + &k1 * half);
        let k3 = &a2 * (&z + &k2 * half);
        let k4 = &a3 * (&z + &k3 * dt);
        z += (k1 + (k2 + k3) * 2.0 + k4) * (dt / 6.0);
        check_finite(z.as_slice(), "linear time-varying integration")?;
    }
    Ok(z)
}

/// Co-integrate a state `x' = field(x)` with `Z' = coefficient(x) Z` over `grid`,
/// so the coefficient always sees the reconstructed trajectory.
pub(crate) fn integrate_variational<F, A, P>(
    field: F,
    coefficient: A,
    project: P,
    x0: &State,
    z0: &Matrix,
    grid: &[(f64, f64)],
) -> Result<(State, Matrix)>
where
    F: Fn(&State) -> Result<State>,
    A: Fn(&State) -> Result<Matrix>,
    P: Fn(&mut State),
{
    let mut x = x0.clone();
    let mut z = z0.clone();
    for &(_, dt) in grid {
        let half = 0.5 * dt;
        let kx1 = field(&x)?;
        let kz1 = coefficient(&x)? * &z;
        let x2 = &x + &kx1 * half;
        let kx2 = field(&x2)?;
        let kz2 = coefficient(&x2)? * (&z + &kz1 * half);
        let x3 = &x + &kx2 * half;
        let kx3 = field(&x3)?;
        let kz3 = coefficient(&x3)? * (&z + &kz2 * half);
        let x4 = &x + &kx3 * dt;
        let kx4 = field(&x4)?;
        let kz4 = coefficient(&x4)? * (&z + &kz3 * dt);
        x += (kx1 + (kx2 + kx3) * 2.0 + kx4) * (dt / 6.0);
        z += (kz1 + (kz2 + kz3) * 2.0 + kz4) * (dt / 6.0);
        project(&mut x);
        check_finite(z.as_slice(), "variational integration")?;
        check_finite(x.as_slice(), "variational integration")?;
    }
    Ok((x, z))
}

/// `(t_start, dt)` pairs covering `[t0, t1]` on the global grid `origin + k·step`,
/// exactly as the event engine steps after an event at `t0`.
pub(crate) fn aligned_grid(origin: f64, t0: f64, t1: f64, step: f64) -> Vec<(f64, f64)> {
    let mut out = Vec::new();
    let mut t = t0;
    let mut k = ((t0 - origin) / step).floor().max(0.0) as u64;
    while t < t1 {
        while origin + (k as f64) * step <= t + 1e-9 * step {
            k += 1;
        }
        let t_next = (origin + k as f64 * step).min(t1);
        out.push((t, t_next - t));
        t = t_next;
    }
    out
}

/// `(t_start, dt)` pairs covering `[t0, t1]` with full steps and one final partial step.
/// A remainder below `1e-9·step` is merged into the last full step.
pub(crate) fn segment_grid(t0: f64, t1: f64, step: f64) -> Vec<(f64, f64)> {
    let span = t1 - t0;
    if span <= 0.0 {
        return Vec::new();
    }
    let mut full = (span / step).floor() as usize;
    let mut rest = span - full as f64 * step;
    if rest < 1e-9 * step && full > 0 {
        full -= 1;
        rest += step;
    }
    let mut out = Vec::with_capacity(full + 1);
    for k in 0..full {
        out.push((t0 + k as f64 * step, step));
    }
    if rest > 0.0 {
        out.push((t0 + full as f64 * step, t1 - (t0 + full as f64 * step)));
    }
    out
}

/// The two ends of one integration step, used to bracket an event.
#[derive(Debug, Clone)]
pub struct Bracket {
    pub t_a: f64,
    pub x_a: State,
    pub t_b: f64,
    pub x_b: State,
}

/// Locate a root of `event_fn` along the RK4 flow of `mode` inside one step.
///
/// A cubic Hermite interpolant of the step supplies the first estimate, which
/// is then polished on the re-integrated flow by safeguarded regula falsi.
pub fn locate_event<G>(
    model: &AgentModel,
    mode: Mode,
    bracket: &Bracket,
    event_fn: G,
) -> Result<(f64, State)>
where
    G: Fn(&State) -> f64,
{
    let system = SingleAgent { model };
    let modes = [mode];
    let g_a = event_fn(&bracket.x_a);
    let g_b = event_fn(&bracket.x_b);
    if g_a == 0.0 {
        return Ok((bracket.t_a, bracket.x_a.clone()));
    }
    if g_a * g_b > 0.0 {
        return Err(Error::NoSignChange);
    }
    let dt = bracket.t_b - bracket.t_a;
    let f_a = system.field(&bracket.x_a, &modes)?;
    let f_b = system.field(&bracket.x_b, &modes)?;
    let guess = hermite_root(&bracket.x_a, &f_a, &bracket.x_b, &f_b, dt, &|x| event_fn(x));
    let (tau, x) = polish_root(
        |tau| propagate(&system, &bracket.x_a, &modes, tau),
        |x| Ok(event_fn(x)),
        dt,
        g_a,
        g_b,
        guess,
        EVENT_TOL,
    )?;
    Ok((bracket.t_a + tau, x))
}

fn hermite_point(x_a: &State, f_a: &State, x_b: &State, f_b: &State, dt: f64, theta: f64) -> State {
    let t2 = theta * theta;
    let t3 = t2 * theta;
    x_a * (2.0 * t3 - 3.0 * t2 + 1.0)
        + f_a * ((t3 - 2.0 * t2 + theta) * dt)
        + x_b * (-2.0 * t3 + 3.0 * t2)
        + f_b * ((t3 - t2) * dt)
}

/// Bisection for a sign change of `g` along the Hermite interpolant; returns a step fraction times `dt`.
fn hermite_root(
    x_a: &State,
    f_a: &State,
    x_b: &State,
    f_b: &State,
    dt: f64,
    g: &dyn Fn(&State) -> f64,
) -> Option<f64> {
    let mut lo = 0.0;
    let mut hi = 1.0;
    let mut g_lo = g(x_a);
    let g_hi = g(x_b);
    if g_lo * g_hi > 0.0 {
        return None;
    }
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        let gm = g(&hermite_point(x_a, f_a, x_b, f_b, dt, mid));
        if gm == 0.0 {
            return Some(mid * dt);
        }
        if gm * g_lo > 0.0 {
            lo = mid;
            g_lo = gm;
        } else {
            hi = mid;
        }
    }
    Some(0.5 * (lo + hi) * dt)
}

/// Illinois-modified regula falsi on `[0, dt]`, seeded with `guess`, falling back
/// to bisection whenever the bracket fails to halve.
fn polish_root<P, G>(
    prop: P,
    g: G,
    dt: f64,
    g_a: f64,
    g_b: f64,
    guess: Option<f64>,
    tol: f64,
) -> Result<(f64, State)>
where
    P: Fn(f64) -> Result<State>,
    G: Fn(&State) -> Result<f64>,
{
    let (mut lo, mut hi) = (0.0, dt);
    let (mut g_lo, mut g_hi) = (g_a, g_b);
    let mut side = 0i8;
    let mut best: Option<(f64, f64, State)> = None;
    let mut next = guess.filter(|t| *t > 0.0 && *t < dt);
    for iter in 0..ROOT_MAX_ITER {
        let mut tau = match next.take() {
            Some(t) => t,
            None if iter % 4 == 3 => 0.5 * (lo + hi),
            None => (lo * g_hi - hi * g_lo) / (g_hi - g_lo),
        };
        if !(tau > lo && tau < hi) {
            tau = 0.5 * (lo + hi);
        }
        let x = prop(tau)?;
        let gv = g(&x)?;
        let scale = 1.0 + x.norm();
        if best.as_ref().is_none_or(|b| gv.abs() < b.1) {
            best = Some((tau, gv.abs(), x.clone()));
        }
        if gv.abs() <= tol * scale * 1e-2 || gv == 0.0 {
            return Ok((tau, x));
        }
        if gv * g_hi > 0.0 {
            hi = tau;
            g_hi = gv;
            if side == -1 {
                g_lo *= 0.5;
            }
            side = -1;
        } else {
            lo = tau;
            g_lo = gv;
            if side == 1 {
                g_hi *= 0.5;
            }
            side = 1;
        }
        if hi - lo <= 4.0 * f64::EPSILON * dt.max(f64::MIN_POSITIVE) {
            break;
        }
    }
    match best {
        Some((tau, resid, x)) if resid <= tol * (1.0 + x.norm()) => Ok((tau, x)),
        _ => Err(Error::MaxIterations {
            iterations: ROOT_MAX_ITER,
        }),
    }
}

/// A system of one or more agents with per-agent modes, driven by the event engine.
pub(crate) trait SwitchedSystem {
    fn agent_count(&self) -> usize;
    fn field(&self, x: &State, modes: &[Mode]) -> Result<State>;
    /// Pull sliding agents back onto their switching manifolds.
    fn project(&self, x: &mut State, modes: &[Mode]);
    /// Nonnegative while `modes[agent]` remains valid; its zero marks an event.
    fn monitor(&self, x: &State, modes: &[Mode], agent: usize) -> Result<f64>;
    fn agent_norm(&self, x: &State, agent: usize) -> f64;
    /// Resolve the event of `agent` at `x` (which may be projected in place).
    fn transition(&self, x: &mut State, modes: &[Mode], agent: usize, time: f64) -> Result<EventKind>;
}

pub(crate) fn propagate<S: SwitchedSystem + ?Sized>(
    sys: &S,
    x: &State,
    modes: &[Mode],
    dt: f64,
) -> Result<State> {
    if dt == 0.0 {
        return Ok(x.clone());
    }
    let mut out = rk4_raw(&|_t, y: &State| sys.field(y, modes), x, 0.0, dt)?;
    sys.project(&mut out, modes);
    Ok(out)
}

pub(crate) struct EngineEvent {
    pub time: f64,
    pub agent: usize,
    pub kind: EventKind,
    pub state: State,
}

pub(crate) struct EngineRun {
    pub samples: Vec<(f64, State, Vec<Mode>)>,
    pub final_time: f64,
    pub final_state: State,
    pub final_modes: Vec<Mode>,
}

/// Event-driven fixed-step integration. `on_event` sees each event after the
/// mode switch and returns `true` to stop the run there.
#[allow(clippy::too_many_arguments)]
pub(crate) fn run_engine<S, E>(
    sys: &S,
    x0: &State,
    modes0: &[Mode],
    t0: f64,
    t_end: f64,
    step: f64,
    options: &HybridOptions,
    mut on_event: E,
) -> Result<EngineRun>
where
    S: SwitchedSystem + ?Sized,
    E: FnMut(&EngineEvent, &[Mode]) -> Result<bool>,
{
    if !(step > 0.0) {
        return Err(Error::InvalidInput(format!("step must be positive, got {step}")));
    }
    if !(t_end > t0) {
        return Err(Error::InvalidInput("t_end must exceed t0".into()));
    }
    let agents = sys.agent_count();
    let mut x = x0.clone();
    let mut modes = modes0.to_vec();
    sys.project(&mut x, &modes);
    let mut t = t0;
    let mut k: u64 = 0;
    let mut event_count = 0usize;
    let mut samples = Vec::new();
    if options.record_samples {
        samples.push((t, x.clone(), modes.clone()));
    }

    while t < t_end {
        // next grid node strictly after t
        while t0 + (k as f64) * step <= t + 1e-9 * step {
            k += 1;
        }
        let t_next = (t0 + k as f64 * step).min(t_end);
        let dt = t_next - t;
        let x_b = propagate(sys, &x, &modes, dt)?;
        check_finite(x_b.as_slice(), "hybrid integration")?;

        let mut triggered = Vec::new();
        for agent in 0..agents {
            let g_b = sys.monitor(&x_b, &modes, agent)?;
            if g_b < -EVENT_TOL * (1.0 + sys.agent_norm(&x_b, agent)) {
                triggered.push((agent, g_b));
            }
        }
        if triggered.is_empty() {
            x = x_b;
            t = t_next;
            if options.record_samples {
                samples.push((t, x.clone(), modes.clone()));
            }
            continue;
        }

        // earliest root among triggered agents; ties go to the lower index
        let f_a = sys.field(&x, &modes)?;
        let f_b = sys.field(&x_b, &modes)?;
        let mut earliest: Option<(f64, usize, State)> = None;
        let mut roots = Vec::with_capacity(triggered.len());
        for &(agent, g_b) in &triggered {
            let g_a = sys.monitor(&x, &modes, agent)?;
            let (tau, x_star) = if g_a <= 0.0 {
                (0.0, x.clone())
            } else {
                let monitor = |y: &State| sys.monitor(y, &modes, agent).unwrap_or(f64::NAN);
                let guess = hermite_root(&x, &f_a, &x_b, &f_b, dt, &monitor);
                polish_root(
                    |tau| propagate(sys, &x, &modes, tau),
                    |y| sys.monitor(y, &modes, agent),
                    dt,
                    g_a,
                    g_b,
                    guess,
                    EVENT_TOL,
                )?
            };
            roots.push((agent, tau));
            if earliest.as_ref().is_none_or(|e| tau < e.0) {
                earliest = Some((tau, agent, x_star));
            }
        }
        let (tau, agent, mut x_star) = earliest.expect("at least one triggered agent");
        if roots
            .iter()
            .any(|&(a, r)| a != agent && (r - tau).abs() <= 1e-14 * (1.0 + t.abs()))
        {
            warn!("simultaneous events at t = {}; processing agent {agent} first", t + tau);
        }
        let t_star = t + tau;
        let kind = sys.transition(&mut x_star, &modes, agent, t_star)?;
        modes[agent] = kind.mode_after();
        event_count += 1;
        if event_count > options.max_events {
            return Err(Error::ChatterDetected {
                limit: options.max_events,
            });
        }
        x = x_star;
        t = t_star;
        if options.record_samples {
            samples.push((t, x.clone(), modes.clone()));
        }
        let event = EngineEvent {
            time: t,
            agent,
            kind,
            state: x.clone(),
        };
        if on_event(&event, &modes)? {
            break;
        }
    }

    Ok(EngineRun {
        samples,
        final_time: t,
        final_state: x,
        final_modes: modes,
    })
}

/// Mode entered when a free agent reaches the manifold at a point of class `kind`.
pub(crate) fn resolve_hit(from: Mode, kind: PointKind) -> std::result::Result<EventKind, String> {
    match (from, kind) {
        (Mode::MinusRegion, PointKind::TransversalCrossingUp) => Ok(EventKind::CrossMinusToPlus),
        (Mode::MinusRegion, PointKind::AttractiveSliding) => Ok(EventKind::SlideEntryFromMinus),
        (Mode::PlusRegion, PointKind::TransversalCrossingDown) => Ok(EventKind::CrossPlusToMinus),
        (Mode::PlusRegion, PointKind::AttractiveSliding) => Ok(EventKind::SlideEntryFromPlus),
        (from, kind) => Err(format!("{kind:?} point reached from {from} region")),
    }
}

/// Initial mode of a point from its switching value and class (if on the manifold).
pub(crate) fn initial_mode(h: f64, class: Option<PointKind>) -> std::result::Result<Mode, String> {
    match class {
        None if h < 0.0 => Ok(Mode::MinusRegion),
        None => Ok(Mode::PlusRegion),
        Some(PointKind::AttractiveSliding) => Ok(Mode::Sliding),
        Some(PointKind::TransversalCrossingUp) | Some(PointKind::TangentialExitPlus) => {
            Ok(Mode::PlusRegion)
        }
        Some(PointKind::TransversalCrossingDown) | Some(PointKind::TangentialExitMinus) => {
            Ok(Mode::MinusRegion)
        }
        Some(kind) => Err(format!("initial point is {kind:?}")),
    }
}

/// Newton projection of `x` onto `h = 0` along `∇h`.
pub(crate) fn project_onto_manifold(model: &AgentModel, x: &mut State) {
    for _ in 0..6 {
        let hv = model.h(x);
        if hv.abs() <= 1e-15 * (1.0 + x.norm()) {
            break;
        }
        let grad = model.grad_h(x);
        let g2 = grad.norm_squared();
        if g2 == 0.0 {
            break;
        }
        *x -= grad * (hv / g2);
    }
}

struct SingleAgent<'a> {
    model: &'a AgentModel,
}

impl SwitchedSystem for SingleAgent<'_> {
    fn agent_count(&self) -> usize {
        1
    }

    fn field(&self, x: &State, modes: &[Mode]) -> Result<State> {
        self.model.eval_field(modes[0], x)
    }

    fn project(&self, x: &mut State, modes: &[Mode]) {
        if modes[0] == Mode::Sliding {
            project_onto_manifold(self.model, x);
        }
    }

    fn monitor(&self, x: &State, modes: &[Mode], _agent: usize) -> Result<f64> {
        match modes[0] {
            Mode::MinusRegion => Ok(-self.model.h(x)),
            Mode::PlusRegion => Ok(self.model.h(x)),
            Mode::Sliding => {
                let alpha = self.model.sliding_alpha(x)?;
                Ok(alpha.min(1.0 - alpha))
            }
        }
    }

    fn agent_norm(&self, x: &State, _agent: usize) -> f64 {
        x.norm()
    }

    fn transition(&self, x: &mut State, modes: &[Mode], _agent: usize, time: f64) -> Result<EventKind> {
        let model = self.model;
        let degenerate = |reason: String| Error::DegenerateEvent { time, reason };
        project_onto_manifold(model, x);
        let class = model.classify_point(x)?;
        match modes[0] {
            Mode::Sliding => {
                let alpha = model.sliding_alpha(x)?;
                let zero = State::zeros(x.len());
                let velocity = model.eval_field(Mode::Sliding, x)?;
                if alpha < 0.5 {
                    let rate = model.normal_rate(x, &zero, &velocity, &zero, true);
                    if class.kind != PointKind::TangentialExitMinus || !(rate < 0.0) {
                        return Err(degenerate(format!(
                            "failed exit into minus region ({:?}, rate {rate:e})",
                            class.kind
                        )));
                    }
                    Ok(EventKind::TangentialExitToMinus)
                } else {
                    let rate = model.normal_rate(x, &zero, &velocity, &zero, false);
                    if class.kind != PointKind::TangentialExitPlus || !(rate > 0.0) {
                        return Err(degenerate(format!(
                            "failed exit into plus region ({:?}, rate {rate:e})",
                            class.kind
                        )));
                    }
                    Ok(EventKind::TangentialExitToPlus)
                }
            }
            from => resolve_hit(from, class.kind).map_err(degenerate),
        }
    }
}

/// Mode of a single agent at `x`, classifying on-manifold points.
pub fn starting_mode(model: &AgentModel, x: &State) -> Result<Mode> {
    model.check_dim(x)?;
    let hv = model.h(x);
    let on = hv.abs() <= EVENT_TOL * (1.0 + x.norm());
    let class = if on { Some(model.classify_point(x)?.kind) } else { None };
    initial_mode(hv, class).map_err(|reason| Error::DegenerateEvent { time: f64::NAN, reason })
}

/// Integrate one Filippov agent from `(t0, x0)` to `t_end` on the fixed grid.
pub fn integrate_hybrid(
    model: &AgentModel,
    x0: &State,
    t0: f64,
    t_end: f64,
    step: f64,
) -> Result<Trajectory> {
    integrate_hybrid_until(model, x0, t0, t_end, step, &HybridOptions::default(), |_| false)
}

/// As [`integrate_hybrid`], stopping early once `stop` returns `true` for an event.
pub fn integrate_hybrid_until<F>(
    model: &AgentModel,
    x0: &State,
    t0: f64,
    t_end: f64,
    step: f64,
    options: &HybridOptions,
    stop: F,
) -> Result<Trajectory>
where
    F: FnMut(&EventRecord) -> bool,
{
    let mode0 = starting_mode(model, x0).map_err(|e| match e {
        Error::DegenerateEvent { reason, .. } => Error::DegenerateEvent { time: t0, reason },
        other => other,
    })?;
    integrate_hybrid_from(model, x0, mode0, t0, t_end, step, options, stop)
}

/// Integrate from `x0` with the initial mode given explicitly, e.g. from an event state.
/// The step grid is `t0 + k·step`.
#[allow(clippy::too_many_arguments)]
pub fn integrate_hybrid_from<F>(
    model: &AgentModel,
    x0: &State,
    mode0: Mode,
    t0: f64,
    t_end: f64,
    step: f64,
    options: &HybridOptions,
    mut stop: F,
) -> Result<Trajectory>
where
    F: FnMut(&EventRecord) -> bool,
{
    model.check_dim(x0)?;
    let system = SingleAgent { model };
    let mut events = Vec::new();
    let run = run_engine(
        &system,
        x0,
        &[mode0],
        t0,
        t_end,
        step,
        options,
        |ev, _modes| {
            let saltation = model.saltation_for(ev.kind, &ev.state)?;
            let record = EventRecord {
                time: ev.time,
                state: ev.state.clone(),
                kind: ev.kind,
                saltation,
            };
            let halt = stop(&record);
            events.push(record);
            Ok(halt)
        },
    )?;
    let mut samples: Vec<Sample> = run
        .samples
        .into_iter()
        .map(|(t, state, modes)| Sample {
            t,
            state,
            mode: modes[0],
        })
        .collect();
    if !options.record_samples {
        samples.push(Sample {
            t: run.final_time,
            state: run.final_state,
            mode: run.final_modes[0],
        });
    }
    Ok(Trajectory { samples, events })
}

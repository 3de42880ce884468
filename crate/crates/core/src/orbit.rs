//! Periodic orbit search for a single agent and its event skeleton.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::agent::{AgentModel, Mode, State};
use crate::error::{Error, Result};
use crate::integrator::{
    integrate_hybrid_from, integrate_hybrid_until, EventKind, EventRecord, HybridOptions,
    DEFAULT_MAX_EVENTS,
};
use crate::serde_helpers;

pub const DEFAULT_ORBIT_TOL: f64 = 1e-10;
pub const DEFAULT_MAX_LAPS: usize = 200;
pub const DEFAULT_HORIZON: f64 = 1000.0;

/// Number of previous anchors a new anchor is compared against, so that
/// orbits closing after several anchor events are still detected.
const ANCHOR_MEMORY: usize = 8;
/// Events inspected for a tangential exit before falling back to the first event kind.
const ANCHOR_SCAN: usize = 16;

/// One mode interval of the orbit, with the state it starts from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub mode: Mode,
    pub t_start: f64,
    pub t_end: f64,
    #[serde(with = "serde_helpers::vector")]
    pub x_start: State,
}

impl Segment {
    pub fn duration(&self) -> f64 {
        self.t_end - self.t_start
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrbitSample {
    pub t: f64,
    #[serde(with = "serde_helpers::vector")]
    pub state: State,
    pub mode: Mode,
}

/// A periodic orbit `x_S` over one period, starting from a free-flow state `s₀`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrbitSkeleton {
    pub model: String,
    pub params: BTreeMap<String, f64>,
    pub step: f64,
    pub period: f64,
    #[serde(with = "serde_helpers::vector")]
    pub anchor_state: State,
    pub anchor_mode: Mode,
    pub segments: Vec<Segment>,
    pub events: Vec<EventRecord>,
    pub samples: Vec<OrbitSample>,
}

impl OrbitSkeleton {
    pub fn dim(&self) -> usize {
        self.anchor_state.len()
    }

    pub fn has_sliding(&self) -> bool {
        self.segments.iter().any(|s| s.mode == Mode::Sliding)
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::InvalidInput(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let skeleton: Self =
            serde_json::from_str(text).map_err(|e| Error::InvalidInput(e.to_string()))?;
        skeleton.validate()?;
        Ok(skeleton)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?)
            .map_err(|e| Error::InvalidInput(format!("{}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::InvalidInput(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Check that segments tile `[0, T]` and that events follow the mode grammar.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidInput(format!("invalid skeleton: {msg}")));
        if !(self.period > 0.0) {
            return bad(format!("period {}", self.period));
        }
        if self.segments.is_empty() || self.segments.len() != self.events.len() + 1 {
            return bad(format!(
                "{} segments for {} events",
                self.segments.len(),
                self.events.len()
            ));
        }
        if self.segments[0].t_start != 0.0 || self.segments.last().unwrap().t_end != self.period {
            return bad("segments do not span [0, T]".into());
        }
        if self.segments[0].mode != self.anchor_mode {
            return bad("first segment mode differs from anchor mode".into());
        }
        for (i, event) in self.events.iter().enumerate() {
            let before = &self.segments[i];
            let after = &self.segments[i + 1];
            if !(event.time > 0.0 && event.time < self.period) {
                return bad(format!("event time {} outside (0, T)", event.time));
            }
            if before.t_end != event.time || after.t_start != event.time {
                return bad(format!("segment boundary mismatch at event {i}"));
            }
            if event.kind.mode_before() != before.mode || event.kind.mode_after() != after.mode {
                return bad(format!("{:?} between {} and {}", event.kind, before.mode, after.mode));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct OrbitOptions {
    /// Convergence threshold on the anchor-state max norm; the test is strict.
    pub tol: f64,
    pub max_laps: usize,
    /// Event kind used as the return section. Defaults to the first tangential exit.
    pub anchor: Option<EventKind>,
    /// Search time without any event before giving up.
    pub horizon: f64,
    pub max_events: usize,
}

impl Default for OrbitOptions {
    fn default() -> Self {
        Self {
            tol: DEFAULT_ORBIT_TOL,
            max_laps: DEFAULT_MAX_LAPS,
            anchor: None,
            horizon: DEFAULT_HORIZON,
            max_events: DEFAULT_MAX_EVENTS,
        }
    }
}

/// Find the attracting periodic orbit reached from `x0`.
pub fn find_periodic_orbit(
    model: &AgentModel,
    x0: &State,
    step: f64,
    tol: f64,
    max_laps: usize,
) -> Result<OrbitSkeleton> {
    let options = OrbitOptions {
        tol,
        max_laps,
        ..OrbitOptions::default()
    };
    find_periodic_orbit_with(model, x0, step, &options)
}

struct AnchorSearch {
    kind: Option<EventKind>,
    scanned: Vec<EventRecord>,
    anchors: Vec<(f64, State)>,
    found: Option<(f64, State, f64)>,
    best_mismatch: f64,
    max_laps: usize,
    tol: f64,
    exhausted: bool,
}

impl AnchorSearch {
    fn push_anchor(&mut self, time: f64, state: &State) {
        let start = self.anchors.len().saturating_sub(ANCHOR_MEMORY);
        for (t_prev, x_prev) in self.anchors[start..].iter().rev() {
            let diff = (state - x_prev).amax();
            if diff < self.best_mismatch || self.best_mismatch.is_nan() {
                self.best_mismatch = diff;
            }
            if diff < self.tol {
                self.found = Some((time, state.clone(), time - t_prev));
                return;
            }
        }
        self.anchors.push((time, state.clone()));
        if self.anchors.len() > self.max_laps {
            self.exhausted = true;
        }
    }

    /// Returns true when the search should stop.
    fn observe(&mut self, event: &EventRecord) -> bool {
        match self.kind {
            Some(kind) => {
                if event.kind == kind {
                    self.push_anchor(event.time, &event.state);
                }
            }
            None => {
                self.scanned.push(event.clone());
                let chosen = if event.kind.is_tangential_exit() {
                    Some(event.kind)
                } else if self.scanned.len() >= ANCHOR_SCAN {
                    Some(self.scanned[0].kind)
                } else {
                    None
                };
                if let Some(kind) = chosen {
                    self.kind = Some(kind);
                    let earlier: Vec<_> = std::mem::take(&mut self.scanned)
                        .into_iter()
                        .filter(|e| e.kind == kind)
                        .collect();
                    for e in earlier {
                        self.push_anchor(e.time, &e.state);
                        if self.found.is_some() || self.exhausted {
                            break;
                        }
                    }
                }
            }
        }
        self.found.is_some() || self.exhausted
    }
}

pub fn find_periodic_orbit_with(
    model: &AgentModel,
    x0: &State,
    step: f64,
    options: &OrbitOptions,
) -> Result<OrbitSkeleton> {
    if !(options.tol >= 0.0) {
        return Err(Error::InvalidInput("orbit tolerance must be nonnegative".into()));
    }
    let mut search = AnchorSearch {
        kind: options.anchor,
        scanned: Vec::new(),
        anchors: Vec::new(),
        found: None,
        best_mismatch: f64::NAN,
        max_laps: options.max_laps,
        tol: options.tol,
        exhausted: false,
    };
    let hybrid = HybridOptions {
        max_events: options.max_events,
        record_samples: false,
    };
    let mut t_search = 0.0;
    let mut x = x0.clone();
    let mut mode: Option<Mode> = None;
    let mut seen_event = false;
    // extend the search window while events keep arriving
    loop {
        let traj = match mode {
            None => integrate_hybrid_until(
                model,
                &x,
                t_search,
                t_search + options.horizon,
                step,
                &hybrid,
                |e| search.observe(e),
            )?,
            Some(m) => integrate_hybrid_from(
                model,
                &x,
                m,
                t_search,
                t_search + options.horizon,
                step,
                &hybrid,
                |e| search.observe(e),
            )?,
        };
        if search.found.is_some() || search.exhausted {
            break;
        }
        if traj.events.is_empty() {
            if seen_event {
                break;
            }
            return Err(Error::NoEventFound {
                horizon: t_search + options.horizon,
            });
        }
        seen_event = true;
        let last = traj.last().expect("final sample");
        x = last.state.clone();
        mode = Some(last.mode);
        t_search = last.t;
    }
    let (_, anchor_state, period) = match search.found {
        Some(found) => found,
        None => {
            return Err(Error::NotConverged {
                laps: search.anchors.len(),
                mismatch: search.best_mismatch,
            })
        }
    };
    let anchor_kind = search.kind.expect("anchor kind chosen");
    build_skeleton(model, &anchor_state, anchor_kind.mode_after(), period, step, options)
}

/// Re-integrate one period from the anchor event, move the start to the
/// middle of the first free-flow segment, and record the lap from there.
fn build_skeleton(
    model: &AgentModel,
    anchor_state: &State,
    anchor_mode: Mode,
    period: f64,
    step: f64,
    options: &OrbitOptions,
) -> Result<OrbitSkeleton> {
    let hybrid = HybridOptions {
        max_events: options.max_events,
        record_samples: true,
    };
    let lap = integrate_hybrid_from(model, anchor_state, anchor_mode, 0.0, period, step, &hybrid, |_| false)?;
    let mut boundaries = vec![0.0];
    boundaries.extend(lap.events.iter().map(|e| e.time));
    boundaries.push(period);
    let mut modes = vec![anchor_mode];
    modes.extend(lap.events.iter().map(|e| e.kind.mode_after()));
    let free = (0..modes.len())
        .find(|&i| modes[i] != Mode::Sliding && boundaries[i + 1] > boundaries[i])
        .ok_or_else(|| Error::DegenerateEvent {
            time: 0.0,
            reason: "orbit has no free-flow segment".into(),
        })?;
    let middle = 0.5 * (boundaries[free] + boundaries[free + 1]);
    let start = lap
        .samples
        .iter()
        .filter(|s| s.mode == modes[free] && s.t > boundaries[free] && s.t < boundaries[free + 1])
        .min_by(|a, b| (a.t - middle).abs().total_cmp(&(b.t - middle).abs()))
        .ok_or_else(|| Error::DegenerateEvent {
            time: middle,
            reason: "free-flow segment shorter than one step".into(),
        })?;
    let s0 = start.state.clone();
    let s0_mode = start.mode;

    let lap = integrate_hybrid_from(model, &s0, s0_mode, 0.0, period, step, &hybrid, |_| false)?;
    let mut segments = Vec::with_capacity(lap.events.len() + 1);
    let mut current = Segment {
        mode: s0_mode,
        t_start: 0.0,
        t_end: period,
        x_start: s0.clone(),
    };
    for event in &lap.events {
        let mut closed = current.clone();
        closed.t_end = event.time;
        segments.push(closed);
        current = Segment {
            mode: event.kind.mode_after(),
            t_start: event.time,
            t_end: period,
            x_start: event.state.clone(),
        };
    }
    segments.push(current);
    let samples = lap
        .samples
        .into_iter()
        .map(|s| OrbitSample {
            t: s.t,
            state: s.state,
            mode: s.mode,
        })
        .collect();
    let skeleton = OrbitSkeleton {
        model: model.name().to_string(),
        params: model.params().clone(),
        step,
        period,
        anchor_state: s0,
        anchor_mode: s0_mode,
        segments,
        events: lap.events,
        samples,
    };
    skeleton.validate()?;
    Ok(skeleton)
}

/// `‖x(T) - s₀‖` after integrating one period from the skeleton's anchor.
pub fn orbit_residual(model: &AgentModel, skeleton: &OrbitSkeleton) -> Result<f64> {
    model.check_dim(&skeleton.anchor_state)?;
    let options = HybridOptions {
        max_events: DEFAULT_MAX_EVENTS,
        record_samples: false,
    };
    let lap = integrate_hybrid_from(
        model,
        &skeleton.anchor_state,
        skeleton.anchor_mode,
        0.0,
        skeleton.period,
        skeleton.step,
        &options,
        |_| false,
    )?;
    let end = &lap.last().expect("final sample").state;
    Ok((end - &skeleton.anchor_state).norm())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::galvanetto;
    use nalgebra::dvector;
    use std::sync::Arc;

    fn galvanetto_orbit(step: f64) -> OrbitSkeleton {
        let m = galvanetto(3.0, 0.15);
        find_periodic_orbit(&m, &dvector![0.0, 0.0], step, DEFAULT_ORBIT_TOL, DEFAULT_MAX_LAPS)
            .unwrap()
    }

    #[test]
    fn galvanetto_orbit_has_sliding_and_unit_exit() {
        let sk = galvanetto_orbit(1e-3);
        assert!(sk.has_sliding());
        assert_ne!(sk.anchor_mode, Mode::Sliding);
        let exit = sk
            .events
            .iter()
            .find(|e| e.kind.is_tangential_exit())
            .expect("exit event");
        assert!((exit.state[0] - 1.0).abs() < 1e-8);
        assert!((exit.state[1] - 0.15).abs() < 1e-12);
        let sliding = sk.segments.iter().find(|s| s.mode == Mode::Sliding).unwrap();
        assert!(sliding.duration() > 0.0);
        sk.validate().unwrap();
    }

    #[test]
    fn residual_small_and_deterministic() {
        let m = galvanetto(3.0, 0.15);
        let sk = galvanetto_orbit(1e-3);
        let r = orbit_residual(&m, &sk).unwrap();
        assert!(r <= 1e-8, "residual {r}");
        assert_eq!(r.to_bits(), orbit_residual(&m, &sk).unwrap().to_bits());

        let mut perturbed = sk.clone();
        perturbed.anchor_state[0] += 1e-3;
        assert!(orbit_residual(&m, &perturbed).unwrap() > 1e-5);
    }

    #[test]
    fn smooth_cycle_has_no_event() {
        // harmonic oscillator far from the switching line
        let m = AgentModel::new(
            "rotation",
            2,
            Arc::new(|x: &State| dvector![x[1], -x[0]]),
            Arc::new(|x: &State| dvector![x[1], -x[0]]),
            Arc::new(|x: &State| x[0] - 10.0),
            Arc::new(|_x: &State| dvector![1.0, 0.0]),
        );
        let options = OrbitOptions {
            horizon: 20.0,
            ..OrbitOptions::default()
        };
        let r = find_periodic_orbit_with(&m, &dvector![1.0, 0.0], 1e-2, &options);
        assert!(matches!(r, Err(Error::NoEventFound { .. })));
    }

    #[test]
    fn zero_tolerance_never_converges() {
        let m = galvanetto(3.0, 0.15);
        let r = find_periodic_orbit(&m, &dvector![0.0, 0.0], 1e-2, 0.0, 3);
        assert!(matches!(r, Err(Error::NotConverged { .. })), "{r:?}");
    }

    #[test]
    fn json_roundtrip() {
        let sk = galvanetto_orbit(1e-2);
        let back = OrbitSkeleton::from_json(&sk.to_json().unwrap()).unwrap();
        assert_eq!(sk, back);
    }

    #[test]
    fn validate_rejects_broken_grammar() {
        let mut sk = galvanetto_orbit(1e-2);
        sk.segments[0].mode = Mode::Sliding;
        assert!(sk.validate().is_err());
    }
}

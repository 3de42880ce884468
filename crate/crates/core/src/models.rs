//! Built-in agent models, addressable by lowercase registry key.

use std::collections::BTreeMap;
use std::sync::Arc;

use nalgebra::dvector;

use crate::agent::{AgentModel, Matrix, State};
use crate::error::{Error, Result};

pub const GALVANETTO: &str = "galvanetto";
pub const DEFAULT_GAMMA: f64 = 3.0;
pub const DEFAULT_BELT_SPEED: f64 = 0.15;

/// Stick-slip oscillator: a unit mass on a spring dragged by a belt moving at
/// `belt_speed`, with velocity-weakening dry friction of strength 1.
///
/// `x = (y₁, y₂)`, `h(x) = y₂ - v̄`, and
/// `f±(x) = (y₂, -y₁ ∓ 1/(1 ± γ(y₂ - v̄)))`.
pub fn galvanetto(gamma: f64, belt_speed: f64) -> AgentModel {
    let v = belt_speed;
    let g = gamma;
    AgentModel::new(
        GALVANETTO,
        2,
        Arc::new(move |x: &State| dvector![x[1], -x[0] + 1.0 / (1.0 - g * (x[1] - v))]),
        Arc::new(move |x: &State| dvector![x[1], -x[0] - 1.0 / (1.0 + g * (x[1] - v))]),
        Arc::new(move |x: &State| x[1] - v),
        Arc::new(|_x: &State| dvector![0.0, 1.0]),
    )
    .with_jacobians(
        Arc::new(move |x: &State| {
            let d = 1.0 - g * (x[1] - v);
            Matrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, g / (d * d)])
        }),
        Arc::new(move |x: &State| {
            let d = 1.0 + g * (x[1] - v);
            Matrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, g / (d * d)])
        }),
    )
    .with_param("gamma", gamma)
    .with_param("v_bar", belt_speed)
}

/// Look up a built-in model by key. Missing parameters take their defaults.
pub fn builtin(name: &str, params: &BTreeMap<String, f64>) -> Result<AgentModel> {
    match name {
        GALVANETTO => {
            for key in params.keys() {
                if key != "gamma" && key != "v_bar" {
                    return Err(Error::InvalidInput(format!(
                        "unknown parameter `{key}` for model `{GALVANETTO}`"
                    )));
                }
            }
            let gamma = params.get("gamma").copied().unwrap_or(DEFAULT_GAMMA);
            let v_bar = params.get("v_bar").copied().unwrap_or(DEFAULT_BELT_SPEED);
            if !(gamma >= 0.0 && gamma.is_finite()) || !v_bar.is_finite() {
                return Err(Error::InvalidInput(
                    "galvanetto requires finite gamma >= 0 and finite v_bar".into(),
                ));
            }
            Ok(galvanetto(gamma, v_bar))
        }
        other => Err(Error::UnknownModel(other.to_string())),
    }
}

pub fn registry_keys() -> &'static [&'static str] {
    &[GALVANETTO]
}

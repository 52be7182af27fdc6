//! Fixed-step explicit integrators.
//!
//! The integrator is generic over [`OdeSystem`], so the same stepping code
//! drives plain `f64` states (oracles, tests) and tape-recorded states (the
//! network, where every stage evaluation lands on the tape and the backward
//! sweep differentiates the discrete trajectory exactly).

use serde::{Deserialize, Serialize};

use crate::error::{PadError, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Euler,
    Rk4,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub scheme: Scheme,
    /// With `knot_aligned`, the number of uniform substeps inside each
    /// inter-knot interval; otherwise the number of uniform steps across the
    /// whole window.
    pub steps_per_window: usize,
    pub knot_aligned: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            scheme: Scheme::Rk4,
            steps_per_window: 4,
            knot_aligned: true,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps_per_window == 0 {
            return Err(PadError::Config("solver.steps_per_window must be >= 1".into()));
        }
        Ok(())
    }
}

pub trait OdeSystem {
    type State;

    fn derivative(&mut self, t: f64, state: &Self::State) -> Result<Self::State>;

    /// `base + Σ cᵢ·termᵢ`
    fn combine(&mut self, base: &Self::State, terms: &[(f64, &Self::State)]) -> Result<Self::State>;

    fn is_finite(&self, state: &Self::State) -> bool;
}

/// Integrate from `t0` to `t1` in `n_steps` uniform steps.
pub fn integrate<S: OdeSystem>(
    system: &mut S,
    state0: S::State,
    t0: f64,
    t1: f64,
    n_steps: usize,
    scheme: Scheme,
) -> Result<S::State> {
    if !(t1 > t0) {
        return Err(PadError::Input(format!("integration needs t1 > t0, got [{t0}, {t1}]")));
    }
    if n_steps == 0 {
        return Err(PadError::Input("integration needs at least one step".into()));
    }
    let h = (t1 - t0) / n_steps as f64;
    let mut state = state0;
    for step in 0..n_steps {
        let t = t0 + step as f64 * h;
        state = match scheme {
            Scheme::Euler => euler_step(system, &state, t, h),
            Scheme::Rk4 => rk4_step(system, &state, t, h),
        }
        .map_err(|e| divergence(e, step))?;
        if !system.is_finite(&state) {
            return Err(PadError::Divergence { step, window: None });
        }
    }
    Ok(state)
}

fn divergence(e: PadError, step: usize) -> PadError {
    match e {
        PadError::NonFinite { .. } => PadError::Divergence { step, window: None },
        other => other,
    }
}

fn euler_step<S: OdeSystem>(sys: &mut S, y: &S::State, t: f64, h: f64) -> Result<S::State> {
    let k1 = sys.derivative(t, y)?;
    sys.combine(y, &[(h, &k1)])
}

fn rk4_step<S: OdeSystem>(sys: &mut S, y: &S::State, t: f64, h: f64) -> Result<S::State> {
    let k1 = sys.derivative(t, y)?;
    let y2 = sys.combine(y, &[(h / 2.0, &k1)])?;
    let k2 = sys.derivative(t + h / 2.0, &y2)?;
    let y3 = sys.combine(y, &[(h / 2.0, &k2)])?;
    let k3 = sys.derivative(t + h / 2.0, &y3)?;
    let y4 = sys.combine(y, &[(h, &k3)])?;
    let k4 = sys.derivative(t + h, &y4)?;
    sys.combine(
        y,
        &[(h / 6.0, &k1), (h / 3.0, &k2), (h / 3.0, &k3), (h / 6.0, &k4)],
    )
}

/// Adapter turning a closure `(t, y) -> dy/dt` into an [`OdeSystem`].
pub struct FnSystem<F>(pub F);

impl<F> OdeSystem for FnSystem<F>
where
    F: FnMut(f64, &[f64]) -> Vec<f64>,
{
    type State = Vec<f64>;

    fn derivative(&mut self, t: f64, state: &Vec<f64>) -> Result<Vec<f64>> {
        let d = (self.0)(t, state);
        if d.len() != state.len() {
            return Err(PadError::Dimension {
                op: "field",
                detail: format!("state {} vs derivative {}", state.len(), d.len()),
            });
        }
        Ok(d)
    }

    fn combine(&mut self, base: &Vec<f64>, terms: &[(f64, &Vec<f64>)]) -> Result<Vec<f64>> {
        let mut out = base.clone();
        for (c, term) in terms {
            for (o, v) in out.iter_mut().zip(term.iter()) {
                *o += c * v;
            }
        }
        Ok(out)
    }

    fn is_finite(&self, state: &Vec<f64>) -> bool {
        state.iter().all(|v| v.is_finite())
    }
}

/// Integrate a plain vector field over `[t0, t1]` with `config.steps_per_window`
/// uniform steps.
pub fn integrate_fn<F>(field: F, state0: &Tensor, t0: f64, t1: f64, config: &SolverConfig) -> Result<Tensor>
where
    F: FnMut(f64, &[f64]) -> Vec<f64>,
{
    config.validate()?;
    let mut sys = FnSystem(field);
    let out = integrate(
        &mut sys,
        state0.data().to_vec(),
        t0,
        t1,
        config.steps_per_window,
        config.scheme,
    )?;
    Tensor::new(state0.shape().to_vec(), out)
}

//! Online gradient descent, plain and predictive.
//!
//! Each round observes `θ_t`, is charged `f(x_t, θ_t)`, then forms a reference
//! parameter for the next play: `θ_t` itself in standard mode, a forecast
//! `θ̂_{t+1}` in predictive mode. The next play is `k` projected gradient steps
//! on `f(·, reference)` starting from `x_t`.

use nalgebra::DVector;

use crate::domains::{ConstraintSet, MEMBERSHIP_TOL};
use crate::error::{Error, Result};
use crate::objectives::Objective;
use crate::predictors::{ForecastContext, Forecaster};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DescentMode {
    Standard,
    Predictive,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DescentConfig {
    pub eta: f64,
    /// Gradient steps per round; 1 is the single-step algorithm.
    pub inner_steps: usize,
    pub mode: DescentMode,
}

impl DescentConfig {
    pub fn new(eta: f64, inner_steps: usize, mode: DescentMode) -> Result<Self> {
        if !(eta > 0.0 && eta.is_finite()) {
            return Err(Error::invalid(format!("eta must be positive, got {eta}")));
        }
        if inner_steps == 0 {
            return Err(Error::invalid("inner_steps must be at least 1"));
        }
        Ok(DescentConfig {
            eta,
            inner_steps,
            mode,
        })
    }
}

/// `k` iterations of `z ← Π_X(z − η ∇f(z, θ_ref))` from `x`.
pub fn ogd_step(
    objective: &dyn Objective,
    set: &ConstraintSet,
    x: &DVector<f64>,
    theta_ref: &DVector<f64>,
    config: &DescentConfig,
) -> Result<DVector<f64>> {
    descend(objective, x, theta_ref, config, |v| set.project(v))
}

/// [`ogd_step`] that tolerates degenerate heuristic projections, counting them.
pub fn ogd_step_lenient(
    objective: &dyn Objective,
    set: &ConstraintSet,
    x: &DVector<f64>,
    theta_ref: &DVector<f64>,
    config: &DescentConfig,
    fallbacks: &mut usize,
) -> Result<DVector<f64>> {
    descend(objective, x, theta_ref, config, |v| {
        set.project_lenient(v, fallbacks)
    })
}

fn descend(
    objective: &dyn Objective,
    x: &DVector<f64>,
    theta_ref: &DVector<f64>,
    config: &DescentConfig,
    mut project: impl FnMut(&DVector<f64>) -> Result<DVector<f64>>,
) -> Result<DVector<f64>> {
    let mut z = x.clone();
    for _ in 0..config.inner_steps {
        let grad = objective.gradient_x(&z, theta_ref)?;
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite("gradient".into()));
        }
        z = project(&(&z - grad * config.eta))?;
    }
    Ok(z)
}

/// A played sequence with everything needed for regret accounting.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    /// Plays `x_1..x_T`.
    pub points: Vec<DVector<f64>>,
    /// Observed parameters `θ_1..θ_T`.
    pub thetas: Vec<DVector<f64>>,
    /// Parameter each play was descended toward. `references[t]` produced
    /// `points[t]`; the first entry is `θ_1` as a placeholder since `x_1` is given.
    pub references: Vec<DVector<f64>>,
    /// `f(x_t, θ_t)`.
    pub losses: Vec<f64>,
    /// First (1-based) round whose play came from a forecast, if any.
    pub predictive_from: Option<usize>,
    pub projection_fallbacks: usize,
}

impl Trajectory {
    pub fn horizon(&self) -> usize {
        self.points.len()
    }
}

/// Runs online gradient descent over `scenario` (`θ_1..θ_T`).
///
/// `prehistory` is data observed before round 1; forecasters see it ahead of
/// the scenario. In predictive mode the forecast `θ̂_{t+1}` is used once the
/// forecaster is ready and `θ_t` before that.
pub fn run_predictive_ogd(
    objective: &dyn Objective,
    set: &ConstraintSet,
    forecaster: &mut dyn Forecaster,
    scenario: &[DVector<f64>],
    prehistory: &[DVector<f64>],
    config: &DescentConfig,
    x1: &DVector<f64>,
) -> Result<Trajectory> {
    if scenario.is_empty() {
        return Err(Error::invalid("scenario must contain at least one round"));
    }
    if !set.contains(x1, MEMBERSHIP_TOL)? {
        return Err(Error::invalid(
            "initial point lies outside the constraint set",
        ));
    }
    let horizon = scenario.len();
    let mut history: Vec<DVector<f64>> = prehistory.to_vec();
    let mut traj = Trajectory {
        points: Vec::with_capacity(horizon),
        thetas: Vec::with_capacity(horizon),
        references: Vec::with_capacity(horizon),
        losses: Vec::with_capacity(horizon),
        predictive_from: None,
        projection_fallbacks: 0,
    };
    let mut x = x1.clone();
    traj.references.push(scenario[0].clone());
    for (t, theta) in scenario.iter().enumerate() {
        let loss = objective.value(&x, theta)?;
        traj.points.push(x.clone());
        traj.thetas.push(theta.clone());
        traj.losses.push(loss);
        history.push(theta.clone());
        if t + 1 == horizon {
            break;
        }
        let reference = match config.mode {
            DescentMode::Standard => theta.clone(),
            DescentMode::Predictive => {
                let ctx = ForecastContext {
                    history: &history,
                    next_truth: scenario.get(t + 1),
                };
                match forecaster.forecast(&ctx)? {
                    Some(pred) => {
                        traj.predictive_from.get_or_insert(t + 2);
                        pred
                    }
                    None => theta.clone(),
                }
            }
        };
        x = ogd_step_lenient(
            objective,
            set,
            &x,
            &reference,
            config,
            &mut traj.projection_fallbacks,
        )?;
        traj.references.push(reference);
    }
    Ok(traj)
}

//! Simultaneous modeling and descent: exponential weights over a roster of
//! forecasters, each running its own predictive gradient descent.
//!
//! Every active expert proposes `v_i` by one projected step toward its own
//! forecast. The played point is the projection of the `p`-weighted average of
//! the proposals, and the distribution is tilted by `exp(−γ f(v_i, θ_t))`.
//! Experts joining mid-run take probability `β` and scale the others by `1 − β`.
//!
//! Weights are kept as log-probabilities so long horizons and large losses do
//! not underflow.

use nalgebra::DVector;

use crate::descent::{ogd_step_lenient, DescentConfig, DescentMode};
use crate::domains::{ConstraintSet, MEMBERSHIP_TOL};
use crate::error::{Error, Result};
use crate::objectives::Objective;
use crate::predictors::{prediction_regularity, ForecastContext, Forecaster};
use crate::regret::{expert_term, BoundCheck};

/// `γ = sqrt(8 / (T·D²))`, the rate minimizing the exponential-weights bound.
pub fn suggested_gamma(range: f64, horizon: usize) -> Result<f64> {
    if !(range > 0.0 && range.is_finite()) || horizon == 0 {
        return Err(Error::invalid("suggested gamma needs D > 0 and T >= 1"));
    }
    Ok((8.0 / (horizon as f64 * range * range)).sqrt())
}

/// What one expert did over the rounds it was active.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpertTrace {
    pub label: String,
    /// First (1-based) round in which the expert proposed a point.
    pub start_round: usize,
    pub points: Vec<DVector<f64>>,
    /// Reference parameter behind each proposal; the first entry is the
    /// round's own `θ` when no forecast existed yet.
    pub references: Vec<DVector<f64>>,
    pub losses: Vec<f64>,
}

impl ExpertTrace {
    pub fn total_loss(&self) -> f64 {
        self.losses.iter().sum()
    }
}

struct Expert {
    forecaster: Box<dyn Forecaster>,
    iterate: DVector<f64>,
    /// `θ̂_t` for the coming round; `None` means "stay put".
    next_reference: Option<DVector<f64>>,
    active: bool,
    trace: ExpertTrace,
}

pub struct ExpertPool {
    experts: Vec<Expert>,
    capacity: usize,
    log_p: Vec<f64>,
    beta: f64,
    gamma: f64,
    descent: DescentConfig,
    history: Vec<DVector<f64>>,
    rounds: usize,
    last_output: DVector<f64>,
    projection_fallbacks: usize,
}

impl std::fmt::Debug for ExpertPool {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ExpertPool")
            .field("active", &self.active_count())
            .field("capacity", &self.capacity)
            .field("distribution", &self.distribution())
            .field("rounds", &self.rounds)
            .finish()
    }
}

impl ExpertPool {
    /// Empty pool holding at most `capacity` experts. `prehistory` is data
    /// observed before round 1.
    pub fn new(
        capacity: usize,
        beta: f64,
        gamma: f64,
        eta: f64,
        x_init: DVector<f64>,
        prehistory: Vec<DVector<f64>>,
    ) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::invalid("expert pool needs capacity >= 1"));
        }
        if !(beta > 0.0 && beta < 1.0) {
            return Err(Error::invalid(format!(
                "beta must lie in (0, 1), got {beta}"
            )));
        }
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(Error::invalid(format!(
                "gamma must be positive, got {gamma}"
            )));
        }
        Ok(ExpertPool {
            experts: Vec::with_capacity(capacity),
            capacity,
            log_p: Vec::with_capacity(capacity),
            beta,
            gamma,
            descent: DescentConfig::new(eta, 1, DescentMode::Predictive)?,
            history: prehistory,
            rounds: 0,
            last_output: x_init,
            projection_fallbacks: 0,
        })
    }

    pub fn active_count(&self) -> usize {
        self.experts.iter().filter(|e| e.active).count()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn rounds(&self) -> usize {
        self.rounds
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn projection_fallbacks(&self) -> usize {
        self.projection_fallbacks
    }

    /// Current distribution over the roster (zeros for never-activated slots).
    pub fn distribution(&self) -> Vec<f64> {
        self.log_p.iter().map(|l| l.exp()).collect()
    }

    pub fn traces(&self) -> Vec<ExpertTrace> {
        self.experts.iter().map(|e| e.trace.clone()).collect()
    }

    /// Brings a new forecaster online.
    ///
    /// Before the first round every expert starts with equal weight. Later
    /// entrants get probability `β` while the incumbents are scaled by
    /// `1 − β`; the entrant starts from the last played point and fits on the
    /// full history observed so far.
    pub fn activate_model(
        &mut self,
        mut forecaster: Box<dyn Forecaster>,
        next_truth: Option<&DVector<f64>>,
    ) -> Result<usize> {
        if self.experts.len() >= self.capacity {
            return Err(Error::PoolFull(self.capacity));
        }
        let incumbents = self.active_count();
        let next_reference = if self.rounds == 0 {
            None
        } else {
            let ctx = ForecastContext {
                history: &self.history,
                next_truth,
            };
            Some(
                forecaster
                    .forecast(&ctx)?
                    .unwrap_or_else(|| self.history.last().expect("rounds > 0").clone()),
            )
        };
        let label = forecaster.label();
        self.experts.push(Expert {
            forecaster,
            iterate: self.last_output.clone(),
            next_reference,
            active: true,
            trace: ExpertTrace {
                label,
                start_round: self.rounds + 1,
                points: Vec::new(),
                references: Vec::new(),
                losses: Vec::new(),
            },
        });
        if self.rounds == 0 || incumbents == 0 {
            let uniform = -((incumbents + 1) as f64).ln();
            for lp in self.log_p.iter_mut() {
                *lp = uniform;
            }
            self.log_p.push(uniform);
        } else {
            let keep = (1.0 - self.beta).ln();
            for lp in self.log_p.iter_mut() {
                *lp += keep;
            }
            self.log_p.push(self.beta.ln());
            self.normalize()?;
        }
        Ok(self.experts.len() - 1)
    }

    fn normalize(&mut self) -> Result<()> {
        let max = self.log_p.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !max.is_finite() {
            return Err(Error::WeightUnderflow { gamma: self.gamma });
        }
        let lse = max + self.log_p.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
        for lp in self.log_p.iter_mut() {
            *lp -= lse;
        }
        Ok(())
    }

    /// One round: every active expert descends toward its forecast, the
    /// weighted average is projected and played, then weights are tilted by
    /// the experts' losses at `θ_t` and forecasts for the next round are formed.
    pub fn smad_step(
        &mut self,
        objective: &dyn Objective,
        set: &ConstraintSet,
        theta: &DVector<f64>,
        next_truth: Option<&DVector<f64>>,
    ) -> Result<DVector<f64>> {
        if self.active_count() == 0 {
            return Err(Error::invalid("expert pool has no active expert"));
        }
        let mut proposals = Vec::with_capacity(self.experts.len());
        for expert in &self.experts {
            let v = match &expert.next_reference {
                Some(reference) => ogd_step_lenient(
                    objective,
                    set,
                    &expert.iterate,
                    reference,
                    &self.descent,
                    &mut self.projection_fallbacks,
                )?,
                None => expert.iterate.clone(),
            };
            proposals.push(v);
        }
        let p = self.distribution();
        let mixed = proposals
            .iter()
            .zip(&p)
            .fold(DVector::zeros(set.dim()), |acc, (v, w)| acc + v * *w);
        let played = set.project_lenient(&mixed, &mut self.projection_fallbacks)?;

        for (i, (expert, v)) in self.experts.iter_mut().zip(proposals).enumerate() {
            let loss = objective.value(&v, theta)?;
            if !loss.is_finite() {
                return Err(Error::NonFinite("expert loss".into()));
            }
            self.log_p[i] -= self.gamma * loss;
            let reference = expert
                .next_reference
                .clone()
                .unwrap_or_else(|| theta.clone());
            expert.trace.points.push(v.clone());
            expert.trace.references.push(reference);
            expert.trace.losses.push(loss);
            expert.iterate = v;
        }
        self.normalize()?;

        self.history.push(theta.clone());
        self.rounds += 1;
        self.last_output = played.clone();
        for expert in self.experts.iter_mut() {
            let ctx = ForecastContext {
                history: &self.history,
                next_truth,
            };
            expert.next_reference = Some(
                expert
                    .forecaster
                    .forecast(&ctx)?
                    .unwrap_or_else(|| theta.clone()),
            );
        }
        Ok(played)
    }

    /// Records a round played without any active expert (the caller chose the point).
    pub fn observe_passive(&mut self, theta: &DVector<f64>, played: DVector<f64>) {
        self.history.push(theta.clone());
        self.rounds += 1;
        self.last_output = played;
    }
}

/// A roster entry: the round in which the expert first proposes a point and its forecaster.
pub struct ScheduledExpert {
    pub round: usize,
    pub forecaster: Box<dyn Forecaster>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SmadTrajectory {
    pub points: Vec<DVector<f64>>,
    pub thetas: Vec<DVector<f64>>,
    pub losses: Vec<f64>,
    /// Distribution over the roster after each round.
    pub distributions: Vec<Vec<f64>>,
    pub experts: Vec<ExpertTrace>,
    /// True when some expert joined after round 1.
    pub mid_run_activations: bool,
    pub projection_fallbacks: usize,
}

impl SmadTrajectory {
    pub fn horizon(&self) -> usize {
        self.points.len()
    }

    /// `P^θ_i` for every expert that was active from round 1.
    pub fn expert_prediction_regularities(&self) -> Result<Vec<f64>> {
        self.experts
            .iter()
            .filter(|e| e.start_round == 1)
            .map(|e| prediction_regularity(&self.thetas, &e.references))
            .collect()
    }
}

/// Runs the expert-learning loop over `scenario`.
///
/// Rounds with no active expert fall back to standard online gradient descent
/// on the last observed parameter, so the run matches plain OGD until the
/// first activation.
#[allow(clippy::too_many_arguments)]
pub fn run_smad(
    objective: &dyn Objective,
    set: &ConstraintSet,
    mut roster: Vec<ScheduledExpert>,
    scenario: &[DVector<f64>],
    prehistory: Vec<DVector<f64>>,
    beta: f64,
    gamma: f64,
    eta: f64,
    x_init: &DVector<f64>,
) -> Result<SmadTrajectory> {
    if scenario.is_empty() {
        return Err(Error::invalid("scenario must contain at least one round"));
    }
    if !set.contains(x_init, MEMBERSHIP_TOL)? {
        return Err(Error::invalid(
            "initial point lies outside the constraint set",
        ));
    }
    if roster.iter().any(|e| e.round == 0) {
        return Err(Error::invalid("activation rounds are 1-based"));
    }
    roster.sort_by_key(|e| e.round);
    let mid_run_activations = roster.iter().any(|e| e.round > 1);
    let mut pool = ExpertPool::new(
        roster.len().max(1),
        beta,
        gamma,
        eta,
        x_init.clone(),
        prehistory,
    )?;
    let standard = DescentConfig::new(eta, 1, DescentMode::Standard)?;
    let mut pending = roster.into_iter().peekable();

    let mut traj = SmadTrajectory {
        points: Vec::with_capacity(scenario.len()),
        thetas: scenario.to_vec(),
        losses: Vec::with_capacity(scenario.len()),
        distributions: Vec::with_capacity(scenario.len()),
        experts: Vec::new(),
        mid_run_activations,
        projection_fallbacks: 0,
    };
    let mut passive_fallbacks = 0;
    let mut x_prev = x_init.clone();
    for (t, theta) in scenario.iter().enumerate() {
        let round = t + 1;
        while let Some(entry) = pending.next_if(|e| e.round <= round) {
            pool.activate_model(entry.forecaster, Some(theta))?;
        }
        let next_truth = scenario.get(t + 1);
        let x = if pool.active_count() == 0 {
            let x = if t == 0 {
                x_init.clone()
            } else {
                ogd_step_lenient(
                    objective,
                    set,
                    &x_prev,
                    &scenario[t - 1],
                    &standard,
                    &mut passive_fallbacks,
                )?
            };
            pool.observe_passive(theta, x.clone());
            x
        } else {
            pool.smad_step(objective, set, theta, next_truth)?
        };
        traj.losses.push(objective.value(&x, theta)?);
        traj.distributions.push(pool.distribution());
        traj.points.push(x.clone());
        x_prev = x;
    }
    traj.experts = pool.traces();
    traj.projection_fallbacks = pool.projection_fallbacks() + passive_fallbacks;
    Ok(traj)
}

/// `Σ_t f(x_t) − min_i Σ_t f(x_t^i)` against `TγD²/8 + ln(N)/γ`, for runs
/// where every expert was active from round 1.
pub fn exp_weights_check(traj: &SmadTrajectory, gamma: f64, range: f64) -> Result<BoundCheck> {
    if traj.mid_run_activations || traj.experts.iter().any(|e| e.start_round != 1) {
        return Err(Error::invalid(
            "the exponential-weights inequality only applies without mid-run activations",
        ));
    }
    let n = traj.experts.len();
    if n == 0 {
        return Err(Error::invalid("no experts in trajectory"));
    }
    let played: f64 = traj.losses.iter().sum();
    let best = traj
        .experts
        .iter()
        .map(ExpertTrace::total_loss)
        .fold(f64::INFINITY, f64::min);
    let t = traj.horizon() as f64;
    let bound = t * gamma * range * range / 8.0 + (n as f64).ln() / gamma;
    Ok(BoundCheck {
        measured: played - best,
        bound,
        holds: played - best <= bound + 1e-6,
    })
}

/// The additive expert-learning term `D·√(2T)/4·(1 + ln N)`.
pub fn expert_learning_term(range: f64, horizon: usize, experts: usize) -> f64 {
    expert_term(range, horizon, experts)
}

//! Dynamic-regret accounting and the predictive regret bounds.
//!
//! A [`RegretLedger`] holds per-round losses against the per-round constrained
//! minimizers, plus the two regularities the bounds are written in: the path
//! length of the minimizers and the cumulative parameter prediction error.

use nalgebra::{DMatrix, DVector};

use crate::domains::{ConstraintSet, MEMBERSHIP_TOL};
use crate::error::{Error, Result};
use crate::objectives::{contraction_factor, Objective, ObjectiveConstants};
use crate::predictors::prediction_regularity;

/// Iteration cap of the projected-gradient minimizer.
pub const ORACLE_MAX_ITER: usize = 1_000_000;
/// Stop once a projected-gradient step moves less than this.
pub const ORACLE_STEP_TOL: f64 = 1e-12;
/// Relative slack applied when comparing measured regret with a bound.
pub const BOUND_SLACK: f64 = 1e-6;

/// Constrained minimizer `argmin_{x ∈ X} f(x, θ)`.
///
/// The families here are quadratic in `x`, so the unconstrained stationary
/// point is tried first. Simplex sets are then solved by an active-set method;
/// other sets by projected gradient descent with step `1/L` until the step
/// displacement drops below [`ORACLE_STEP_TOL`].
pub fn minimizer_oracle(
    objective: &dyn Objective,
    set: &ConstraintSet,
    theta: &DVector<f64>,
) -> Result<DVector<f64>> {
    let n = objective.decision_dim();
    let hessian = objective.hessian_x(theta)?;
    let linear = objective.gradient_x(&DVector::zeros(n), theta)?;

    if let Some(chol) = hessian.clone().cholesky() {
        let stationary = -chol.solve(&linear);
        if set.contains(&stationary, 0.0)? {
            return Ok(stationary);
        }
    }
    if let ConstraintSet::Simplex { .. } = set {
        return simplex_qp(&hessian, &linear);
    }
    let smoothness = hessian.symmetric_eigenvalues().max();
    if !(smoothness > 0.0) {
        return Err(Error::invalid(
            "objective is not strongly convex at this parameter",
        ));
    }
    projected_gradient_minimizer(objective, set, theta, 1.0 / smoothness, &set.center_point())
}

fn projected_gradient_minimizer(
    objective: &dyn Objective,
    set: &ConstraintSet,
    theta: &DVector<f64>,
    eta: f64,
    start: &DVector<f64>,
) -> Result<DVector<f64>> {
    let mut x = set.project(start)?;
    for _ in 0..ORACLE_MAX_ITER {
        let grad = objective.gradient_x(&x, theta)?;
        let next = set.project(&(&x - grad * eta))?;
        let moved = (&next - &x).norm();
        x = next;
        if moved < ORACLE_STEP_TOL {
            return Ok(x);
        }
    }
    Err(Error::IterationCap(ORACLE_MAX_ITER))
}

/// Minimizes `½ xᵀQx + cᵀx` over the unit simplex for positive definite `Q`
/// with a primal active-set method.
pub fn simplex_qp(q: &DMatrix<f64>, c: &DVector<f64>) -> Result<DVector<f64>> {
    let n = c.len();
    if q.nrows() != n || q.ncols() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: q.nrows(),
        });
    }
    let mut x = DVector::from_element(n, 1.0 / n as f64);
    let mut at_zero = vec![false; n];
    let max_iter = 50 * n + 100;
    for _ in 0..max_iter {
        let free: Vec<usize> = (0..n).filter(|&i| !at_zero[i]).collect();
        let grad = q * &x + c;
        let step = kkt_step(q, &grad, &free)?;
        let step_size = step.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if step_size <= 1e-13 {
            // Bound multipliers μ_i = g_i − g_free for the pinned coordinates.
            let g_free = free.iter().map(|&i| grad[i]).sum::<f64>() / free.len() as f64;
            let scale = grad.amax().max(1e-300);
            let worst = (0..n)
                .filter(|&i| at_zero[i])
                .map(|i| (i, grad[i] - g_free))
                .min_by(|a, b| a.1.total_cmp(&b.1));
            match worst {
                Some((i, mu)) if mu < -1e-12 * scale => at_zero[i] = false,
                _ => return Ok(x),
            }
            continue;
        }
        let mut alpha = 1.0;
        let mut blocking = None;
        for (k, &i) in free.iter().enumerate() {
            if step[k] < 0.0 {
                let ratio = -x[i] / step[k];
                if ratio < alpha {
                    alpha = ratio;
                    blocking = Some(i);
                }
            }
        }
        for (k, &i) in free.iter().enumerate() {
            x[i] += alpha * step[k];
        }
        if let Some(i) = blocking {
            x[i] = 0.0;
            at_zero[i] = true;
        }
    }
    Err(Error::IterationCap(max_iter))
}

/// Equality-constrained step on the free coordinates: minimize
/// `½pᵀQp + gᵀp` subject to `Σ p = 0`.
fn kkt_step(q: &DMatrix<f64>, grad: &DVector<f64>, free: &[usize]) -> Result<DVector<f64>> {
    let m = free.len();
    if m <= 1 {
        return Ok(DVector::zeros(m));
    }
    let mut kkt = DMatrix::zeros(m + 1, m + 1);
    let mut rhs = DVector::zeros(m + 1);
    for (a, &i) in free.iter().enumerate() {
        for (b, &j) in free.iter().enumerate() {
            kkt[(a, b)] = q[(i, j)];
        }
        kkt[(a, m)] = 1.0;
        kkt[(m, a)] = 1.0;
        rhs[a] = -grad[i];
    }
    let sol = kkt
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Singular("simplex QP KKT system".into()))?;
    Ok(sol.rows(0, m).into_owned())
}

/// `Σ_t [f(x_t, θ_t) − f(x_t*, θ_t)]`.
pub fn dynamic_regret(losses: &[f64], optimal_values: &[f64]) -> Result<f64> {
    if losses.len() != optimal_values.len() {
        return Err(Error::LengthMismatch {
            left: losses.len(),
            right: optimal_values.len(),
        });
    }
    Ok(losses.iter().zip(optimal_values).map(|(l, o)| l - o).sum())
}

/// `Σ_{t=1}^{T−1} ||x_t* − x_{t+1}*||`.
pub fn path_length(minimizers: &[DVector<f64>]) -> f64 {
    minimizers.windows(2).map(|w| (&w[0] - &w[1]).norm()).sum()
}

/// Per-round minimizers and optimal values for a parameter sequence. Shared
/// between arms that face the same scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct Optima {
    pub minimizers: Vec<DVector<f64>>,
    pub values: Vec<f64>,
}

impl Optima {
    pub fn compute(
        objective: &dyn Objective,
        set: &ConstraintSet,
        thetas: &[DVector<f64>],
    ) -> Result<Self> {
        let mut minimizers = Vec::with_capacity(thetas.len());
        let mut values = Vec::with_capacity(thetas.len());
        for theta in thetas {
            let x = minimizer_oracle(objective, set, theta)?;
            values.push(objective.value(&x, theta)?);
            minimizers.push(x);
        }
        Ok(Optima { minimizers, values })
    }

    pub fn path_length(&self) -> f64 {
        path_length(&self.minimizers)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegretLedger {
    pub losses: Vec<f64>,
    pub optimal_values: Vec<f64>,
    /// `||x_t − x_t*||` per round.
    pub distances: Vec<f64>,
    /// `||θ_t − θ̂_t||` per round (0 for the first round).
    pub prediction_errors: Vec<f64>,
    pub regret: f64,
    pub path_length: f64,
    pub prediction_regularity: f64,
    pub initial_gap: f64,
}

impl RegretLedger {
    /// `references[t]` is the parameter the play `points[t]` was descended toward
    /// (its first entry is ignored).
    pub fn new(
        objective: &dyn Objective,
        optima: &Optima,
        thetas: &[DVector<f64>],
        points: &[DVector<f64>],
        references: &[DVector<f64>],
    ) -> Result<Self> {
        let horizon = thetas.len();
        for len in [points.len(), references.len(), optima.values.len()] {
            if len != horizon {
                return Err(Error::LengthMismatch {
                    left: horizon,
                    right: len,
                });
            }
        }
        if horizon == 0 {
            return Err(Error::invalid("empty trajectory"));
        }
        let losses = points
            .iter()
            .zip(thetas)
            .map(|(x, th)| objective.value(x, th))
            .collect::<Result<Vec<_>>>()?;
        let distances: Vec<f64> = points
            .iter()
            .zip(&optima.minimizers)
            .map(|(x, xs)| (x - xs).norm())
            .collect();
        let prediction_errors = std::iter::once(0.0)
            .chain(
                thetas
                    .iter()
                    .zip(references)
                    .skip(1)
                    .map(|(a, b)| (a - b).norm()),
            )
            .collect();
        Ok(RegretLedger {
            regret: dynamic_regret(&losses, &optima.values)?,
            path_length: optima.path_length(),
            prediction_regularity: prediction_regularity(thetas, references)?,
            initial_gap: distances[0],
            losses,
            optimal_values: optima.values.clone(),
            distances,
            prediction_errors,
        })
    }

    pub fn horizon(&self) -> usize {
        self.losses.len()
    }

    pub fn per_step_regret(&self) -> Vec<f64> {
        self.losses
            .iter()
            .zip(&self.optimal_values)
            .map(|(l, o)| l - o)
            .collect()
    }

    pub fn cumulative_regret(&self) -> Vec<f64> {
        self.per_step_regret()
            .into_iter()
            .scan(0.0, |acc, r| {
                *acc += r;
                Some(*acc)
            })
            .collect()
    }
}

/// The three additive terms of the predictive OGD regret bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundTerms {
    pub initial: f64,
    pub path: f64,
    pub prediction: f64,
    /// Contraction factor `C_{η,λ}` used.
    pub contraction: f64,
}

impl BoundTerms {
    pub fn total(&self) -> f64 {
        self.initial + self.path + self.prediction
    }
}

/// Dynamic-regret bound of `k`-step predictive OGD:
/// `G·gap/(1−Cᵏ) + G·Cᵏ·P*/(1−Cᵏ) + G·η·C_θ·P^θ/(1−C)`.
pub fn predictive_ogd_bound(
    constants: &ObjectiveConstants,
    eta: f64,
    inner_steps: usize,
    x1_gap: f64,
    p_star: f64,
    p_theta: f64,
) -> Result<BoundTerms> {
    if inner_steps == 0 {
        return Err(Error::invalid("inner_steps must be at least 1"));
    }
    let c = contraction_factor(constants, eta)?;
    let ck = c.powi(inner_steps as i32);
    let g = constants.g;
    Ok(BoundTerms {
        initial: g * x1_gap / (1.0 - ck),
        path: g * ck * p_star / (1.0 - ck),
        prediction: g * eta * constants.c_theta * p_theta / (1.0 - c),
        contraction: c,
    })
}

/// Expert-learning regret bound: the predictive OGD bound with the best
/// expert's prediction regularity plus `D·√(2T)/4·(1 + ln N)`.
#[allow(clippy::too_many_arguments)]
pub fn expert_learning_bound(
    constants: &ObjectiveConstants,
    eta: f64,
    inner_steps: usize,
    x1_gap: f64,
    p_star: f64,
    min_p_theta: f64,
    range: f64,
    horizon: usize,
    experts: usize,
) -> Result<f64> {
    if !(range >= 0.0) || horizon == 0 || experts == 0 {
        return Err(Error::invalid(
            "range must be nonnegative, horizon and expert count positive",
        ));
    }
    let base = predictive_ogd_bound(constants, eta, inner_steps, x1_gap, p_star, min_p_theta)?;
    Ok(base.total() + expert_term(range, horizon, experts))
}

pub(crate) fn expert_term(range: f64, horizon: usize, experts: usize) -> f64 {
    range * (2.0 * horizon as f64).sqrt() / 4.0 * (1.0 + (experts as f64).ln())
}

/// Measured regret against a bound, with the comparison slack applied.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundCheck {
    pub measured: f64,
    pub bound: f64,
    pub holds: bool,
}

impl BoundCheck {
    pub fn new(measured: f64, bound: f64) -> Self {
        BoundCheck {
            measured,
            bound,
            holds: measured <= bound + BOUND_SLACK * (1.0 + bound.abs()),
        }
    }
}

/// Checks a single-trajectory run against the `k`-step bound.
pub fn check_predictive_bound(
    ledger: &RegretLedger,
    constants: &ObjectiveConstants,
    eta: f64,
    inner_steps: usize,
) -> Result<(BoundTerms, BoundCheck)> {
    let terms = predictive_ogd_bound(
        constants,
        eta,
        inner_steps,
        ledger.initial_gap,
        ledger.path_length,
        ledger.prediction_regularity,
    )?;
    Ok((terms, BoundCheck::new(ledger.regret, terms.total())))
}

/// Each inequality of the bound's derivation, evaluated on a concrete run.
#[derive(Debug, Clone, PartialEq)]
pub struct ProofChain {
    /// `Reg_D ≤ G Σ_t ||x_t − x_t*||`.
    pub lipschitz: BoundCheck,
    /// Rounds `t ≥ 2` where
    /// `||x_t − x_t*|| ≤ Cᵏ||x_{t−1} − x_t*|| + ηC_θ(1−Cᵏ)/(1−C)·||θ_t − θ̂_t||` fails.
    pub step_violations: Vec<usize>,
    /// `Σ_{t≥2} ||x_t − x_t*|| ≤ Cᵏ/(1−Cᵏ)(gap + P*) + ηC_θ/(1−C)·P^θ`.
    pub distance_sum: BoundCheck,
    pub bound: BoundCheck,
}

impl ProofChain {
    pub fn holds(&self) -> bool {
        self.lipschitz.holds
            && self.step_violations.is_empty()
            && self.distance_sum.holds
            && self.bound.holds
    }
}

/// Evaluates every link of the bound derivation on a run. Needs the plays and
/// minimizers in addition to the ledger for the per-round contraction link.
pub fn proof_chain(
    ledger: &RegretLedger,
    points: &[DVector<f64>],
    optima: &Optima,
    constants: &ObjectiveConstants,
    eta: f64,
    inner_steps: usize,
) -> Result<ProofChain> {
    let (terms, bound) = check_predictive_bound(ledger, constants, eta, inner_steps)?;
    let c = terms.contraction;
    let ck = c.powi(inner_steps as i32);
    let pred_gain = eta * constants.c_theta * (1.0 - ck) / (1.0 - c);

    let lipschitz = BoundCheck::new(
        ledger.regret,
        constants.g * ledger.distances.iter().sum::<f64>(),
    );

    let mut step_violations = Vec::new();
    for t in 1..ledger.horizon() {
        let lhs = ledger.distances[t];
        let rhs = ck * (&points[t - 1] - &optima.minimizers[t]).norm()
            + pred_gain * ledger.prediction_errors[t];
        if lhs > rhs + 1e-9 * (1.0 + rhs) {
            step_violations.push(t + 1);
        }
    }

    let tail: f64 = ledger.distances.iter().skip(1).sum();
    let tail_bound = ck / (1.0 - ck) * (ledger.initial_gap + ledger.path_length)
        + eta * constants.c_theta / (1.0 - c) * ledger.prediction_regularity;
    Ok(ProofChain {
        lipschitz,
        step_violations,
        distance_sum: BoundCheck::new(tail, tail_bound),
        bound,
    })
}

/// True when every point lies in the set (used as a ledger sanity check).
pub fn all_feasible(set: &ConstraintSet, points: &[DVector<f64>]) -> Result<bool> {
    for p in points {
        if !set.contains(p, MEMBERSHIP_TOL)? {
            return Ok(false);
        }
    }
    Ok(true)
}

//! Monte-Carlo drivers comparing a predictive method against plain online
//! gradient descent on a shared scenario per repetition.
//!
//! Both arms of a repetition face the identical parameter sequence. The
//! reported curve is the per-step mean and standard deviation over
//! repetitions of `cumulative loss(method) − cumulative loss(OGD)`, which
//! equals the difference in cumulative dynamic regret because both arms are
//! measured against the same minimizers.
//!
//! Repetition `r` uses the seed `splitmix64(master + r·0x9E3779B97F4A7C15)`.

use std::path::PathBuf;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::descent::{run_predictive_ogd, DescentConfig, DescentMode, Trajectory};
use crate::domains::{ConstraintSet, SimplexProjection};
use crate::error::{Error, Result};
use crate::objectives::{
    contraction_factor, derive_constants, markowitz, ObjectiveConstants, ObjectiveFamily, ParamBox,
};
use crate::predictors::{
    fit_var_yule_walker, ForecastContext, Forecaster, ParamPoint, Predictor, RefitSchedule,
};
use crate::regret::{
    check_predictive_bound, dynamic_regret, expert_learning_bound, BoundCheck, BoundTerms, Optima,
    RegretLedger,
};
use crate::scenarios::{
    estimate_moments, gen_risk_path, load_market_csv, switching_path, synthetic_market, MarketData,
    RiskProcessSpec, SwitchingProcessSpec,
};
use crate::smad::{exp_weights_check, run_smad, suggested_gamma, ScheduledExpert, SmadTrajectory};

const SEED_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(SEED_GAMMA);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of repetition `rep` under `master`.
pub fn rep_seed(master: u64, rep: u64) -> u64 {
    splitmix64(master.wrapping_add(rep.wrapping_mul(SEED_GAMMA)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentId {
    /// Switching tracking targets, VAR-predictive OGD versus OGD.
    Exp1,
    /// Switching tracking targets with uneven dwell, expert learning over AR models.
    Exp2,
    /// Markowitz portfolios against a hidden client risk process.
    Exp3,
    /// The tracking pipeline with every knob open.
    Custom,
}

impl ExperimentId {
    pub fn as_str(&self) -> &'static str {
        match self {
            ExperimentId::Exp1 => "exp1",
            ExperimentId::Exp2 => "exp2",
            ExperimentId::Exp3 => "exp3",
            ExperimentId::Custom => "custom",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    PredictiveOgd,
    Smad,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ForecasterKind {
    Var,
    Oracle,
    Persistence,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProjectionMode {
    Exact,
    Renormalize,
}

impl From<ProjectionMode> for SimplexProjection {
    fn from(m: ProjectionMode) -> Self {
        match m {
            ProjectionMode::Exact => SimplexProjection::Exact,
            ProjectionMode::Renormalize => SimplexProjection::RenormalizeHeuristic,
        }
    }
}

/// Seeds are written as TOML integers when they fit and as decimal strings otherwise.
mod seed_format {
    use serde::{de, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(seed: &u64, s: S) -> Result<S::Ok, S::Error> {
        match i64::try_from(*seed) {
            Ok(v) => s.serialize_i64(v),
            Err(_) => s.serialize_str(&seed.to_string()),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<u64, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Int(i64),
            Str(String),
        }
        match Raw::deserialize(d)? {
            Raw::Int(v) => {
                u64::try_from(v).map_err(|_| de::Error::custom("seed must be nonnegative"))
            }
            Raw::Str(s) => s.parse().map_err(|_| {
                de::Error::custom(format!("seed {s:?} is not a 64-bit unsigned integer"))
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    pub id: ExperimentId,
    pub method: Method,
    #[serde(with = "seed_format")]
    pub seed: u64,
    pub reps: usize,
    /// Rounds per repetition (evaluation months for exp3).
    pub horizon: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainSection {
    pub center: Vec<f64>,
    pub radius: f64,
    pub simplex_projection: ProjectionMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectiveSection {
    /// Tracking weights: `Σ wᵢ(xᵢ − θᵢ)² + θ_offset`.
    pub weights: Vec<f64>,
    /// Parameter box used to derive the regularity constants.
    pub theta_lower: Vec<f64>,
    pub theta_upper: Vec<f64>,
    /// Eigenvalue floor assumed for Markowitz covariances.
    pub min_eigenvalue: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DescentSection {
    pub eta: f64,
    pub inner_steps: usize,
    pub x1: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictorSection {
    pub kind: ForecasterKind,
    /// VAR order of the single forecaster.
    pub order: usize,
    /// Observations before a VAR forecaster is first used.
    pub warmup: usize,
    /// Coordinates of `θ` the forecaster models; the rest use persistence.
    pub coordinates: Vec<usize>,
    pub oracle_noise: f64,
    /// Refit after this many new observations; 0 fits once and freezes.
    pub refit_every: usize,
}

/// Exponential-weights rate: a number, or `"auto"` for `√(8/(T·D²))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Gamma {
    Fixed(f64),
    Auto,
}

impl Serialize for Gamma {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Gamma::Fixed(g) => s.serialize_f64(*g),
            Gamma::Auto => s.serialize_str("auto"),
        }
    }
}

impl<'de> Deserialize<'de> for Gamma {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Str(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(g) => Ok(Gamma::Fixed(g)),
            Raw::Str(s) if s == "auto" => Ok(Gamma::Auto),
            Raw::Str(s) => Err(serde::de::Error::custom(format!(
                "gamma must be a number or \"auto\", got {s:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SmadSection {
    pub beta: f64,
    pub gamma: Gamma,
    /// AR orders of the expert roster.
    pub expert_orders: Vec<usize>,
    /// Rounds observed before the first expert joins.
    pub first_activation: usize,
    /// Rounds between later activations; 0 activates the whole roster at once.
    pub activation_every: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSection {
    pub state_a: Vec<f64>,
    pub state_b: Vec<f64>,
    pub dwell: [usize; 2],
    pub noise_var: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RiskSection {
    pub warmup_days: usize,
    pub base_level: f64,
    pub stay_probability: f64,
    pub jump_low: u32,
    pub jump_high: u32,
    pub noise_variance: f64,
    pub cadence_days: usize,
}

impl RiskSection {
    pub fn to_spec(&self) -> RiskProcessSpec {
        RiskProcessSpec {
            warmup_days: self.warmup_days,
            base_level: self.base_level,
            stay_probability: self.stay_probability,
            jump_range: (self.jump_low, self.jump_high),
            noise_variance: self.noise_variance,
            cadence_days: self.cadence_days,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarketSection {
    /// CSV of daily price relatives; empty selects the synthetic market.
    pub csv: String,
    pub risk_free: bool,
    pub synthetic_assets: usize,
    pub synthetic_days: usize,
    #[serde(with = "seed_format")]
    pub synthetic_seed: u64,
    pub client_lookback: usize,
    pub lookbacks: Vec<usize>,
    pub observation_months: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegretSection {
    pub check_bounds: bool,
}

/// Everything one experiment run needs; also the config-file schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub experiment: ExperimentSection,
    pub domains: DomainSection,
    pub objectives: ObjectiveSection,
    pub descent: DescentSection,
    pub predictors: PredictorSection,
    pub smad: SmadSection,
    pub scenarios: ScenarioSection,
    pub risk: RiskSection,
    pub market: MarketSection,
    pub regret: RegretSection,
}

pub const DEFAULT_SEED: u64 = 20_240_501;

impl ExperimentSpec {
    /// Defaults for `id`.
    pub fn defaults(id: ExperimentId) -> Self {
        let base = ExperimentSpec {
            experiment: ExperimentSection {
                id,
                method: Method::PredictiveOgd,
                seed: DEFAULT_SEED,
                reps: 50,
                horizon: 200,
            },
            domains: DomainSection {
                center: vec![0.0, 0.0],
                radius: 50.0,
                simplex_projection: ProjectionMode::Exact,
            },
            objectives: ObjectiveSection {
                weights: vec![100.0, 1.0],
                theta_lower: vec![-130.0, -50.0, -80.0],
                theta_upper: vec![130.0, 50.0, 60.0],
                min_eigenvalue: 1e-6,
            },
            descent: DescentSection {
                eta: 1.0 / 200.0,
                inner_steps: 1,
                x1: vec![0.0, 40.0],
            },
            predictors: PredictorSection {
                kind: ForecasterKind::Var,
                order: 4,
                warmup: 10,
                coordinates: vec![0, 1],
                oracle_noise: 0.0,
                refit_every: 1,
            },
            smad: SmadSection {
                beta: 0.2,
                gamma: Gamma::Fixed(5e-7),
                expert_orders: vec![1, 2, 3, 4, 5],
                first_activation: 10,
                activation_every: 10,
            },
            scenarios: ScenarioSection {
                state_a: vec![-100.0, 0.0, 30.0],
                state_b: vec![100.0, 20.0, -50.0],
                dwell: [4, 4],
                noise_var: 10.0,
            },
            risk: RiskSection {
                warmup_days: 240,
                base_level: 4.0,
                stay_probability: 0.9,
                jump_low: 1,
                jump_high: 20,
                noise_variance: 0.64,
                cadence_days: 30,
            },
            market: MarketSection {
                csv: String::new(),
                risk_free: true,
                synthetic_assets: 36,
                synthetic_days: 5651,
                synthetic_seed: 7,
                client_lookback: 50,
                lookbacks: vec![15, 30, 45, 60, 75, 90],
                observation_months: 10,
            },
            regret: RegretSection { check_bounds: true },
        };
        match id {
            ExperimentId::Exp1 | ExperimentId::Custom => base,
            ExperimentId::Exp2 => {
                let mut s = base;
                s.experiment.method = Method::Smad;
                s.scenarios.dwell = [4, 6];
                s
            }
            ExperimentId::Exp3 => {
                let mut s = base;
                s.experiment.method = Method::Smad;
                s.experiment.reps = 200;
                s.experiment.horizon = 150;
                s.domains.simplex_projection = ProjectionMode::Renormalize;
                s.descent.eta = 0.1;
                s.smad.gamma = Gamma::Fixed(50.0);
                s.smad.expert_orders = vec![1, 2, 3, 4, 5, 6];
                s.smad.first_activation = 0;
                s.smad.activation_every = 0;
                s.regret.check_bounds = false;
                s
            }
        }
    }

    fn is_tracking(&self) -> bool {
        self.experiment.id != ExperimentId::Exp3
    }

    /// Structural checks; errors name the offending key.
    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, msg: String| Err(Error::config(key, msg));
        let e = &self.experiment;
        if e.reps == 0 {
            return bad("experiment.reps", "must be at least 1".into());
        }
        if e.horizon == 0 {
            return bad("experiment.horizon", "must be at least 1".into());
        }
        let d = &self.descent;
        if !(d.eta > 0.0 && d.eta.is_finite()) {
            return bad(
                "descent.eta",
                format!("must be a positive number, got {}", d.eta),
            );
        }
        if d.inner_steps == 0 {
            return bad("descent.inner_steps", "must be at least 1".into());
        }
        let s = &self.smad;
        if !(s.beta > 0.0 && s.beta < 1.0) {
            return bad("smad.beta", format!("must lie in (0, 1), got {}", s.beta));
        }
        if let Gamma::Fixed(g) = s.gamma {
            if !(g > 0.0 && g.is_finite()) {
                return bad("smad.gamma", format!("must be positive, got {g}"));
            }
        }
        if e.method == Method::Smad && s.expert_orders.is_empty() {
            return bad("smad.expert_orders", "needs at least one AR order".into());
        }
        if s.expert_orders.contains(&0) {
            return bad("smad.expert_orders", "AR orders must be at least 1".into());
        }
        if e.method == Method::Smad && d.inner_steps != 1 {
            return bad(
                "descent.inner_steps",
                "expert learning uses single gradient steps".into(),
            );
        }
        if self.predictors.order == 0 {
            return bad("predictors.order", "must be at least 1".into());
        }
        if !(self.predictors.oracle_noise >= 0.0) {
            return bad("predictors.oracle_noise", "must be nonnegative".into());
        }
        self.risk
            .to_spec()
            .validate()
            .or_else(|err| bad("risk", err.to_string()))?;
        if self.is_tracking() {
            self.validate_tracking()
        } else {
            self.validate_portfolio()
        }
    }

    fn validate_tracking(&self) -> Result<()> {
        let bad = |key: &str, msg: String| Err(Error::config(key, msg));
        let n = self.objectives.weights.len();
        if n == 0 || self.objectives.weights.iter().any(|&w| !(w > 0.0)) {
            return bad(
                "objectives.weights",
                "must be a nonempty list of positive numbers".into(),
            );
        }
        if self.descent.x1.len() != n {
            return bad(
                "descent.x1",
                format!("needs {n} entries to match objectives.weights"),
            );
        }
        if self.domains.center.len() != n {
            return bad(
                "domains.center",
                format!("needs {n} entries to match objectives.weights"),
            );
        }
        if !(self.domains.radius > 0.0) {
            return bad("domains.radius", "must be positive".into());
        }
        for (key, v) in [
            ("scenarios.state_a", &self.scenarios.state_a),
            ("scenarios.state_b", &self.scenarios.state_b),
            ("objectives.theta_lower", &self.objectives.theta_lower),
            ("objectives.theta_upper", &self.objectives.theta_upper),
        ] {
            if v.len() != n + 1 {
                return bad(
                    key,
                    format!("needs {} entries (targets plus offset)", n + 1),
                );
            }
        }
        if self.scenarios.dwell.contains(&0) {
            return bad("scenarios.dwell", "dwell lengths must be at least 1".into());
        }
        if !(self.scenarios.noise_var >= 0.0) {
            return bad("scenarios.noise_var", "must be nonnegative".into());
        }
        if self.predictors.coordinates.iter().any(|&c| c > n) {
            return bad(
                "predictors.coordinates",
                format!("indices must be at most {n}"),
            );
        }
        if self.regret.check_bounds {
            let l = 2.0 * self.objectives.weights.iter().copied().fold(0.0, f64::max);
            if self.descent.eta > (1.0 + 1e-12) / l {
                return bad(
                    "descent.eta",
                    format!(
                        "{} exceeds 1/L = {} while regret.check_bounds is on; the regret bound needs eta <= 1/L",
                        self.descent.eta,
                        1.0 / l
                    ),
                );
            }
        }
        Ok(())
    }

    fn validate_portfolio(&self) -> Result<()> {
        let bad = |key: &str, msg: String| Err(Error::config(key, msg));
        if self.experiment.method != Method::Smad {
            return bad(
                "experiment.method",
                "the portfolio experiment runs expert learning only".into(),
            );
        }
        if self.smad.gamma == Gamma::Auto {
            return bad(
                "smad.gamma",
                "\"auto\" needs a derived range D; give a number for the portfolio experiment"
                    .into(),
            );
        }
        let m = &self.market;
        if m.lookbacks.is_empty()
            || m.lookbacks
                .iter()
                .chain([&m.client_lookback])
                .any(|&l| l < 2)
        {
            return bad(
                "market.lookbacks",
                "needs at least one lookback, each at least 2 days".into(),
            );
        }
        if m.observation_months == 0 {
            return bad("market.observation_months", "must be at least 1".into());
        }
        if m.csv.is_empty() && (m.synthetic_assets == 0 || m.synthetic_days == 0) {
            return bad(
                "market.synthetic_assets",
                "synthetic market needs assets and days".into(),
            );
        }
        if !(self.objectives.min_eigenvalue > 0.0) {
            return bad("objectives.min_eigenvalue", "must be positive".into());
        }
        Ok(())
    }
}

/// Per-step mean and sample standard deviation over repetitions.
#[derive(Debug, Clone, PartialEq)]
pub struct CurveResult {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub reps: usize,
}

impl CurveResult {
    pub fn from_runs(runs: &[Vec<f64>]) -> Result<Self> {
        let first = runs
            .first()
            .ok_or_else(|| Error::invalid("no repetitions to aggregate"))?;
        let horizon = first.len();
        if let Some(r) = runs.iter().find(|r| r.len() != horizon) {
            return Err(Error::LengthMismatch {
                left: horizon,
                right: r.len(),
            });
        }
        let n = runs.len() as f64;
        let mut mean = vec![0.0; horizon];
        for run in runs {
            for (m, v) in mean.iter_mut().zip(run) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let std = (0..horizon)
            .map(|t| {
                if runs.len() < 2 {
                    return 0.0;
                }
                let ss: f64 = runs.iter().map(|r| (r[t] - mean[t]).powi(2)).sum();
                (ss / (n - 1.0)).sqrt()
            })
            .collect();
        Ok(CurveResult {
            mean,
            std,
            reps: runs.len(),
        })
    }

    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }

    pub fn final_mean(&self) -> Option<f64> {
        self.mean.last().copied()
    }
}

/// Per-arm statistics averaged over repetitions.
#[derive(Debug, Clone, PartialEq)]
pub struct ArmSummary {
    pub name: String,
    pub total_loss: f64,
    pub regret: Option<f64>,
    pub path_length: Option<f64>,
    pub prediction_regularity: Option<f64>,
    pub projection_fallbacks: usize,
}

/// Outcome of one bound over all repetitions.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundSummary {
    pub name: String,
    pub passed: usize,
    pub total: usize,
    pub mean_measured: f64,
    pub mean_bound: f64,
    /// Mean of each additive term, for the gradient-descent bounds.
    pub terms: Option<BoundTerms>,
}

impl BoundSummary {
    pub fn all_hold(&self) -> bool {
        self.passed == self.total
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutcome {
    pub curve: CurveResult,
    pub arms: Vec<ArmSummary>,
    pub bounds: Vec<BoundSummary>,
    pub constants: Option<ObjectiveConstants>,
    pub contraction: Option<f64>,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone)]
struct ArmStats {
    name: String,
    total_loss: f64,
    regret: Option<f64>,
    path_length: Option<f64>,
    prediction_regularity: Option<f64>,
    projection_fallbacks: usize,
}

#[derive(Debug, Clone)]
struct BoundSample {
    name: String,
    check: BoundCheck,
    terms: Option<BoundTerms>,
}

#[derive(Debug, Clone)]
struct RepResult {
    diff: Vec<f64>,
    arms: Vec<ArmStats>,
    bounds: Vec<BoundSample>,
}

fn cumulative_difference(method: &[f64], baseline: &[f64]) -> Vec<f64> {
    method
        .iter()
        .zip(baseline)
        .scan(0.0, |acc, (m, b)| {
            *acc += m - b;
            Some(*acc)
        })
        .collect()
}

fn mean_of(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

fn mean_opt(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let vals: Option<Vec<f64>> = values.collect();
    vals.map(|v| mean_of(v.into_iter()))
}

fn aggregate(reps: Vec<RepResult>) -> Result<(CurveResult, Vec<ArmSummary>, Vec<BoundSummary>)> {
    let diffs: Vec<Vec<f64>> = reps.iter().map(|r| r.diff.clone()).collect();
    let curve = CurveResult::from_runs(&diffs)?;
    let arms = reps[0]
        .arms
        .iter()
        .enumerate()
        .map(|(i, first)| {
            let col = || reps.iter().map(move |r| &r.arms[i]);
            ArmSummary {
                name: first.name.clone(),
                total_loss: mean_of(col().map(|a| a.total_loss)),
                regret: mean_opt(col().map(|a| a.regret)),
                path_length: mean_opt(col().map(|a| a.path_length)),
                prediction_regularity: mean_opt(col().map(|a| a.prediction_regularity)),
                projection_fallbacks: col().map(|a| a.projection_fallbacks).sum(),
            }
        })
        .collect();
    let bounds = reps[0]
        .bounds
        .iter()
        .enumerate()
        .map(|(i, first)| {
            let col = || reps.iter().map(move |r| &r.bounds[i]);
            let terms = first.terms.map(|t0| BoundTerms {
                initial: mean_of(col().map(|b| b.terms.map_or(0.0, |t| t.initial))),
                path: mean_of(col().map(|b| b.terms.map_or(0.0, |t| t.path))),
                prediction: mean_of(col().map(|b| b.terms.map_or(0.0, |t| t.prediction))),
                contraction: t0.contraction,
            });
            BoundSummary {
                name: first.name.clone(),
                passed: col().filter(|b| b.check.holds).count(),
                total: reps.len(),
                mean_measured: mean_of(col().map(|b| b.check.measured)),
                mean_bound: mean_of(col().map(|b| b.check.bound)),
                terms,
            }
        })
        .collect();
    Ok((curve, arms, bounds))
}

/// Runs the experiment `spec` describes.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentOutcome> {
    spec.validate()?;
    if spec.is_tracking() {
        run_tracking(spec)
    } else {
        run_portfolio(spec)
    }
}

fn single_forecaster(spec: &ExperimentSpec, seed: u64) -> Result<Predictor> {
    let p = &spec.predictors;
    let base = match p.kind {
        ForecasterKind::Var => {
            let refit = if p.refit_every == 0 {
                RefitSchedule::Frozen
            } else {
                RefitSchedule::Every(p.refit_every)
            };
            Predictor::var(p.order)?
                .with_min_history(p.warmup)
                .with_refit(refit)?
        }
        ForecasterKind::Oracle => Predictor::noisy_oracle(p.oracle_noise, seed)?,
        ForecasterKind::Persistence => Predictor::persistence(),
    };
    Ok(if p.coordinates.is_empty() {
        base
    } else {
        base.with_coordinates(p.coordinates.clone())
    })
}

fn expert_forecaster(spec: &ExperimentSpec, order: usize, seed: u64) -> Result<Predictor> {
    let p = &spec.predictors;
    let base = match p.kind {
        ForecasterKind::Var => Predictor::var(order)?,
        ForecasterKind::Oracle => Predictor::noisy_oracle(p.oracle_noise, seed)?,
        ForecasterKind::Persistence => Predictor::persistence(),
    };
    Ok(if p.coordinates.is_empty() {
        base
    } else {
        base.with_coordinates(p.coordinates.clone())
    })
}

/// 1-based round in which roster entry `index` first proposes a point.
pub fn activation_round(first_activation: usize, every: usize, index: usize) -> usize {
    first_activation + every * index + 1
}

struct TrackingSetup {
    objective: ObjectiveFamily,
    set: ConstraintSet,
    constants: ObjectiveConstants,
    x1: DVector<f64>,
    switching: SwitchingProcessSpec,
}

fn tracking_setup(spec: &ExperimentSpec) -> Result<TrackingSetup> {
    let objective =
        ObjectiveFamily::quadratic_tracking(DVector::from_vec(spec.objectives.weights.clone()))?;
    let set = ConstraintSet::ball(
        DVector::from_vec(spec.domains.center.clone()),
        spec.domains.radius,
    )?;
    let theta_box = ParamBox::new(
        DVector::from_vec(spec.objectives.theta_lower.clone()),
        DVector::from_vec(spec.objectives.theta_upper.clone()),
    )?;
    let constants = derive_constants(&objective, &set, &theta_box)?;
    let sc = &spec.scenarios;
    let dim = sc.state_a.len();
    let switching = SwitchingProcessSpec::new(
        DVector::from_vec(sc.state_a.clone()),
        DVector::from_vec(sc.state_b.clone()),
        (sc.dwell[0], sc.dwell[1]),
        DMatrix::identity(dim, dim) * sc.noise_var,
        spec.experiment.seed,
    )?;
    Ok(TrackingSetup {
        objective,
        set,
        constants,
        x1: DVector::from_vec(spec.descent.x1.clone()),
        switching,
    })
}

fn trajectory_stats(
    name: String,
    setup: &TrackingSetup,
    optima: Option<&Optima>,
    traj: &Trajectory,
) -> Result<(ArmStats, Option<RegretLedger>)> {
    let ledger = optima
        .map(|o| {
            RegretLedger::new(
                &setup.objective,
                o,
                &traj.thetas,
                &traj.points,
                &traj.references,
            )
        })
        .transpose()?;
    Ok((
        ArmStats {
            name,
            total_loss: traj.losses.iter().sum(),
            regret: ledger.as_ref().map(|l| l.regret),
            path_length: ledger.as_ref().map(|l| l.path_length),
            prediction_regularity: ledger.as_ref().map(|l| l.prediction_regularity),
            projection_fallbacks: traj.projection_fallbacks,
        },
        ledger,
    ))
}

fn run_tracking(spec: &ExperimentSpec) -> Result<ExperimentOutcome> {
    let setup = tracking_setup(spec)?;
    let eta = spec.descent.eta;
    let check = spec.regret.check_bounds;
    let reps: Vec<RepResult> = (0..spec.experiment.reps as u64)
        .into_par_iter()
        .map(|r| tracking_rep(spec, &setup, rep_seed(spec.experiment.seed, r)))
        .collect::<Result<_>>()?;
    let (curve, arms, bounds) = aggregate(reps)?;
    let mut notes = Vec::new();
    if spec.experiment.method == Method::Smad
        && spec.smad.activation_every + spec.smad.first_activation > 0
    {
        notes.push("experts join mid-run, so the expert-learning bound is not evaluated".into());
    }
    Ok(ExperimentOutcome {
        curve,
        arms,
        bounds,
        constants: Some(setup.constants),
        contraction: if check {
            Some(contraction_factor(&setup.constants, eta)?)
        } else {
            None
        },
        notes,
    })
}

fn tracking_rep(spec: &ExperimentSpec, setup: &TrackingSetup, seed: u64) -> Result<RepResult> {
    let eta = spec.descent.eta;
    let horizon = spec.experiment.horizon;
    let thetas = switching_path(&setup.switching.with_seed(seed), horizon)?;
    let standard = DescentConfig::new(eta, 1, DescentMode::Standard)?;
    let baseline = run_predictive_ogd(
        &setup.objective,
        &setup.set,
        &mut Predictor::persistence(),
        &thetas,
        &[],
        &standard,
        &setup.x1,
    )?;
    let optima = if spec.regret.check_bounds {
        Some(Optima::compute(&setup.objective, &setup.set, &thetas)?)
    } else {
        None
    };
    let mut arms = Vec::new();
    let mut bounds = Vec::new();
    let (base_stats, base_ledger) =
        trajectory_stats("ogd".into(), setup, optima.as_ref(), &baseline)?;
    arms.push(base_stats);
    if let Some(ledger) = &base_ledger {
        let (terms, check) = check_predictive_bound(ledger, &setup.constants, eta, 1)?;
        bounds.push(BoundSample {
            name: "ogd regret bound (k=1)".into(),
            check,
            terms: Some(terms),
        });
    }

    let method_losses = match spec.experiment.method {
        Method::PredictiveOgd => {
            let k = spec.descent.inner_steps;
            let mut forecaster = single_forecaster(spec, rep_seed(seed, 1))?;
            let cfg = DescentConfig::new(eta, k, DescentMode::Predictive)?;
            let traj = run_predictive_ogd(
                &setup.objective,
                &setup.set,
                &mut forecaster,
                &thetas,
                &[],
                &cfg,
                &setup.x1,
            )?;
            let (stats, ledger) =
                trajectory_stats("predictive-ogd".into(), setup, optima.as_ref(), &traj)?;
            arms.push(stats);
            if let Some(ledger) = &ledger {
                let (terms, check) = check_predictive_bound(ledger, &setup.constants, eta, k)?;
                bounds.push(BoundSample {
                    name: format!("predictive-ogd regret bound (k={k})"),
                    check,
                    terms: Some(terms),
                });
            }
            traj.losses
        }
        Method::Smad => {
            let s = &spec.smad;
            let roster = s
                .expert_orders
                .iter()
                .enumerate()
                .map(|(i, &order)| {
                    Ok(ScheduledExpert {
                        round: activation_round(s.first_activation, s.activation_every, i),
                        forecaster: Box::new(expert_forecaster(
                            spec,
                            order,
                            rep_seed(seed, 1 + i as u64),
                        )?),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let gamma = resolve_gamma(s.gamma, &setup.constants, horizon)?;
            let traj = run_smad(
                &setup.objective,
                &setup.set,
                roster,
                &thetas,
                vec![],
                s.beta,
                gamma,
                eta,
                &setup.x1,
            )?;
            arms.push(smad_stats(&traj, optima.as_ref())?);
            if let Some(optima) = &optima {
                if !traj.mid_run_activations {
                    bounds.extend(smad_bounds(&traj, optima, &setup.constants, eta, gamma)?);
                }
            }
            traj.losses
        }
    };
    Ok(RepResult {
        diff: cumulative_difference(&method_losses, &baseline.losses),
        arms,
        bounds,
    })
}

fn resolve_gamma(gamma: Gamma, constants: &ObjectiveConstants, horizon: usize) -> Result<f64> {
    match gamma {
        Gamma::Fixed(g) => Ok(g),
        Gamma::Auto => suggested_gamma(constants.d, horizon),
    }
}

fn smad_stats(traj: &SmadTrajectory, optima: Option<&Optima>) -> Result<ArmStats> {
    let regret = optima
        .map(|o| dynamic_regret(&traj.losses, &o.values))
        .transpose()?;
    let best_regularity = if traj.mid_run_activations {
        None
    } else {
        traj.expert_prediction_regularities()?
            .into_iter()
            .reduce(f64::min)
    };
    Ok(ArmStats {
        name: "smad".into(),
        total_loss: traj.losses.iter().sum(),
        regret,
        path_length: optima.map(Optima::path_length),
        prediction_regularity: best_regularity,
        projection_fallbacks: traj.projection_fallbacks,
    })
}

/// Expert-learning regret bound and the exponential-weights inequality for
/// a run whose roster was active from round 1.
pub fn smad_bound_checks(
    traj: &SmadTrajectory,
    optima: &Optima,
    constants: &ObjectiveConstants,
    eta: f64,
    gamma: f64,
) -> Result<(BoundCheck, BoundCheck)> {
    let regret = dynamic_regret(&traj.losses, &optima.values)?;
    let gap = (&traj.points[0] - &optima.minimizers[0]).norm();
    let min_p_theta = traj
        .expert_prediction_regularities()?
        .into_iter()
        .reduce(f64::min)
        .ok_or_else(|| Error::invalid("no experts in trajectory"))?;
    let bound = expert_learning_bound(
        constants,
        eta,
        1,
        gap,
        optima.path_length(),
        min_p_theta,
        constants.d,
        traj.horizon(),
        traj.experts.len(),
    )?;
    Ok((
        BoundCheck::new(regret, bound),
        exp_weights_check(traj, gamma, constants.d)?,
    ))
}

fn smad_bounds(
    traj: &SmadTrajectory,
    optima: &Optima,
    constants: &ObjectiveConstants,
    eta: f64,
    gamma: f64,
) -> Result<Vec<BoundSample>> {
    let (regret, weights) = smad_bound_checks(traj, optima, constants, eta, gamma)?;
    Ok(vec![
        BoundSample {
            name: "smad regret bound".into(),
            check: regret,
            terms: None,
        },
        BoundSample {
            name: "exponential-weights inequality".into(),
            check: weights,
            terms: None,
        },
    ])
}

/// Packed client-style parameters `[μ, vec(Σ), 0]` per lookback and month.
#[derive(Debug)]
pub struct MomentTable {
    pub lookbacks: Vec<usize>,
    /// `packed[l][m]`: moments over `lookbacks[l]` days ending at month `m`'s observation.
    packed: Vec<Vec<DVector<f64>>>,
    pub assets: usize,
}

impl MomentTable {
    /// Month `m` is observed at the end of market day `offset + cadence·(m + 1)`.
    pub fn build(
        data: &MarketData,
        lookbacks: &[usize],
        months: usize,
        cadence: usize,
    ) -> Result<Self> {
        let offset = lookbacks.iter().copied().max().unwrap_or(0);
        let needed = offset + cadence * months;
        if needed > data.days() {
            return Err(Error::Data(format!(
                "{months} months at a {cadence}-day cadence after a {offset}-day lookback need {needed} days of prices, found {}",
                data.days()
            )));
        }
        let packed = lookbacks
            .par_iter()
            .map(|&lb| {
                (0..months)
                    .map(|m| {
                        let (mu, sigma) = estimate_moments(data, offset + cadence * (m + 1), lb)?;
                        Ok(markowitz::pack(&mu, &sigma, 0.0))
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(MomentTable {
            lookbacks: lookbacks.to_vec(),
            packed,
            assets: data.assets(),
        })
    }

    pub fn months(&self) -> usize {
        self.packed.first().map_or(0, Vec::len)
    }

    /// Parameter for lookback index `l` at month `m` with risk `risk`.
    pub fn theta(&self, l: usize, m: usize, risk: f64) -> DVector<f64> {
        let mut t = self.packed[l][m].clone();
        let last = t.len() - 1;
        t[last] = risk;
        t
    }
}

/// A portfolio-manager expert: moments over its own lookback plus an AR
/// forecast of the client's monthly risk (persistence until the AR fit has
/// `2·order + 1` observations).
pub struct MarketExpert {
    table: Arc<MomentTable>,
    lookback_index: usize,
    order: usize,
}

impl MarketExpert {
    pub fn new(table: Arc<MomentTable>, lookback_index: usize, order: usize) -> Result<Self> {
        if lookback_index >= table.lookbacks.len() || order == 0 {
            return Err(Error::invalid(
                "market expert needs a known lookback and order >= 1",
            ));
        }
        Ok(MarketExpert {
            table,
            lookback_index,
            order,
        })
    }
}

impl Forecaster for MarketExpert {
    fn forecast(&mut self, ctx: &ForecastContext<'_>) -> Result<Option<ParamPoint>> {
        let Some(latest) = ctx.history.last() else {
            return Ok(None);
        };
        let month = ctx.history.len() - 1;
        if month >= self.table.months() {
            return Err(Error::invalid("history runs past the moment table"));
        }
        let risk_index = latest.len() - 1;
        let risk = if ctx.history.len() > 2 * self.order {
            let series: Vec<DVector<f64>> = ctx
                .history
                .iter()
                .map(|th| DVector::from_element(1, th[risk_index]))
                .collect();
            fit_var_yule_walker(&series, self.order)?.predict_next(&series)?[0]
        } else {
            latest[risk_index]
        };
        Ok(Some(self.table.theta(self.lookback_index, month, risk)))
    }

    fn min_history(&self) -> usize {
        1
    }

    fn label(&self) -> String {
        format!(
            "lookback {}d, AR({})",
            self.table.lookbacks[self.lookback_index], self.order
        )
    }
}

fn load_market(spec: &ExperimentSpec) -> Result<(MarketData, bool)> {
    let m = &spec.market;
    let (data, synthetic) = if m.csv.is_empty() {
        (
            synthetic_market(m.synthetic_assets, m.synthetic_days, m.synthetic_seed)?,
            true,
        )
    } else {
        (load_market_csv(&PathBuf::from(&m.csv))?, false)
    };
    Ok((
        if m.risk_free {
            data.with_risk_free()
        } else {
            data
        },
        synthetic,
    ))
}

fn run_portfolio(spec: &ExperimentSpec) -> Result<ExperimentOutcome> {
    let (data, synthetic) = load_market(spec)?;
    let m = &spec.market;
    let months = m.observation_months + spec.experiment.horizon;
    let mut lookbacks = m.lookbacks.clone();
    lookbacks.push(m.client_lookback);
    let client = lookbacks.len() - 1;
    let table = Arc::new(MomentTable::build(
        &data,
        &lookbacks,
        months,
        spec.risk.cadence_days,
    )?);
    let n = data.assets();
    let objective = ObjectiveFamily::markowitz(n, spec.objectives.min_eigenvalue)?;
    let set = ConstraintSet::simplex(n, spec.domains.simplex_projection.into())?;
    let x1 = DVector::from_element(n, 1.0 / n as f64);
    let risk_spec = spec.risk.to_spec();
    let Gamma::Fixed(gamma) = spec.smad.gamma else {
        return Err(Error::config(
            "smad.gamma",
            "\"auto\" is not available for the portfolio experiment",
        ));
    };

    let reps: Vec<RepResult> = (0..spec.experiment.reps as u64)
        .into_par_iter()
        .map(|r| {
            let seed = rep_seed(spec.experiment.seed, r);
            let risk = gen_risk_path(&risk_spec, risk_spec.cadence_days * months, seed)?;
            let thetas: Vec<DVector<f64>> = (0..months)
                .map(|mo| table.theta(client, mo, risk[mo]))
                .collect();
            let (prehistory, scenario) = thetas.split_at(m.observation_months);
            let standard = DescentConfig::new(spec.descent.eta, 1, DescentMode::Standard)?;
            let baseline = run_predictive_ogd(
                &objective,
                &set,
                &mut Predictor::persistence(),
                scenario,
                prehistory,
                &standard,
                &x1,
            )?;
            let mut roster = Vec::new();
            for l in 0..m.lookbacks.len() {
                for &order in &spec.smad.expert_orders {
                    roster.push(ScheduledExpert {
                        round: 1,
                        forecaster: Box::new(MarketExpert::new(table.clone(), l, order)?),
                    });
                }
            }
            let traj = run_smad(
                &objective,
                &set,
                roster,
                scenario,
                prehistory.to_vec(),
                spec.smad.beta,
                gamma,
                spec.descent.eta,
                &x1,
            )?;
            Ok(RepResult {
                diff: cumulative_difference(&traj.losses, &baseline.losses),
                arms: vec![
                    ArmStats {
                        name: "ogd".into(),
                        total_loss: baseline.losses.iter().sum(),
                        regret: None,
                        path_length: None,
                        prediction_regularity: None,
                        projection_fallbacks: baseline.projection_fallbacks,
                    },
                    smad_stats(&traj, None)?,
                ],
                bounds: vec![],
            })
        })
        .collect::<Result<_>>()?;
    let (curve, arms, bounds) = aggregate(reps)?;
    let mut notes = vec![format!(
        "market: {} ({} days, {} assets incl. risk-free: {})",
        if synthetic {
            "synthetic geometric random walk stand-in".to_string()
        } else {
            format!("historical file {}", m.csv)
        },
        data.days(),
        n,
        m.risk_free
    )];
    if spec.domains.simplex_projection == ProjectionMode::Renormalize {
        notes.push(
            "renormalization projection is not the Euclidean projection; bounds are not evaluated"
                .into(),
        );
    }
    Ok(ExperimentOutcome {
        curve,
        arms,
        bounds,
        constants: None,
        contraction: None,
        notes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rep_seeds_are_distinct_and_stable() {
        let a: Vec<u64> = (0..100).map(|r| rep_seed(1, r)).collect();
        let mut sorted = a.clone();
        sorted.sort_unstable();
        sorted.dedup();
        assert_eq!(sorted.len(), 100);
        assert_eq!(rep_seed(1, 5), a[5]);
        assert_ne!(rep_seed(2, 0), rep_seed(1, 0));
    }

    #[test]
    fn curve_statistics() {
        let c = CurveResult::from_runs(&[vec![1.0, 2.0], vec![3.0, 2.0]]).unwrap();
        assert_eq!(c.mean, vec![2.0, 2.0]);
        assert!((c.std[0] - 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(c.std[1], 0.0);
        let single = CurveResult::from_runs(&[vec![1.0]]).unwrap();
        assert_eq!(single.std, vec![0.0]);
        assert!(CurveResult::from_runs(&[]).is_err());
        assert!(CurveResult::from_runs(&[vec![1.0], vec![1.0, 2.0]]).is_err());
    }

    #[test]
    fn activation_schedule() {
        assert_eq!(activation_round(10, 10, 0), 11);
        assert_eq!(activation_round(10, 10, 4), 51);
        assert_eq!(activation_round(0, 0, 3), 1);
    }

    #[test]
    fn defaults_validate() {
        for id in [
            ExperimentId::Exp1,
            ExperimentId::Exp2,
            ExperimentId::Exp3,
            ExperimentId::Custom,
        ] {
            ExperimentSpec::defaults(id).validate().unwrap();
        }
    }

    #[test]
    fn eta_above_inverse_smoothness_is_rejected() {
        let mut s = ExperimentSpec::defaults(ExperimentId::Exp1);
        s.descent.eta = 0.01;
        match s.validate() {
            Err(Error::Config { key, .. }) => assert_eq!(key, "descent.eta"),
            other => panic!("expected config error, got {other:?}"),
        }
        s.regret.check_bounds = false;
        s.validate().unwrap();
    }

    #[test]
    fn small_tracking_run_is_deterministic() {
        let mut s = ExperimentSpec::defaults(ExperimentId::Exp1);
        s.experiment.reps = 3;
        s.experiment.horizon = 30;
        let a = run_experiment(&s).unwrap();
        let b = run_experiment(&s).unwrap();
        assert_eq!(a.curve, b.curve);
        assert!(a.curve.mean[..10].iter().all(|&v| v == 0.0));
        assert!(a.bounds.iter().all(BoundSummary::all_hold));
    }
}

//! One-step-ahead parameter forecasting.
//!
//! A forecaster sees the observed history `θ_1..θ_t` and returns `θ̂_{t+1}`,
//! or `None` while it does not yet have enough data. Descent code falls back
//! to the last observation in that case.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{check_dim, Error, Result};

pub type ParamPoint = DVector<f64>;

/// Ridge added to the Yule-Walker system diagonal.
pub const YULE_WALKER_RIDGE: f64 = 1e-8;

/// Chronological history of parameter observations with a fixed dimension.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamSeries {
    observations: Vec<ParamPoint>,
}

impl ParamSeries {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_points(points: Vec<ParamPoint>) -> Result<Self> {
        let mut s = Self::new();
        for p in points {
            s.push(p)?;
        }
        Ok(s)
    }

    pub fn push(&mut self, theta: ParamPoint) -> Result<()> {
        if let Some(first) = self.observations.first() {
            check_dim(first.len(), theta.len())?;
        }
        self.observations.push(theta);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    pub fn dim(&self) -> Option<usize> {
        self.observations.first().map(|p| p.len())
    }

    pub fn last(&self) -> Option<&ParamPoint> {
        self.observations.last()
    }

    pub fn as_slice(&self) -> &[ParamPoint] {
        &self.observations
    }
}

/// Fitted vector autoregression `θ_{t+1} = θ̄ + Σ_h Φ_h (θ_{t+1−h} − θ̄)`.
#[derive(Debug, Clone, PartialEq)]
pub struct VarModel {
    pub mean: DVector<f64>,
    /// `Φ_1 … Φ_k`, each `m × m`.
    pub coefficients: Vec<DMatrix<f64>>,
}

impl VarModel {
    pub fn order(&self) -> usize {
        self.coefficients.len()
    }

    /// Forecast from the most recent observations (`recent` is chronological
    /// and must hold at least `order` points).
    pub fn predict_next(&self, recent: &[DVector<f64>]) -> Result<DVector<f64>> {
        let k = self.order();
        if recent.len() < k {
            return Err(Error::NotReady {
                needed: k,
                have: recent.len(),
            });
        }
        let mut out = self.mean.clone();
        for (h, phi) in self.coefficients.iter().enumerate() {
            let lagged = &recent[recent.len() - 1 - h];
            check_dim(self.mean.len(), lagged.len())?;
            out += phi * (lagged - &self.mean);
        }
        Ok(out)
    }
}

/// Biased sample autocovariance `Γ(h) = (1/T) Σ y_{t+h} y_tᵀ` of a demeaned series.
fn autocovariance(centered: &[DVector<f64>], lag: usize) -> DMatrix<f64> {
    let t = centered.len();
    let m = centered[0].len();
    let mut acc = DMatrix::zeros(m, m);
    for i in 0..t - lag {
        acc += &centered[i + lag] * centered[i].transpose();
    }
    acc / t as f64
}

/// Fits a VAR(k) by the multivariate Yule-Walker equations.
///
/// The series is demeaned first. The block-Toeplitz system
/// `Σ_h Γ(h−j) Φ_hᵀ = Γ(j)ᵀ` (j = 1..k, `Γ(−d) = Γ(d)ᵀ`) gets a small ridge
/// on its diagonal so constant windows stay solvable.
pub fn fit_var_yule_walker(series: &[DVector<f64>], order: usize) -> Result<VarModel> {
    if order == 0 {
        return Err(Error::invalid("AR order must be at least 1"));
    }
    let needed = 2 * order + 1;
    if series.len() < needed {
        return Err(Error::NotReady {
            needed,
            have: series.len(),
        });
    }
    let m = series[0].len();
    for p in series {
        check_dim(m, p.len())?;
        if p.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("Yule-Walker input".into()));
        }
    }
    let t = series.len() as f64;
    let mean = series.iter().fold(DVector::zeros(m), |acc, p| acc + p) / t;
    let centered: Vec<DVector<f64>> = series.iter().map(|p| p - &mean).collect();
    let gammas: Vec<DMatrix<f64>> = (0..=order).map(|h| autocovariance(&centered, h)).collect();

    let km = order * m;
    let mut system = DMatrix::zeros(km, km);
    let mut rhs = DMatrix::zeros(km, m);
    for j in 0..order {
        for h in 0..order {
            let block = if h >= j {
                gammas[h - j].clone()
            } else {
                gammas[j - h].transpose()
            };
            system.view_mut((j * m, h * m), (m, m)).copy_from(&block);
        }
        rhs.view_mut((j * m, 0), (m, m))
            .copy_from(&gammas[j + 1].transpose());
    }
    for i in 0..km {
        system[(i, i)] += YULE_WALKER_RIDGE;
    }

    let solution = match system.clone().cholesky() {
        Some(chol) => chol.solve(&rhs),
        None => system
            .lu()
            .solve(&rhs)
            .ok_or_else(|| Error::Singular("Yule-Walker system".into()))?,
    };
    if solution.iter().any(|v| !v.is_finite()) {
        return Err(Error::Singular("Yule-Walker system".into()));
    }
    let coefficients = (0..order)
        .map(|h| solution.view((h * m, 0), (m, m)).transpose())
        .collect();
    Ok(VarModel { mean, coefficients })
}

/// Cumulative prediction error `Σ_{t=2}^{T} ||θ_t − θ̂_t||`.
///
/// Both slices are indexed from `t = 1`; the first entry of `predicted` is ignored.
pub fn prediction_regularity(truth: &[DVector<f64>], predicted: &[DVector<f64>]) -> Result<f64> {
    if truth.len() != predicted.len() {
        return Err(Error::LengthMismatch {
            left: truth.len(),
            right: predicted.len(),
        });
    }
    let mut total = 0.0;
    for (a, b) in truth.iter().zip(predicted).skip(1) {
        check_dim(a.len(), b.len())?;
        total += (a - b).norm();
    }
    Ok(total)
}

/// What a forecaster may look at when producing `θ̂_{t+1}`.
pub struct ForecastContext<'a> {
    /// Observations `θ_1..θ_t`, oldest first.
    pub history: &'a [ParamPoint],
    /// The true next value, exposed only by controlled scenarios.
    pub next_truth: Option<&'a ParamPoint>,
}

pub trait Forecaster: Send {
    /// `θ̂_{t+1}`, or `None` while warming up or when the needed data is not exposed.
    fn forecast(&mut self, ctx: &ForecastContext<'_>) -> Result<Option<ParamPoint>>;

    /// Minimum history length before forecasts are produced.
    fn min_history(&self) -> usize;

    fn label(&self) -> String;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RefitSchedule {
    /// Refit once the history has grown by this many observations since the last fit.
    Every(usize),
    /// Fit once and keep the coefficients.
    Frozen,
}

#[derive(Debug, Clone, PartialEq)]
pub enum PredictorKind {
    Var {
        order: usize,
        refit: RefitSchedule,
        min_history: usize,
    },
    NoisyOracle {
        noise_std: f64,
    },
    Persistence,
}

/// The stock forecasters: VAR via Yule-Walker, a noise-perturbed oracle, and persistence.
///
/// `coordinates` restricts modeling to a subset of `θ`; the remaining
/// coordinates are forecast by persistence.
#[derive(Debug, Clone)]
pub struct Predictor {
    kind: PredictorKind,
    coordinates: Option<Vec<usize>>,
    fitted: Option<VarModel>,
    last_fit: Option<usize>,
    rng: ChaCha8Rng,
}

impl Predictor {
    fn with_kind(kind: PredictorKind) -> Self {
        Predictor {
            kind,
            coordinates: None,
            fitted: None,
            last_fit: None,
            rng: ChaCha8Rng::seed_from_u64(0),
        }
    }

    /// VAR(order), refit every step, ready after `2·order + 1` observations.
    pub fn var(order: usize) -> Result<Self> {
        if order == 0 {
            return Err(Error::invalid("AR order must be at least 1"));
        }
        Ok(Self::with_kind(PredictorKind::Var {
            order,
            refit: RefitSchedule::Every(1),
            min_history: 2 * order + 1,
        }))
    }

    pub fn noisy_oracle(noise_std: f64, seed: u64) -> Result<Self> {
        if !(noise_std >= 0.0 && noise_std.is_finite()) {
            return Err(Error::invalid("noise_std must be nonnegative"));
        }
        let mut p = Self::with_kind(PredictorKind::NoisyOracle { noise_std });
        p.rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(p)
    }

    pub fn persistence() -> Self {
        Self::with_kind(PredictorKind::Persistence)
    }

    /// Raises the warm-up length of a VAR predictor (never below `2k + 1`).
    pub fn with_min_history(mut self, n: usize) -> Self {
        if let PredictorKind::Var {
            order,
            ref mut min_history,
            ..
        } = self.kind
        {
            *min_history = n.max(2 * order + 1);
        }
        self
    }

    pub fn with_refit(mut self, schedule: RefitSchedule) -> Result<Self> {
        if schedule == RefitSchedule::Every(0) {
            return Err(Error::invalid("refit_every must be positive"));
        }
        if let PredictorKind::Var { ref mut refit, .. } = self.kind {
            *refit = schedule;
        }
        Ok(self)
    }

    pub fn with_coordinates(mut self, coords: Vec<usize>) -> Self {
        self.coordinates = Some(coords);
        self
    }

    pub fn kind(&self) -> &PredictorKind {
        &self.kind
    }

    pub fn fitted(&self) -> Option<&VarModel> {
        self.fitted.as_ref()
    }

    pub fn is_ready(&self, history_len: usize) -> bool {
        history_len >= self.min_history()
    }

    fn select(&self, p: &DVector<f64>) -> Result<DVector<f64>> {
        match &self.coordinates {
            None => Ok(p.clone()),
            Some(idx) => idx
                .iter()
                .map(|&i| {
                    p.get(i).copied().ok_or(Error::DimensionMismatch {
                        expected: i + 1,
                        found: p.len(),
                    })
                })
                .collect::<Result<Vec<_>>>()
                .map(DVector::from_vec),
        }
    }

    fn scatter(&self, base: &DVector<f64>, sub: DVector<f64>) -> DVector<f64> {
        match &self.coordinates {
            None => sub,
            Some(idx) => {
                let mut out = base.clone();
                for (k, &i) in idx.iter().enumerate() {
                    out[i] = sub[k];
                }
                out
            }
        }
    }

    /// `θ̂_{t+1}`; errors with [`Error::NotReady`] during warm-up.
    pub fn predict(&mut self, ctx: &ForecastContext<'_>) -> Result<ParamPoint> {
        let history = ctx.history;
        let have = history.len();
        if !self.is_ready(have) {
            return Err(Error::NotReady {
                needed: self.min_history(),
                have,
            });
        }
        match self.kind.clone() {
            PredictorKind::Persistence => Ok(history[have - 1].clone()),
            PredictorKind::NoisyOracle { noise_std } => {
                let truth = ctx
                    .next_truth
                    .ok_or_else(|| Error::invalid("noisy oracle needs the true next parameter"))?;
                let clean = self.select(truth)?;
                let noisy = clean.map(|v| {
                    let z: f64 = StandardNormal.sample(&mut self.rng);
                    v + noise_std * z
                });
                Ok(self.scatter(truth, noisy))
            }
            PredictorKind::Var { order, refit, .. } => {
                let due = match (self.last_fit, refit) {
                    (None, _) => true,
                    (Some(_), RefitSchedule::Frozen) => false,
                    (Some(last), RefitSchedule::Every(n)) => have >= last + n,
                };
                let sub: Vec<DVector<f64>> = history
                    .iter()
                    .map(|p| self.select(p))
                    .collect::<Result<_>>()?;
                if due {
                    self.fitted = Some(fit_var_yule_walker(&sub, order)?);
                    self.last_fit = Some(have);
                }
                let model = self.fitted.as_ref().expect("fitted above");
                let next = model.predict_next(&sub)?;
                Ok(self.scatter(&history[have - 1], next))
            }
        }
    }
}

impl Forecaster for Predictor {
    fn forecast(&mut self, ctx: &ForecastContext<'_>) -> Result<Option<ParamPoint>> {
        let blind_oracle =
            matches!(self.kind, PredictorKind::NoisyOracle { .. }) && ctx.next_truth.is_none();
        if !self.is_ready(ctx.history.len()) || blind_oracle {
            return Ok(None);
        }
        self.predict(ctx).map(Some)
    }

    fn min_history(&self) -> usize {
        match self.kind {
            PredictorKind::Var { min_history, .. } => min_history,
            PredictorKind::NoisyOracle { .. } | PredictorKind::Persistence => 1,
        }
    }

    fn label(&self) -> String {
        match self.kind {
            PredictorKind::Var { order, .. } => format!("VAR({order})"),
            PredictorKind::NoisyOracle { noise_std } => format!("oracle(σ={noise_std})"),
            PredictorKind::Persistence => "persistence".into(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dvector;

    fn scalars(v: &[f64]) -> Vec<DVector<f64>> {
        v.iter().map(|&x| dvector![x]).collect()
    }

    #[test]
    fn persistence_repeats_last() {
        let mut p = Predictor::persistence();
        let h = vec![dvector![1.0, 1.0, 1.0], dvector![3.0, 4.0, 5.0]];
        let got = p
            .predict(&ForecastContext {
                history: &h,
                next_truth: None,
            })
            .unwrap();
        assert_eq!(got, dvector![3.0, 4.0, 5.0]);
    }

    #[test]
    fn zero_noise_oracle_is_exact() {
        let mut p = Predictor::noisy_oracle(0.0, 7).unwrap();
        let h = vec![dvector![0.0, 0.0]];
        let truth = dvector![2.5, -1.0];
        let got = p
            .forecast(&ForecastContext {
                history: &h,
                next_truth: Some(&truth),
            })
            .unwrap()
            .unwrap();
        assert_eq!(got, truth);
    }

    #[test]
    fn var1_linear_recursion() {
        let model = VarModel {
            mean: dvector![0.0],
            coefficients: vec![DMatrix::from_element(1, 1, 0.5)],
        };
        assert_eq!(
            model.predict_next(&scalars(&[7.0, 2.0])).unwrap(),
            dvector![1.0]
        );
    }

    #[test]
    fn scalar_yule_walker_from_autocovariances() {
        // √2·[1, 1, 1, −1, −1, −1] has mean 0, γ0 = 2 and γ1 = 1, so φ = 1/2.
        let r = 2f64.sqrt();
        let y = scalars(&[r, r, r, -r, -r, -r]);
        let m = fit_var_yule_walker(&y, 1).unwrap();
        assert!((m.coefficients[0][(0, 0)] - 0.5).abs() < 1e-8);
        assert!(m.mean[0].abs() < 1e-15);
    }

    #[test]
    fn insufficient_history_is_not_ready() {
        let y = scalars(&[1.0, 2.0, 3.0, 4.0]);
        assert!(matches!(
            fit_var_yule_walker(&y, 2),
            Err(Error::NotReady { needed: 5, have: 4 })
        ));
        let mut p = Predictor::var(2).unwrap();
        let ctx = ForecastContext {
            history: &y,
            next_truth: None,
        };
        assert!(p.forecast(&ctx).unwrap().is_none());
        assert!(matches!(
            p.predict(&ctx),
            Err(Error::NotReady { needed: 5, .. })
        ));
    }

    #[test]
    fn constant_window_survives_via_ridge() {
        let y = scalars(&[3.0; 12]);
        let m = fit_var_yule_walker(&y, 3).unwrap();
        assert!(m.coefficients.iter().all(|c| c[(0, 0)].abs() < 1e-12));
        assert_eq!(m.predict_next(&y).unwrap(), dvector![3.0]);
    }

    #[test]
    fn regularity_starts_at_second_step() {
        let truth = scalars(&[0.0, 1.0]);
        let pred = scalars(&[0.0, 0.0]);
        assert_eq!(prediction_regularity(&truth, &pred).unwrap(), 1.0);
        assert_eq!(prediction_regularity(&truth, &truth).unwrap(), 0.0);
        assert!(prediction_regularity(&truth, &pred[..1]).is_err());
    }

    #[test]
    fn coordinate_subset_keeps_other_coordinates_persistent() {
        // Alternating first coordinate, drifting second; only the first is modeled.
        let h: Vec<DVector<f64>> = (0..20)
            .map(|t| dvector![if t % 2 == 0 { 1.0 } else { -1.0 }, t as f64])
            .collect();
        let mut p = Predictor::var(1).unwrap().with_coordinates(vec![0]);
        let got = p
            .forecast(&ForecastContext {
                history: &h,
                next_truth: None,
            })
            .unwrap()
            .unwrap();
        assert_eq!(got[1], 19.0);
        assert!((got[0] - 1.0).abs() < 0.2, "{got}");
    }

    #[test]
    fn frozen_schedule_fits_once() {
        let mut h: Vec<DVector<f64>> = (0..10).map(|t| dvector![(t as f64 * 0.7).sin()]).collect();
        let mut p = Predictor::var(1)
            .unwrap()
            .with_refit(RefitSchedule::Frozen)
            .unwrap();
        p.forecast(&ForecastContext {
            history: &h,
            next_truth: None,
        })
        .unwrap();
        let first = p.fitted().unwrap().clone();
        h.push(dvector![5.0]);
        p.forecast(&ForecastContext {
            history: &h,
            next_truth: None,
        })
        .unwrap();
        assert_eq!(p.fitted().unwrap(), &first);
        assert!(Predictor::var(1)
            .unwrap()
            .with_refit(RefitSchedule::Every(0))
            .is_err());
    }
}

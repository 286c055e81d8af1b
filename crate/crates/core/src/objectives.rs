//! Parametric objective families `f(x, θ)`, convex (in fact strongly convex
//! quadratic) in the decision `x` for every parameter `θ`.

use nalgebra::{DMatrix, DVector};

use crate::domains::ConstraintSet;
use crate::error::{check_dim, Error, Result};

/// Largest tolerated entrywise asymmetry of a Markowitz covariance block.
pub const SYMMETRY_TOL: f64 = 1e-9;

/// Anything that evaluates `f(x, θ)` and its x-gradient.
///
/// All families in this crate are quadratic in `x`, so the Hessian depends on
/// `θ` only. The minimizer oracle and the contraction tests lean on that.
pub trait Objective: Sync {
    fn decision_dim(&self) -> usize;
    fn param_dim(&self) -> usize;
    fn value(&self, x: &DVector<f64>, theta: &DVector<f64>) -> Result<f64>;
    fn gradient_x(&self, x: &DVector<f64>, theta: &DVector<f64>) -> Result<DVector<f64>>;
    fn hessian_x(&self, theta: &DVector<f64>) -> Result<DMatrix<f64>>;
}

/// Regularity constants of a family over a declared `X × Θ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveConstants {
    /// Lipschitz constant of `f` in `x`.
    pub g: f64,
    /// Smoothness constant.
    pub l: f64,
    /// Strong-convexity constant.
    pub lambda: f64,
    /// Lipschitz constant of the x-gradient in `θ`.
    pub c_theta: f64,
    /// Range `sup f − inf f` over `X × Θ`.
    pub d: f64,
}

impl ObjectiveConstants {
    pub fn new(g: f64, l: f64, lambda: f64, c_theta: f64, d: f64) -> Result<Self> {
        let c = ObjectiveConstants {
            g,
            l,
            lambda,
            c_theta,
            d,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("G", self.g),
            ("L", self.l),
            ("lambda", self.lambda),
            ("C_theta", self.c_theta),
            ("D", self.d),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!(
                    "constant {name} must be positive and finite, got {v}"
                )));
            }
        }
        if self.lambda > self.l {
            return Err(Error::invalid(format!(
                "strong convexity {} exceeds smoothness {}",
                self.lambda, self.l
            )));
        }
        Ok(())
    }
}

/// Per-step contraction factor of projected gradient descent,
/// `sqrt(1 - 2λη / (1 + ηλ))`, valid for `0 < η <= 1/L`.
pub fn contraction_factor(constants: &ObjectiveConstants, eta: f64) -> Result<f64> {
    check_step_size(constants.l, eta)?;
    let le = constants.lambda * eta;
    Ok((1.0 - 2.0 * le / (1.0 + le)).max(0.0).sqrt())
}

pub(crate) fn check_step_size(l: f64, eta: f64) -> Result<()> {
    if !(eta > 0.0 && eta.is_finite()) {
        return Err(Error::invalid(format!(
            "step size must be positive, got {eta}"
        )));
    }
    let max = 1.0 / l;
    // 1/200 and 1/L computed from 2*100 differ in the last ulp at most.
    if eta > max * (1.0 + 1e-12) {
        return Err(Error::StepSizeTooLarge { eta, max });
    }
    Ok(())
}

/// A diagonal quadratic `(x − center)ᵀ diag(weights) (x − center)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagQuadratic {
    pub center: DVector<f64>,
    pub weights: DVector<f64>,
}

impl DiagQuadratic {
    pub fn new(center: DVector<f64>, weights: DVector<f64>) -> Result<Self> {
        check_dim(center.len(), weights.len())?;
        if weights.iter().any(|&w| !(w > 0.0 && w.is_finite())) {
            return Err(Error::invalid("basis weights must be positive"));
        }
        Ok(DiagQuadratic { center, weights })
    }

    fn value(&self, x: &DVector<f64>) -> f64 {
        x.iter()
            .zip(self.center.iter())
            .zip(self.weights.iter())
            .map(|((xi, ci), wi)| wi * (xi - ci).powi(2))
            .sum()
    }

    fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        (x - &self.center).component_mul(&self.weights) * 2.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ObjectiveFamily {
    /// `Σ wᵢ (xᵢ − θᵢ)² + θ_n` with `θ = [targets…, offset]`.
    QuadraticTracking { weights: DVector<f64> },
    /// `Σ θⁱ gᵢ(x)` over diagonal quadratic basis functions, `θ ∈ Δ^m`.
    FunctionalTimeSeries { basis: Vec<DiagQuadratic> },
    /// `xᵀΣx − λ xᵀμ` with `θ = [μ, vec(Σ) column-major, λ]`.
    Markowitz { assets: usize, min_eigenvalue: f64 },
}

impl ObjectiveFamily {
    pub fn quadratic_tracking(weights: DVector<f64>) -> Result<Self> {
        if weights.is_empty() || weights.iter().any(|&w| !(w > 0.0 && w.is_finite())) {
            return Err(Error::invalid("tracking weights must be positive"));
        }
        Ok(ObjectiveFamily::QuadraticTracking { weights })
    }

    pub fn functional_time_series(basis: Vec<DiagQuadratic>) -> Result<Self> {
        let first = basis.first().ok_or_else(|| {
            Error::invalid("functional time series needs at least one basis function")
        })?;
        let n = first.center.len();
        for b in &basis {
            check_dim(n, b.center.len())?;
        }
        Ok(ObjectiveFamily::FunctionalTimeSeries { basis })
    }

    pub fn markowitz(assets: usize, min_eigenvalue: f64) -> Result<Self> {
        if assets == 0 {
            return Err(Error::invalid("Markowitz needs at least one asset"));
        }
        if !(min_eigenvalue > 0.0) {
            return Err(Error::invalid(
                "Markowitz eigenvalue floor must be positive",
            ));
        }
        Ok(ObjectiveFamily::Markowitz {
            assets,
            min_eigenvalue,
        })
    }

    fn check_args(&self, x: &DVector<f64>, theta: &DVector<f64>) -> Result<()> {
        check_dim(self.decision_dim(), x.len())?;
        check_dim(self.param_dim(), theta.len())?;
        if x.iter().chain(theta.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("objective argument".into()));
        }
        Ok(())
    }
}

/// Packs and unpacks the Markowitz parameter vector.
pub mod markowitz {
    use super::*;

    pub fn param_dim(assets: usize) -> usize {
        assets + assets * assets + 1
    }

    pub fn pack(mu: &DVector<f64>, sigma: &DMatrix<f64>, risk: f64) -> DVector<f64> {
        let n = mu.len();
        let mut theta = DVector::zeros(param_dim(n));
        theta.rows_mut(0, n).copy_from(mu);
        // DMatrix storage is column-major already.
        theta.rows_mut(n, n * n).copy_from_slice(sigma.as_slice());
        theta[n + n * n] = risk;
        theta
    }

    /// Returns `(μ, Σ, λ)`; rejects covariance blocks that are not symmetric.
    pub fn unpack(
        assets: usize,
        theta: &DVector<f64>,
    ) -> Result<(DVector<f64>, DMatrix<f64>, f64)> {
        check_dim(param_dim(assets), theta.len())?;
        let n = assets;
        let mu = theta.rows(0, n).into_owned();
        let sigma = DMatrix::from_column_slice(n, n, theta.rows(n, n * n).as_slice());
        let asymmetry = (&sigma - sigma.transpose()).amax();
        if asymmetry > SYMMETRY_TOL {
            return Err(Error::AsymmetricCovariance { asymmetry });
        }
        Ok((mu, sigma, theta[n + n * n]))
    }
}

impl Objective for ObjectiveFamily {
    fn decision_dim(&self) -> usize {
        match self {
            ObjectiveFamily::QuadraticTracking { weights } => weights.len(),
            ObjectiveFamily::FunctionalTimeSeries { basis } => basis[0].center.len(),
            ObjectiveFamily::Markowitz { assets, .. } => *assets,
        }
    }

    fn param_dim(&self) -> usize {
        match self {
            ObjectiveFamily::QuadraticTracking { weights } => weights.len() + 1,
            ObjectiveFamily::FunctionalTimeSeries { basis } => basis.len(),
            ObjectiveFamily::Markowitz { assets, .. } => markowitz::param_dim(*assets),
        }
    }

    fn value(&self, x: &DVector<f64>, theta: &DVector<f64>) -> Result<f64> {
        self.check_args(x, theta)?;
        Ok(match self {
            ObjectiveFamily::QuadraticTracking { weights } => {
                let n = weights.len();
                let sq: f64 = (0..n).map(|i| weights[i] * (x[i] - theta[i]).powi(2)).sum();
                sq + theta[n]
            }
            ObjectiveFamily::FunctionalTimeSeries { basis } => basis
                .iter()
                .zip(theta.iter())
                .map(|(g, w)| w * g.value(x))
                .sum(),
            ObjectiveFamily::Markowitz { assets, .. } => {
                let (mu, sigma, risk) = markowitz::unpack(*assets, theta)?;
                (x.transpose() * &sigma * x)[0] - risk * x.dot(&mu)
            }
        })
    }

    fn gradient_x(&self, x: &DVector<f64>, theta: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_args(x, theta)?;
        Ok(match self {
            ObjectiveFamily::QuadraticTracking { weights } => {
                let n = weights.len();
                DVector::from_fn(n, |i, _| 2.0 * weights[i] * (x[i] - theta[i]))
            }
            ObjectiveFamily::FunctionalTimeSeries { basis } => basis
                .iter()
                .zip(theta.iter())
                .fold(DVector::zeros(x.len()), |acc, (g, w)| {
                    acc + g.gradient(x) * *w
                }),
            ObjectiveFamily::Markowitz { assets, .. } => {
                let (mu, sigma, risk) = markowitz::unpack(*assets, theta)?;
                &sigma * x * 2.0 - mu * risk
            }
        })
    }

    fn hessian_x(&self, theta: &DVector<f64>) -> Result<DMatrix<f64>> {
        check_dim(self.param_dim(), theta.len())?;
        Ok(match self {
            ObjectiveFamily::QuadraticTracking { weights } => {
                DMatrix::from_diagonal(&(weights * 2.0))
            }
            ObjectiveFamily::FunctionalTimeSeries { basis } => {
                let diag = basis
                    .iter()
                    .zip(theta.iter())
                    .fold(DVector::zeros(basis[0].center.len()), |acc, (g, w)| {
                        acc + &g.weights * (2.0 * w)
                    });
                DMatrix::from_diagonal(&diag)
            }
            ObjectiveFamily::Markowitz { assets, .. } => {
                let (_, sigma, _) = markowitz::unpack(*assets, theta)?;
                sigma * 2.0
            }
        })
    }
}

/// Axis-aligned bounding box for the parameter space `Θ`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamBox {
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
}

impl ParamBox {
    pub fn new(lower: DVector<f64>, upper: DVector<f64>) -> Result<Self> {
        check_dim(lower.len(), upper.len())?;
        for (i, (lo, hi)) in lower.iter().zip(upper.iter()).enumerate() {
            if !lo.is_finite() || !hi.is_finite() {
                return Err(Error::invalid(format!(
                    "parameter box is unbounded in coordinate {i}"
                )));
            }
            if lo > hi {
                return Err(Error::invalid(format!(
                    "parameter box has lower > upper in coordinate {i}"
                )));
            }
        }
        Ok(ParamBox { lower, upper })
    }

    /// Symmetric box `[center − half, center + half]`.
    pub fn around(center: &DVector<f64>, half_width: &DVector<f64>) -> Result<Self> {
        Self::new(center - half_width, center + half_width)
    }

    pub fn contains(&self, theta: &DVector<f64>) -> bool {
        theta.len() == self.lower.len()
            && theta
                .iter()
                .zip(self.lower.iter().zip(self.upper.iter()))
                .all(|(t, (lo, hi))| *lo <= *t && *t <= *hi)
    }

    fn abs_max(&self, i: usize) -> f64 {
        self.lower[i].abs().max(self.upper[i].abs())
    }
}

/// Largest |x − a| for x in [x_lo, x_hi] and a in [a_lo, a_hi].
fn max_gap((x_lo, x_hi): (f64, f64), (a_lo, a_hi): (f64, f64)) -> f64 {
    [x_hi - a_lo, a_hi - x_lo, x_lo - a_lo, x_hi - a_hi]
        .into_iter()
        .map(f64::abs)
        .fold(0.0, f64::max)
}

/// Valid (possibly conservative) regularity constants of `family` over `set × theta_box`.
pub fn derive_constants(
    family: &ObjectiveFamily,
    set: &ConstraintSet,
    theta_box: &ParamBox,
) -> Result<ObjectiveConstants> {
    check_dim(family.decision_dim(), set.dim())?;
    check_dim(family.param_dim(), theta_box.lower.len())?;
    let xb = set.coordinate_bounds();
    let (g, l, lambda, c_theta, d) = match family {
        ObjectiveFamily::QuadraticTracking { weights } => {
            let n = weights.len();
            let gaps: Vec<f64> = (0..n)
                .map(|i| max_gap(xb[i], (theta_box.lower[i], theta_box.upper[i])))
                .collect();
            let g = (0..n)
                .map(|i| (2.0 * weights[i] * gaps[i]).powi(2))
                .sum::<f64>()
                .sqrt();
            let w_max = weights.max();
            let w_min = weights.min();
            let d = (0..n).map(|i| weights[i] * gaps[i].powi(2)).sum::<f64>()
                + (theta_box.upper[n] - theta_box.lower[n]);
            (g, 2.0 * w_max, 2.0 * w_min, 2.0 * w_max, d)
        }
        ObjectiveFamily::FunctionalTimeSeries { basis } => {
            // Θ is the simplex, so f is a convex combination of the basis.
            let mut sups = Vec::with_capacity(basis.len());
            let mut grad_sups = Vec::with_capacity(basis.len());
            for q in basis {
                let mut val = 0.0;
                let mut grad = 0.0;
                for (j, &(lo, hi)) in xb.iter().enumerate() {
                    let dev = (lo - q.center[j]).abs().max((hi - q.center[j]).abs());
                    val += q.weights[j] * dev * dev;
                    grad += (2.0 * q.weights[j] * dev).powi(2);
                }
                sups.push(val);
                grad_sups.push(grad.sqrt());
            }
            let a_max = basis
                .iter()
                .map(|q| q.weights.max())
                .fold(f64::MIN, f64::max);
            let a_min = basis
                .iter()
                .map(|q| q.weights.min())
                .fold(f64::MAX, f64::min);
            let g = grad_sups.iter().copied().fold(0.0, f64::max);
            let c_theta = grad_sups.iter().map(|s| s * s).sum::<f64>().sqrt();
            let d = sups.iter().copied().fold(0.0, f64::max);
            (g, 2.0 * a_max, 2.0 * a_min, c_theta, d)
        }
        ObjectiveFamily::Markowitz {
            assets,
            min_eigenvalue,
        } => {
            let n = *assets;
            let r = set.max_norm();
            let mu_max = (0..n)
                .map(|i| theta_box.abs_max(i).powi(2))
                .sum::<f64>()
                .sqrt();
            let sigma_fro = (n..n + n * n)
                .map(|i| theta_box.abs_max(i).powi(2))
                .sum::<f64>()
                .sqrt();
            let risk_max = theta_box.abs_max(n + n * n);
            let g = 2.0 * sigma_fro * r + risk_max * mu_max;
            let c_theta = ((2.0 * r).powi(2) + risk_max.powi(2) + mu_max.powi(2)).sqrt();
            let d = sigma_fro * r * r + 2.0 * risk_max * mu_max * r;
            (g, 2.0 * sigma_fro, 2.0 * min_eigenvalue, c_theta, d)
        }
    };
    ObjectiveConstants::new(g, l, lambda, c_theta, d)
}

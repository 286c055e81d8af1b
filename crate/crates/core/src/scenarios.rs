//! Parameter processes and market data for the experiment drivers.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

/// Regime-switching tracking targets: `dwell.0` steps in state A, then
/// `dwell.1` steps in state B, repeating, plus Gaussian noise.
#[derive(Debug, Clone, PartialEq)]
pub struct SwitchingProcessSpec {
    pub state_a: DVector<f64>,
    pub state_b: DVector<f64>,
    pub dwell: (usize, usize),
    pub noise_cov: DMatrix<f64>,
    pub seed: u64,
    noise_factor: DMatrix<f64>,
}

impl SwitchingProcessSpec {
    pub fn new(
        state_a: DVector<f64>,
        state_b: DVector<f64>,
        dwell: (usize, usize),
        noise_cov: DMatrix<f64>,
        seed: u64,
    ) -> Result<Self> {
        let n = state_a.len();
        if state_b.len() != n || noise_cov.nrows() != n || noise_cov.ncols() != n {
            return Err(Error::invalid(
                "switching states and noise covariance must share one dimension",
            ));
        }
        if dwell.0 == 0 || dwell.1 == 0 {
            return Err(Error::invalid("dwell lengths must be at least 1"));
        }
        let noise_factor = psd_square_root(&noise_cov)?;
        Ok(SwitchingProcessSpec {
            state_a,
            state_b,
            dwell,
            noise_cov,
            seed,
            noise_factor,
        })
    }

    /// States `[−100, 0, 30]` and `[100, 20, −50]`, noise covariance `noise_var·I₃`.
    pub fn standard(dwell: (usize, usize), noise_var: f64, seed: u64) -> Result<Self> {
        if !(noise_var >= 0.0) {
            return Err(Error::invalid("noise variance must be nonnegative"));
        }
        Self::new(
            DVector::from_vec(vec![-100.0, 0.0, 30.0]),
            DVector::from_vec(vec![100.0, 20.0, -50.0]),
            dwell,
            DMatrix::identity(3, 3) * noise_var,
            seed,
        )
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        SwitchingProcessSpec {
            seed,
            ..self.clone()
        }
    }

    /// Noise-free state at step `t` (1-based).
    pub fn base_state(&self, t: usize) -> &DVector<f64> {
        let pos = (t.max(1) - 1) % (self.dwell.0 + self.dwell.1);
        if pos < self.dwell.0 {
            &self.state_a
        } else {
            &self.state_b
        }
    }
}

fn psd_square_root(cov: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let asym = (cov - cov.transpose()).amax();
    if asym > 1e-9 * (1.0 + cov.amax()) || cov.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid(
            "noise covariance must be finite and symmetric",
        ));
    }
    let eig = cov.clone().symmetric_eigen();
    let floor = -1e-9 * (1.0 + cov.amax());
    if eig.eigenvalues.iter().any(|&l| l < floor) {
        return Err(Error::invalid(
            "noise covariance must be positive semidefinite",
        ));
    }
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&roots))
}

/// `θ_t` of the switching process. Each step draws its noise from its own
/// stream of the seeded generator, so values do not depend on call order.
pub fn gen_switching(spec: &SwitchingProcessSpec, t: usize) -> Result<DVector<f64>> {
    if t == 0 {
        return Err(Error::invalid("switching process steps are 1-based"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(t as u64);
    let n = spec.state_a.len();
    let z = DVector::from_fn(n, |_, _| StandardNormal.sample(&mut rng));
    Ok(spec.base_state(t) + &spec.noise_factor * z)
}

/// `θ_1..θ_T`.
pub fn switching_path(spec: &SwitchingProcessSpec, horizon: usize) -> Result<Vec<DVector<f64>>> {
    (1..=horizon).map(|t| gen_switching(spec, t)).collect()
}

/// Client risk tolerance: noisy constant during warm-up, then a sticky
/// level that is redrawn uniformly from `jump_range` with probability
/// `1 − stay_probability` each day.
#[derive(Debug, Clone, PartialEq)]
pub struct RiskProcessSpec {
    pub warmup_days: usize,
    pub base_level: f64,
    pub stay_probability: f64,
    pub jump_range: (u32, u32),
    pub noise_variance: f64,
    pub cadence_days: usize,
}

impl Default for RiskProcessSpec {
    fn default() -> Self {
        RiskProcessSpec {
            warmup_days: 240,
            base_level: 4.0,
            stay_probability: 0.9,
            jump_range: (1, 20),
            noise_variance: 0.64,
            cadence_days: 30,
        }
    }
}

impl RiskProcessSpec {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.stay_probability) {
            return Err(Error::invalid("stay probability must lie in [0, 1]"));
        }
        if self.jump_range.0 > self.jump_range.1 {
            return Err(Error::invalid("jump range must be ordered"));
        }
        if !(self.noise_variance >= 0.0 && self.noise_variance.is_finite()) {
            return Err(Error::invalid("risk noise variance must be nonnegative"));
        }
        if self.cadence_days == 0 {
            return Err(Error::invalid(
                "observation cadence must be at least one day",
            ));
        }
        Ok(())
    }
}

/// Daily realization of the risk process.
#[derive(Debug, Clone, PartialEq)]
pub struct DailyRisk {
    /// `λ_d ≥ 0`.
    pub risk: Vec<f64>,
    /// Latent level `b_d` (the base level during warm-up).
    pub level: Vec<f64>,
    /// Whether the level was redrawn on entering day `d`.
    pub redrawn: Vec<bool>,
}

pub fn gen_risk_daily(spec: &RiskProcessSpec, days: usize, seed: u64) -> Result<DailyRisk> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sd = spec.noise_variance.sqrt();
    let mut out = DailyRisk {
        risk: Vec::with_capacity(days),
        level: Vec::with_capacity(days),
        redrawn: Vec::with_capacity(days),
    };
    let mut level = spec.base_level;
    for d in 0..days {
        let mut redrawn = false;
        if d > spec.warmup_days && !rng.gen_bool(spec.stay_probability) {
            level = f64::from(rng.gen_range(spec.jump_range.0..=spec.jump_range.1));
            redrawn = true;
        }
        let eps: f64 = StandardNormal.sample(&mut rng);
        out.risk.push((level + sd * eps).max(0.0));
        out.level.push(level);
        out.redrawn.push(redrawn);
    }
    Ok(out)
}

/// Risk observed every `cadence_days`: the value on days `c−1, 2c−1, …` below `horizon_days`.
pub fn gen_risk_path(spec: &RiskProcessSpec, horizon_days: usize, seed: u64) -> Result<Vec<f64>> {
    if horizon_days < spec.warmup_days {
        return Err(Error::invalid(format!(
            "risk horizon of {horizon_days} days is shorter than the {}-day warm-up",
            spec.warmup_days
        )));
    }
    let daily = gen_risk_daily(spec, horizon_days, seed)?;
    Ok(daily
        .risk
        .iter()
        .skip(spec.cadence_days - 1)
        .step_by(spec.cadence_days)
        .copied()
        .collect())
}

/// Daily risk-free price relative for 1% per 360 days, compounded daily.
pub fn risk_free_relative() -> f64 {
    1.01f64.powf(1.0 / 360.0)
}

/// Daily price relatives, one row per day and one column per asset.
#[derive(Debug, Clone, PartialEq)]
pub struct MarketData {
    pub relatives: DMatrix<f64>,
    pub names: Vec<String>,
}

impl MarketData {
    pub fn new(relatives: DMatrix<f64>, names: Vec<String>) -> Result<Self> {
        if names.len() != relatives.ncols() {
            return Err(Error::Data(format!(
                "{} asset names for {} columns",
                names.len(),
                relatives.ncols()
            )));
        }
        for r in 0..relatives.nrows() {
            for c in 0..relatives.ncols() {
                let v = relatives[(r, c)];
                if !(v > 0.0 && v.is_finite()) {
                    return Err(Error::Data(format!(
                        "price relative at row {}, column {} must be positive, got {v}",
                        r + 1,
                        c + 1
                    )));
                }
            }
        }
        Ok(MarketData { relatives, names })
    }

    pub fn days(&self) -> usize {
        self.relatives.nrows()
    }

    pub fn assets(&self) -> usize {
        self.relatives.ncols()
    }

    /// Appends a constant-return risk-free asset.
    pub fn with_risk_free(mut self) -> Self {
        let days = self.days();
        let col = DVector::from_element(days, risk_free_relative());
        let n = self.assets();
        self.relatives = self.relatives.insert_column(n, 0.0);
        let last = n;
        self.relatives.set_column(last, &col);
        self.names.push("risk_free".into());
        self
    }
}

/// A rectangular numeric CSV. A first row that does not parse as numbers is
/// taken as column names.
#[derive(Debug, Clone, PartialEq)]
pub struct NumericTable {
    pub names: Option<Vec<String>>,
    pub rows: Vec<Vec<f64>>,
    /// 1-based file line of the first data row.
    pub first_line: usize,
}

pub fn read_numeric_csv(path: &Path) -> Result<NumericTable> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_path(path)
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    let mut names: Option<Vec<String>> = None;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
        let line = i + 1;
        if i == 0 && record.iter().any(|f| f.parse::<f64>().is_err()) {
            names = Some(record.iter().map(str::to_string).collect());
            continue;
        }
        let width = names.as_ref().map(Vec::len).or(rows.first().map(Vec::len));
        if let Some(w) = width {
            if record.len() != w {
                return Err(Error::Data(format!(
                    "row {line} has {} cells, expected {w}",
                    record.len()
                )));
            }
        }
        let mut row = Vec::with_capacity(record.len());
        for (j, cell) in record.iter().enumerate() {
            if cell.is_empty() {
                return Err(Error::Data(format!(
                    "missing value at row {line}, column {}",
                    j + 1
                )));
            }
            let v: f64 = cell.parse().map_err(|_| {
                Error::Data(format!(
                    "cannot parse {cell:?} at row {line}, column {}",
                    j + 1
                ))
            })?;
            row.push(v);
        }
        rows.push(row);
    }
    if rows.is_empty() || rows[0].is_empty() {
        return Err(Error::Data(format!("{}: no data rows", path.display())));
    }
    let first_line = if names.is_some() { 2 } else { 1 };
    Ok(NumericTable {
        names,
        rows,
        first_line,
    })
}

/// Reads a rectangular CSV of daily price relatives (one column per asset,
/// optional header row of asset names). Errors name the offending cell.
pub fn load_market_csv(path: &Path) -> Result<MarketData> {
    let table = read_numeric_csv(path)?;
    let cols = table.rows[0].len();
    for (i, row) in table.rows.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Data(format!(
                    "price relative at row {}, column {} must be positive, got {v}",
                    i + table.first_line,
                    j + 1
                )));
            }
        }
    }
    let names = table
        .names
        .unwrap_or_else(|| (1..=cols).map(|j| format!("asset{j}")).collect());
    let rows = &table.rows;
    let relatives = DMatrix::from_fn(rows.len(), cols, |r, c| rows[r][c]);
    MarketData::new(relatives, names)
}

/// Seeded stand-in for a historical price file: each asset follows a
/// geometric random walk with its own drift and volatility plus a shared
/// market factor.
pub fn synthetic_market(assets: usize, days: usize, seed: u64) -> Result<MarketData> {
    if assets == 0 || days == 0 {
        return Err(Error::invalid(
            "synthetic market needs at least one asset and one day",
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let drift: Vec<f64> = (0..assets)
        .map(|_| rng.gen_range(-0.0002..0.0008))
        .collect();
    let vol: Vec<f64> = (0..assets).map(|_| rng.gen_range(0.008..0.025)).collect();
    let beta: Vec<f64> = (0..assets).map(|_| rng.gen_range(0.3..1.2)).collect();
    let mut relatives = DMatrix::zeros(days, assets);
    for d in 0..days {
        let z: f64 = StandardNormal.sample(&mut rng);
        let market = 0.008 * z;
        for i in 0..assets {
            let z: f64 = StandardNormal.sample(&mut rng);
            relatives[(d, i)] = (drift[i] + beta[i] * market + vol[i] * z).exp();
        }
    }
    let names = (1..=assets).map(|j| format!("synthetic{j}")).collect();
    MarketData::new(relatives, names)
}

/// Ridge added to every covariance estimate.
pub const COVARIANCE_RIDGE: f64 = 1e-6;

/// Sample mean and covariance of daily returns over rows
/// `end_day − lookback .. end_day`, with `1e-6·I` added to the covariance.
pub fn estimate_moments(
    data: &MarketData,
    end_day: usize,
    lookback: usize,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    if lookback < 2 {
        return Err(Error::invalid("moment lookback must be at least two days"));
    }
    if end_day > data.days() || lookback > end_day {
        return Err(Error::Data(format!(
            "window of {lookback} days ending at day {end_day} exceeds the {} available days",
            data.days()
        )));
    }
    let returns = data
        .relatives
        .rows(end_day - lookback, lookback)
        .map(|r| r - 1.0);
    let n = data.assets();
    let mean = DVector::from_fn(n, |i, _| returns.column(i).mean());
    let centered = DMatrix::from_fn(lookback, n, |r, c| returns[(r, c)] - mean[c]);
    let mut cov = centered.transpose() * &centered / (lookback as f64 - 1.0);
    // Exact symmetry keeps downstream symmetry checks tight.
    cov = (&cov + cov.transpose()) * 0.5;
    for i in 0..n {
        cov[(i, i)] += COVARIANCE_RIDGE;
    }
    Ok((mean, cov))
}

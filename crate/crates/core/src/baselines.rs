//! The statistical candidate-model pool.
//!
//! Every model is fitted on the look-back window alone and produces a
//! deterministic forecast. Pool order is fixed and doubles as the tie-break
//! order when selecting the best model for a window.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelId {
    NaiveLast,
    Snaive,
    HistoricAverage,
    Drift,
    Ses,
    HoltWintersAdditive,
    ArLs,
    ThetaLite,
}

impl ModelId {
    pub const ALL: [ModelId; 8] = [
        ModelId::NaiveLast,
        ModelId::Snaive,
        ModelId::HistoricAverage,
        ModelId::Drift,
        ModelId::Ses,
        ModelId::HoltWintersAdditive,
        ModelId::ArLs,
        ModelId::ThetaLite,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelId::NaiveLast => "naive_last",
            ModelId::Snaive => "snaive",
            ModelId::HistoricAverage => "historic_average",
            ModelId::Drift => "drift",
            ModelId::Ses => "ses",
            ModelId::HoltWintersAdditive => "holt_winters_additive",
            ModelId::ArLs => "ar_ls",
            ModelId::ThetaLite => "theta_lite",
        }
    }

    /// Hyperparameters each model understands.
    fn accepts(self, name: &str) -> bool {
        match self {
            ModelId::Snaive => name == "season",
            ModelId::Ses | ModelId::ThetaLite => name == "alpha",
            ModelId::HoltWintersAdditive => matches!(name, "alpha" | "beta" | "gamma" | "season"),
            ModelId::ArLs => name == "p",
            _ => false,
        }
    }
}

impl fmt::Display for ModelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelId::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::invalid("model_id", format!("unknown model '{s}'")))
    }
}

pub const SES_ALPHA: f64 = 0.3;
pub const HW_ALPHA: f64 = 0.3;
pub const HW_BETA: f64 = 0.05;
pub const HW_GAMMA: f64 = 0.1;
pub const AR_DEFAULT_ORDER: usize = 4;

/// A pool member: model plus hyperparameter overrides.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastModelSpec {
    pub model_id: ModelId,
    #[serde(default)]
    pub hyperparameters: BTreeMap<String, f64>,
}

impl ForecastModelSpec {
    pub fn new(model_id: ModelId) -> Self {
        Self {
            model_id,
            hyperparameters: BTreeMap::new(),
        }
    }

    pub fn with(mut self, name: &str, value: f64) -> Self {
        self.hyperparameters.insert(name.to_string(), value);
        self
    }

    /// Checks names and ranges of the overrides.
    pub fn validate(&self) -> Result<()> {
        for (name, &value) in &self.hyperparameters {
            if !self.model_id.accepts(name) {
                return Err(Error::invalid(
                    name,
                    format!("not a hyperparameter of {}", self.model_id),
                ));
            }
            let ok = match name.as_str() {
                "alpha" | "beta" | "gamma" => value > 0.0 && value <= 1.0,
                "season" | "p" => value >= 1.0 && value.fract() == 0.0,
                _ => true,
            };
            if !ok {
                return Err(Error::invalid(
                    name,
                    format!("value {value} out of range for {}", self.model_id),
                ));
            }
        }
        Ok(())
    }

    fn param(&self, name: &str, default: f64) -> f64 {
        self.hyperparameters.get(name).copied().unwrap_or(default)
    }

    /// Compact label such as `ses(alpha=0.5)`.
    pub fn label(&self) -> String {
        if self.hyperparameters.is_empty() {
            return self.model_id.name().to_string();
        }
        let params: Vec<String> = self
            .hyperparameters
            .iter()
            .map(|(k, v)| format!("{k}={v}"))
            .collect();
        format!("{}({})", self.model_id, params.join(","))
    }

    /// Forecasts `horizon` values after `lookback`, fitting on the look-back
    /// alone. `period` is the default seasonal period.
    pub fn fit_predict(&self, lookback: &[f64], horizon: usize, period: usize) -> Result<Vec<f64>> {
        self.validate()?;
        let n = lookback.len();
        let unavailable = |reason: String| Error::ModelUnavailable {
            model: self.label(),
            reason,
        };
        if n == 0 {
            return Err(unavailable("empty look-back".into()));
        }
        let forecast = match self.model_id {
            ModelId::NaiveLast => vec![lookback[n - 1]; horizon],
            ModelId::Snaive => {
                let season = self.param("season", period as f64) as usize;
                if season == 0 || n < season {
                    return Err(unavailable(format!("needs {season} samples, got {n}")));
                }
                seasonal_naive(lookback, horizon, season)
            }
            ModelId::HistoricAverage => {
                vec![lookback.iter().sum::<f64>() / n as f64; horizon]
            }
            ModelId::Drift => {
                if n < 2 {
                    return Err(unavailable(format!("needs 2 samples, got {n}")));
                }
                drift(lookback, horizon)
            }
            ModelId::Ses => vec![ses_level(lookback, self.param("alpha", SES_ALPHA)); horizon],
            ModelId::HoltWintersAdditive => {
                let season = self.param("season", period as f64) as usize;
                if season < 2 || n < season {
                    return Err(unavailable(format!(
                        "needs a season of >= 2 and {season} samples, got {n}"
                    )));
                }
                holt_winters_additive(
                    lookback,
                    horizon,
                    season,
                    self.param("alpha", HW_ALPHA),
                    self.param("beta", HW_BETA),
                    self.param("gamma", HW_GAMMA),
                )
            }
            ModelId::ArLs => {
                let order = self.param("p", AR_DEFAULT_ORDER as f64) as usize;
                if order > n / 4 {
                    return Err(unavailable(format!(
                        "order {order} exceeds a quarter of the {n}-sample look-back"
                    )));
                }
                fit_ar_ls(lookback, order)?.forecast(lookback, horizon)
            }
            ModelId::ThetaLite => {
                if n < 2 {
                    return Err(unavailable(format!("needs 2 samples, got {n}")));
                }
                let level = ses_level(lookback, self.param("alpha", SES_ALPHA));
                drift(lookback, horizon)
                    .into_iter()
                    .map(|d| 0.5 * (d + level))
                    .collect()
            }
        };
        if forecast.iter().any(|v| !v.is_finite()) {
            return Err(unavailable("forecast diverged to non-finite values".into()));
        }
        Ok(forecast)
    }
}

/// Every pool member with default hyperparameters, in pool order.
pub fn default_pool() -> Vec<ForecastModelSpec> {
    ModelId::ALL.into_iter().map(ForecastModelSpec::new).collect()
}

fn seasonal_naive(x: &[f64], horizon: usize, season: usize) -> Vec<f64> {
    let last_season = &x[x.len() - season..];
    (0..horizon).map(|h| last_season[h % season]).collect()
}

fn drift(x: &[f64], horizon: usize) -> Vec<f64> {
    let n = x.len();
    let slope = (x[n - 1] - x[0]) / (n - 1) as f64;
    (1..=horizon).map(|h| x[n - 1] + h as f64 * slope).collect()
}

fn ses_level(x: &[f64], alpha: f64) -> f64 {
    x[1..]
        .iter()
        .fold(x[0], |level, &v| alpha * v + (1.0 - alpha) * level)
}

fn holt_winters_additive(
    x: &[f64],
    horizon: usize,
    season: usize,
    alpha: f64,
    beta: f64,
    gamma: f64,
) -> Vec<f64> {
    let first: f64 = x[..season].iter().sum::<f64>() / season as f64;
    let mut level = first;
    let mut trend = if x.len() >= 2 * season {
        let second: f64 = x[season..2 * season].iter().sum::<f64>() / season as f64;
        (second - first) / season as f64
    } else {
        0.0
    };
    let mut seasonal: Vec<f64> = x[..season].iter().map(|v| v - first).collect();
    for (t, &obs) in x.iter().enumerate().skip(season) {
        let s_prev = seasonal[t % season];
        let prev_level = level;
        level = alpha * (obs - s_prev) + (1.0 - alpha) * (level + trend);
        trend = beta * (level - prev_level) + (1.0 - beta) * trend;
        seasonal[t % season] = gamma * (obs - level) + (1.0 - gamma) * s_prev;
    }
    let n = x.len();
    (1..=horizon)
        .map(|h| level + h as f64 * trend + seasonal[(n + h - 1) % season])
        .collect()
}

/// Least-squares autoregression with intercept.
#[derive(Debug, Clone, PartialEq)]
pub struct ArFit {
    pub intercept: f64,
    /// `coefficients[j]` multiplies the value `j + 1` steps back.
    pub coefficients: Vec<f64>,
}

impl ArFit {
    pub fn forecast(&self, lookback: &[f64], horizon: usize) -> Vec<f64> {
        let p = self.coefficients.len();
        let mut history: Vec<f64> = lookback[lookback.len() - p..].to_vec();
        let mut out = Vec::with_capacity(horizon);
        for _ in 0..horizon {
            let n = history.len();
            let next = self.intercept
                + self
                    .coefficients
                    .iter()
                    .enumerate()
                    .map(|(j, c)| c * history[n - 1 - j])
                    .sum::<f64>();
            history.push(next);
            out.push(next);
        }
        out
    }
}

/// Fits `x_t = c + Σ φ_j x_{t-j}` by ordinary least squares (SVD, minimum
/// norm on rank-deficient designs).
pub fn fit_ar_ls(x: &[f64], order: usize) -> Result<ArFit> {
    if order == 0 {
        return Err(Error::invalid("p", "autoregressive order must be >= 1"));
    }
    if x.len() < 2 * order + 2 {
        return Err(Error::ModelUnavailable {
            model: format!("ar_ls(p={order})"),
            reason: format!("needs {} samples, got {}", 2 * order + 2, x.len()),
        });
    }
    // OLS with intercept, solved on column-centered data so that a
    // rank-deficient design (e.g. a constant window) yields zero coefficients.
    let rows = x.len() - order;
    let lagged = |r: usize, j: usize| x[order + r - j];
    let target_mean = x[order..].iter().sum::<f64>() / rows as f64;
    let lag_means: Vec<f64> = (1..=order)
        .map(|j| (0..rows).map(|r| lagged(r, j)).sum::<f64>() / rows as f64)
        .collect();
    let design = DMatrix::from_fn(rows, order, |r, c| lagged(r, c + 1) - lag_means[c]);
    let target = DVector::from_iterator(rows, x[order..].iter().map(|v| v - target_mean));
    let scale = x.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
    let solution = design
        .svd(true, true)
        .solve(&target, 1e-12 * scale)
        .map_err(|e| Error::ModelUnavailable {
            model: format!("ar_ls(p={order})"),
            reason: e.to_string(),
        })?;
    let coefficients: Vec<f64> = solution.iter().copied().collect();
    let intercept = target_mean
        - coefficients
            .iter()
            .zip(&lag_means)
            .map(|(c, m)| c * m)
            .sum::<f64>();
    Ok(ArFit {
        intercept,
        coefficients,
    })
}

/// Per-model errors on one window and the selected best model.
#[derive(Debug, Clone, PartialEq)]
pub struct PoolEvaluation {
    /// One entry per pool member, `None` where the model was unavailable.
    pub mse: Vec<Option<f64>>,
    pub best: usize,
}

impl PoolEvaluation {
    pub fn best_mse(&self) -> f64 {
        self.mse[self.best].expect("best model is available")
    }
}

/// Scores every pool member against `truth`; the best is the lowest MSE with
/// ties going to the earlier pool position.
pub fn evaluate_pool(
    lookback: &[f64],
    truth: &[f64],
    pool: &[ForecastModelSpec],
    period: usize,
) -> Result<PoolEvaluation> {
    if pool.is_empty() {
        return Err(Error::invalid("pool", "candidate pool is empty"));
    }
    let mse: Vec<Option<f64>> = pool
        .iter()
        .map(|spec| {
            spec.fit_predict(lookback, truth.len(), period)
                .ok()
                .map(|forecast| squared_error_mean(&forecast, truth))
        })
        .collect();
    let best = mse
        .iter()
        .enumerate()
        .filter_map(|(i, e)| e.map(|e| (i, e)))
        .fold(None, |best: Option<(usize, f64)>, (i, e)| match best {
            Some((_, b)) if b <= e => best,
            _ => Some((i, e)),
        })
        .map(|(i, _)| i)
        .ok_or_else(|| Error::ModelUnavailable {
            model: "pool".into(),
            reason: format!("no candidate handles a {}-sample look-back", lookback.len()),
        })?;
    Ok(PoolEvaluation { mse, best })
}

fn squared_error_mean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len() as f64
}

/// A forecaster outside the built-in pool, e.g. a deep model served by an
/// external process. Evaluated through the same harness as pool members.
pub trait ExternalForecaster: Send + Sync {
    fn name(&self) -> String;
    fn forecast(&self, lookback: &[f64], horizon: usize, period: usize) -> Result<Vec<f64>>;
}

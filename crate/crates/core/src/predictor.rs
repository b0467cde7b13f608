//! Availability forecasting.
//!
//! The main model is a small ARIMA(2,1,2) fitted by two-stage least squares
//! (a long autoregression supplies residual estimates, then the differenced
//! series is regressed on its own lags and lagged residuals). Forecasts are
//! cleaned up by rule-based pre/post-processing so that spikes and level
//! shifts in the history do not produce wild trajectories.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trace::IntervalSeries;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ForecastMethod {
    Arima,
    MovingAvg,
    ExpSmooth,
    LastValue,
}

impl ForecastMethod {
    pub const ALL: [ForecastMethod; 4] = [
        ForecastMethod::Arima,
        ForecastMethod::MovingAvg,
        ForecastMethod::ExpSmooth,
        ForecastMethod::LastValue,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ForecastMethod::Arima => "arima",
            ForecastMethod::MovingAvg => "moving_avg",
            ForecastMethod::ExpSmooth => "exp_smooth",
            ForecastMethod::LastValue => "last_value",
        }
    }
}

impl fmt::Display for ForecastMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ForecastMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == s || m.name().replace('_', "-") == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown forecast method {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastConfig {
    pub history_len: usize,
    pub lookahead_len: usize,
    pub capacity: u32,
    pub floor: u32,
    /// Largest change between consecutive forecast values.
    pub max_step: u32,
    /// A first prediction further than this from the last observation is
    /// discarded in favour of holding the last value.
    pub reset_threshold: u32,
    /// Smallest jump treated as a level shift during preprocessing.
    pub hop_threshold: u32,
    pub ma_window: usize,
    pub smoothing: f64,
}

impl ForecastConfig {
    pub fn new(capacity: u32) -> Self {
        Self {
            history_len: 12,
            lookahead_len: 12,
            capacity,
            floor: 0,
            max_step: 8,
            reset_threshold: 10,
            hop_threshold: 4,
            ma_window: 4,
            smoothing: 0.5,
        }
    }

    pub fn with_lookahead(mut self, lookahead_len: usize) -> Self {
        self.lookahead_len = lookahead_len;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if self.history_len < 3 {
            return bad("history_len must be >= 3");
        }
        if self.lookahead_len < 1 {
            return bad("lookahead_len must be >= 1");
        }
        if self.floor > self.capacity {
            return bad("floor must not exceed capacity");
        }
        if self.max_step < 1 {
            return bad("max_step must be >= 1");
        }
        if self.ma_window < 1 {
            return bad("ma_window must be >= 1");
        }
        if !(self.smoothing > 0.0 && self.smoothing <= 1.0) {
            return bad("smoothing must be in (0, 1]");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Forecast {
    pub values: Vec<u32>,
}

/// Forecasts the next `lookahead_len` counts from the last `history_len`
/// entries of `history`.
pub fn predict(history: &[u32], cfg: &ForecastConfig, method: ForecastMethod) -> Result<Forecast> {
    cfg.validate()?;
    if history.len() < cfg.history_len {
        return Err(Error::InvalidArgument(format!(
            "history has {} values, need {}",
            history.len(),
            cfg.history_len
        )));
    }
    if let Some(v) = history.iter().find(|&&v| v > cfg.capacity) {
        return Err(Error::InvalidArgument(format!(
            "history value {v} exceeds capacity {}",
            cfg.capacity
        )));
    }
    let window = &history[history.len() - cfg.history_len..];
    let last = *window.last().unwrap();
    let horizon = cfg.lookahead_len;
    let raw = match method {
        ForecastMethod::LastValue => vec![last as f64; horizon],
        ForecastMethod::MovingAvg => {
            let w = cfg.ma_window.min(window.len());
            let tail = &window[window.len() - w..];
            let mean = tail.iter().map(|&v| v as f64).sum::<f64>() / w as f64;
            vec![mean; horizon]
        }
        ForecastMethod::ExpSmooth => {
            let a = cfg.smoothing;
            let level = window[1..]
                .iter()
                .fold(window[0] as f64, |s, &x| a * x as f64 + (1.0 - a) * s);
            vec![level; horizon]
        }
        ForecastMethod::Arima => {
            let cleaned = preprocess_with(window, cfg.hop_threshold);
            match arima_forecast(&cleaned, horizon) {
                Some(raw) if backtest_ok(window, cfg.hop_threshold) => return Ok(postprocess(&raw, cfg, last)),
                _ => vec![last as f64; horizon],
            }
        }
    };
    Ok(Forecast {
        values: bound(&raw, cfg, last),
    })
}

/// Flattens short spikes and, when the history contains a level shift, keeps
/// only the part after the last one (left-padded to the input length).
pub fn preprocess(history: &[u32]) -> Vec<u32> {
    preprocess_with(history, ForecastConfig::new(u32::MAX).hop_threshold)
}

pub fn preprocess_with(history: &[u32], hop_threshold: u32) -> Vec<u32> {
    let mut h = history.to_vec();
    let n = h.len();
    // spikes of length 1 or 2 bracketed by equal values
    let mut i = 1;
    while i + 1 < n {
        let base = h[i - 1];
        let mut flattened = false;
        for len in 1..=2 {
            if i + len < n && h[i + len] == base && h[i..i + len].iter().all(|&v| v != base) {
                h[i..i + len].iter_mut().for_each(|v| *v = base);
                i += len;
                flattened = true;
                break;
            }
        }
        if !flattened {
            i += 1;
        }
    }
    // level shifts: an isolated jump between flat stretches
    let diff = |t: usize| h[t] as i64 - h[t - 1] as i64;
    let hop = (1..n).rev().find(|&t| {
        diff(t).unsigned_abs() >= hop_threshold as u64
            && (t < 2 || diff(t - 1) == 0)
            && (t + 1 >= n || diff(t + 1) == 0)
    });
    match hop {
        Some(t) => {
            let mut out = vec![h[t]; t];
            out.extend_from_slice(&h[t..]);
            out
        }
        None => h,
    }
}

/// Replays one-step forecasts over the last few positions of the window.
/// The fit is trusted only if it did no worse than repeating the last value.
fn backtest_ok(window: &[u32], hop_threshold: u32) -> bool {
    const ORIGINS: usize = 4;
    let n = window.len();
    let (mut fit_err, mut flat_err) = (0.0, 0.0);
    for o in n.saturating_sub(ORIGINS).max(5)..n {
        let actual = window[o] as f64;
        let prior = window[o - 1] as f64;
        let guess = arima_forecast(&preprocess_with(&window[..o], hop_threshold), 1).map_or(prior, |f| f[0]);
        fit_err += (guess - actual).abs();
        flat_err += (prior - actual).abs();
    }
    fit_err <= flat_err
}

/// Real-valued ARIMA(2,1,2) point forecasts without a drift term, or `None`
/// when the fit fails. The coefficients are shrunk toward zero, so
/// forecast increments decay and a trend flattens out over the horizon.
fn arima_forecast(history: &[u32], horizon: usize) -> Option<Vec<f64>> {
    const RIDGE: f64 = 1.0;
    const STABILITY: f64 = 0.7;

    let y: Vec<f64> = history.iter().map(|&v| v as f64).collect();
    let z: Vec<f64> = y.windows(2).map(|w| w[1] - w[0]).collect();
    if z.len() < 3 {
        return None;
    }
    if z.iter().all(|&d| d == z[0]) {
        // pure drift (zero for a flat history)
        let last = *y.last().unwrap();
        return Some((1..=horizon).map(|j| last + z[0] * j as f64).collect());
    }
    let n = z.len();

    // stage 1: long AR for residual estimates
    let long = 3.min(n - 2);
    let mut resid = vec![0.0; n];
    if let Some(beta) = least_squares(
        (long..n).map(|t| lag_row(&z, t, long, &[], 0)),
        (long..n).map(|t| z[t]),
        long,
        RIDGE,
    ) {
        for t in long..n {
            let row = lag_row(&z, t, long, &[], 0);
            resid[t] = z[t] - row.iter().zip(&beta).map(|(a, b)| a * b).sum::<f64>();
        }
    }

    // stage 2: regress on two lags and two lagged residuals
    let start = 2;
    let beta = least_squares(
        (start..n).map(|t| lag_row(&z, t, 2, &resid, 2)),
        (start..n).map(|t| z[t]),
        4,
        RIDGE,
    )?;
    let mut ar = [beta[0], beta[1]];
    let mut ma = [beta[2], beta[3]];
    for coef in [&mut ar, &mut ma] {
        let mag = coef[0].abs() + coef[1].abs();
        if mag > STABILITY {
            coef.iter_mut().for_each(|c| *c *= STABILITY / mag);
        }
    }

    let mut zs = z.clone();
    let mut es = resid.clone();
    let mut level = *y.last().unwrap();
    let mut out = Vec::with_capacity(horizon);
    for _ in 0..horizon {
        let t = zs.len();
        let next = ar[0] * zs[t - 1] + ar[1] * zs[t - 2] + ma[0] * es[t - 1] + ma[1] * es[t - 2];
        zs.push(next);
        es.push(0.0);
        level += next;
        out.push(level);
    }
    Some(out)
}

fn lag_row(z: &[f64], t: usize, ar_lags: usize, resid: &[f64], ma_lags: usize) -> Vec<f64> {
    let mut row = Vec::with_capacity(ar_lags + ma_lags);
    row.extend((1..=ar_lags).map(|l| z[t - l]));
    row.extend((1..=ma_lags).map(|l| resid[t - l]));
    row
}

/// Ridge-regularized least squares via the normal equations.
fn least_squares(
    rows: impl Iterator<Item = Vec<f64>>,
    targets: impl Iterator<Item = f64>,
    width: usize,
    ridge: f64,
) -> Option<Vec<f64>> {
    let rows: Vec<f64> = rows.flatten().collect();
    let y: Vec<f64> = targets.collect();
    if y.is_empty() {
        return None;
    }
    let x = DMatrix::from_row_slice(y.len(), width, &rows);
    let y = DVector::from_vec(y);
    let mut gram = x.transpose() * &x;
    for i in 0..width {
        gram[(i, i)] += ridge;
    }
    let rhs = x.transpose() * y;
    let sol = gram.cholesky()?.solve(&rhs);
    sol.iter().all(|v| v.is_finite()).then(|| sol.iter().copied().collect())
}

/// Turns a raw trajectory into a bounded integer forecast: resets to the last
/// observation when the first step is implausible, damps steep slopes, then
/// rounds, limits each step and clamps to `[floor, capacity]`.
pub fn postprocess(raw: &[f64], cfg: &ForecastConfig, last_observed: u32) -> Forecast {
    if raw
        .first()
        .is_some_and(|&r0| (r0 - last_observed as f64).abs() > cfg.reset_threshold as f64)
    {
        return Forecast {
            values: bound(&vec![last_observed as f64; raw.len()], cfg, last_observed),
        };
    }
    let steep = cfg.max_step as f64 / 2.0;
    let mut prev_raw = last_observed as f64;
    let mut prev = last_observed as f64;
    let damped: Vec<f64> = raw
        .iter()
        .map(|&r| {
            let inc = r - prev_raw;
            prev_raw = r;
            let inc = if inc.abs() > steep {
                inc.signum() * (steep + 0.5 * (inc.abs() - steep))
            } else {
                inc
            };
            prev += inc;
            prev
        })
        .collect();
    Forecast {
        values: bound(&damped, cfg, last_observed),
    }
}

fn bound(raw: &[f64], cfg: &ForecastConfig, last_observed: u32) -> Vec<u32> {
    let step = cfg.max_step as i64;
    let mut prev = last_observed as i64;
    raw.iter()
        .map(|&r| {
            let v = if r.is_finite() { r.round() as i64 } else { prev };
            prev = v.clamp(prev - step, prev + step);
            prev.clamp(cfg.floor as i64, cfg.capacity as i64) as u32
        })
        .collect()
}

/// `Σ|pred - actual| / Σ actual`; `+∞` when all actuals are zero but some
/// prediction is not.
pub fn eval_l1(predicted: &[u32], actual: &[u32]) -> Result<f64> {
    if predicted.len() != actual.len() {
        return Err(Error::InvalidArgument(format!(
            "prediction has {} values, actual has {}",
            predicted.len(),
            actual.len()
        )));
    }
    let err: u64 = predicted
        .iter()
        .zip(actual)
        .map(|(&p, &a)| (p as i64 - a as i64).unsigned_abs())
        .sum();
    let total: u64 = actual.iter().map(|&a| a as u64).sum();
    Ok(if total == 0 {
        if err == 0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        err as f64 / total as f64
    })
}

/// One sliding-window forecast and its score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowScore {
    /// Index of the first forecast interval.
    pub start: usize,
    pub predicted: Vec<u32>,
    pub actual: Vec<u32>,
    pub l1: f64,
}

/// Forecasts every full window of `series` (history then lookahead) and
/// scores it.
pub fn evaluate_windows(
    series: &IntervalSeries,
    cfg: &ForecastConfig,
    method: ForecastMethod,
) -> Result<Vec<WindowScore>> {
    let c = &series.counts;
    let (h, i) = (cfg.history_len, cfg.lookahead_len);
    if c.len() < h + i {
        return Ok(Vec::new());
    }
    (h..=c.len() - i)
        .map(|start| {
            let predicted = predict(&c[start - h..start], cfg, method)?.values;
            let actual = c[start..start + i].to_vec();
            let l1 = eval_l1(&predicted, &actual)?;
            Ok(WindowScore {
                start,
                predicted,
                actual,
                l1,
            })
        })
        .collect()
}

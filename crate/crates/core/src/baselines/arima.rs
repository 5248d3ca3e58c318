use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Iterations of the conditional-sum-of-squares refit when `q > 0`.
const CSS_ITERATIONS: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ArimaOrder {
    pub p: usize,
    pub d: usize,
    pub q: usize,
}

impl Default for ArimaOrder {
    fn default() -> Self {
        Self { p: 3, d: 1, q: 0 }
    }
}

/// `d`-th order differences (length `n - d`).
pub fn difference(x: &[f64], d: usize) -> Vec<f64> {
    let mut cur = x.to_vec();
    for _ in 0..d {
        cur = cur.windows(2).map(|w| w[1] - w[0]).collect();
    }
    cur
}

/// First value of each differencing level `0..d`, as needed by [`integrate`].
pub fn difference_heads(x: &[f64], d: usize) -> Vec<f64> {
    let mut heads = Vec::with_capacity(d);
    let mut cur = x.to_vec();
    for _ in 0..d {
        heads.push(cur[0]);
        cur = cur.windows(2).map(|w| w[1] - w[0]).collect();
    }
    heads
}

/// Inverse of [`difference`] given the level heads.
pub fn integrate(diffs: &[f64], heads: &[f64]) -> Vec<f64> {
    let mut cur = diffs.to_vec();
    for &h in heads.iter().rev() {
        let mut next = Vec::with_capacity(cur.len() + 1);
        next.push(h);
        for v in &cur {
            let last = *next.last().expect("non-empty");
            next.push(last + v);
        }
        cur = next;
    }
    cur
}

fn seasonal_difference(x: &[f64], lag: usize) -> Vec<f64> {
    (lag..x.len()).map(|i| x[i] - x[i - lag]).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArimaModel {
    pub order: ArimaOrder,
    /// Lag of the seasonal difference applied before the ARIMA part.
    pub seasonal_lag: Option<usize>,
    pub constant: f64,
    pub ar: Vec<f64>,
    pub ma: Vec<f64>,
    pub warnings: Vec<String>,
}

/// Least squares `y ~ X`; tiny ridge when `X` is singular.
fn least_squares(x: &DMatrix<f64>, y: &DVector<f64>) -> DVector<f64> {
    let svd = x.clone().svd(true, true);
    let cutoff = svd.singular_values.max() * x.nrows().max(x.ncols()) as f64 * f64::EPSILON;
    match svd.solve(y, cutoff) {
        Ok(b) => b,
        Err(_) => DVector::zeros(x.ncols()),
    }
}

/// Residuals of the ARMA recursion over `w` (first `max(p, q)` set to 0).
fn arma_residuals(w: &[f64], constant: f64, ar: &[f64], ma: &[f64]) -> Vec<f64> {
    let start = ar.len().max(ma.len());
    let mut e = vec![0.0; w.len()];
    for t in start..w.len() {
        let mut pred = constant;
        for (i, a) in ar.iter().enumerate() {
            pred += a * w[t - 1 - i];
        }
        for (j, b) in ma.iter().enumerate() {
            pred += b * e[t - 1 - j];
        }
        e[t] = w[t] - pred;
    }
    e
}

fn fit_arma(w: &[f64], p: usize, q: usize) -> (f64, Vec<f64>, Vec<f64>) {
    let start = p.max(q);
    let rows = w.len() - start;
    let mut params = (0.0, vec![0.0; p], vec![0.0; q]);
    if q == 0 {
        let x = DMatrix::from_fn(rows, 1 + p, |r, c| if c == 0 { 1.0 } else { w[r + start - c] });
        let y = DVector::from_iterator(rows, w[start..].iter().copied());
        let beta = least_squares(&x, &y);
        return (beta[0], beta.as_slice()[1..].to_vec(), Vec::new());
    }
    // start from the innovations of a long autoregression
    let long = (p + q).max(10).min(w.len() / 4);
    let (c0, a0, _) = fit_arma(w, long, 0);
    let mut e = arma_residuals(w, c0, &a0, &[]);
    for _ in 0..CSS_ITERATIONS {
        let x = DMatrix::from_fn(rows, 1 + p + q, |r, c| {
            let t = r + start;
            match c {
                0 => 1.0,
                c if c <= p => w[t - c],
                c => e[t - (c - p)],
            }
        });
        let y = DVector::from_iterator(rows, w[start..].iter().copied());
        let beta = least_squares(&x, &y);
        let next = (beta[0], beta.as_slice()[1..=p].to_vec(), beta.as_slice()[1 + p..].to_vec());
        let converged =
            next.1.iter().chain(&next.2).zip(params.1.iter().chain(&params.2)).all(|(a, b)| (a - b).abs() < 1e-10);
        params = next;
        e = arma_residuals(w, params.0, &params.1, &params.2);
        if converged {
            break;
        }
    }
    params
}

/// Largest modulus among the roots of `z^p - a1 z^(p-1) - ... - ap`.
fn ar_spectral_radius(ar: &[f64]) -> f64 {
    let p = ar.len();
    if p == 0 {
        return 0.0;
    }
    let companion = DMatrix::from_fn(p, p, |r, c| {
        if r == 0 {
            ar[c]
        } else if r == c + 1 {
            1.0
        } else {
            0.0
        }
    });
    companion.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Fits ARIMA(p, d, q), optionally after a seasonal difference at `seasonal_lag`.
pub fn arima_fit(series: &[f64], order: ArimaOrder, seasonal_lag: Option<usize>) -> Result<ArimaModel> {
    let lag = seasonal_lag.unwrap_or(0);
    let needed = order.p.max(order.q) + order.d + lag + 10;
    if series.len() <= needed {
        return Err(Error::Empty(format!("ARIMA needs more than {needed} values, got {}", series.len())));
    }
    if series.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("ARIMA input".into()));
    }
    let y = if lag > 0 { seasonal_difference(series, lag) } else { series.to_vec() };
    let w = difference(&y, order.d);
    let (constant, ar, ma) = fit_arma(&w, order.p, order.q);
    let mut warnings = Vec::new();
    let radius = ar_spectral_radius(&ar);
    if radius >= 0.999 {
        let msg = format!("AR part is not stationary (root modulus {radius:.4})");
        log::warn!("{msg}");
        warnings.push(msg);
    }
    Ok(ArimaModel { order, seasonal_lag, constant, ar, ma, warnings })
}

impl ArimaModel {
    /// Forecast `u` steps past the end of `history`.
    pub fn forecast(&self, history: &[f64], u: usize) -> Result<f64> {
        Ok(*self.forecast_path(history, u)?.last().expect("u >= 1"))
    }

    /// Forecasts for steps `1..=u`.
    pub fn forecast_path(&self, history: &[f64], u: usize) -> Result<Vec<f64>> {
        if u == 0 {
            return Err(Error::Config("forecast horizon must be >= 1".into()));
        }
        let lag = self.seasonal_lag.unwrap_or(0);
        let d = self.order.d;
        let need = lag + d + self.order.p.max(self.order.q) + 1;
        if history.len() < need {
            return Err(Error::Empty(format!("forecast needs {need} history values, got {}", history.len())));
        }
        // without MA terms only a short tail matters
        let tail = if self.order.q == 0 { &history[history.len() - need..] } else { history };

        let mut x = tail.to_vec();
        let y = if lag > 0 { seasonal_difference(&x, lag) } else { x.clone() };
        // levels[k] is the k-th difference of y
        let mut levels = vec![y];
        for k in 0..d {
            let next = difference(&levels[k], 1);
            levels.push(next);
        }
        let mut w = levels[d].clone();
        let mut e = arma_residuals(&w, self.constant, &self.ar, &self.ma);
        let mut out = Vec::with_capacity(u);
        for _ in 0..u {
            let t = w.len();
            let mut next = self.constant;
            for (i, a) in self.ar.iter().enumerate() {
                next += a * w[t - 1 - i];
            }
            for (j, b) in self.ma.iter().enumerate() {
                if t > j {
                    next += b * e[t - 1 - j];
                }
            }
            w.push(next);
            e.push(0.0);
            // integrate back up to the level of y
            let mut v = next;
            for k in (0..d).rev() {
                v += *levels[k].last().expect("non-empty");
                levels[k].push(v);
            }
            let xv = if lag > 0 { v + x[x.len() - lag] } else { v };
            x.push(xv);
            out.push(xv);
        }
        Ok(out)
    }
}

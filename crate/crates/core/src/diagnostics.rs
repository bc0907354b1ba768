//! Autocorrelation, partial autocorrelation, unit-root testing, classical
//! decomposition, an AR(p) least-squares baseline and impulse responses.

use nalgebra::{DMatrix, DVector};

use crate::cells::{Activation, Architecture, CellParams, CellSpec, Dims, Stream};
use crate::error::{ensure, Error, Result};
use crate::forecasting::{ForecastMode, ForecastResult, WindowedDataset};
use crate::linalg::Matrix;

/// Half-width of the white-noise band for `n` observations.
pub fn confidence_band(n: usize) -> f64 {
    1.96 / (n as f64).sqrt()
}

fn demeaned(series: &[f64]) -> Vec<f64> {
    let mean = series.iter().sum::<f64>() / series.len() as f64;
    series.iter().map(|v| v - mean).collect()
}

/// Biased autocovariances `gamma_0..=gamma_h_max`.
pub fn autocovariance(series: &[f64], h_max: usize) -> Result<Vec<f64>> {
    let n = series.len();
    ensure!(
        n > h_max,
        InvalidArgument,
        "{n} observations cannot support {h_max} lags"
    );
    let z = demeaned(series);
    Ok((0..=h_max)
        .map(|j| (j..n).map(|t| z[t] * z[t - j]).sum::<f64>() / n as f64)
        .collect())
}

/// Sample autocorrelations `tau_0..=tau_h_max` (`tau_0 = 1`).
pub fn acf(series: &[f64], h_max: usize) -> Result<Vec<f64>> {
    let g = autocovariance(series, h_max)?;
    let scale = g[0].abs().max(1.0);
    if g[0] <= 1e-24 * scale || !g[0].is_finite() {
        return Err(Error::Degenerate("series has zero variance".into()));
    }
    Ok(g.iter().map(|v| v / g[0]).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct PacfResult {
    /// `values[k]` is the partial autocorrelation at lag `k + 1`.
    pub values: Vec<f64>,
    pub band: f64,
    pub n: usize,
}

impl PacfResult {
    pub fn lags(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.values.iter().enumerate().map(|(i, v)| (i + 1, *v))
    }

    pub fn at(&self, lag: usize) -> Option<f64> {
        lag.checked_sub(1).and_then(|i| self.values.get(i).copied())
    }

    pub fn is_significant(&self, lag: usize) -> bool {
        self.at(lag).is_some_and(|v| v.abs() > self.band)
    }

    pub fn significant_lags(&self) -> Vec<usize> {
        self.lags()
            .filter(|(_, v)| v.abs() > self.band)
            .map(|(l, _)| l)
            .collect()
    }

    /// Largest significant lag not above `cap` (at least 1).
    pub fn recommended_order(&self, cap: usize) -> usize {
        self.significant_lags()
            .into_iter()
            .filter(|l| *l <= cap)
            .max()
            .unwrap_or(1)
    }
}

/// Partial autocorrelations by the Durbin-Levinson recursion.
pub fn pacf(series: &[f64], h_max: usize) -> Result<PacfResult> {
    ensure!(h_max >= 1, InvalidArgument, "need at least one lag");
    ensure!(
        series.len() > h_max + 1,
        InvalidArgument,
        "{} observations cannot support {h_max} lags",
        series.len()
    );
    let r = acf(series, h_max)?;
    let mut phi = vec![0.0; h_max + 1];
    let mut prev = vec![0.0; h_max + 1];
    let mut values = Vec::with_capacity(h_max);
    let mut v = 1.0;
    for k in 1..=h_max {
        let num = r[k] - (1..k).map(|j| prev[j] * r[k - j]).sum::<f64>();
        let a = if v > 0.0 { num / v } else { 0.0 };
        phi[k] = a;
        for j in 1..k {
            phi[j] = prev[j] - a * prev[k - j];
        }
        v *= 1.0 - a * a;
        values.push(a.clamp(-1.0, 1.0));
        prev[..=k].copy_from_slice(&phi[..=k]);
    }
    Ok(PacfResult {
        values,
        band: confidence_band(series.len()),
        n: series.len(),
    })
}

/// Ordinary least squares via the Cholesky factor of the normal equations.
#[derive(Debug, Clone)]
pub struct Ols {
    pub coef: Vec<f64>,
    pub ssr: f64,
    pub n: usize,
    xtx_inv: DMatrix<f64>,
}

impl Ols {
    /// `rows[i]` are the regressors of observation `i`.
    pub fn fit(rows: &[Vec<f64>], y: &[f64]) -> Result<Ols> {
        let n = rows.len();
        ensure!(
            n == y.len(),
            Dimension,
            "{} rows but {} responses",
            n,
            y.len()
        );
        ensure!(n > 0, InvalidArgument, "empty regression");
        let k = rows[0].len();
        ensure!(n >= k, Singular, "{n} observations for {k} regressors");
        let x = DMatrix::from_fn(n, k, |i, j| rows[i][j]);
        let yv = DVector::from_column_slice(y);
        let xtx = x.transpose() * &x;
        let chol = xtx
            .clone()
            .cholesky()
            .ok_or_else(|| Error::Singular("design matrix is rank deficient".into()))?;
        let scale = xtx.diagonal().max().max(f64::MIN_POSITIVE);
        let pivot = chol.l_dirty().diagonal().min();
        if pivot * pivot < 1e-12 * scale {
            return Err(Error::Singular("design matrix is rank deficient".into()));
        }
        let coef = chol.solve(&(x.transpose() * &yv));
        let resid = &yv - &x * &coef;
        let xtx_inv = chol.inverse();
        if !coef.iter().all(|c| c.is_finite()) {
            return Err(Error::Singular(
                "regression produced non-finite coefficients".into(),
            ));
        }
        Ok(Ols {
            coef: coef.iter().copied().collect(),
            ssr: resid.dot(&resid),
            n,
            xtx_inv,
        })
    }

    /// Standard error of coefficient `j` with `SSR / (n - k)` variance.
    pub fn std_error(&self, j: usize) -> f64 {
        let dof = self.n.saturating_sub(self.coef.len()).max(1) as f64;
        (self.ssr / dof * self.xtx_inv[(j, j)]).sqrt()
    }
}

/// Partial autocorrelation at lag `h` as the last coefficient of a
/// regression of the demeaned series on its `h` lags, with values outside
/// the sample taken as zero.
pub fn pacf_regression(series: &[f64], h: usize) -> Result<f64> {
    let z = demeaned(series);
    let n = z.len() as isize;
    let at = |t: isize| {
        if (0..n).contains(&t) {
            z[t as usize]
        } else {
            0.0
        }
    };
    let mut rows = Vec::new();
    let mut y = Vec::new();
    for t in 0..n + h as isize {
        rows.push((1..=h as isize).map(|j| at(t - j)).collect());
        y.push(at(t));
    }
    let fit = Ols::fit(&rows, &y)?;
    Ok(fit.coef[h - 1])
}

/// Critical values of the constant-only Dickey-Fuller statistic.
pub const ADF_CRITICAL: [(f64, f64); 3] = [(0.01, -3.431), (0.05, -2.862), (0.10, -2.567)];

#[derive(Debug, Clone, PartialEq)]
pub struct AdfResult {
    pub statistic: f64,
    pub lags: usize,
    pub n_obs: usize,
    /// `(level, critical value, reject)` at 1%, 5% and 10%.
    pub decisions: Vec<(f64, f64, bool)>,
}

impl AdfResult {
    /// Unit-root null rejected at `level` (one of 0.01, 0.05, 0.10).
    pub fn rejects_at(&self, level: f64) -> bool {
        self.decisions
            .iter()
            .find(|(l, _, _)| (*l - level).abs() < 1e-12)
            .is_some_and(|(_, _, r)| *r)
    }

    pub fn is_stationary(&self) -> bool {
        self.rejects_at(0.05)
    }
}

fn adf_regression(dy: &[f64], y: &[f64], k: usize, first: usize) -> Result<Ols> {
    // dy[i] = y[i + 1] - y[i]; regress dy[i] on 1, y[i], dy[i-1..i-k].
    let mut rows = Vec::new();
    let mut resp = Vec::new();
    for i in first..dy.len() {
        let mut r = Vec::with_capacity(k + 2);
        r.push(1.0);
        r.push(y[i]);
        r.extend((1..=k).map(|j| dy[i - j]));
        rows.push(r);
        resp.push(dy[i]);
    }
    Ols::fit(&rows, &resp)
}

/// Augmented Dickey-Fuller test with a constant; lag order by AIC over
/// `0..=max_lag` on a common sample, then refitted on all usable rows.
pub fn adf_test(series: &[f64], max_lag: usize) -> Result<AdfResult> {
    ensure!(
        series.len() > max_lag + 10,
        InvalidArgument,
        "{} observations are too few for max_lag {max_lag}",
        series.len()
    );
    let dy: Vec<f64> = series.windows(2).map(|w| w[1] - w[0]).collect();
    let mut best = (f64::INFINITY, 0usize);
    for k in 0..=max_lag {
        let fit = adf_regression(&dy, series, k, max_lag)?;
        let n = fit.n as f64;
        let aic = n * (fit.ssr / n).max(f64::MIN_POSITIVE).ln() + 2.0 * (k + 2) as f64;
        if aic < best.0 {
            best = (aic, k);
        }
    }
    let k = best.1;
    let fit = adf_regression(&dy, series, k, k)?;
    let se = fit.std_error(1);
    ensure!(
        se > 0.0 && se.is_finite(),
        Singular,
        "zero residual variance in the unit-root regression"
    );
    let statistic = fit.coef[1] / se;
    Ok(AdfResult {
        statistic,
        lags: k,
        n_obs: fit.n,
        decisions: ADF_CRITICAL
            .iter()
            .map(|(l, c)| (*l, *c, statistic < *c))
            .collect(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Decomposition {
    pub trend: Vec<f64>,
    pub seasonal: Vec<f64>,
    pub residual: Vec<f64>,
    pub period: usize,
    /// Rows where the centred moving average is defined.
    pub defined: (usize, usize),
}

/// Classical additive decomposition with a centred moving-average trend.
pub fn decompose(series: &[f64], period: usize) -> Result<Decomposition> {
    ensure!(
        period >= 2,
        InvalidArgument,
        "period must be at least 2, got {period}"
    );
    let n = series.len();
    ensure!(
        n >= 2 * period,
        InvalidArgument,
        "{n} observations are too few for period {period}"
    );
    let half = period / 2;
    let weights: Vec<f64> = if period.is_multiple_of(2) {
        let mut w = vec![1.0 / period as f64; period + 1];
        w[0] /= 2.0;
        w[period] /= 2.0;
        w
    } else {
        vec![1.0 / period as f64; period]
    };
    let (lo, hi) = (half, n - half);
    let mut trend = vec![0.0; n];
    for t in lo..hi {
        trend[t] = weights
            .iter()
            .enumerate()
            .map(|(i, w)| w * series[t - half + i])
            .sum();
    }
    let mut sums = vec![0.0; period];
    let mut counts = vec![0usize; period];
    for t in lo..hi {
        sums[t % period] += series[t] - trend[t];
        counts[t % period] += 1;
    }
    let mut phase: Vec<f64> = sums
        .iter()
        .zip(&counts)
        .map(|(s, c)| s / *c as f64)
        .collect();
    let centre = phase.iter().sum::<f64>() / period as f64;
    phase.iter_mut().for_each(|v| *v -= centre);
    for t in 0..lo {
        trend[t] = trend[lo];
    }
    for t in hi..n {
        trend[t] = trend[hi - 1];
    }
    let seasonal: Vec<f64> = (0..n).map(|t| phase[t % period]).collect();
    let residual = (0..n).map(|t| series[t] - trend[t] - seasonal[t]).collect();
    Ok(Decomposition {
        trend,
        seasonal,
        residual,
        period,
        defined: (lo, hi),
    })
}

/// Linear autoregression `y_{t+m} = c + sum_i phi_i y_{t+1-i}`.
#[derive(Debug, Clone, PartialEq)]
pub struct ArModel {
    pub intercept: f64,
    /// `coefs[i]` multiplies lag `i + 1`.
    pub coefs: Vec<f64>,
    pub horizon: usize,
}

impl ArModel {
    /// One-step least-squares fit with intercept.
    pub fn fit(series: &[f64], p: usize) -> Result<ArModel> {
        Self::fit_horizon(series, p, 1)
    }

    /// Least-squares fit of the value `m` steps past the newest lag.
    pub fn fit_horizon(series: &[f64], p: usize, m: usize) -> Result<ArModel> {
        ensure!(m >= 1, InvalidArgument, "horizon must be at least 1");
        ensure!(
            series.len() > p + m,
            InvalidArgument,
            "{} observations are too few for order {p}",
            series.len()
        );
        if p == 0 {
            let mean = series.iter().sum::<f64>() / series.len() as f64;
            return Ok(ArModel {
                intercept: mean,
                coefs: Vec::new(),
                horizon: m,
            });
        }
        let mut rows = Vec::new();
        let mut y = Vec::new();
        for t in p - 1..series.len() - m {
            let mut r = vec![1.0];
            r.extend((0..p).map(|i| series[t - i]));
            rows.push(r);
            y.push(series[t + m]);
        }
        let fit = Ols::fit(&rows, &y)?;
        Ok(ArModel {
            intercept: fit.coef[0],
            coefs: fit.coef[1..].to_vec(),
            horizon: m,
        })
    }

    pub fn order(&self) -> usize {
        self.coefs.len()
    }

    /// Prediction from the most recent values (`history` ends at the origin).
    pub fn predict(&self, history: &[f64]) -> Result<f64> {
        ensure!(
            history.len() >= self.order(),
            InvalidArgument,
            "need {} past values, got {}",
            self.order(),
            history.len()
        );
        let n = history.len();
        Ok(self.intercept
            + self
                .coefs
                .iter()
                .enumerate()
                .map(|(i, c)| c * history[n - 1 - i])
                .sum::<f64>())
    }

    /// Iterated one-step forecasts for steps `1..=m`.
    pub fn forecast_rolling(&self, history: &[f64], m: usize) -> Result<Vec<f64>> {
        ensure!(
            self.horizon == 1,
            Mismatch,
            "rolling forecasts need a one-step model"
        );
        let mut h = history.to_vec();
        let mut out = Vec::with_capacity(m);
        for _ in 0..m {
            let y = self.predict(&h)?;
            out.push(y);
            h.push(y);
        }
        Ok(out)
    }
}

/// AR(p) baseline over the same test targets as the recurrent forecasts,
/// fitted once on the training rows of the target series.
pub fn ar_baseline(
    ds: &WindowedDataset,
    p: usize,
    mode: ForecastMode,
    m: usize,
) -> Result<ForecastResult> {
    let y = &ds.targets;
    let train = &y[..ds.row_split.0];
    let mut ts = Vec::new();
    let mut obs = Vec::new();
    let mut pred = Vec::new();
    let mut steps = Vec::new();
    match mode {
        ForecastMode::Direct => {
            let model = ArModel::fit_horizon(train, p, ds.m)?;
            for t in ds.test_block().origins() {
                if t + 1 < p {
                    continue;
                }
                ts.push(ds.timestamps[t + ds.m].clone());
                obs.push(y[t + ds.m]);
                pred.push(model.predict(&y[..=t])?);
                steps.push(ds.m);
            }
        }
        ForecastMode::Rolling => {
            let model = ArModel::fit(train, p)?;
            let first = ds.row_split.1.max(ds.p).max(p);
            let mut s = first;
            while s < y.len() {
                let e = (s + m).min(y.len());
                let f = model.forecast_rolling(&y[..s], e - s)?;
                for (k, r) in (s..e).enumerate() {
                    ts.push(ds.timestamps[r].clone());
                    obs.push(y[r]);
                    pred.push(f[k]);
                    steps.push(k + 1);
                }
                s = e;
            }
        }
    }
    ensure!(
        !obs.is_empty(),
        InvalidArgument,
        "test block holds no rows to forecast"
    );
    let errors = obs.iter().zip(&pred).map(|(o, p)| o - p).collect();
    Ok(ForecastResult {
        timestamps: ts,
        observed: obs,
        predicted: pred,
        errors,
        steps,
    })
}

/// Scalar cell with unit weights, zero biases and tanh activation.
pub fn impulse_params(arch: Architecture, alpha: Option<f64>) -> Result<CellParams> {
    let spec = CellSpec {
        activation: Activation::Tanh,
        ..CellSpec::new(arch, Dims::new(1, 1, 1))
    };
    let mut p = CellParams::zeros(spec);
    for s in arch.slots() {
        if s.is_weight_matrix() {
            p.set(s, Matrix::scalar(1.0))?;
        }
    }
    if arch.has_scalar_alpha() {
        p.set_alpha(alpha.ok_or_else(|| {
            Error::InvalidArgument(format!("{arch} needs a smoothing parameter"))
        })?)?;
    }
    Ok(p)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImpulseResponse {
    /// State feeding the readout at each time: `h~` for smoothed cells.
    pub state: Vec<f64>,
    pub h_hat: Vec<f64>,
    /// Smoothing weight in effect at each time, when the cell has one.
    pub alpha: Vec<Option<f64>>,
}

/// Final window state at every time `t` for the input sequence, with
/// windows of length `p` threaded through [`Stream`]. Times before `p - 1`
/// see leading zeros.
pub fn impulse_response(params: &CellParams, inputs: &[f64], p: usize) -> Result<ImpulseResponse> {
    ensure!(
        params.dims().d == 1 && params.dims().h == 1,
        InvalidArgument,
        "impulse responses use the scalar cell"
    );
    let mut padded = vec![0.0; p - 1];
    padded.extend_from_slice(inputs);
    let mut stream = Stream::new(params, p)?;
    let fixed = params.alpha();
    let mut out = ImpulseResponse {
        state: Vec::new(),
        h_hat: Vec::new(),
        alpha: Vec::new(),
    };
    for t in p - 1..padded.len() {
        let w: Vec<Matrix> = padded[t + 1 - p..=t]
            .iter()
            .map(|v| Matrix::scalar(*v))
            .collect();
        let o = stream.advance(&w)?;
        let last = o.last();
        out.state.push(last.h_tilde.data()[0]);
        out.h_hat.push(last.h_hat.data()[0]);
        out.alpha
            .push(fixed.or_else(|| last.alpha.as_ref().map(|a| a.data()[0])));
    }
    Ok(out)
}

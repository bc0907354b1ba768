//! Supervised windows, train-only normalisation, direct and rolling
//! forecasts, and error metrics.

use std::str::FromStr;

use crate::cells::CellParams;
use crate::error::{ensure, Error, Result};
use crate::linalg::Matrix;
use crate::training::Samples;

/// Fractions of rows given to training and validation; the rest is test.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Splits {
    pub train: f64,
    pub validation: f64,
}

impl Default for Splits {
    fn default() -> Self {
        Splits {
            train: 0.7,
            validation: 0.1,
        }
    }
}

impl Splits {
    pub fn new(train: f64, validation: f64) -> Result<Self> {
        let s = Splits { train, validation };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.train > 0.0 && self.train <= 1.0,
            InvalidArgument,
            "train fraction must lie in (0, 1], got {}",
            self.train
        );
        ensure!(
            self.validation >= 0.0 && self.train + self.validation <= 1.0 + 1e-12,
            InvalidArgument,
            "fractions must be non-negative and sum to at most 1"
        );
        Ok(())
    }

    /// Row boundaries `(train_end, validation_end)` for `n` rows.
    ///
    /// Fractions are floored after a small tolerance so that `0.7 + 0.1`
    /// of 2500 rows is 2000, not 1999.
    pub fn boundaries(&self, n: usize) -> (usize, usize) {
        let rows = |f: f64| ((f * n as f64 + 1e-9).floor() as usize).min(n);
        let te = rows(self.train);
        let ve = rows(self.train + self.validation).max(te);
        (te, ve)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ForecastMode {
    #[default]
    Direct,
    Rolling,
}

impl ForecastMode {
    pub fn tag(self) -> &'static str {
        match self {
            ForecastMode::Direct => "direct",
            ForecastMode::Rolling => "rolling",
        }
    }
}

impl FromStr for ForecastMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "direct" => Ok(ForecastMode::Direct),
            "rolling" => Ok(ForecastMode::Rolling),
            _ => Err(Error::InvalidArgument(format!(
                "unknown forecast mode '{s}' (direct or rolling)"
            ))),
        }
    }
}

/// Affine map to zero mean and unit variance, fitted on training rows.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Moments {
    pub mean: f64,
    /// Population standard deviation; a constant column keeps scale 1.
    pub std: f64,
}

impl Moments {
    pub fn fit(values: &[f64]) -> Result<Self> {
        ensure!(
            !values.is_empty(),
            InvalidArgument,
            "no rows to fit moments on"
        );
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let std = var.sqrt();
        Ok(Moments {
            mean,
            std: if std > 0.0 { std } else { 1.0 },
        })
    }

    pub fn identity() -> Self {
        Moments {
            mean: 0.0,
            std: 1.0,
        }
    }

    pub fn normalize(&self, v: f64) -> f64 {
        (v - self.mean) / self.std
    }

    pub fn denormalize(&self, z: f64) -> f64 {
        z * self.std + self.mean
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Normalization {
    pub features: Vec<Moments>,
    pub target: Moments,
}

/// Windows over one series with train, validation and test blocks.
///
/// The window at origin `t` holds rows `t-p+1..=t` and targets row `t+m`; a
/// window belongs to the block that contains its target row.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowedDataset {
    pub p: usize,
    pub m: usize,
    pub timestamps: Vec<String>,
    /// Raw features, `N x d`.
    pub features: Matrix,
    /// Raw targets, length `N`.
    pub targets: Vec<f64>,
    pub norm: Normalization,
    /// Feature column holding lagged targets, if any.
    pub endogenous: Option<usize>,
    /// Row boundaries `(train_end, validation_end)`.
    pub row_split: (usize, usize),
    scaled: Matrix,
    scaled_targets: Vec<f64>,
}

/// Window range `[start, end)` expressed as origins.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Block {
    pub start: usize,
    pub end: usize,
}

impl Block {
    pub fn len(&self) -> usize {
        self.end.saturating_sub(self.start)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn origins(&self) -> std::ops::Range<usize> {
        self.start..self.end
    }
}

/// Builds windows over `series` (`N x d`) predicting `targets` (`N`).
pub fn make_windows(
    series: &Matrix,
    targets: &[f64],
    p: usize,
    m: usize,
    splits: Splits,
) -> Result<WindowedDataset> {
    splits.validate()?;
    ensure!(
        p >= 1,
        InvalidArgument,
        "sequence length p must be at least 1"
    );
    ensure!(m >= 1, InvalidArgument, "horizon m must be at least 1");
    let n = series.rows();
    ensure!(
        targets.len() == n,
        Dimension,
        "{} feature rows but {} targets",
        n,
        targets.len()
    );
    ensure!(
        n >= p + m,
        InvalidArgument,
        "{n} rows are too few for p = {p} and m = {m}"
    );
    let (te, ve) = splits.boundaries(n);
    ensure!(
        te >= p + m,
        InvalidArgument,
        "training block of {te} rows holds no window for p = {p}, m = {m}"
    );
    let d = series.cols();
    let features: Vec<Moments> = (0..d)
        .map(|c| Moments::fit(&series.column_values(c)[..te]))
        .collect::<Result<_>>()?;
    let target = Moments::fit(&targets[..te])?;
    let mut scaled = series.clone();
    for r in 0..n {
        for (c, mo) in features.iter().enumerate() {
            scaled.set(r, c, mo.normalize(series.get(r, c)));
        }
    }
    ensure!(
        series.is_finite() && targets.iter().all(|v| v.is_finite()),
        InvalidArgument,
        "series contains non-finite values"
    );
    Ok(WindowedDataset {
        p,
        m,
        timestamps: (0..n).map(|i| i.to_string()).collect(),
        features: series.clone(),
        targets: targets.to_vec(),
        scaled_targets: targets.iter().map(|v| target.normalize(*v)).collect(),
        norm: Normalization { features, target },
        endogenous: None,
        row_split: (te, ve),
        scaled,
    })
}

/// Windows over a single series that is its own lagged input.
pub fn make_univariate_windows(
    series: &[f64],
    p: usize,
    m: usize,
    splits: Splits,
) -> Result<WindowedDataset> {
    let x = Matrix::from_vec(series.len(), 1, series.to_vec())?;
    let mut ds = make_windows(&x, series, p, m, splits)?;
    ds.endogenous = Some(0);
    Ok(ds)
}

impl WindowedDataset {
    pub fn with_timestamps(mut self, timestamps: Vec<String>) -> Result<Self> {
        ensure!(
            timestamps.len() == self.rows(),
            Dimension,
            "{} timestamps for {} rows",
            timestamps.len(),
            self.rows()
        );
        self.timestamps = timestamps;
        Ok(self)
    }

    pub fn with_endogenous(mut self, column: usize) -> Result<Self> {
        ensure!(
            column < self.d(),
            InvalidArgument,
            "endogenous column {column} out of range"
        );
        self.endogenous = Some(column);
        Ok(self)
    }

    pub fn rows(&self) -> usize {
        self.targets.len()
    }

    pub fn d(&self) -> usize {
        self.features.cols()
    }

    /// Normalised features, `N x d`.
    pub fn scaled_features(&self) -> &Matrix {
        &self.scaled
    }

    pub fn scaled_targets(&self) -> &[f64] {
        &self.scaled_targets
    }

    /// First and one-past-last valid origins.
    fn origin_range(&self) -> (usize, usize) {
        (self.p - 1, self.rows() - self.m)
    }

    pub fn window_count(&self) -> usize {
        let (a, b) = self.origin_range();
        b - a
    }

    fn block_for_targets(&self, lo: usize, hi: usize) -> Block {
        let (a, b) = self.origin_range();
        let start = lo.saturating_sub(self.m).max(a).min(b);
        let end = hi.saturating_sub(self.m).max(start).min(b);
        Block { start, end }
    }

    pub fn train_block(&self) -> Block {
        self.block_for_targets(0, self.row_split.0)
    }

    pub fn validation_block(&self) -> Block {
        self.block_for_targets(self.row_split.0, self.row_split.1)
    }

    pub fn test_block(&self) -> Block {
        self.block_for_targets(self.row_split.1, self.rows())
    }

    /// Normalised input window at origin `t`, one `d x 1` matrix per step.
    pub fn window(&self, t: usize) -> Vec<Matrix> {
        (t + 1 - self.p..=t)
            .map(|r| Matrix::column(self.scaled.row(r).to_vec()))
            .collect()
    }

    /// Batched normalised windows and targets for a block.
    pub fn samples(&self, block: Block) -> Result<Samples> {
        let b = block.len();
        let d = self.d();
        let mut inputs = vec![Matrix::zeros(d, b); self.p];
        let mut targets = Matrix::zeros(1, b);
        for (j, t) in block.origins().enumerate() {
            for (s, x) in inputs.iter_mut().enumerate() {
                let r = t + 1 - self.p + s;
                for c in 0..d {
                    x.set(c, j, self.scaled.get(r, c));
                }
            }
            targets.set(0, j, self.scaled_targets[t + self.m]);
        }
        Samples::new(inputs, targets)
    }

    pub fn train_samples(&self) -> Result<Samples> {
        self.samples(self.train_block())
    }

    pub fn validation_samples(&self) -> Result<Samples> {
        self.samples(self.validation_block())
    }

    pub fn test_samples(&self) -> Result<Samples> {
        self.samples(self.test_block())
    }

    /// Training and validation windows together, in time order.
    pub fn fit_samples(&self) -> Result<Samples> {
        let a = self.train_block();
        let b = self.validation_block();
        self.samples(Block {
            start: a.start,
            end: b.end.max(a.end),
        })
    }
}

/// A fitted cell together with the window geometry it was trained on.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub params: CellParams,
    pub p: usize,
    pub m: usize,
}

impl TrainedModel {
    pub fn new(params: CellParams, p: usize, m: usize) -> Self {
        TrainedModel { params, p, m }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForecastResult {
    pub timestamps: Vec<String>,
    pub observed: Vec<f64>,
    pub predicted: Vec<f64>,
    /// `observed - predicted`.
    pub errors: Vec<f64>,
    /// Steps ahead of the last observed input.
    pub steps: Vec<usize>,
}

impl ForecastResult {
    fn from_parts(
        timestamps: Vec<String>,
        observed: Vec<f64>,
        predicted: Vec<f64>,
        steps: Vec<usize>,
    ) -> Self {
        let errors = observed
            .iter()
            .zip(&predicted)
            .map(|(o, p)| o - p)
            .collect();
        ForecastResult {
            timestamps,
            observed,
            predicted,
            errors,
            steps,
        }
    }

    pub fn len(&self) -> usize {
        self.observed.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observed.is_empty()
    }

    /// Adds `offset[i]` to both observed and predicted values.
    pub fn shifted(&self, offset: &[f64]) -> Result<ForecastResult> {
        ensure!(
            offset.len() == self.len(),
            Dimension,
            "offset length mismatch"
        );
        Ok(ForecastResult::from_parts(
            self.timestamps.clone(),
            self.observed
                .iter()
                .zip(offset)
                .map(|(a, b)| a + b)
                .collect(),
            self.predicted
                .iter()
                .zip(offset)
                .map(|(a, b)| a + b)
                .collect(),
            self.steps.clone(),
        ))
    }

    /// Mean absolute error per step index `1..=max_step`.
    pub fn mae_by_step(&self) -> Vec<(usize, f64)> {
        let max = self.steps.iter().copied().max().unwrap_or(0);
        (1..=max)
            .filter_map(|k| {
                let e: Vec<f64> = self
                    .steps
                    .iter()
                    .zip(&self.errors)
                    .filter(|(s, _)| **s == k)
                    .map(|(_, e)| e.abs())
                    .collect();
                (!e.is_empty()).then(|| (k, e.iter().sum::<f64>() / e.len() as f64))
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub mse: f64,
    pub mae: f64,
    pub rmse: f64,
}

pub fn metrics(result: &ForecastResult) -> Result<Metrics> {
    ensure!(!result.is_empty(), InvalidArgument, "no forecasts to score");
    let n = result.len() as f64;
    let mse = result.errors.iter().map(|e| e * e).sum::<f64>() / n;
    let mae = result.errors.iter().map(|e| e.abs()).sum::<f64>() / n;
    Ok(Metrics {
        mse,
        mae,
        rmse: mse.sqrt(),
    })
}

fn check_geometry(model: &TrainedModel, ds: &WindowedDataset) -> Result<()> {
    ensure!(
        model.params.dims().d == ds.d(),
        Mismatch,
        "model expects {} features, data has {}",
        model.params.dims().d,
        ds.d()
    );
    ensure!(
        model.params.dims().n == 1,
        Mismatch,
        "forecasting needs a single-output model"
    );
    ensure!(
        model.p == ds.p,
        Mismatch,
        "model sequence length {} differs from data p = {}",
        model.p,
        ds.p
    );
    Ok(())
}

/// One forward pass per test window, in original units.
pub fn forecast_direct(model: &TrainedModel, ds: &WindowedDataset) -> Result<ForecastResult> {
    check_geometry(model, ds)?;
    ensure!(
        model.m == ds.m,
        Mismatch,
        "model horizon {} differs from data horizon {}",
        model.m,
        ds.m
    );
    let block = ds.test_block();
    ensure!(
        !block.is_empty(),
        InvalidArgument,
        "test block holds no windows"
    );
    let s = ds.samples(block)?;
    let z = model.params.predict_batch(&s.inputs)?;
    let rows: Vec<usize> = block.origins().map(|t| t + ds.m).collect();
    Ok(ForecastResult::from_parts(
        rows.iter().map(|r| ds.timestamps[*r].clone()).collect(),
        rows.iter().map(|r| ds.targets[*r]).collect(),
        z.data()
            .iter()
            .map(|v| ds.norm.target.denormalize(*v))
            .collect(),
        vec![ds.m; rows.len()],
    ))
}

/// Rows `[first, last)` the test block targets, cut into blocks of `m`.
fn rolling_blocks(ds: &WindowedDataset, m: usize) -> Vec<(usize, usize)> {
    let first = ds.row_split.1.max(ds.p);
    let end = ds.rows();
    (first..end)
        .step_by(m)
        .map(|s| (s, (s + m).min(end)))
        .collect()
}

/// Iterated one-step forecasts in blocks of `m`: within a block each
/// prediction replaces the newest lag; every block restarts from observed
/// data.
pub fn forecast_rolling(
    model: &TrainedModel,
    ds: &WindowedDataset,
    m: usize,
) -> Result<ForecastResult> {
    check_geometry(model, ds)?;
    ensure!(
        m >= 1,
        InvalidArgument,
        "rolling horizon must be at least 1"
    );
    ensure!(
        model.m == 1,
        Mismatch,
        "rolling forecasts need a one-step model, got horizon {}",
        model.m
    );
    let col = match ds.endogenous {
        Some(c) if ds.d() == 1 => c,
        _ => {
            return Err(Error::InvalidArgument(
                "rolling forecasts need a single endogenous input; exogenous features have no future values"
                    .into(),
            ))
        }
    };
    let blocks = rolling_blocks(ds, m);
    ensure!(
        !blocks.is_empty(),
        InvalidArgument,
        "test block holds no rows to forecast"
    );
    let p = ds.p;
    let fm = ds.norm.features[col];
    // Per block: the last `p` normalised inputs.
    let mut hist: Vec<Vec<f64>> = blocks
        .iter()
        .map(|(s, _)| (s - p..*s).map(|r| ds.scaled.get(r, col)).collect())
        .collect();
    let mut preds: Vec<Vec<f64>> = vec![Vec::new(); blocks.len()];
    for k in 0..m {
        let active: Vec<usize> = (0..blocks.len())
            .filter(|&b| blocks[b].0 + k < blocks[b].1)
            .collect();
        if active.is_empty() {
            break;
        }
        let mut inputs = vec![Matrix::zeros(1, active.len()); p];
        for (j, &b) in active.iter().enumerate() {
            let h = &hist[b];
            for (s, x) in inputs.iter_mut().enumerate() {
                x.set(0, j, h[h.len() - p + s]);
            }
        }
        let z = model.params.predict_batch(&inputs)?;
        for (j, &b) in active.iter().enumerate() {
            let y = ds.norm.target.denormalize(z.data()[j]);
            preds[b].push(y);
            hist[b].push(fm.normalize(y));
        }
    }
    let mut ts = Vec::new();
    let mut obs = Vec::new();
    let mut pr = Vec::new();
    let mut steps = Vec::new();
    for (b, (s, e)) in blocks.iter().enumerate() {
        for (k, r) in (*s..*e).enumerate() {
            ts.push(ds.timestamps[r].clone());
            obs.push(ds.targets[r]);
            pr.push(preds[b][k]);
            steps.push(k + 1);
        }
    }
    Ok(ForecastResult::from_parts(ts, obs, pr, steps))
}

/// Last-value forecast over the same targets the model would forecast.
pub fn persistence(ds: &WindowedDataset, mode: ForecastMode, m: usize) -> Result<ForecastResult> {
    let mut ts = Vec::new();
    let mut obs = Vec::new();
    let mut pr = Vec::new();
    let mut steps = Vec::new();
    match mode {
        ForecastMode::Direct => {
            for t in ds.test_block().origins() {
                ts.push(ds.timestamps[t + ds.m].clone());
                obs.push(ds.targets[t + ds.m]);
                pr.push(ds.targets[t]);
                steps.push(ds.m);
            }
        }
        ForecastMode::Rolling => {
            ensure!(
                m >= 1,
                InvalidArgument,
                "rolling horizon must be at least 1"
            );
            for (s, e) in rolling_blocks(ds, m) {
                for (k, r) in (s..e).enumerate() {
                    ts.push(ds.timestamps[r].clone());
                    obs.push(ds.targets[r]);
                    pr.push(ds.targets[s - 1]);
                    steps.push(k + 1);
                }
            }
        }
    }
    ensure!(
        !obs.is_empty(),
        InvalidArgument,
        "test block holds no rows to forecast"
    );
    Ok(ForecastResult::from_parts(ts, obs, pr, steps))
}

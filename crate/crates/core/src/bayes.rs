//! Variational Bayes over cell weights: a mean-field Gaussian posterior
//! fitted by pathwise ELBO gradients under a two-component scale-mixture
//! prior, posterior predictive draws and interval coverage.

use std::ops::Range;

use statrs::distribution::{ContinuousCDF, Normal};

use crate::cells::{CellParams, CellSpec};
use crate::error::{ensure, Error, Result};
use crate::forecasting::{
    forecast_direct, forecast_rolling, ForecastMode, ForecastResult, TrainedModel, WindowedDataset,
};
use crate::linalg::{sigmoid, softplus};
use crate::rng::{derive_seed, Rng};
use crate::training::{self, Adam, LossKind, Samples, TrainConfig};

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// `pi * N(0, sigma1^2) + (1 - pi) * N(0, sigma2^2)`, shared by all weights.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prior {
    pub pi: f64,
    pub sigma1: f64,
    pub sigma2: f64,
}

impl Default for Prior {
    fn default() -> Self {
        Prior {
            pi: 0.5,
            sigma1: 1.0,
            sigma2: 0.0025,
        }
    }
}

fn normal_log_pdf(x: f64, sigma: f64) -> f64 {
    -0.5 * (x / sigma).powi(2) - sigma.ln() - LN_SQRT_2PI
}

impl Prior {
    pub fn validate(&self) -> Result<()> {
        ensure!(
            (0.0..=1.0).contains(&self.pi),
            InvalidArgument,
            "mixture weight must lie in [0, 1], got {}",
            self.pi
        );
        ensure!(
            self.sigma2 > 0.0 && self.sigma1 >= self.sigma2 && self.sigma1.is_finite(),
            InvalidArgument,
            "prior scales need sigma1 >= sigma2 > 0, got {} and {}",
            self.sigma1,
            self.sigma2
        );
        Ok(())
    }

    /// Log density and its derivative at `w`.
    pub fn log_density(&self, w: f64) -> (f64, f64) {
        let a = self.pi.ln() + normal_log_pdf(w, self.sigma1);
        let b = (1.0 - self.pi).ln() + normal_log_pdf(w, self.sigma2);
        let top = a.max(b);
        let lse = top + ((a - top).exp() + (b - top).exp()).ln();
        let (ra, rb) = ((a - lse).exp(), (b - lse).exp());
        let grad = -w * (ra / (self.sigma1 * self.sigma1) + rb / (self.sigma2 * self.sigma2));
        (lse, grad)
    }
}

/// Inverse of softplus for positive arguments.
pub fn softplus_inverse(s: f64) -> f64 {
    s + (-(-s).exp_m1()).ln()
}

/// Per-parameter posterior mean and unconstrained scale.
#[derive(Debug, Clone, PartialEq)]
pub struct VariationalParams {
    pub mu: Vec<f64>,
    pub rho: Vec<f64>,
    pub prior: Prior,
}

impl VariationalParams {
    pub fn new(mu: Vec<f64>, init_std: f64, prior: Prior) -> Result<Self> {
        ensure!(
            init_std > 0.0,
            InvalidArgument,
            "initial posterior std must be positive"
        );
        prior.validate()?;
        let rho = vec![softplus_inverse(init_std); mu.len()];
        Ok(VariationalParams { mu, rho, prior })
    }

    pub fn len(&self) -> usize {
        self.mu.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mu.is_empty()
    }

    pub fn std(&self) -> Vec<f64> {
        self.rho.iter().map(|r| softplus(*r)).collect()
    }

    /// `mu + softplus(rho) * eps`.
    pub fn reparameterize(&self, eps: &[f64]) -> Vec<f64> {
        self.mu
            .iter()
            .zip(&self.rho)
            .zip(eps)
            .map(|((m, r), e)| m + softplus(*r) * e)
            .collect()
    }

    pub fn sample(&self, rng: &mut Rng) -> Vec<f64> {
        let eps: Vec<f64> = (0..self.len()).map(|_| rng.normal()).collect();
        self.reparameterize(&eps)
    }

    pub fn log_q(&self, theta: &[f64]) -> f64 {
        self.mu
            .iter()
            .zip(&self.rho)
            .zip(theta)
            .map(|((m, r), t)| normal_log_pdf(t - m, softplus(*r)))
            .sum()
    }

    pub fn log_prior(&self, theta: &[f64]) -> f64 {
        theta.iter().map(|t| self.prior.log_density(*t).0).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.mu.iter().chain(&self.rho).all(|v| v.is_finite())
    }
}

/// Log-likelihood of a contiguous range of observations with its gradient.
pub trait DiffModel {
    fn dim(&self) -> usize;
    fn n_obs(&self) -> usize;
    fn log_likelihood(&self, theta: &[f64], range: Range<usize>) -> Result<(f64, Vec<f64>)>;
}

/// `y = w0 + w1 x` with Gaussian noise of known std.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearToy {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub noise_std: f64,
}

impl DiffModel for LinearToy {
    fn dim(&self) -> usize {
        2
    }

    fn n_obs(&self) -> usize {
        self.y.len()
    }

    fn log_likelihood(&self, theta: &[f64], range: Range<usize>) -> Result<(f64, Vec<f64>)> {
        let s2 = self.noise_std * self.noise_std;
        let mut ll = 0.0;
        let mut g = vec![0.0; 2];
        for i in range {
            let r = self.y[i] - theta[0] - theta[1] * self.x[i];
            ll += -0.5 * r * r / s2 - self.noise_std.ln() - LN_SQRT_2PI;
            g[0] += r / s2;
            g[1] += r * self.x[i] / s2;
        }
        Ok((ll, g))
    }
}

/// Gaussian likelihood of a cell's one-step predictions.
#[derive(Debug, Clone)]
pub struct CellLikelihood<'a> {
    pub spec: CellSpec,
    pub samples: &'a Samples,
    pub noise_std: f64,
}

impl DiffModel for CellLikelihood<'_> {
    fn dim(&self) -> usize {
        CellParams::zeros(self.spec).num_parameters()
    }

    fn n_obs(&self) -> usize {
        self.samples.len()
    }

    fn log_likelihood(&self, theta: &[f64], range: Range<usize>) -> Result<(f64, Vec<f64>)> {
        let params = CellParams::zeros(self.spec).with_flat(theta)?;
        let batch = self.samples.slice(range.start, range.end);
        let (mse, grad) = training::loss_and_gradient(&params, &batch, 0.0, LossKind::Mse)?;
        let count = batch.targets.len() as f64;
        let s2 = self.noise_std * self.noise_std;
        let ll = -0.5 * count * mse / s2 - count * (self.noise_std.ln() + LN_SQRT_2PI);
        let scale = -0.5 * count / s2;
        let g = CellParams {
            spec: self.spec,
            weights: grad,
        }
        .flatten()
        .into_iter()
        .map(|v| scale * v)
        .collect();
        Ok((ll, g))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ElboEstimate {
    pub elbo: f64,
    pub log_likelihood: f64,
    /// Scaled `log q - log p` averaged over draws.
    pub kl: f64,
    pub grad_mu: Vec<f64>,
    pub grad_rho: Vec<f64>,
}

/// ELBO of `range` with `kl_scale * (log q - log p)` and its pathwise
/// gradient, averaged over the supplied standard-normal draws.
pub fn elbo_with_noise(
    vp: &VariationalParams,
    model: &impl DiffModel,
    range: Range<usize>,
    eps: &[Vec<f64>],
    kl_scale: f64,
) -> Result<ElboEstimate> {
    ensure!(
        !eps.is_empty(),
        InvalidArgument,
        "need at least one posterior draw"
    );
    ensure!(
        vp.len() == model.dim(),
        Dimension,
        "posterior has {} parameters, model {}",
        vp.len(),
        model.dim()
    );
    let k = vp.len();
    let sig: Vec<f64> = vp.std();
    let dsig: Vec<f64> = vp.rho.iter().map(|r| sigmoid(*r)).collect();
    let mut out = ElboEstimate {
        elbo: 0.0,
        log_likelihood: 0.0,
        kl: 0.0,
        grad_mu: vec![0.0; k],
        grad_rho: vec![0.0; k],
    };
    for e in eps {
        ensure!(
            e.len() == k,
            Dimension,
            "draw has {} entries, expected {k}",
            e.len()
        );
        let theta = vp.reparameterize(e);
        let (ll, gll) = model.log_likelihood(&theta, range.clone())?;
        let log_q = vp.log_q(&theta);
        let mut log_p = 0.0;
        for i in 0..k {
            let (lp, glp) = vp.prior.log_density(theta[i]);
            log_p += lp;
            let g = gll[i] + kl_scale * glp;
            out.grad_mu[i] += g;
            out.grad_rho[i] += g * e[i] * dsig[i] + kl_scale * dsig[i] / sig[i];
        }
        let kl = kl_scale * (log_q - log_p);
        out.log_likelihood += ll;
        out.kl += kl;
        out.elbo += ll - kl;
    }
    let n = eps.len() as f64;
    out.elbo /= n;
    out.log_likelihood /= n;
    out.kl /= n;
    out.grad_mu
        .iter_mut()
        .chain(out.grad_rho.iter_mut())
        .for_each(|g| *g /= n);
    if !out.elbo.is_finite()
        || out
            .grad_mu
            .iter()
            .chain(&out.grad_rho)
            .any(|g| !g.is_finite())
    {
        return Err(Error::Training("non-finite evidence lower bound".into()));
    }
    Ok(out)
}

/// Monte Carlo ELBO over `n_samples` fresh draws.
pub fn elbo_estimate(
    vp: &VariationalParams,
    model: &impl DiffModel,
    range: Range<usize>,
    n_samples: usize,
    kl_scale: f64,
    rng: &mut Rng,
) -> Result<ElboEstimate> {
    ensure!(
        n_samples >= 1,
        InvalidArgument,
        "need at least one posterior draw"
    );
    let eps: Vec<Vec<f64>> = (0..n_samples)
        .map(|_| (0..vp.len()).map(|_| rng.normal()).collect())
        .collect();
    elbo_with_noise(vp, model, range, &eps, kl_scale)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MuInit {
    StandardNormal,
    WarmStart,
}

impl MuInit {
    pub fn tag(self) -> &'static str {
        match self {
            MuInit::StandardNormal => "normal",
            MuInit::WarmStart => "warm-start",
        }
    }
}

impl std::str::FromStr for MuInit {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "normal" => Ok(MuInit::StandardNormal),
            "warm-start" => Ok(MuInit::WarmStart),
            _ => Err(Error::InvalidArgument(format!(
                "unknown posterior initialisation '{s}'"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BayesConfig {
    pub n_samples: usize,
    pub max_epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Epochs without an ELBO improvement before stopping.
    pub patience: usize,
    pub prior: Prior,
    pub init_std: f64,
    pub mu_init: MuInit,
    pub seed: u64,
}

impl Default for BayesConfig {
    fn default() -> Self {
        BayesConfig {
            n_samples: 10,
            max_epochs: 500,
            batch_size: 1000,
            learning_rate: 1e-2,
            patience: 6,
            prior: Prior::default(),
            init_std: 0.05,
            mu_init: MuInit::StandardNormal,
            seed: 0,
        }
    }
}

impl BayesConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.n_samples >= 1,
            InvalidArgument,
            "n_samples must be at least 1"
        );
        ensure!(
            self.max_epochs >= 1,
            InvalidArgument,
            "max_epochs must be at least 1"
        );
        ensure!(
            self.batch_size >= 1,
            InvalidArgument,
            "batch_size must be at least 1"
        );
        ensure!(
            self.learning_rate > 0.0,
            InvalidArgument,
            "learning_rate must be positive"
        );
        ensure!(
            self.init_std > 0.0,
            InvalidArgument,
            "init_std must be positive"
        );
        self.prior.validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BayesReport {
    /// Sum of batch ELBO estimates per epoch.
    pub epoch_elbo: Vec<f64>,
    pub stopped_epoch: usize,
    pub early_stopped: bool,
}

/// Adam ascent on the ELBO over sequential batches.
pub fn fit_variational(
    model: &impl DiffModel,
    init: VariationalParams,
    cfg: &BayesConfig,
) -> Result<(VariationalParams, BayesReport)> {
    cfg.validate()?;
    let n = model.n_obs();
    ensure!(n > 0, InvalidArgument, "no observations to fit");
    ensure!(
        init.len() == model.dim(),
        Dimension,
        "posterior has {} parameters, model {}",
        init.len(),
        model.dim()
    );
    let mut vp = init;
    let mut rng = Rng::new(derive_seed(cfg.seed, &[1]));
    let mut adam = Adam::new(cfg.learning_rate);
    let mut report = BayesReport {
        epoch_elbo: Vec::new(),
        stopped_epoch: 0,
        early_stopped: false,
    };
    let mut best = f64::NEG_INFINITY;
    let mut stale = 0;
    for _ in 0..cfg.max_epochs {
        let mut total = 0.0;
        let mut start = 0;
        while start < n {
            let end = (start + cfg.batch_size).min(n);
            let scale = (end - start) as f64 / n as f64;
            let est = elbo_estimate(&vp, model, start..end, cfg.n_samples, scale, &mut rng)?;
            total += est.elbo;
            let neg_mu: Vec<f64> = est.grad_mu.iter().map(|g| -g).collect();
            let neg_rho: Vec<f64> = est.grad_rho.iter().map(|g| -g).collect();
            adam.update(&mut [&mut vp.mu, &mut vp.rho], &[&neg_mu, &neg_rho])?;
            if !vp.is_finite() {
                return Err(Error::Training("variational parameters diverged".into()));
            }
            start = end;
        }
        report.epoch_elbo.push(total);
        if total > best {
            best = total;
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                report.early_stopped = true;
                break;
            }
        }
    }
    report.stopped_epoch = report.epoch_elbo.len();
    Ok((vp, report))
}

/// Fitted posterior over a cell's weights with its window geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct BayesModel {
    pub spec: CellSpec,
    pub posterior: VariationalParams,
    /// Observation noise std on the normalised target scale.
    pub noise_std: f64,
    pub p: usize,
    pub m: usize,
}

impl BayesModel {
    pub fn mean_params(&self) -> Result<CellParams> {
        CellParams::zeros(self.spec).with_flat(&self.posterior.mu)
    }

    pub fn draw_params(&self, rng: &mut Rng) -> Result<CellParams> {
        CellParams::zeros(self.spec).with_flat(&self.posterior.sample(rng))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BayesFit {
    pub model: BayesModel,
    pub report: BayesReport,
    /// Deterministic fit that fixed the noise scale.
    pub warm_start: CellParams,
}

/// Warm-start point fit for the noise scale, then the variational fit.
pub fn bayes_fit(
    spec: CellSpec,
    samples: &Samples,
    p: usize,
    m: usize,
    train_cfg: &TrainConfig,
    cfg: &BayesConfig,
) -> Result<BayesFit> {
    cfg.validate()?;
    let (warm, _) = training::train(spec, samples, train_cfg)?;
    let noise_std = training::evaluate(&warm, samples, LossKind::Mse)?
        .sqrt()
        .max(1e-6);
    let mu = match cfg.mu_init {
        MuInit::WarmStart => warm.flatten(),
        MuInit::StandardNormal => {
            let mut rng = Rng::new(derive_seed(cfg.seed, &[0]));
            (0..warm.num_parameters()).map(|_| rng.normal()).collect()
        }
    };
    let init = VariationalParams::new(mu, cfg.init_std, cfg.prior)?;
    let lik = CellLikelihood {
        spec,
        samples,
        noise_std,
    };
    let (posterior, report) = fit_variational(&lik, init, cfg)?;
    Ok(BayesFit {
        model: BayesModel {
            spec,
            posterior,
            noise_std,
            p,
            m,
        },
        report,
        warm_start: warm,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictOptions {
    pub n_draws: usize,
    pub mode: ForecastMode,
    /// Rolling horizon; direct forecasts use the model's horizon.
    pub horizon: usize,
    pub level: f64,
    pub seed: u64,
    /// Add observation noise to each draw.
    pub observation_noise: bool,
}

impl Default for PredictOptions {
    fn default() -> Self {
        PredictOptions {
            n_draws: 10,
            mode: ForecastMode::Direct,
            horizon: 1,
            level: 0.95,
            seed: 0,
            observation_noise: true,
        }
    }
}

/// Two-sided standard-normal quantile for a central interval at `level`.
pub fn z_value(level: f64) -> Result<f64> {
    ensure!(
        level > 0.0 && level < 1.0,
        InvalidArgument,
        "interval level must lie in (0, 1), got {level}"
    );
    Ok(Normal::standard().inverse_cdf(0.5 + level / 2.0))
}

/// Fraction of observations inside `[lower, upper]`.
pub fn coverage(observed: &[f64], lower: &[f64], upper: &[f64]) -> Result<f64> {
    ensure!(
        observed.len() == lower.len() && observed.len() == upper.len(),
        Dimension,
        "coverage needs equal lengths"
    );
    ensure!(
        !observed.is_empty(),
        InvalidArgument,
        "coverage of an empty set"
    );
    let inside = (0..observed.len())
        .filter(|&i| lower[i] <= observed[i] && observed[i] <= upper[i])
        .count();
    Ok(inside as f64 / observed.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictiveResult {
    pub timestamps: Vec<String>,
    pub observed: Vec<f64>,
    pub steps: Vec<usize>,
    /// `draws[k][i]` is draw `k` at point `i`.
    pub draws: Vec<Vec<f64>>,
    pub mean: Vec<f64>,
    /// Sample std across draws (`n - 1` denominator).
    pub std: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub level: f64,
    pub coverage: f64,
}

impl PredictiveResult {
    pub fn from_draws(base: &ForecastResult, draws: Vec<Vec<f64>>, level: f64) -> Result<Self> {
        ensure!(
            draws.len() >= 2,
            InvalidArgument,
            "need at least two draws, got {}",
            draws.len()
        );
        let n = base.len();
        ensure!(
            draws.iter().all(|d| d.len() == n),
            Dimension,
            "draws disagree in length"
        );
        let k = draws.len() as f64;
        // Shifted by the first draw so identical draws give zero spread exactly.
        let mean: Vec<f64> = (0..n)
            .map(|i| draws[0][i] + draws.iter().map(|d| d[i] - draws[0][i]).sum::<f64>() / k)
            .collect();
        let std: Vec<f64> = (0..n)
            .map(|i| {
                (draws.iter().map(|d| (d[i] - mean[i]).powi(2)).sum::<f64>() / (k - 1.0)).sqrt()
            })
            .collect();
        let mut r = PredictiveResult {
            timestamps: base.timestamps.clone(),
            observed: base.observed.clone(),
            steps: base.steps.clone(),
            draws,
            mean,
            std,
            lower: Vec::new(),
            upper: Vec::new(),
            level,
            coverage: 0.0,
        };
        r.set_level(level)?;
        Ok(r)
    }

    /// Recomputes `mean -/+ z * std` bounds and coverage for `level`.
    pub fn set_level(&mut self, level: f64) -> Result<()> {
        let z = z_value(level)?;
        self.lower = self
            .mean
            .iter()
            .zip(&self.std)
            .map(|(m, s)| m - z * s)
            .collect();
        self.upper = self
            .mean
            .iter()
            .zip(&self.std)
            .map(|(m, s)| m + z * s)
            .collect();
        self.level = level;
        self.coverage = coverage(&self.observed, &self.lower, &self.upper)?;
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.observed.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observed.is_empty()
    }

    pub fn inside(&self, i: usize) -> bool {
        self.lower[i] <= self.observed[i] && self.observed[i] <= self.upper[i]
    }

    /// Point forecast built from the predictive mean.
    pub fn mean_forecast(&self) -> ForecastResult {
        ForecastResult {
            timestamps: self.timestamps.clone(),
            observed: self.observed.clone(),
            predicted: self.mean.clone(),
            errors: self
                .observed
                .iter()
                .zip(&self.mean)
                .map(|(o, m)| o - m)
                .collect(),
            steps: self.steps.clone(),
        }
    }

    pub fn mean_std(&self) -> f64 {
        self.std.iter().sum::<f64>() / self.std.len().max(1) as f64
    }

    /// Coverage at each step index `1..=max step`.
    pub fn coverage_by_step(&self) -> Vec<(usize, f64)> {
        let max = self.steps.iter().copied().max().unwrap_or(0);
        (1..=max)
            .filter_map(|s| {
                let idx: Vec<usize> = (0..self.len()).filter(|&i| self.steps[i] == s).collect();
                (!idx.is_empty()).then(|| {
                    let inside = idx.iter().filter(|&&i| self.inside(i)).count();
                    (s, inside as f64 / idx.len() as f64)
                })
            })
            .collect()
    }
}

/// Forecasts under independent posterior draws, aggregated into a central
/// interval around the draw mean.
pub fn bayes_predict(
    model: &BayesModel,
    ds: &WindowedDataset,
    opts: &PredictOptions,
) -> Result<PredictiveResult> {
    ensure!(
        opts.n_draws >= 2,
        InvalidArgument,
        "need at least two posterior draws, got {}",
        opts.n_draws
    );
    z_value(opts.level)?;
    let noise = model.noise_std * ds.norm.target.std;
    let mut base = None;
    let mut draws = Vec::with_capacity(opts.n_draws);
    for k in 0..opts.n_draws {
        let mut rng = Rng::new(derive_seed(opts.seed, &[k as u64]));
        let tm = TrainedModel::new(model.draw_params(&mut rng)?, model.p, model.m);
        let f = match opts.mode {
            ForecastMode::Direct => forecast_direct(&tm, ds)?,
            ForecastMode::Rolling => forecast_rolling(&tm, ds, opts.horizon)?,
        };
        let mut pred = f.predicted.clone();
        if opts.observation_noise {
            pred.iter_mut().for_each(|v| *v += noise * rng.normal());
        }
        draws.push(pred);
        base.get_or_insert(f);
    }
    PredictiveResult::from_draws(&base.expect("at least two draws"), draws, opts.level)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cells::{Architecture, Dims};
    use crate::forecasting::{make_univariate_windows, Splits};
    use proptest::prelude::{prop_assert, proptest};

    fn toy(n: usize, noise: f64, seed: u64) -> LinearToy {
        let mut rng = Rng::new(seed);
        let x: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
        let y = x
            .iter()
            .map(|v| 1.0 + 2.0 * v + noise * rng.normal())
            .collect();
        LinearToy {
            x,
            y,
            noise_std: noise.max(0.01),
        }
    }

    #[test]
    fn single_component_prior_is_gaussian() {
        let p = Prior {
            pi: 1.0,
            sigma1: 0.7,
            sigma2: 0.1,
        };
        let (lp, g) = p.log_density(0.3);
        assert!((lp - normal_log_pdf(0.3, 0.7)).abs() < 1e-14);
        assert!((g + 0.3 / 0.49).abs() < 1e-12);
        assert!(Prior { pi: 1.5, ..p }.validate().is_err());
        assert!(Prior { sigma1: 0.01, ..p }.validate().is_err());
    }

    #[test]
    fn mixture_gradient_matches_difference() {
        let p = Prior::default();
        for w in [-1.3, -0.004, 0.0, 0.001, 0.02, 0.8] {
            let h = 1e-7;
            let fd = (p.log_density(w + h).0 - p.log_density(w - h).0) / (2.0 * h);
            let g = p.log_density(w).1;
            assert!(
                (g - fd).abs() <= 1e-5 * fd.abs().max(1.0),
                "{w}: {g} vs {fd}"
            );
        }
    }

    #[test]
    fn softplus_inverse_round_trip() {
        for s in [1e-4, 0.05, 1.0, 30.0] {
            assert!((softplus(softplus_inverse(s)) - s).abs() < 1e-12 * s.max(1.0));
        }
    }

    #[test]
    fn matched_prior_gives_zero_kl() {
        let prior = Prior {
            pi: 1.0,
            sigma1: 0.3,
            sigma2: 0.3,
        };
        let vp = VariationalParams::new(vec![0.0, 0.0], 0.3, prior).unwrap();
        let model = toy(20, 0.1, 1);
        let est = elbo_estimate(&vp, &model, 0..20, 50, 1.0, &mut Rng::new(2)).unwrap();
        assert!(est.kl.abs() < 1e-10);
    }

    #[test]
    fn estimates_are_seeded() {
        let vp = VariationalParams::new(vec![0.5, 1.5], 0.2, Prior::default()).unwrap();
        let model = toy(30, 0.1, 3);
        let a = elbo_estimate(&vp, &model, 0..30, 1, 0.5, &mut Rng::new(4)).unwrap();
        let b = elbo_estimate(&vp, &model, 0..30, 1, 0.5, &mut Rng::new(4)).unwrap();
        assert_eq!(a, b);
        assert!(elbo_estimate(&vp, &model, 0..30, 0, 0.5, &mut Rng::new(4)).is_err());
    }

    #[test]
    fn tighter_posterior_at_truth_raises_likelihood() {
        let model = toy(200, 0.1, 5);
        let wide = VariationalParams::new(vec![1.0, 2.0], 0.5, Prior::default()).unwrap();
        let tight = VariationalParams::new(vec![1.0, 2.0], 0.01, Prior::default()).unwrap();
        let a = elbo_estimate(&wide, &model, 0..200, 200, 1.0, &mut Rng::new(6)).unwrap();
        let b = elbo_estimate(&tight, &model, 0..200, 200, 1.0, &mut Rng::new(6)).unwrap();
        assert!(b.log_likelihood > a.log_likelihood);
    }

    #[test]
    fn pathwise_gradient_matches_common_noise_difference() {
        let model = toy(40, 0.3, 7);
        let vp = VariationalParams {
            mu: vec![0.4, 1.1],
            rho: vec![softplus_inverse(0.2), softplus_inverse(0.05)],
            prior: Prior::default(),
        };
        let mut rng = Rng::new(8);
        let eps: Vec<Vec<f64>> = (0..10_000)
            .map(|_| vec![rng.normal(), rng.normal()])
            .collect();
        let scale = 0.25;
        let est = elbo_with_noise(&vp, &model, 0..40, &eps, scale).unwrap();
        let h = 1e-6;
        for i in 0..2 {
            for which in 0..2 {
                let shifted = |d: f64| {
                    let mut v = vp.clone();
                    if which == 0 {
                        v.mu[i] += d;
                    } else {
                        v.rho[i] += d;
                    }
                    elbo_with_noise(&v, &model, 0..40, &eps, scale)
                        .unwrap()
                        .elbo
                };
                let fd = (shifted(h) - shifted(-h)) / (2.0 * h);
                let g = if which == 0 {
                    est.grad_mu[i]
                } else {
                    est.grad_rho[i]
                };
                let rel = (g - fd).abs() / fd.abs().max(1e-8);
                assert!(rel < 1e-3, "param {i} kind {which}: {g} vs {fd}");
            }
        }
    }

    #[test]
    fn toy_posterior_concentrates_on_least_squares() {
        let model = toy(200, 0.0, 9);
        let init = VariationalParams::new(vec![0.0, 0.0], 0.05, Prior::default()).unwrap();
        let cfg = BayesConfig {
            max_epochs: 3000,
            learning_rate: 0.02,
            patience: 3000,
            batch_size: 200,
            ..BayesConfig::default()
        };
        let (vp, report) = fit_variational(&model, init, &cfg).unwrap();
        assert_eq!(report.stopped_epoch, 3000);
        assert!((vp.mu[0] - 1.0).abs() < 0.01, "{:?}", vp.mu);
        assert!((vp.mu[1] - 2.0).abs() < 0.01, "{:?}", vp.mu);
        assert!(vp.std().iter().all(|s| *s < 0.05));
    }

    #[test]
    fn fit_is_deterministic() {
        let model = toy(60, 0.2, 10);
        let cfg = BayesConfig {
            max_epochs: 30,
            batch_size: 25,
            ..BayesConfig::default()
        };
        let init = VariationalParams::new(vec![0.0, 0.0], 0.05, Prior::default()).unwrap();
        let a = fit_variational(&model, init.clone(), &cfg).unwrap();
        let b = fit_variational(&model, init, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn coverage_on_constructed_cases() {
        let obs = [1.0, 2.0, 3.0];
        assert_eq!(coverage(&obs, &[0.0; 3], &[5.0; 3]).unwrap(), 1.0);
        assert_eq!(coverage(&obs, &[4.0; 3], &[5.0; 3]).unwrap(), 0.0);
        assert!((coverage(&obs, &[1.5; 3], &[5.0; 3]).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert!(coverage(&[], &[], &[]).is_err());
    }

    #[test]
    fn z_values() {
        assert!((z_value(0.95).unwrap() - 1.959963984540054).abs() < 1e-9);
        assert!(z_value(1.0).is_err());
    }

    fn small_model(std: f64) -> (BayesModel, WindowedDataset) {
        let mut rng = Rng::new(11);
        let series: Vec<f64> = (0..120)
            .map(|t| (t as f64 * 0.3).sin() + 0.1 * rng.normal())
            .collect();
        let ds = make_univariate_windows(&series, 3, 1, Splits::default()).unwrap();
        let spec = CellSpec::new(Architecture::AlphaRnn, Dims::new(1, 3, 1));
        let params = CellParams::init(spec, &mut Rng::new(12));
        let mut posterior =
            VariationalParams::new(params.flatten(), 0.05, Prior::default()).unwrap();
        posterior
            .rho
            .iter_mut()
            .for_each(|r| *r = softplus_inverse(std.max(1e-300)));
        if std == 0.0 {
            posterior.rho.iter_mut().for_each(|r| *r = -1e4);
        }
        let model = BayesModel {
            spec,
            posterior,
            noise_std: 0.2,
            p: 3,
            m: 1,
        };
        (model, ds)
    }

    #[test]
    fn degenerate_posterior_reproduces_point_forecast() {
        let (model, ds) = small_model(0.0);
        let opts = PredictOptions {
            observation_noise: false,
            ..PredictOptions::default()
        };
        let r = bayes_predict(&model, &ds, &opts).unwrap();
        let point =
            forecast_direct(&TrainedModel::new(model.mean_params().unwrap(), 3, 1), &ds).unwrap();
        assert_eq!(r.mean.len(), point.len());
        for i in 0..r.len() {
            assert!((r.mean[i] - point.predicted[i]).abs() < 1e-12);
            assert_eq!(r.lower[i], r.upper[i]);
        }
        assert!(bayes_predict(
            &model,
            &ds,
            &PredictOptions {
                n_draws: 1,
                ..opts.clone()
            }
        )
        .is_err());
        assert!(bayes_predict(&model, &ds, &PredictOptions { n_draws: 0, ..opts }).is_err());
    }

    #[test]
    fn wider_level_nests_narrower() {
        let (model, ds) = small_model(0.1);
        let mut r = bayes_predict(&model, &ds, &PredictOptions::default()).unwrap();
        let (lo95, hi95, c95) = (r.lower.clone(), r.upper.clone(), r.coverage);
        r.set_level(0.99).unwrap();
        for i in 0..r.len() {
            assert!(r.lower[i] <= lo95[i] && hi95[i] <= r.upper[i]);
            assert!(r.lower[i] <= r.mean[i] && r.mean[i] <= r.upper[i]);
        }
        assert!(r.coverage >= c95);
        let again = bayes_predict(&model, &ds, &PredictOptions::default()).unwrap();
        assert_eq!(again.draws, r.draws);
    }

    #[test]
    fn cell_likelihood_gradient_matches_difference() {
        let (model, ds) = small_model(0.1);
        let samples = ds.train_samples().unwrap();
        let lik = CellLikelihood {
            spec: model.spec,
            samples: &samples,
            noise_std: 0.3,
        };
        let theta = model.posterior.mu.clone();
        let (_, g) = lik.log_likelihood(&theta, 0..20).unwrap();
        for i in [0, 5, theta.len() - 1] {
            let h = 1e-6;
            let mut a = theta.clone();
            let mut b = theta.clone();
            a[i] += h;
            b[i] -= h;
            let fd = (lik.log_likelihood(&a, 0..20).unwrap().0
                - lik.log_likelihood(&b, 0..20).unwrap().0)
                / (2.0 * h);
            assert!(
                (g[i] - fd).abs() <= 1e-5 * fd.abs().max(1.0),
                "{i}: {} vs {fd}",
                g[i]
            );
        }
    }

    proptest! {
        #[test]
        fn coverage_is_a_fraction(lo in -2.0f64..0.0, hi in 0.0f64..2.0, seed in 0u64..1000) {
            let mut rng = Rng::new(seed);
            let obs: Vec<f64> = (0..25).map(|_| rng.normal()).collect();
            let c = coverage(&obs, &[lo; 25], &[hi; 25]).unwrap();
            prop_assert!((0.0..=1.0).contains(&c));
        }
    }
}

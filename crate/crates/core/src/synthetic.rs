//! Data-generating processes: a local level model with additive seasonality,
//! a noisy scalar alpha-RNN generator and a linear autoregression.

use crate::cells::{Architecture, CellParams, CellSpec, Dims, Slot, Stream};
use crate::error::{ensure, Result};
use crate::linalg::Matrix;
use crate::rng::Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct LlmConfig {
    pub period: usize,
    pub n: usize,
    /// Observation noise variance.
    pub sigma_u2: f64,
    /// Level innovation variance.
    pub sigma_chi2: f64,
    /// Seasonal innovation variance.
    pub sigma_omega2: f64,
    pub seed: u64,
}

impl Default for LlmConfig {
    fn default() -> Self {
        LlmConfig {
            period: 24,
            n: 10_000,
            sigma_u2: 300.0,
            sigma_chi2: 1.0,
            sigma_omega2: 1.0,
            seed: 0,
        }
    }
}

impl LlmConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.period >= 2,
            InvalidArgument,
            "period must be at least 2"
        );
        ensure!(
            self.n > self.period,
            InvalidArgument,
            "length {} must exceed the period {}",
            self.n,
            self.period
        );
        for (name, v) in [
            ("sigma_u2", self.sigma_u2),
            ("sigma_chi2", self.sigma_chi2),
            ("sigma_omega2", self.sigma_omega2),
        ] {
            ensure!(
                v >= 0.0 && v.is_finite(),
                InvalidArgument,
                "{name} must be a finite non-negative variance, got {v}"
            );
        }
        Ok(())
    }
}

/// Observations with the latent components that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct LlmSeries {
    pub y: Vec<f64>,
    pub level: Vec<f64>,
    pub seasonal: Vec<f64>,
    pub noise: Vec<f64>,
}

/// `y_t = mu_t + gamma_t + eps_t` with a random-walk level starting at zero
/// and a seasonal term whose `s` consecutive values sum to an innovation.
pub fn generate_llm(cfg: &LlmConfig) -> Result<LlmSeries> {
    cfg.validate()?;
    let mut rng = Rng::new(cfg.seed);
    let (su, sc, so) = (
        cfg.sigma_u2.sqrt(),
        cfg.sigma_chi2.sqrt(),
        cfg.sigma_omega2.sqrt(),
    );
    let s = cfg.period;
    let mut seasonal: Vec<f64> = (0..s - 1).map(|_| so * rng.normal()).collect();
    let centre = seasonal.iter().sum::<f64>() / (s - 1) as f64;
    seasonal.iter_mut().for_each(|g| *g -= centre);
    seasonal.reserve(cfg.n);
    for t in s - 1..cfg.n {
        let g = so * rng.normal() - seasonal[t + 1 - s..t].iter().sum::<f64>();
        seasonal.push(g);
    }
    seasonal.truncate(cfg.n);
    let mut level = Vec::with_capacity(cfg.n);
    let mut mu = 0.0;
    for t in 0..cfg.n {
        if t > 0 {
            mu += sc * rng.normal();
        }
        level.push(mu);
    }
    let noise: Vec<f64> = (0..cfg.n).map(|_| su * rng.normal()).collect();
    let y = (0..cfg.n)
        .map(|t| level[t] + seasonal[t] + noise[t])
        .collect();
    Ok(LlmSeries {
        y,
        level,
        seasonal,
        noise,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlphaRnnDgpConfig {
    pub p: usize,
    /// Smoothing weight in `(0, 1]`; 1 gives the plain recurrence.
    pub alpha: f64,
    /// Shared input and recurrence weight.
    pub phi: f64,
    pub sigma_n: f64,
    pub n: usize,
    /// Leading draws discarded before the returned series.
    pub burn_in: usize,
    pub seed: u64,
}

impl Default for AlphaRnnDgpConfig {
    fn default() -> Self {
        AlphaRnnDgpConfig {
            p: 3,
            alpha: 1.0,
            phi: 0.5,
            sigma_n: 0.1,
            n: 10_000,
            burn_in: 500,
            seed: 0,
        }
    }
}

impl AlphaRnnDgpConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.p >= 1,
            InvalidArgument,
            "sequence length must be at least 1"
        );
        ensure!(
            self.alpha > 0.0 && self.alpha <= 1.0,
            InvalidArgument,
            "alpha must lie in (0, 1], got {}",
            self.alpha
        );
        ensure!(self.phi.is_finite(), InvalidArgument, "phi must be finite");
        ensure!(
            self.sigma_n >= 0.0 && self.sigma_n.is_finite(),
            InvalidArgument,
            "noise std must be finite and non-negative"
        );
        ensure!(self.n >= 1, InvalidArgument, "length must be positive");
        Ok(())
    }

    /// Scalar cell with `W_h = U_h = phi`, `W_y = 1` and zero biases.
    pub fn cell(&self) -> Result<CellParams> {
        let arch = if self.alpha >= 1.0 {
            Architecture::Rnn
        } else {
            Architecture::AlphaRnn
        };
        let mut c = CellParams::zeros(CellSpec::new(arch, Dims::new(1, 1, 1)));
        c.set(Slot::Wh, Matrix::scalar(self.phi))?;
        c.set(Slot::Uh, Matrix::scalar(self.phi))?;
        c.set(Slot::Wy, Matrix::scalar(1.0))?;
        if arch == Architecture::AlphaRnn {
            c.set_alpha(self.alpha)?;
        }
        Ok(c)
    }
}

/// Feeds the cell its own noisy one-step predictions, starting from `p`
/// zeros, with smoothed state carried across windows.
pub fn generate_alpha_rnn(cfg: &AlphaRnnDgpConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    let cell = cfg.cell()?;
    let mut stream = Stream::new(&cell, cfg.p)?;
    let mut rng = Rng::new(cfg.seed);
    let total = cfg.burn_in + cfg.n;
    let mut y = vec![0.0; cfg.p];
    y.reserve(total);
    while y.len() < cfg.p + total {
        let t = y.len();
        let window: Vec<Matrix> = y[t - cfg.p..].iter().map(|v| Matrix::scalar(*v)).collect();
        let yhat = stream.advance(&window)?.prediction.data()[0];
        y.push(yhat + cfg.sigma_n * rng.normal());
    }
    Ok(y.split_off(cfg.p + cfg.burn_in))
}

/// Linear autoregression `y_t = c + sum_i coefs[i] y_{t-1-i} + sigma e_t`.
pub fn generate_ar(
    coefs: &[f64],
    intercept: f64,
    sigma: f64,
    n: usize,
    burn_in: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    ensure!(
        sigma >= 0.0 && sigma.is_finite(),
        InvalidArgument,
        "noise std must be finite and non-negative"
    );
    let mut rng = Rng::new(seed);
    let p = coefs.len();
    let mut y = vec![0.0; p];
    for _ in 0..burn_in + n {
        let t = y.len();
        let mean = intercept
            + coefs
                .iter()
                .enumerate()
                .map(|(i, c)| c * y[t - 1 - i])
                .sum::<f64>();
        y.push(mean + sigma * rng.normal());
    }
    Ok(y.split_off(p + burn_in))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diagnostics::{adf_test, pacf};

    #[test]
    fn silent_llm_is_zero() {
        let cfg = LlmConfig {
            n: 200,
            sigma_u2: 0.0,
            sigma_chi2: 0.0,
            sigma_omega2: 0.0,
            ..LlmConfig::default()
        };
        assert!(generate_llm(&cfg).unwrap().y.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn llm_components_add_up_and_seasonal_identity_holds() {
        let cfg = LlmConfig {
            n: 2000,
            seed: 3,
            ..LlmConfig::default()
        };
        let s = generate_llm(&cfg).unwrap();
        assert_eq!(s.y.len(), 2000);
        assert_eq!(s.level[0], 0.0);
        assert!(s.seasonal[..23].iter().sum::<f64>().abs() < 1e-12);
        for t in 0..2000 {
            assert_eq!(s.y[t], s.level[t] + s.seasonal[t] + s.noise[t]);
        }
        let sums: Vec<f64> = (23..2000)
            .map(|t| s.seasonal[t - 23..=t].iter().sum())
            .collect();
        let mean = sums.iter().sum::<f64>() / sums.len() as f64;
        let var = sums.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / sums.len() as f64;
        assert!(mean.abs() < 0.1, "mean {mean}");
        assert!((var - 1.0).abs() < 0.15, "var {var}");
    }

    #[test]
    fn llm_is_reproducible_and_seed_sensitive() {
        let cfg = LlmConfig {
            n: 300,
            ..LlmConfig::default()
        };
        assert_eq!(generate_llm(&cfg).unwrap(), generate_llm(&cfg).unwrap());
        let other = LlmConfig {
            seed: 1,
            ..cfg.clone()
        };
        assert_ne!(
            generate_llm(&cfg).unwrap().y,
            generate_llm(&other).unwrap().y
        );
    }

    #[test]
    fn llm_validation() {
        let bad = LlmConfig {
            n: 10,
            ..LlmConfig::default()
        };
        assert!(generate_llm(&bad).is_err());
        let neg = LlmConfig {
            sigma_u2: -1.0,
            ..LlmConfig::default()
        };
        assert!(generate_llm(&neg).is_err());
    }

    #[test]
    fn default_llm_shows_lag_24_and_a_unit_root() {
        let mut flagged = 0;
        let mut non_stationary = 0;
        for seed in 0..5 {
            let s = generate_llm(&LlmConfig {
                seed,
                ..LlmConfig::default()
            })
            .unwrap();
            if pacf(&s.y, 30).unwrap().is_significant(24) {
                flagged += 1;
            }
            if !adf_test(&s.y, 30).unwrap().rejects_at(0.05) {
                non_stationary += 1;
            }
        }
        assert!(flagged >= 3, "lag 24 flagged in {flagged}/5");
        assert!(non_stationary >= 3, "unit root kept in {non_stationary}/5");
    }

    #[test]
    fn silent_dgp_is_zero() {
        let cfg = AlphaRnnDgpConfig {
            sigma_n: 0.0,
            n: 50,
            alpha: 0.3,
            ..AlphaRnnDgpConfig::default()
        };
        assert!(generate_alpha_rnn(&cfg).unwrap().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn dgp_is_reproducible() {
        let cfg = AlphaRnnDgpConfig {
            n: 200,
            alpha: 0.25,
            seed: 9,
            ..AlphaRnnDgpConfig::default()
        };
        let a = generate_alpha_rnn(&cfg).unwrap();
        assert_eq!(a.len(), 200);
        assert_eq!(a, generate_alpha_rnn(&cfg).unwrap());
        assert!(generate_alpha_rnn(&AlphaRnnDgpConfig {
            alpha: 0.0,
            ..cfg.clone()
        })
        .is_err());
        assert!(generate_alpha_rnn(&AlphaRnnDgpConfig { alpha: 1.5, ..cfg }).is_err());
    }

    #[test]
    fn dgp_noise_free_step_matches_cell() {
        let cfg = AlphaRnnDgpConfig {
            n: 4,
            burn_in: 0,
            sigma_n: 0.0,
            ..AlphaRnnDgpConfig::default()
        };
        assert_eq!(generate_alpha_rnn(&cfg).unwrap(), vec![0.0; 4]);
    }

    #[test]
    fn ar_generator_matches_recursion() {
        let y = generate_ar(&[0.5], 1.0, 0.0, 5, 0, 0).unwrap();
        assert_eq!(y, vec![1.0, 1.5, 1.75, 1.875, 1.9375]);
        let z = generate_ar(&[0.5, 0.2], 0.0, 1.0, 100, 10, 4).unwrap();
        assert_eq!(z.len(), 100);
        assert_eq!(z, generate_ar(&[0.5, 0.2], 0.0, 1.0, 100, 10, 4).unwrap());
    }
}

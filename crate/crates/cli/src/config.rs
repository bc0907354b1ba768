//! Run configuration: a sectioned TOML file whose keys every flag can override.

use std::path::{Path, PathBuf};

use serde::Deserialize;
use smoothrnn::bayes::{BayesConfig, MuInit, PredictOptions, Prior};
use smoothrnn::cells::{Activation, Architecture, CellSpec, Dims, Readout};
use smoothrnn::forecasting::{ForecastMode, Splits};
use smoothrnn::synthetic::{AlphaRnnDgpConfig, LlmConfig};
use smoothrnn::training::{CvGrid, LossKind, TrainConfig};

use crate::CliError;

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Master seed for initialisation, cross-validation and posterior draws.
    pub seed: u64,
    pub data: DataSection,
    pub model: ModelSection,
    pub split: SplitSection,
    pub train: TrainSection,
    pub cv: CvSection,
    pub bayes: BayesSection,
    pub diagnose: DiagnoseSection,
    pub simulate: SimulateSection,
    pub output: OutputSection,
}

#[derive(Debug, Clone, PartialEq, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub path: Option<PathBuf>,
    /// Defaults to the first numeric column.
    pub target: Option<String>,
    /// Defaults to the target alone.
    pub features: Vec<String>,
    /// Model the residual of a classical decomposition with this period.
    pub decompose_period: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub arch: String,
    pub hidden: usize,
    pub p: usize,
    pub m: usize,
    pub mode: String,
    /// Rolling block length.
    pub horizon: usize,
    pub activation: String,
    pub readout: String,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            arch: "alpha-rnn".into(),
            hidden: 10,
            p: 10,
            m: 1,
            mode: "direct".into(),
            horizon: 1,
            activation: "tanh".into(),
            readout: "smoothed".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSection {
    pub train: f64,
    pub validation: f64,
}

impl Default for SplitSection {
    fn default() -> Self {
        let s = Splits::default();
        SplitSection {
            train: s.train,
            validation: s.validation,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub max_epochs: usize,
    pub batch_size: usize,
    pub patience: usize,
    pub min_delta: f64,
    pub learning_rate: f64,
    pub lambda1: f64,
    pub loss: String,
    /// Zero disables clipping.
    pub clip_norm: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        TrainSection {
            max_epochs: t.max_epochs,
            batch_size: t.batch_size,
            patience: t.patience,
            min_delta: t.min_delta,
            learning_rate: t.learning_rate,
            lambda1: t.lambda1,
            loss: t.loss.tag().into(),
            clip_norm: t.clip_norm.unwrap_or(0.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CvSection {
    pub enabled: bool,
    pub hidden: Vec<usize>,
    pub lambda1: Vec<f64>,
    pub folds: usize,
}

impl Default for CvSection {
    fn default() -> Self {
        CvSection {
            enabled: false,
            hidden: vec![5, 10, 20],
            lambda1: vec![0.0, 1e-3],
            folds: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BayesSection {
    pub n_samples: usize,
    pub max_epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub patience: usize,
    pub prior_pi: f64,
    pub prior_sigma1: f64,
    pub prior_sigma2: f64,
    pub init_std: f64,
    pub mu_init: String,
    pub n_draws: usize,
    pub level: f64,
    pub observation_noise: bool,
}

impl Default for BayesSection {
    fn default() -> Self {
        let b = BayesConfig::default();
        let o = PredictOptions::default();
        BayesSection {
            n_samples: b.n_samples,
            max_epochs: b.max_epochs,
            batch_size: b.batch_size,
            learning_rate: b.learning_rate,
            patience: b.patience,
            prior_pi: b.prior.pi,
            prior_sigma1: b.prior.sigma1,
            prior_sigma2: b.prior.sigma2,
            init_std: b.init_std,
            mu_init: b.mu_init.tag().into(),
            n_draws: o.n_draws,
            level: o.level,
            observation_noise: o.observation_noise,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiagnoseSection {
    pub column: Option<String>,
    pub max_lag: usize,
    /// Defaults to `floor(12 (N / 100)^(1/4))`.
    pub adf_max_lag: Option<usize>,
    /// Upper bound on the recommended sequence length.
    pub p_cap: usize,
    pub period: Option<usize>,
}

impl Default for DiagnoseSection {
    fn default() -> Self {
        DiagnoseSection {
            column: None,
            max_lag: 40,
            adf_max_lag: None,
            p_cap: 10,
            period: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateSection {
    pub kind: String,
    pub n: usize,
    pub period: usize,
    pub sigma_u2: f64,
    pub sigma_chi2: f64,
    pub sigma_omega2: f64,
    pub p: usize,
    pub alpha: f64,
    pub phi: f64,
    pub sigma_n: f64,
    pub burn_in: usize,
}

impl Default for SimulateSection {
    fn default() -> Self {
        let l = LlmConfig::default();
        let a = AlphaRnnDgpConfig::default();
        SimulateSection {
            kind: "llm".into(),
            n: l.n,
            period: l.period,
            sigma_u2: l.sigma_u2,
            sigma_chi2: l.sigma_chi2,
            sigma_omega2: l.sigma_omega2,
            p: a.p,
            alpha: a.alpha,
            phi: a.phi,
            sigma_n: a.sigma_n,
            burn_in: a.burn_in,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: Option<PathBuf>,
}

fn invalid(msg: String) -> CliError {
    CliError::Core(smoothrnn::Error::InvalidArgument(msg))
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::file(path, e.into()))?;
        Self::from_toml(&text).map_err(|e| match e {
            CliError::Config(msg) => CliError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn arch(&self) -> Result<Architecture, CliError> {
        Ok(self.model.arch.parse()?)
    }

    pub fn spec(&self, d: usize) -> Result<CellSpec, CliError> {
        let activation: Activation = self.model.activation.parse()?;
        let readout: Readout = self.model.readout.parse()?;
        if self.model.hidden == 0 {
            return Err(invalid("hidden size must be positive".into()));
        }
        Ok(CellSpec {
            activation,
            readout,
            ..CellSpec::new(self.arch()?, Dims::new(d, self.model.hidden, 1))
        })
    }

    pub fn mode(&self) -> Result<ForecastMode, CliError> {
        Ok(self.model.mode.parse()?)
    }

    pub fn splits(&self) -> Result<Splits, CliError> {
        Ok(Splits::new(self.split.train, self.split.validation)?)
    }

    pub fn train_config(&self) -> Result<TrainConfig, CliError> {
        let t = &self.train;
        let loss: LossKind = t.loss.parse()?;
        let cfg = TrainConfig {
            max_epochs: t.max_epochs,
            batch_size: t.batch_size,
            patience: t.patience,
            min_delta: t.min_delta,
            learning_rate: t.learning_rate,
            lambda1: t.lambda1,
            loss,
            seed: self.seed,
            clip_norm: (t.clip_norm > 0.0).then_some(t.clip_norm),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn cv_grid(&self) -> Result<CvGrid, CliError> {
        let g = CvGrid {
            hidden: self.cv.hidden.clone(),
            lambda1: self.cv.lambda1.clone(),
            folds: self.cv.folds,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn bayes_config(&self) -> Result<BayesConfig, CliError> {
        let b = &self.bayes;
        let mu_init: MuInit = b.mu_init.parse()?;
        let cfg = BayesConfig {
            n_samples: b.n_samples,
            max_epochs: b.max_epochs,
            batch_size: b.batch_size,
            learning_rate: b.learning_rate,
            patience: b.patience,
            prior: Prior {
                pi: b.prior_pi,
                sigma1: b.prior_sigma1,
                sigma2: b.prior_sigma2,
            },
            init_std: b.init_std,
            mu_init,
            seed: self.seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn predict_options(&self) -> Result<PredictOptions, CliError> {
        let b = &self.bayes;
        if b.n_draws < 2 {
            return Err(CliError::Usage(format!(
                "n_draws must be at least 2, got {}",
                b.n_draws
            )));
        }
        Ok(PredictOptions {
            n_draws: b.n_draws,
            mode: self.mode()?,
            horizon: self.model.horizon,
            level: b.level,
            seed: smoothrnn::rng::derive_seed(self.seed, &[7]),
            observation_noise: b.observation_noise,
        })
    }

    pub fn llm_config(&self) -> LlmConfig {
        let s = &self.simulate;
        LlmConfig {
            period: s.period,
            n: s.n,
            sigma_u2: s.sigma_u2,
            sigma_chi2: s.sigma_chi2,
            sigma_omega2: s.sigma_omega2,
            seed: self.seed,
        }
    }

    pub fn dgp_config(&self) -> AlphaRnnDgpConfig {
        let s = &self.simulate;
        AlphaRnnDgpConfig {
            p: s.p,
            alpha: s.alpha,
            phi: s.phi,
            sigma_n: s.sigma_n,
            n: s.n,
            burn_in: s.burn_in,
            seed: self.seed,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        assert_eq!(RunConfig::from_toml("").unwrap(), RunConfig::default());
    }

    #[test]
    fn sections_parse() {
        let c = RunConfig::from_toml(
            "seed = 3\n[model]\narch = \"gru\"\nhidden = 4\n[cv]\nenabled = true\nhidden = [2, 3]\n[train]\nclip_norm = 0.0\n",
        )
        .unwrap();
        assert_eq!(c.seed, 3);
        assert_eq!(c.arch().unwrap(), Architecture::Gru);
        assert_eq!(c.cv_grid().unwrap().hidden, vec![2, 3]);
        assert_eq!(c.train_config().unwrap().clip_norm, None);
        assert_eq!(c.train_config().unwrap().seed, 3);
    }

    #[test]
    fn unknown_keys_and_bad_values_are_rejected() {
        assert!(matches!(
            RunConfig::from_toml("[model]\nsize = 3\n"),
            Err(CliError::Config(_))
        ));
        assert!(matches!(
            RunConfig::from_toml("seed = \"x\"\n"),
            Err(CliError::Config(_))
        ));
        let c = RunConfig::from_toml("[model]\narch = \"transformer\"\n").unwrap();
        assert!(c.arch().is_err());
        let d = RunConfig::from_toml("[bayes]\nn_draws = 0\n").unwrap();
        assert!(matches!(d.predict_options(), Err(CliError::Usage(_))));
    }
}

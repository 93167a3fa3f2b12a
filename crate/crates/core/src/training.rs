//! Epoch loop with KL warmup, weight spikes and permanent thresholding.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::autodiff::{AdamW, AdamWConfig};
use crate::dynamics::{SystemKind, Trajectory};
use crate::error::{Error, Result};
use crate::library::LibrarySpec;
use crate::model::{prior_from, HyperSindy, LossComponents, LossNoise, ModelConfig};
use crate::rng::{self, Purpose};

pub const WARMUP_START: f64 = 0.01;
pub const WARMUP_EPOCHS: usize = 100;

fn default_lambda_init() -> f64 {
    0.01
}
fn default_interval() -> usize {
    100
}
fn default_250() -> usize {
    250
}
fn default_learning_rate() -> f64 {
    0.005
}
fn default_num_hidden() -> usize {
    5
}
fn default_weight_decay() -> f64 {
    0.01
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub system: SystemKind,
    pub latent_dim: usize,
    pub beta_init: f64,
    #[serde(default)]
    pub beta_spike: Option<f64>,
    #[serde(default)]
    pub epoch_beta_spike: Option<usize>,
    #[serde(default = "default_lambda_init")]
    pub lambda_init: f64,
    #[serde(default)]
    pub lambda_spike: Option<f64>,
    #[serde(default)]
    pub epoch_lambda_spike: Option<usize>,
    pub epochs: usize,
    pub threshold: f64,
    #[serde(default = "default_interval")]
    pub threshold_interval: usize,
    #[serde(default = "default_250")]
    pub stat_size: usize,
    #[serde(default = "default_250")]
    pub batch_size: usize,
    #[serde(default = "default_learning_rate")]
    pub learning_rate: f64,
    pub hidden_width: usize,
    #[serde(default = "default_num_hidden")]
    pub num_hidden: usize,
    #[serde(default = "default_weight_decay")]
    pub weight_decay: f64,
    #[serde(default)]
    pub seed: u64,
}

/// Names accepted by [`TrainConfig::preset`].
pub const PRESET_NAMES: &[&str] = &[
    "lorenz_sigma1",
    "lorenz_sigma5",
    "lorenz_sigma10",
    "rossler_sigma1",
    "rossler_sigma5",
    "rossler_sigma10",
    "rossler_rmse_sigma1",
    "rossler_rmse_sigma5",
    "rossler_rmse_sigma10",
    "lotka_volterra",
    "lorenz96_sigma10",
    "tiny",
];

impl TrainConfig {
    fn base(system: SystemKind, latent_dim: usize, epochs: usize, threshold: f64) -> Self {
        Self {
            system,
            latent_dim,
            beta_init: 10.0,
            beta_spike: None,
            epoch_beta_spike: None,
            lambda_init: 0.01,
            lambda_spike: None,
            epoch_lambda_spike: None,
            epochs,
            threshold,
            threshold_interval: 100,
            stat_size: 250,
            batch_size: 250,
            learning_rate: 0.005,
            hidden_width: 64,
            num_hidden: 5,
            weight_decay: 0.01,
            seed: 0,
        }
    }

    fn spikes(mut self, beta: Option<(f64, usize)>, lambda: Option<(f64, usize)>) -> Self {
        self.beta_spike = beta.map(|b| b.0);
        self.epoch_beta_spike = beta.map(|b| b.1);
        self.lambda_spike = lambda.map(|l| l.0);
        self.epoch_lambda_spike = lambda.map(|l| l.1);
        self
    }

    /// Reference hyperparameters for each benchmark row.
    pub fn preset(name: &str) -> Result<Self> {
        use SystemKind::*;
        let lorenz = |beta: f64| Self::base(Lorenz, 6, 999, 0.05).spikes(Some((beta, 400)), Some((10.0, 400)));
        let rossler = |epochs: usize, beta: f64, lambda: f64, lambda_epoch: usize| {
            Self::base(Rossler, 6, epochs, 0.01).spikes(Some((beta, 200)), Some((lambda, lambda_epoch)))
        };
        let cfg = match name {
            "lorenz_sigma1" => lorenz(100.0),
            "lorenz_sigma5" | "lorenz_sigma10" => lorenz(400.0),
            "rossler_sigma1" | "rossler_rmse_sigma1" => rossler(499, 100.0, 0.1, 200),
            "rossler_sigma5" => rossler(600, 100.0, 0.1, 300),
            "rossler_sigma10" => rossler(600, 100.0, 1.0, 300),
            "rossler_rmse_sigma5" => rossler(600, 200.0, 0.1, 300),
            "rossler_rmse_sigma10" => rossler(600, 300.0, 1.0, 300),
            "lotka_volterra" => Self::base(LotkaVolterra, 4, 250, 0.1).spikes(None, Some((0.1, 100))),
            "lorenz96_sigma10" => Self {
                hidden_width: 128,
                ..Self::base(Lorenz96, 20, 999, 0.05).spikes(None, Some((10.0, 400)))
            },
            "tiny" => Self {
                hidden_width: 16,
                threshold_interval: 25,
                ..Self::base(LotkaVolterra, 2, 50, 0.01)
            },
            other => {
                return Err(Error::Config(format!(
                    "unknown preset '{other}'; expected one of {}",
                    PRESET_NAMES.join(", ")
                )))
            }
        };
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        let nonneg = [
            ("beta_init", self.beta_init),
            ("lambda_init", self.lambda_init),
            ("threshold", self.threshold),
            ("learning_rate", self.learning_rate),
            ("weight_decay", self.weight_decay),
            ("beta_spike", self.beta_spike.unwrap_or(0.0)),
            ("lambda_spike", self.lambda_spike.unwrap_or(0.0)),
        ];
        for (name, v) in nonneg {
            if !(v >= 0.0) || !v.is_finite() {
                return bad(format!("{name} must be finite and >= 0, got {v}"));
            }
        }
        for (name, value, epoch) in [
            ("beta", self.beta_spike.is_some(), self.epoch_beta_spike),
            ("lambda", self.lambda_spike.is_some(), self.epoch_lambda_spike),
        ] {
            if value != epoch.is_some() {
                return bad(format!("{name}_spike and epoch_{name}_spike must be given together"));
            }
            if let Some(e) = epoch {
                if e >= self.epochs {
                    return bad(format!("epoch_{name}_spike {e} is not below epochs {}", self.epochs));
                }
            }
        }
        let positive = [
            ("latent_dim", self.latent_dim),
            ("hidden_width", self.hidden_width),
            ("num_hidden", self.num_hidden),
            ("batch_size", self.batch_size),
            ("stat_size", self.stat_size),
            ("threshold_interval", self.threshold_interval),
        ];
        for (name, v) in positive {
            if v == 0 {
                return bad(format!("{name} must be >= 1"));
            }
        }
        Ok(())
    }

    /// Same config run for `epochs` epochs; spikes that would fire at or
    /// after the new end are dropped.
    pub fn with_epochs(mut self, epochs: usize) -> Self {
        self.epochs = epochs;
        if self.epoch_beta_spike.is_some_and(|e| e >= epochs) {
            self.beta_spike = None;
            self.epoch_beta_spike = None;
        }
        if self.epoch_lambda_spike.is_some_and(|e| e >= epochs) {
            self.lambda_spike = None;
            self.epoch_lambda_spike = None;
        }
        self
    }

    pub fn model_config(&self, state_dim: usize) -> Result<ModelConfig> {
        Ok(ModelConfig {
            library: LibrarySpec::for_system(self.system, state_dim)?,
            latent_dim: self.latent_dim,
            hidden_width: self.hidden_width,
            num_hidden: self.num_hidden,
        })
    }

    pub fn optimizer_config(&self) -> AdamWConfig {
        AdamWConfig {
            learning_rate: self.learning_rate,
            weight_decay: self.weight_decay,
            ..AdamWConfig::default()
        }
    }
}

/// Linear ramp from 0.01 to `beta_init` over the first 100 epochs, then
/// constant; the spike value replaces it from its epoch on.
pub fn beta_schedule(cfg: &TrainConfig, epoch: usize) -> f64 {
    if let (Some(b), Some(e)) = (cfg.beta_spike, cfg.epoch_beta_spike) {
        if epoch >= e {
            return b;
        }
    }
    if epoch >= WARMUP_EPOCHS {
        cfg.beta_init
    } else {
        WARMUP_START + (cfg.beta_init - WARMUP_START) * epoch as f64 / WARMUP_EPOCHS as f64
    }
}

pub fn lambda_schedule(cfg: &TrainConfig, epoch: usize) -> f64 {
    match (cfg.lambda_spike, cfg.epoch_lambda_spike) {
        (Some(l), Some(e)) if epoch >= e => l,
        _ => cfg.lambda_init,
    }
}

pub fn is_threshold_epoch(cfg: &TrainConfig, epoch: usize) -> bool {
    epoch > 0 && epoch.is_multiple_of(cfg.threshold_interval)
}

/// Permanently zeroes gates whose mean prior coefficient is below the
/// threshold in magnitude. Returns how many gates were newly removed.
pub fn threshold_update(model: &mut HyperSindy, cfg: &TrainConfig, seed: u64) -> Result<usize> {
    let mut rng = rng::stream(seed, Purpose::Threshold, 0);
    threshold_with(model, cfg, &mut rng)
}

fn threshold_with(model: &mut HyperSindy, cfg: &TrainConfig, rng: &mut rng::Rng) -> Result<usize> {
    let z = prior_from(rng, model.latent_dim(), cfg.stat_size)?;
    let coeffs = model.hypernet_coefficients(&z)?;
    let block = model.num_terms() * model.state_dim();
    let mut mean = vec![0.0; block];
    for (k, v) in coeffs.data().iter().enumerate() {
        mean[k % block] += v;
    }
    let s = cfg.stat_size as f64;
    let mut removed = 0;
    for (i, m) in mean.iter().enumerate() {
        if (m / s).abs() < cfg.threshold && model.mask.zero_out(i) {
            removed += 1;
        }
    }
    Ok(removed)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub recon: f64,
    pub kl: f64,
    pub l0: f64,
    pub beta: f64,
    pub lambda: f64,
    pub active_terms: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub records: Vec<EpochRecord>,
}

impl TrainHistory {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

pub fn train(cfg: &TrainConfig, data: &Trajectory) -> Result<(HyperSindy, TrainHistory)> {
    train_with(cfg, data, |_| {})
}

/// [`train`] with a callback after every epoch.
pub fn train_with(
    cfg: &TrainConfig,
    data: &Trajectory,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<(HyperSindy, TrainHistory)> {
    cfg.validate()?;
    let xdot = data
        .derivatives
        .as_ref()
        .ok_or_else(|| Error::Contract("training data has no derivatives".into()))?;
    let rows = data.states.rows();
    if rows < cfg.batch_size {
        return Err(Error::Contract(format!(
            "training needs at least batch_size = {} rows, got {rows}",
            cfg.batch_size
        )));
    }
    let mut model = HyperSindy::new(cfg.model_config(data.state_dim())?, cfg.seed)?;
    let mut history = TrainHistory::default();
    if cfg.epochs == 0 {
        return Ok((model, history));
    }
    let theta = model.library.evaluate(&data.states)?;
    let mut opt = AdamW::new(cfg.optimizer_config(), &model.params());
    let batches = rows / cfg.batch_size;
    let (l, n) = model.mask.shape();
    let mut order: Vec<usize> = (0..rows).collect();

    for epoch in 0..cfg.epochs {
        let beta = beta_schedule(cfg, epoch);
        let lambda = lambda_schedule(cfg, epoch);
        order.sort_unstable();
        order.shuffle(&mut rng::stream(cfg.seed, Purpose::Shuffle, epoch as u64));
        let mut sum = LossComponents::default();
        for batch in 0..batches {
            let idx = &order[batch * cfg.batch_size..(batch + 1) * cfg.batch_size];
            let x = data.states.select_rows(idx);
            let y = xdot.select_rows(idx);
            let th = theta.select_rows(idx);
            let mut rng = rng::stream(cfg.seed, Purpose::Reparam, (epoch * batches + batch) as u64);
            let noise = LossNoise::draw(&mut rng, cfg.batch_size, cfg.latent_dim, l * n);
            let c = model.accumulate_gradients(&x, &y, &th, beta, lambda, &noise)?;
            for (component, value) in [("reconstruction", c.recon), ("kl", c.kl), ("l0", c.l0), ("total", c.total)] {
                if !value.is_finite() {
                    return Err(Error::NonFiniteLoss {
                        epoch,
                        batch,
                        component,
                        value,
                    });
                }
            }
            opt.step(&mut model.params_mut())?;
            sum.recon += c.recon;
            sum.kl += c.kl;
            sum.l0 += c.l0;
        }
        if is_threshold_epoch(cfg, epoch) {
            let mut rng = rng::stream(cfg.seed, Purpose::Threshold, epoch as u64);
            threshold_with(&mut model, cfg, &mut rng)?;
        }
        let b = batches as f64;
        let record = EpochRecord {
            epoch,
            recon: sum.recon / b,
            kl: sum.kl / b,
            l0: sum.l0 / b,
            beta,
            lambda,
            active_terms: model.active_terms(),
        };
        on_epoch(&record);
        history.records.push(record);
    }
    Ok((model, history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{estimate_derivatives, simulate, SystemSpec};

    #[test]
    fn shortening_drops_late_spikes() {
        let full = TrainConfig::preset("rossler_sigma5").unwrap();
        let short = full.clone().with_epochs(250);
        assert_eq!((short.beta_spike, short.epoch_beta_spike), (Some(100.0), Some(200)));
        assert_eq!((short.lambda_spike, short.epoch_lambda_spike), (None, None));
        short.validate().unwrap();
        assert_eq!(full.clone().with_epochs(full.epochs), full);
    }

    #[test]
    fn beta_warmup_and_spike() {
        let cfg = TrainConfig::preset("lorenz_sigma5").unwrap();
        assert_eq!(beta_schedule(&cfg, 0), 0.01);
        assert!((beta_schedule(&cfg, 50) - 5.005).abs() < 1e-12);
        assert_eq!(beta_schedule(&cfg, 100), 10.0);
        assert_eq!(beta_schedule(&cfg, 399), 10.0);
        assert_eq!(beta_schedule(&cfg, 400), 400.0);
        assert_eq!(beta_schedule(&cfg, 998), 400.0);
    }

    #[test]
    fn lambda_steps_once() {
        let cfg = TrainConfig::preset("lorenz_sigma1").unwrap();
        assert_eq!(lambda_schedule(&cfg, 0), 0.01);
        assert_eq!(lambda_schedule(&cfg, 399), 0.01);
        assert_eq!(lambda_schedule(&cfg, 400), 10.0);
        let lv = TrainConfig {
            lambda_spike: None,
            epoch_lambda_spike: None,
            ..TrainConfig::preset("lotka_volterra").unwrap()
        };
        assert!((0..lv.epochs).all(|e| lambda_schedule(&lv, e) == 0.01));
    }

    #[test]
    fn preset_table() {
        let p = |n: &str| TrainConfig::preset(n).unwrap();
        let l1 = p("lorenz_sigma1");
        assert_eq!((l1.epochs, l1.threshold, l1.latent_dim), (999, 0.05, 6));
        assert_eq!((l1.beta_spike, l1.epoch_beta_spike), (Some(100.0), Some(400)));
        assert_eq!((l1.lambda_spike, l1.epoch_lambda_spike), (Some(10.0), Some(400)));
        let r5 = p("rossler_sigma5");
        assert_eq!((r5.epochs, r5.threshold), (600, 0.01));
        assert_eq!((r5.lambda_spike, r5.epoch_lambda_spike), (Some(0.1), Some(300)));
        assert_eq!(p("rossler_rmse_sigma10").beta_spike, Some(300.0));
        let lv = p("lotka_volterra");
        assert_eq!((lv.latent_dim, lv.epochs, lv.threshold, lv.beta_spike), (4, 250, 0.1, None));
        let l96 = p("lorenz96_sigma10");
        assert_eq!((l96.latent_dim, l96.hidden_width), (20, 128));
        for name in PRESET_NAMES {
            let c = p(name);
            c.validate().unwrap();
            assert_eq!((c.batch_size, c.stat_size, c.learning_rate, c.num_hidden), (250, 250, 0.005, 5));
        }
        assert!(TrainConfig::preset("nope").is_err());
    }

    #[test]
    fn validation_rejects_late_spike() {
        let mut c = TrainConfig::preset("lorenz_sigma1").unwrap();
        c.epochs = 300;
        assert!(c.validate().is_err());
        let mut c = TrainConfig::preset("lorenz_sigma1").unwrap();
        c.lambda_init = -1.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn strict_config_parsing() {
        let ok = r#"{"system":"lorenz","latent_dim":6,"beta_init":10,"epochs":5,"threshold":0.05,"hidden_width":8}"#;
        let cfg: TrainConfig = serde_json::from_str(ok).unwrap();
        assert_eq!(cfg.batch_size, 250);
        let bad = r#"{"system":"lorenz","latent_dim":6,"beta_init":10,"epochs":5,"threshold":0.05,"hidden_width":8,"extra":1}"#;
        assert!(serde_json::from_str::<TrainConfig>(bad).is_err());
    }

    fn tiny_data(steps: usize) -> Trajectory {
        let spec = SystemSpec::lotka_volterra(1.0);
        estimate_derivatives(&simulate(&spec, &[4.0, 2.0], 0.01, steps, 1).unwrap()).unwrap()
    }

    #[test]
    fn zero_epochs_returns_fresh_model() {
        let cfg = TrainConfig {
            epochs: 0,
            ..TrainConfig::preset("tiny").unwrap()
        };
        let (model, hist) = train(&cfg, &tiny_data(300)).unwrap();
        assert!(hist.is_empty());
        assert_eq!(model, HyperSindy::new(cfg.model_config(2).unwrap(), cfg.seed).unwrap());
    }

    #[test]
    fn training_is_deterministic_and_active_count_monotone() {
        let cfg = TrainConfig {
            epochs: 30,
            threshold_interval: 10,
            threshold: 0.05,
            ..TrainConfig::preset("tiny").unwrap()
        };
        let data = tiny_data(600);
        let (a, ha) = train(&cfg, &data).unwrap();
        let (b, hb) = train(&cfg, &data).unwrap();
        assert_eq!(a, b);
        assert_eq!(ha, hb);
        assert_eq!(ha.len(), 30);
        assert!(ha.records.windows(2).all(|w| w[1].active_terms <= w[0].active_terms));
    }

    #[test]
    fn missing_derivatives_and_short_data_are_contract_errors() {
        let cfg = TrainConfig::preset("tiny").unwrap();
        let raw = simulate(&SystemSpec::lotka_volterra(1.0), &[4.0, 2.0], 0.01, 300, 0).unwrap();
        assert!(matches!(train(&cfg, &raw), Err(Error::Contract(_))));
        assert!(matches!(train(&cfg, &tiny_data(100)), Err(Error::Contract(_))));
    }

    #[test]
    fn threshold_examples() {
        let cfg = TrainConfig::preset("tiny").unwrap();
        let mut model = HyperSindy::new(cfg.model_config(2).unwrap(), 0).unwrap();
        let zero_t = TrainConfig { threshold: 0.0, ..cfg.clone() };
        assert_eq!(threshold_update(&mut model, &zero_t, 1).unwrap(), 0);
        let huge = TrainConfig { threshold: 1e9, ..cfg.clone() };
        assert_eq!(threshold_update(&mut model, &huge, 1).unwrap(), 20);
        assert_eq!(threshold_update(&mut model, &huge, 1).unwrap(), 0);
        assert_eq!(model.active_terms(), 0);
    }

    #[test]
    fn nan_data_aborts_with_component() {
        let cfg = TrainConfig {
            epochs: 2,
            ..TrainConfig::preset("tiny").unwrap()
        };
        let mut data = tiny_data(300);
        let d = data.derivatives.as_mut().unwrap();
        for i in 0..d.rows() {
            d.set(i, 0, f64::NAN);
        }
        match train(&cfg, &data) {
            Err(Error::NonFiniteLoss { epoch, component, .. }) => {
                assert_eq!(epoch, 0);
                assert_eq!(component, "reconstruction");
            }
            other => panic!("expected non-finite loss, got {other:?}"),
        }
    }
}

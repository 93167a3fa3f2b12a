use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{estimate_derivatives, initial_condition, simulate, Split, SystemKind, SystemSpec, DEFAULT_DT, DEFAULT_STEPS};
use crate::error::{Error, Result};
use crate::rng::{self, Purpose};
use crate::training::{train, TrainConfig};

use crate::model::HyperSindy;

use super::ensemble::{ground_truth, sample_coefficients, CoefficientEnsemble, RmseReport};
use super::sindy::{esindy, EsindyConfig};

/// Standard deviation of the per-seed perturbation of the initial condition.
pub const IC_PERTURBATION: f64 = 0.5;

#[derive(Clone, Debug, PartialEq)]
pub struct Table1Options {
    pub steps: usize,
    pub samples: usize,
    /// Replaces the preset training config when set (its seed is overridden
    /// per run).
    pub train: Option<TrainConfig>,
    pub esindy: Option<EsindyConfig>,
    /// Worker threads; `None` uses the rayon default.
    pub threads: Option<usize>,
}

impl Default for Table1Options {
    fn default() -> Self {
        Self {
            steps: DEFAULT_STEPS,
            samples: 250,
            train: None,
            esindy: None,
            threads: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Spread {
    pub mean: f64,
    pub std: f64,
}

impl Spread {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Self { mean, std: var.sqrt() }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub mean_rmse: Spread,
    pub std_rmse: Spread,
}

impl MethodSummary {
    fn of(reports: &[RmseReport]) -> Self {
        let pick = |f: fn(&RmseReport) -> f64| Spread::of(&reports.iter().map(f).collect::<Vec<_>>());
        Self {
            mean_rmse: pick(|r| r.mean_rmse),
            std_rmse: pick(|r| r.std_rmse),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    pub initial_condition: Vec<f64>,
    pub hypersindy: RmseReport,
    pub esindy: RmseReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Table1Summary {
    pub system: SystemKind,
    pub sigma: f64,
    pub n_seeds: usize,
    pub hypersindy: MethodSummary,
    pub esindy: MethodSummary,
    pub runs: Vec<SeedResult>,
}

/// Preset name used for a coefficient-RMSE run.
pub fn table1_preset(system: SystemKind, sigma: f64) -> Result<&'static str> {
    let level = [1.0, 5.0, 10.0]
        .iter()
        .position(|&s| s == sigma)
        .ok_or_else(|| Error::Config(format!("sigma must be 1, 5 or 10, got {sigma}")))?;
    match system {
        SystemKind::Lorenz => Ok(["lorenz_sigma1", "lorenz_sigma5", "lorenz_sigma10"][level]),
        SystemKind::Rossler => Ok(["rossler_rmse_sigma1", "rossler_rmse_sigma5", "rossler_rmse_sigma10"][level]),
        other => Err(Error::Config(format!("coefficient RMSE runs support lorenz and rossler, not {other}"))),
    }
}

/// A scored seed together with the trained model and its prior ensemble.
#[derive(Clone, Debug)]
pub struct SeedFit {
    pub result: SeedResult,
    pub model: HyperSindy,
    pub ensemble: CoefficientEnsemble,
}

/// One seed: perturbed initial condition, simulation, both fits, both scores.
pub fn table1_run(system: SystemKind, sigma: f64, seed: u64, opts: &Table1Options) -> Result<SeedResult> {
    table1_fit(system, sigma, seed, opts).map(|f| f.result)
}

/// [`table1_run`] keeping the trained model.
pub fn table1_fit(system: SystemKind, sigma: f64, seed: u64, opts: &Table1Options) -> Result<SeedFit> {
    let spec = SystemSpec::from_kind(system, sigma);
    let mut cfg = match &opts.train {
        Some(c) => c.clone(),
        None => TrainConfig::preset(table1_preset(system, sigma)?)?,
    };
    cfg.seed = seed;
    let base = initial_condition(&spec, Split::Train)?;
    let noise = Normal::new(0.0, IC_PERTURBATION).expect("positive std");
    let mut rng = rng::stream(seed, Purpose::InitialCondition, 0);
    let x0: Vec<f64> = base.iter().map(|v| v + noise.sample(&mut rng)).collect();
    let data = estimate_derivatives(&simulate(&spec, &x0, DEFAULT_DT, opts.steps, seed)?)?;
    let truth = ground_truth(&spec, &cfg.model_config(spec.state_dim)?.library)?;

    let (model, _) = train(&cfg, &data)?;
    let ensemble = sample_coefficients(&model, opts.samples, seed)?;
    let hyper = ensemble.rmse_against(&truth)?;
    let ecfg = opts.esindy.unwrap_or_else(|| EsindyConfig::for_system(system));
    let ens = esindy(&data, model.library.spec(), &ecfg, seed)?.rmse_against(&truth)?;
    Ok(SeedFit {
        result: SeedResult {
            seed,
            initial_condition: x0,
            hypersindy: hyper,
            esindy: ens,
        },
        model,
        ensemble,
    })
}

/// Runs seeds `0..n_seeds` in parallel and summarizes both methods.
pub fn table1_experiment(system: SystemKind, sigma: f64, n_seeds: usize, opts: &Table1Options) -> Result<Table1Summary> {
    if n_seeds == 0 {
        return Err(Error::Config("n_seeds must be at least 1".into()));
    }
    if opts.train.is_none() {
        table1_preset(system, sigma)?;
    }
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(t) = opts.threads {
        builder = builder.num_threads(t.max(1));
    }
    let pool = builder
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let runs = pool.install(|| {
        (0..n_seeds as u64)
            .into_par_iter()
            .map(|s| table1_run(system, sigma, s, opts))
            .collect::<Result<Vec<_>>>()
    })?;
    let h: Vec<RmseReport> = runs.iter().map(|r| r.hypersindy).collect();
    let e: Vec<RmseReport> = runs.iter().map(|r| r.esindy).collect();
    Ok(Table1Summary {
        system,
        sigma,
        n_seeds,
        hypersindy: MethodSummary::of(&h),
        esindy: MethodSummary::of(&e),
        runs,
    })
}

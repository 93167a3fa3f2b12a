use serde::{Deserialize, Serialize};

use crate::dynamics::{rk4_step, Trajectory};
use crate::error::{Error, Result};
use crate::library::Library;
use crate::linalg::Matrix;
use crate::model::{prior_from, HyperSindy};
use crate::rng::{self, Purpose};

use super::ensemble::sample_coefficients;

/// Ensemble size and seed behind the mean-mode coefficient matrix. The seed
/// is fixed so mean-mode output never depends on the caller's seed.
pub const MEAN_MODE_SAMPLES: usize = 250;
pub const MEAN_MODE_SEED: u64 = 0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GenerateMode {
    /// Fresh latent draw at every step.
    Sample,
    /// Ensemble-mean coefficients throughout.
    Mean,
}

impl GenerateMode {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "sample" => Ok(Self::Sample),
            "mean" => Ok(Self::Mean),
            other => Err(Error::Config(format!("unknown mode '{other}', expected sample or mean"))),
        }
    }
}

/// `out = Theta(x) C` for an `l x n` coefficient matrix.
pub fn library_field(library: &Library, coeffs: &Matrix, theta: &mut [f64], x: &[f64], out: &mut [f64]) {
    library.evaluate_row(x, theta);
    out.iter_mut().for_each(|v| *v = 0.0);
    for (k, &t) in theta.iter().enumerate() {
        if t == 0.0 {
            continue;
        }
        for (o, c) in out.iter_mut().zip(coeffs.row(k)) {
            *o += t * c;
        }
    }
}

/// Integrates the learned random ODE with RK4, holding coefficients fixed
/// within each step.
pub fn generate_trajectory(
    model: &HyperSindy,
    x0: &[f64],
    dt: f64,
    steps: usize,
    seed: u64,
    mode: GenerateMode,
) -> Result<Trajectory> {
    let n = model.state_dim();
    if x0.len() != n {
        return Err(Error::Config(format!(
            "initial condition has {} entries, model has {n} states",
            x0.len()
        )));
    }
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::Config(format!("dt must be positive, got {dt}")));
    }
    if steps == 0 {
        return Err(Error::Config("steps must be at least 1".into()));
    }
    let l = model.num_terms();
    let mean = match mode {
        GenerateMode::Mean => Some(sample_coefficients(model, MEAN_MODE_SAMPLES, MEAN_MODE_SEED)?.mean),
        GenerateMode::Sample => None,
    };
    let mut rng = rng::stream(seed, Purpose::Generate, 0);
    let mut theta = vec![0.0; l];
    let mut x = x0.to_vec();
    let mut next = vec![0.0; n];
    let mut states = Vec::with_capacity((steps + 1) * n);
    states.extend_from_slice(x0);
    for step in 1..=steps {
        let coeffs = match &mean {
            Some(m) => m.clone(),
            None => {
                let z = prior_from(&mut rng, model.latent_dim(), 1)?;
                let c = model.masked_coefficients(&z)?;
                Matrix::new(l, n, c.into_data())?
            }
        };
        rk4_step(
            &mut |s: &[f64], o: &mut [f64]| library_field(&model.library, &coeffs, &mut theta, s, o),
            &x,
            dt,
            &mut next,
        );
        if !next.iter().all(|v| v.is_finite()) {
            return Err(Error::Divergence {
                step,
                detail: format!("generated state {next:?}"),
            });
        }
        std::mem::swap(&mut x, &mut next);
        states.extend_from_slice(&x);
    }
    Ok(Trajectory {
        dt,
        states: Matrix::new(steps + 1, n, states)?,
        derivatives: None,
        seed,
        system: None,
    })
}

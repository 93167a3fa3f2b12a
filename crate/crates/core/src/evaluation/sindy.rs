//! Sequentially thresholded least squares and its bootstrap ensemble.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::dynamics::{SystemKind, Trajectory};
use crate::error::{shape_err, Error, Result};
use crate::library::{Library, LibrarySpec};
use crate::linalg::{ridge_least_squares, Matrix};
use crate::rng::{self, Purpose};

use super::ensemble::CoefficientEnsemble;

/// Fits each column of `xdot` on `theta`, repeatedly zeroing coefficients
/// below `threshold` and refitting on the survivors.
pub fn stlsq(theta: &Matrix, xdot: &Matrix, threshold: f64, ridge: f64, iters: usize) -> Result<Matrix> {
    let (m, l) = theta.shape();
    if xdot.rows() != m {
        return Err(shape_err(
            "stlsq",
            format!("library has {m} rows, derivatives have {}", xdot.rows()),
        ));
    }
    if iters == 0 {
        return Err(Error::Config("stlsq needs at least one iteration".into()));
    }
    if !(threshold >= 0.0) || !(ridge >= 0.0) {
        return Err(Error::Config(format!(
            "threshold and ridge must be >= 0, got {threshold} and {ridge}"
        )));
    }
    let n = xdot.cols();
    let mut coeffs = Matrix::zeros(l, n);
    for j in 0..n {
        let y = Matrix::new(m, 1, xdot.column(j))?;
        let mut support: Vec<usize> = (0..l).collect();
        let mut c = fit(theta, &y, &support, ridge)?;
        for _ in 0..iters {
            let keep: Vec<usize> = support
                .iter()
                .zip(&c)
                .filter(|(_, v)| v.abs() >= threshold)
                .map(|(&k, _)| k)
                .collect();
            if keep.len() == support.len() {
                break;
            }
            support = keep;
            if support.is_empty() {
                c.clear();
                break;
            }
            c = fit(theta, &y, &support, ridge)?;
        }
        for (&k, &v) in support.iter().zip(&c) {
            coeffs.set(k, j, v);
        }
    }
    Ok(coeffs)
}

fn fit(theta: &Matrix, y: &Matrix, support: &[usize], ridge: f64) -> Result<Vec<f64>> {
    let a = theta.select_columns(support);
    Ok(ridge_least_squares(&a, y, ridge)?.into_data())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EsindyConfig {
    pub n_models: usize,
    pub subsample_frac: f64,
    pub threshold: f64,
    pub ridge: f64,
    pub iters: usize,
}

impl EsindyConfig {
    /// Bootstrap settings with the threshold tuned for `system` on
    /// noise-free data.
    pub fn for_system(system: SystemKind) -> Self {
        Self {
            n_models: 100,
            subsample_frac: 1.0,
            threshold: esindy_threshold(system),
            ridge: 0.0,
            iters: 10,
        }
    }
}

/// STLSQ thresholds picked by [`tune_threshold`] on `sigma = 0` training data.
pub fn esindy_threshold(system: SystemKind) -> f64 {
    match system {
        SystemKind::Lorenz => 0.5,
        SystemKind::Rossler => 0.1,
        SystemKind::LotkaVolterra => 0.5,
        SystemKind::Lorenz96 => 0.5,
    }
}

/// Bootstrap-resampled STLSQ fits gathered into an ensemble.
pub fn esindy(data: &Trajectory, library: &LibrarySpec, cfg: &EsindyConfig, seed: u64) -> Result<CoefficientEnsemble> {
    if cfg.n_models < 2 {
        return Err(Error::Config(format!("E-SINDy needs at least 2 models, got {}", cfg.n_models)));
    }
    if !(cfg.subsample_frac > 0.0 && cfg.subsample_frac <= 1.0) {
        return Err(Error::Config(format!(
            "subsample_frac must lie in (0, 1], got {}",
            cfg.subsample_frac
        )));
    }
    let xdot = data
        .derivatives
        .as_ref()
        .ok_or_else(|| Error::Contract("E-SINDy needs derivatives".into()))?;
    let theta = Library::new(*library)?.evaluate(&data.states)?;
    let m = theta.rows();
    let take = ((cfg.subsample_frac * m as f64).round() as usize).max(1);
    let fits = (0..cfg.n_models)
        .map(|r| {
            let mut rng = rng::stream(seed, Purpose::Bootstrap, r as u64);
            let rows: Vec<usize> = (0..take).map(|_| rng.random_range(0..m)).collect();
            stlsq(&theta.select_rows(&rows), &xdot.select_rows(&rows), cfg.threshold, cfg.ridge, cfg.iters)
        })
        .collect::<Result<Vec<_>>>()?;
    CoefficientEnsemble::from_matrices(&fits)
}

/// Picks the grid threshold whose STLSQ fit on `data` is closest to `truth`
/// in relative Frobenius error; ties go to the larger threshold.
pub fn tune_threshold(
    data: &Trajectory,
    library: &LibrarySpec,
    truth: &Matrix,
    grid: &[f64],
    ridge: f64,
    iters: usize,
) -> Result<f64> {
    let xdot = data
        .derivatives
        .as_ref()
        .ok_or_else(|| Error::Contract("threshold tuning needs derivatives".into()))?;
    let theta = Library::new(*library)?.evaluate(&data.states)?;
    let mut best: Option<(f64, f64)> = None;
    for &t in grid {
        let c = stlsq(&theta, xdot, t, ridge, iters)?;
        let err = super::ensemble::coefficient_rmse(truth, &c)?;
        if best.is_none_or(|(e, _)| err <= e) {
            best = Some((err, t));
        }
    }
    best.map(|b| b.1)
        .ok_or_else(|| Error::Config("empty threshold grid".into()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn exact_problem() -> (Matrix, Matrix) {
        // y1 = 2 x1 - 0.5 x1 x2, y2 = 3 on the degree-2 library of two states.
        let lib = Library::new(LibrarySpec::new(2, 2, true).unwrap()).unwrap();
        let mut states = Vec::new();
        for i in 0..40 {
            let t = i as f64 * 0.37;
            states.extend([t.sin() * 2.0, (1.3 * t).cos() + 0.2 * t]);
        }
        let x = Matrix::new(40, 2, states).unwrap();
        let theta = lib.evaluate(&x).unwrap();
        let mut y = Matrix::zeros(40, 2);
        for i in 0..40 {
            let (a, b) = (x.get(i, 0), x.get(i, 1));
            y.set(i, 0, 2.0 * a - 0.5 * a * b);
            y.set(i, 1, 3.0);
        }
        (theta, y)
    }

    #[test]
    fn exact_support_recovery() {
        let (theta, y) = exact_problem();
        let c = stlsq(&theta, &y, 0.1, 0.0, 10).unwrap();
        for k in 0..6 {
            let expect0 = match k {
                1 => 2.0,
                4 => -0.5,
                _ => 0.0,
            };
            let expect1 = if k == 0 { 3.0 } else { 0.0 };
            assert!((c.get(k, 0) - expect0).abs() < 1e-8, "term {k}: {}", c.get(k, 0));
            assert!((c.get(k, 1) - expect1).abs() < 1e-8);
        }
    }

    #[test]
    fn zero_threshold_is_least_squares() {
        let (theta, y) = exact_problem();
        let c = stlsq(&theta, &y, 0.0, 0.0, 5).unwrap();
        let direct = ridge_least_squares(&theta, &y, 0.0).unwrap();
        for (a, b) in c.data().iter().zip(direct.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn huge_threshold_zeroes_everything() {
        let (theta, y) = exact_problem();
        let c = stlsq(&theta, &y, 1e6, 0.0, 3).unwrap();
        assert!(c.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn support_never_revives() {
        // With one iteration only the first pruning happens; more iterations
        // can only prune further.
        let (theta, mut y) = exact_problem();
        for i in 0..y.rows() {
            y.set(i, 0, y.get(i, 0) + 0.05 * ((i * 7 % 11) as f64 - 5.0));
        }
        let mut prev: Option<Vec<bool>> = None;
        for iters in 1..6 {
            let c = stlsq(&theta, &y, 0.3, 0.0, iters).unwrap();
            let live: Vec<bool> = c.data().iter().map(|&v| v != 0.0).collect();
            if let Some(p) = &prev {
                assert!(live.iter().zip(p).all(|(&now, &before)| !now || before));
            }
            prev = Some(live);
        }
    }

    #[test]
    fn singular_without_ridge_is_numerical_error() {
        let theta = Matrix::new(3, 2, vec![1.0, 1.0, 2.0, 2.0, 3.0, 3.0]).unwrap();
        let y = Matrix::new(3, 1, vec![1.0, 2.0, 3.0]).unwrap();
        assert!(matches!(stlsq(&theta, &y, 0.0, 0.0, 1), Err(Error::Numerical(_))));
    }

    #[test]
    fn esindy_on_exact_data() {
        let (theta, y) = exact_problem();
        // Rebuild a trajectory whose library matrix equals `theta`.
        let states = Matrix::new(40, 2, (0..40).flat_map(|i| [theta.get(i, 1), theta.get(i, 2)]).collect()).unwrap();
        let data = Trajectory {
            dt: 0.1,
            states,
            derivatives: Some(y),
            seed: 0,
            system: None,
        };
        let cfg = EsindyConfig {
            n_models: 8,
            subsample_frac: 1.0,
            threshold: 0.1,
            ridge: 0.0,
            iters: 10,
        };
        let e = esindy(&data, &LibrarySpec::new(2, 2, true).unwrap(), &cfg, 3).unwrap();
        assert_eq!(e.len(), 8);
        assert!((e.mean.get(1, 0) - 2.0).abs() < 1e-6);
        assert!((e.mean.get(0, 1) - 3.0).abs() < 1e-6);
        assert!(e.std.data().iter().all(|&s| s < 1e-6));
        let mut bad = cfg;
        bad.n_models = 1;
        assert!(esindy(&data, &LibrarySpec::new(2, 2, true).unwrap(), &bad, 3).is_err());
    }
}

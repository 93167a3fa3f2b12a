use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::dynamics::{SystemKind, SystemSpec};
use crate::error::{domain_err, shape_err, Result};
use crate::library::{Library, LibrarySpec};
use crate::linalg::Matrix;
use crate::model::{sample_prior, HyperSindy};

/// Coefficient samples with their elementwise mean and population std.
#[derive(Clone, Debug, PartialEq)]
pub struct CoefficientEnsemble {
    /// `[s, l, n]`
    pub samples: Tensor,
    pub mean: Matrix,
    pub std: Matrix,
}

impl CoefficientEnsemble {
    pub fn from_samples(samples: Tensor) -> Result<Self> {
        if samples.ndim() != 3 || samples.shape()[0] == 0 {
            return Err(shape_err(
                "coefficient_ensemble",
                format!("expected [s, l, n] with s >= 1, got {:?}", samples.shape()),
            ));
        }
        let (s, l, n) = (samples.shape()[0], samples.shape()[1], samples.shape()[2]);
        let block = l * n;
        let mut mean = vec![0.0; block];
        for (k, v) in samples.data().iter().enumerate() {
            mean[k % block] += v;
        }
        mean.iter_mut().for_each(|m| *m /= s as f64);
        let mut var = vec![0.0; block];
        for (k, v) in samples.data().iter().enumerate() {
            let d = v - mean[k % block];
            var[k % block] += d * d;
        }
        let std = var.iter().map(|v| (v / s as f64).sqrt()).collect();
        Ok(Self {
            mean: Matrix::new(l, n, mean)?,
            std: Matrix::new(l, n, std)?,
            samples,
        })
    }

    /// Stacks `l x n` matrices into an ensemble.
    pub fn from_matrices(mats: &[Matrix]) -> Result<Self> {
        let first = mats
            .first()
            .ok_or_else(|| shape_err("coefficient_ensemble", "no matrices"))?;
        let (l, n) = first.shape();
        let mut data = Vec::with_capacity(mats.len() * l * n);
        for m in mats {
            if m.shape() != (l, n) {
                return Err(shape_err("coefficient_ensemble", "matrices differ in shape"));
            }
            data.extend_from_slice(m.data());
        }
        Self::from_samples(Tensor::new([mats.len(), l, n], data)?)
    }

    pub fn len(&self) -> usize {
        self.samples.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn rmse_against(&self, truth: &GroundTruth) -> Result<RmseReport> {
        Ok(RmseReport {
            mean_rmse: coefficient_rmse(&truth.mean, &self.mean)?,
            std_rmse: coefficient_rmse(&truth.std, &self.std)?,
        })
    }
}

/// Draws `s` latent samples from the prior and gates them with the
/// deterministic mask.
pub fn sample_coefficients(model: &HyperSindy, s: usize, seed: u64) -> Result<CoefficientEnsemble> {
    let z = sample_prior(model.latent_dim(), s, seed)?;
    CoefficientEnsemble::from_samples(model.masked_coefficients(&z)?)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RmseReport {
    pub mean_rmse: f64,
    pub std_rmse: f64,
}

/// `||true - pred||_F / ||true||_F`.
pub fn coefficient_rmse(truth: &Matrix, pred: &Matrix) -> Result<f64> {
    if truth.shape() != pred.shape() {
        return Err(shape_err(
            "coefficient_rmse",
            format!("true {:?} vs predicted {:?}", truth.shape(), pred.shape()),
        ));
    }
    let denom = truth.norm();
    if !(denom > 0.0) {
        return Err(domain_err("coefficient_rmse", "ground-truth coefficients have zero norm"));
    }
    let num = truth
        .data()
        .iter()
        .zip(pred.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    Ok(num / denom)
}

/// True coefficient means and standard deviations laid out over a library.
#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruth {
    pub mean: Matrix,
    pub std: Matrix,
}

impl GroundTruth {
    /// Row-major indices of every nonzero mean entry.
    pub fn support(&self) -> Vec<usize> {
        (0..self.mean.data().len())
            .filter(|&i| self.mean.data()[i] != 0.0)
            .collect()
    }
}

/// Places each system's coefficients over `library`. Parameter noise shows up
/// in `std` only at the terms the sampled parameter multiplies.
pub fn ground_truth(spec: &SystemSpec, library: &LibrarySpec) -> Result<GroundTruth> {
    spec.validate()?;
    let n = spec.state_dim;
    if library.state_dim != n {
        return Err(shape_err(
            "ground_truth",
            format!("library for {} states, system has {n}", library.state_dim),
        ));
    }
    let lib = Library::new(*library)?;
    let l = lib.len();
    let mut mean = Matrix::zeros(l, n);
    let mut std = Matrix::zeros(l, n);
    let sigma = spec.noise_scale;
    let p = &spec.parameter_means;
    let mut put = |exps: Vec<u32>, eq: usize, m: f64, s: f64| -> Result<()> {
        let k = lib.term_index(&exps)?;
        mean.set(k, eq, mean.get(k, eq) + m);
        std.set(k, eq, s);
        Ok(())
    };
    let mono = |pairs: &[(usize, u32)]| {
        let mut e = vec![0u32; n];
        for &(i, k) in pairs {
            e[i] += k;
        }
        e
    };
    match spec.name {
        SystemKind::Lorenz => {
            let (omega, rho, beta) = (p[0], p[1], p[2]);
            put(mono(&[(0, 1)]), 0, -omega, sigma)?;
            put(mono(&[(1, 1)]), 0, omega, sigma)?;
            put(mono(&[(0, 1)]), 1, rho, sigma)?;
            put(mono(&[(1, 1)]), 1, -1.0, 0.0)?;
            put(mono(&[(0, 1), (2, 1)]), 1, -1.0, 0.0)?;
            put(mono(&[(0, 1), (1, 1)]), 2, 1.0, 0.0)?;
            put(mono(&[(2, 1)]), 2, -beta, sigma)?;
        }
        SystemKind::Rossler => {
            let (a, b, c) = (p[0], p[1], p[2]);
            put(mono(&[(1, 1)]), 0, -1.0, 0.0)?;
            put(mono(&[(2, 1)]), 0, -1.0, 0.0)?;
            put(mono(&[(0, 1)]), 1, 1.0, 0.0)?;
            put(mono(&[(1, 1)]), 1, a, sigma)?;
            put(mono(&[]), 2, b, sigma)?;
            put(mono(&[(2, 1)]), 2, -c, sigma)?;
            put(mono(&[(0, 1), (2, 1)]), 2, 1.0, 0.0)?;
        }
        SystemKind::LotkaVolterra => {
            put(mono(&[(0, 1)]), 0, 1.0, 0.0)?;
            put(mono(&[(0, 1), (1, 1)]), 0, -1.0, 0.0)?;
            put(mono(&[(1, 1)]), 1, -1.0, 0.0)?;
            put(mono(&[(0, 1), (1, 1)]), 1, 1.0, 0.0)?;
        }
        SystemKind::Lorenz96 => {
            for i in 0..n {
                let next = (i + 1) % n;
                let prev = (i + n - 1) % n;
                let prev2 = (i + n - 2) % n;
                put(mono(&[]), i, p[i], sigma)?;
                put(mono(&[(next, 1), (prev, 1)]), i, 1.0, 0.0)?;
                put(mono(&[(prev2, 1), (prev, 1)]), i, -1.0, 0.0)?;
                put(mono(&[(i, 1)]), i, -1.0, 0.0)?;
            }
        }
    }
    Ok(GroundTruth { mean, std })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;
    use proptest::prelude::*;

    fn row(v: &[f64]) -> Matrix {
        Matrix::new(1, v.len(), v.to_vec()).unwrap()
    }

    #[test]
    fn rmse_examples() {
        let t = row(&[2.0, 0.0, 0.0]);
        assert_eq!(coefficient_rmse(&t, &t).unwrap(), 0.0);
        assert_eq!(coefficient_rmse(&t, &row(&[1.0, 0.0, 0.0])).unwrap(), 0.5);
        assert_eq!(coefficient_rmse(&t, &row(&[0.0, 0.0, 0.0])).unwrap(), 1.0);
        assert!(matches!(
            coefficient_rmse(&row(&[0.0; 3]), &t),
            Err(Error::Domain { .. })
        ));
        assert!(coefficient_rmse(&t, &row(&[1.0])).is_err());
    }

    proptest! {
        #[test]
        fn rmse_scale_covariant(
            a in proptest::collection::vec(-10.0f64..10.0, 6),
            b in proptest::collection::vec(-10.0f64..10.0, 6),
            c in prop_oneof![-100.0f64..-0.01, 0.01f64..100.0],
        ) {
            let t = Matrix::new(2, 3, a.clone()).unwrap();
            prop_assume!(t.norm() > 1e-6);
            let p = Matrix::new(2, 3, b.clone()).unwrap();
            let ts = Matrix::new(2, 3, a.iter().map(|v| v * c).collect()).unwrap();
            let ps = Matrix::new(2, 3, b.iter().map(|v| v * c).collect()).unwrap();
            let r = coefficient_rmse(&t, &p).unwrap();
            let rs = coefficient_rmse(&ts, &ps).unwrap();
            prop_assert!((r - rs).abs() <= 1e-12 * r.max(1.0));
        }
    }

    #[test]
    fn ensemble_statistics() {
        let s = Tensor::new([2, 1, 2], vec![1.0, 4.0, 3.0, 4.0]).unwrap();
        let e = CoefficientEnsemble::from_samples(s).unwrap();
        assert_eq!(e.mean.data(), &[2.0, 4.0]);
        assert_eq!(e.std.data(), &[1.0, 0.0]);
        let one = Tensor::new([1, 1, 2], vec![5.0, -1.0]).unwrap();
        assert!(CoefficientEnsemble::from_samples(one).unwrap().std.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn lorenz_truth_placement() {
        let lib = LibrarySpec::new(3, 3, false).unwrap();
        let t = ground_truth(&SystemSpec::lorenz(5.0), &lib).unwrap();
        let l = Library::new(lib).unwrap();
        let at = |e: [u32; 3], j: usize| (t.mean.get(l.term_index(&e).unwrap(), j), t.std.get(l.term_index(&e).unwrap(), j));
        assert_eq!(at([1, 0, 0], 0), (-10.0, 5.0));
        assert_eq!(at([0, 1, 0], 0), (10.0, 5.0));
        assert_eq!(at([1, 0, 0], 1), (28.0, 5.0));
        assert_eq!(at([0, 1, 0], 1), (-1.0, 0.0));
        assert_eq!(at([1, 0, 1], 1), (-1.0, 0.0));
        assert_eq!(at([1, 1, 0], 2), (1.0, 0.0));
        assert_eq!(at([0, 0, 1], 2), (-8.0 / 3.0, 5.0));
        assert_eq!(t.support().len(), 7);
        assert_eq!(t.std.data().iter().filter(|&&v| v != 0.0).count(), 4);
    }

    #[test]
    fn other_truths() {
        let r = ground_truth(&SystemSpec::rossler(1.0), &LibrarySpec::new(3, 3, true).unwrap()).unwrap();
        assert_eq!(r.support().len(), 7);
        assert_eq!(r.mean.get(0, 2), 0.2);
        assert_eq!(r.std.get(0, 2), 1.0);
        let lv = ground_truth(&SystemSpec::lotka_volterra(1.0), &LibrarySpec::new(2, 3, true).unwrap()).unwrap();
        assert_eq!(lv.support().len(), 4);
        assert!(lv.std.data().iter().all(|&v| v == 0.0));
        let l96 = ground_truth(&SystemSpec::lorenz96(10, 10.0), &LibrarySpec::new(10, 3, true).unwrap()).unwrap();
        assert_eq!(l96.support().len(), 40);
        assert!((0..10).all(|i| l96.mean.get(0, i) == 8.0 && l96.std.get(0, i) == 10.0));
        assert!(ground_truth(&SystemSpec::lorenz(1.0), &LibrarySpec::new(2, 3, true).unwrap()).is_err());
    }
}

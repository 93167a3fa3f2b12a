//! Binned Kramers-Moyal estimates of drift and diffusion.

use serde::{Deserialize, Serialize};

use crate::dynamics::Trajectory;
use crate::error::{Error, Result};

pub const DEFAULT_BINS: usize = 20;
pub const DEFAULT_MIN_COUNT: usize = 50;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KmBin {
    pub center: Vec<f64>,
    pub count: usize,
    /// `None` when `count` is below the minimum.
    pub drift: Option<Vec<f64>>,
    pub diffusion: Option<Vec<f64>>,
}

/// Uniform grid over the observed range with per-bin moment estimates.
/// Bins are stored with the first dimension varying slowest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KmField {
    pub edges: Vec<Vec<f64>>,
    pub min_count: usize,
    pub bins: Vec<KmBin>,
}

impl KmField {
    pub fn bins_per_dim(&self) -> usize {
        self.edges.first().map_or(0, |e| e.len() - 1)
    }

    /// Flat bin index holding `x`, or `None` outside the grid.
    pub fn bin_of(&self, x: &[f64]) -> Option<usize> {
        let k = self.bins_per_dim();
        let mut flat = 0;
        for (e, &v) in self.edges.iter().zip(x) {
            let (lo, hi) = (e[0], e[k]);
            if !(v >= lo && v <= hi) {
                return None;
            }
            flat = flat * k + cell(v, lo, hi, k);
        }
        Some(flat)
    }
}

fn cell(v: f64, lo: f64, hi: f64, k: usize) -> usize {
    if hi > lo {
        (((v - lo) / (hi - lo) * k as f64) as usize).min(k - 1)
    } else {
        0
    }
}

/// `drift_i = mean(dx_i) / dt`, `diffusion_i = mean(dx_i^2) / (2 dt)` over the
/// transitions that start in each bin.
pub fn km_estimate(traj: &Trajectory, bins: usize, min_count: usize) -> Result<KmField> {
    let (m, n) = traj.states.shape();
    if m < 2 {
        return Err(Error::Contract(format!(
            "Kramers-Moyal estimation needs at least one transition, got {m} states"
        )));
    }
    if bins == 0 {
        return Err(Error::Config("bins must be at least 1".into()));
    }
    let cells = bins
        .checked_pow(n as u32)
        .filter(|&c| c <= 50_000_000)
        .ok_or_else(|| Error::Config(format!("{bins}^{n} bins is too many")))?;
    let mut edges = Vec::with_capacity(n);
    for j in 0..n {
        let col = traj.states.column(j);
        let lo = col.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        edges.push((0..=bins).map(|i| lo + (hi - lo) * i as f64 / bins as f64).collect::<Vec<_>>());
    }
    let mut count = vec![0usize; cells];
    let mut first = vec![0.0; cells * n];
    let mut second = vec![0.0; cells * n];
    for t in 0..m - 1 {
        let x = traj.states.row(t);
        let y = traj.states.row(t + 1);
        let mut flat = 0;
        for j in 0..n {
            flat = flat * bins + cell(x[j], edges[j][0], edges[j][bins], bins);
        }
        count[flat] += 1;
        for j in 0..n {
            let d = y[j] - x[j];
            first[flat * n + j] += d;
            second[flat * n + j] += d * d;
        }
    }
    let dt = traj.dt;
    let out = (0..cells)
        .map(|c| {
            let mut rest = c;
            let mut center = vec![0.0; n];
            for j in (0..n).rev() {
                let i = rest % bins;
                rest /= bins;
                center[j] = 0.5 * (edges[j][i] + edges[j][i + 1]);
            }
            let k = count[c];
            let ok = k >= min_count && k > 0;
            let stat = |acc: &[f64], scale: f64| {
                ok.then(|| acc[c * n..(c + 1) * n].iter().map(|s| s / k as f64 / scale).collect())
            };
            KmBin {
                center,
                count: k,
                drift: stat(&first, dt),
                diffusion: stat(&second, 2.0 * dt),
            }
        })
        .collect();
    Ok(KmField {
        edges,
        min_count,
        bins: out,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Matrix;
    use crate::rng::{normal_vec, stream, Purpose};

    #[test]
    fn linear_decay_drift() {
        // Euler steps of x' = -x; the estimate is exact per transition, so
        // the only error is the offset of the bin mean from its center.
        let dt = 0.01;
        let mut x: f64 = 3.0;
        let mut data = Vec::new();
        for _ in 0..300 {
            data.push(x);
            x -= x * dt;
        }
        let traj = Trajectory::new(dt, Matrix::new(data.len(), 1, data).unwrap()).unwrap();
        let f = km_estimate(&traj, 10, 5).unwrap();
        let mut checked = 0;
        for b in &f.bins {
            let (Some(d), Some(q)) = (&b.drift, &b.diffusion) else { continue };
            let c = b.center[0];
            if c > 0.5 {
                assert!((d[0] + c).abs() <= 0.05 * c, "drift {} at {c}", d[0]);
                assert!(q[0] <= 9.0 * dt, "diffusion {}", q[0]);
                checked += 1;
            }
        }
        assert!(checked >= 3);
    }

    #[test]
    fn random_walk_moments() {
        let dt: f64 = 0.01;
        let steps = 200_000;
        let xi = normal_vec(&mut stream(3, Purpose::Simulation, 0), steps);
        let mut x = 0.0;
        let mut data = Vec::with_capacity(steps + 1);
        data.push(x);
        for v in xi {
            x += dt.sqrt() * v;
            data.push(x);
        }
        let traj = Trajectory::new(dt, Matrix::new(steps + 1, 1, data).unwrap()).unwrap();
        let f = km_estimate(&traj, 8, 2000).unwrap();
        let mut used = 0;
        for b in f.bins.iter().filter(|b| b.drift.is_some()) {
            // Per-transition drift estimate has standard deviation 1/sqrt(dt).
            let se = (1.0 / dt).sqrt() / (b.count as f64).sqrt();
            assert!(b.drift.as_ref().unwrap()[0].abs() < 3.0 * se);
            assert!((b.diffusion.as_ref().unwrap()[0] - 0.5).abs() < 0.05);
            used += 1;
        }
        assert!(used > 0);
    }

    #[test]
    fn sparse_bins_are_absent_and_single_bin_is_global() {
        let traj = Trajectory::new(1.0, Matrix::new(4, 1, vec![0.0, 1.0, 3.0, 6.0]).unwrap()).unwrap();
        let f = km_estimate(&traj, 1, 1).unwrap();
        assert_eq!(f.bins.len(), 1);
        assert_eq!(f.bins[0].count, 3);
        assert_eq!(f.bins[0].drift.as_ref().unwrap()[0], 2.0);
        assert_eq!(f.bins[0].diffusion.as_ref().unwrap()[0], (1.0 + 4.0 + 9.0) / 3.0 / 2.0);
        let sparse = km_estimate(&traj, 1, 4).unwrap();
        assert!(sparse.bins[0].drift.is_none());
    }

    #[test]
    fn bin_lookup_matches_grid() {
        let traj = Trajectory::new(
            1.0,
            Matrix::new(3, 2, vec![0.0, 0.0, 1.0, 2.0, 2.0, 4.0]).unwrap(),
        )
        .unwrap();
        let f = km_estimate(&traj, 2, 1).unwrap();
        assert_eq!(f.bins.len(), 4);
        assert_eq!(f.bin_of(&[0.1, 3.9]), Some(1));
        assert_eq!(f.bin_of(&[2.0, 4.0]), Some(3));
        assert_eq!(f.bin_of(&[2.1, 0.0]), None);
        assert_eq!(f.bins[1].center, vec![0.5, 3.0]);
        assert_eq!(f.bins[0].count, 1);
        assert_eq!(f.bins[3].count, 1);
    }

    #[test]
    fn needs_a_transition() {
        let traj = Trajectory {
            dt: 1.0,
            states: Matrix::zeros(1, 2),
            derivatives: None,
            seed: 0,
            system: None,
        };
        assert!(matches!(km_estimate(&traj, 4, 1), Err(Error::Contract(_))));
    }
}

//! Hard-concrete gates over the coefficient matrix.

use crate::autodiff::{sigmoid, Graph, Tensor, Var};
use crate::error::{shape_err, Result};
use crate::linalg::Matrix;

pub const BETA_L0: f64 = 2.0 / 3.0;
pub const GAMMA: f64 = -0.1;
pub const ZETA: f64 = 1.1;
pub const LOG_ALPHA_INIT: f64 = 2.2;

/// Offset added to `log_alpha` in the expected-L0 penalty,
/// `-beta * ln(-gamma / zeta)`.
pub fn l0_offset() -> f64 {
    -BETA_L0 * (-GAMMA / ZETA).ln()
}

fn stretch(s: f64) -> f64 {
    (s * (ZETA - GAMMA) + GAMMA).clamp(0.0, 1.0)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SparseMask {
    /// Gate locations, `[l, n]`.
    pub log_alpha: Tensor,
    /// Multiplicative keep-mask, `[l, n]`: 1 for live entries, 0 for entries
    /// removed by thresholding. Zeros are never reset.
    pub permanent_zero: Tensor,
}

impl SparseMask {
    pub fn new(terms: usize, state_dim: usize) -> Self {
        Self {
            log_alpha: Tensor::full([terms, state_dim], LOG_ALPHA_INIT).into_param(),
            permanent_zero: Tensor::full([terms, state_dim], 1.0),
        }
    }

    pub fn from_parts(log_alpha: Tensor, permanent_zero: Tensor) -> Result<Self> {
        if log_alpha.ndim() != 2 || log_alpha.shape() != permanent_zero.shape() {
            return Err(shape_err(
                "sparse_mask",
                format!(
                    "log_alpha {:?} vs permanent_zero {:?}",
                    log_alpha.shape(),
                    permanent_zero.shape()
                ),
            ));
        }
        if permanent_zero.data().iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(shape_err("sparse_mask", "permanent_zero must be binary"));
        }
        Ok(Self {
            log_alpha: log_alpha.into_param(),
            permanent_zero,
        })
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.log_alpha.shape()[0], self.log_alpha.shape()[1])
    }

    pub fn is_active(&self, i: usize) -> bool {
        self.permanent_zero.data()[i] != 0.0
    }

    pub fn active_count(&self) -> usize {
        self.permanent_zero.data().iter().filter(|&&v| v != 0.0).count()
    }

    /// Permanently removes entry `i` (row-major index); returns whether it
    /// was live before.
    pub fn zero_out(&mut self, i: usize) -> bool {
        let was = self.is_active(i);
        self.permanent_zero.data_mut()[i] = 0.0;
        was
    }

    /// Deterministic gate `clamp(sigmoid(log_alpha)(zeta - gamma) + gamma, 0, 1)`.
    pub fn eval(&self) -> Matrix {
        let (l, n) = self.shape();
        let data = self
            .log_alpha
            .data()
            .iter()
            .zip(self.permanent_zero.data())
            .map(|(&la, &keep)| stretch(sigmoid(la)) * keep)
            .collect();
        Matrix::new(l, n, data).expect("sized")
    }

    /// Training gates from explicit uniforms, one `[l, n]` block per example.
    pub fn sample_with_uniform(&self, uniform: &[f64]) -> Result<Tensor> {
        let (l, n) = self.shape();
        let block = l * n;
        if block == 0 || !uniform.len().is_multiple_of(block) {
            return Err(shape_err(
                "mask_sample_train",
                format!("{} uniforms do not tile [{l}, {n}]", uniform.len()),
            ));
        }
        let la = self.log_alpha.data();
        let keep = self.permanent_zero.data();
        let data = uniform
            .iter()
            .enumerate()
            .map(|(k, &u)| {
                let j = k % block;
                let s = sigmoid((u.ln() - (1.0 - u).ln() + la[j]) / BETA_L0);
                stretch(s) * keep[j]
            })
            .collect();
        Tensor::new([uniform.len() / block, l, n], data)
    }

    /// Expected number of live gates.
    pub fn l0_penalty(&self) -> f64 {
        let off = l0_offset();
        self.log_alpha
            .data()
            .iter()
            .zip(self.permanent_zero.data())
            .map(|(&la, &keep)| sigmoid(la + off) * keep)
            .sum()
    }

    /// Graph version of [`SparseMask::sample_with_uniform`]. `logit_noise`
    /// holds `ln u - ln(1 - u)` with shape `[b, l, n]`.
    pub fn sample_graph(&self, g: &mut Graph, log_alpha: Var, logit_noise: Tensor) -> Result<Var> {
        let noise = g.constant(logit_noise);
        let keep = g.constant(self.permanent_zero.clone());
        let t = g.add(noise, log_alpha)?;
        let t = g.scale(t, 1.0 / BETA_L0)?;
        let s = g.sigmoid(t)?;
        let m = g.scale(s, ZETA - GAMMA)?;
        let m = g.add_scalar(m, GAMMA)?;
        let m = g.clamp(m, 0.0, 1.0)?;
        g.mul(m, keep)
    }

    pub fn l0_graph(&self, g: &mut Graph, log_alpha: Var) -> Result<Var> {
        let keep = g.constant(self.permanent_zero.clone());
        let t = g.add_scalar(log_alpha, l0_offset())?;
        let p = g.sigmoid(t)?;
        let p = g.mul(p, keep)?;
        g.sum(p)
    }
}

//! Encoder, hypernetwork, sparse gates, and the training objective.
//!
//! Shapes for a batch of `b` examples with `n` states, `l` library terms and
//! latent dimension `d`: the encoder maps `[b, 2n] -> [b, d]` twice (mean and
//! log-variance), the hypernetwork maps `[b, d] -> [b, l, n]`, and the
//! prediction is the per-example product `Theta(x)_[1, l] (Xi ⊙ M)_[l, n]`.

pub mod mask;
pub mod mlp;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{domain_err, shape_err, Error, Result};
use crate::library::{Library, LibrarySpec};
use crate::linalg::Matrix;
use crate::rng::{self, Purpose, Rng};

pub use mask::SparseMask;
pub use mlp::{Linear, Mlp};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub library: LibrarySpec,
    pub latent_dim: usize,
    pub hidden_width: usize,
    pub num_hidden: usize,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.library.validate()?;
        if self.latent_dim == 0 || self.hidden_width == 0 || self.num_hidden == 0 {
            return Err(Error::Config(format!(
                "latent_dim, hidden_width and num_hidden must be >= 1, got {}, {}, {}",
                self.latent_dim, self.hidden_width, self.num_hidden
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Encoder {
    pub trunk: Mlp,
    pub head_mu: Linear,
    pub head_logvar: Linear,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LatentSample {
    pub mu: Matrix,
    pub sigma: Matrix,
    pub z: Matrix,
}

/// Exogenous randomness for one loss evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct LossNoise {
    /// Reparameterization noise, `[b, d]`.
    pub eps: Matrix,
    /// Gate uniforms on (0, 1), `b * l * n` values.
    pub uniform: Vec<f64>,
}

impl LossNoise {
    pub fn draw(rng: &mut Rng, batch: usize, latent_dim: usize, gates: usize) -> Self {
        let eps = rng::normal_vec(rng, batch * latent_dim);
        let uniform = rng::open_uniform_vec(rng, batch * gates);
        Self {
            eps: Matrix::new(batch, latent_dim, eps).expect("sized"),
            uniform,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossComponents {
    pub total: f64,
    pub recon: f64,
    pub kl: f64,
    pub l0: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct HyperSindy {
    pub config: ModelConfig,
    pub library: Library,
    pub encoder: Encoder,
    pub hypernet: Mlp,
    pub mask: SparseMask,
}

impl HyperSindy {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let library = Library::new(config.library)?;
        let n = config.library.state_dim;
        let l = library.len();
        let (h, d, k) = (config.hidden_width, config.latent_dim, config.num_hidden);
        let mut rng = rng::stream(seed, Purpose::ModelInit, 0);
        let trunk = Mlp::init_trunk(2 * n, h, k, &mut rng);
        let head_mu = Linear::init(h, d, &mut rng);
        let head_logvar = Linear::init(h, d, &mut rng);
        let hypernet = Mlp::init(d, h, k, l * n, &mut rng);
        Ok(Self {
            config,
            library,
            encoder: Encoder {
                trunk,
                head_mu,
                head_logvar,
            },
            hypernet,
            mask: SparseMask::new(l, n),
        })
    }

    /// Reassembles a model from stored parts, checking every shape.
    pub fn from_parts(config: ModelConfig, encoder: Encoder, hypernet: Mlp, mask: SparseMask) -> Result<Self> {
        config.validate()?;
        let library = Library::new(config.library)?;
        let n = config.library.state_dim;
        let l = library.len();
        let (h, d) = (config.hidden_width, config.latent_dim);
        encoder.trunk.validate()?;
        hypernet.validate()?;
        let ok = encoder.trunk.layers.len() == config.num_hidden
            && encoder.trunk.in_dim() == 2 * n
            && encoder.trunk.out_dim() == h
            && encoder.head_mu.in_dim() == h
            && encoder.head_mu.out_dim() == d
            && encoder.head_logvar.in_dim() == h
            && encoder.head_logvar.out_dim() == d
            && hypernet.layers.len() == config.num_hidden + 1
            && hypernet.in_dim() == d
            && hypernet.out_dim() == l * n
            && mask.shape() == (l, n);
        if !ok {
            return Err(shape_err("model", "stored parameters do not match the model config"));
        }
        Ok(Self {
            config,
            library,
            encoder: Encoder {
                trunk: Mlp {
                    activate_last: true,
                    ..encoder.trunk
                },
                ..encoder
            },
            hypernet: Mlp {
                activate_last: false,
                ..hypernet
            },
            mask,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.config.library.state_dim
    }

    pub fn num_terms(&self) -> usize {
        self.library.len()
    }

    pub fn latent_dim(&self) -> usize {
        self.config.latent_dim
    }

    /// All trainable tensors: encoder trunk, mean head, log-variance head,
    /// hypernetwork, then `log_alpha`.
    pub fn params(&self) -> Vec<&Tensor> {
        let e = &self.encoder;
        let mut out: Vec<&Tensor> = e.trunk.params().collect();
        out.extend([&e.head_mu.weight, &e.head_mu.bias]);
        out.extend([&e.head_logvar.weight, &e.head_logvar.bias]);
        out.extend(self.hypernet.params());
        out.push(&self.mask.log_alpha);
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let e = &mut self.encoder;
        let mut out: Vec<&mut Tensor> = e.trunk.params_mut().collect();
        out.extend([&mut e.head_mu.weight, &mut e.head_mu.bias]);
        out.extend([&mut e.head_logvar.weight, &mut e.head_logvar.bias]);
        out.extend(self.hypernet.params_mut());
        out.push(&mut self.mask.log_alpha);
        out
    }

    fn check_batch(&self, x: &Matrix, xdot: &Matrix) -> Result<()> {
        let n = self.state_dim();
        if x.cols() != n || xdot.shape() != x.shape() {
            return Err(shape_err(
                "encode",
                format!("x {:?}, xdot {:?}, state dimension {n}", x.shape(), xdot.shape()),
            ));
        }
        if x.rows() == 0 {
            return Err(shape_err("encode", "empty batch"));
        }
        Ok(())
    }

    /// Encoder pass with explicit reparameterization noise.
    pub fn encode_with_noise(&self, x: &Matrix, xdot: &Matrix, eps: &Matrix) -> Result<LatentSample> {
        self.check_batch(x, xdot)?;
        let (b, d) = (x.rows(), self.latent_dim());
        if eps.shape() != (b, d) {
            return Err(shape_err("encode", format!("noise {:?}, expected {:?}", eps.shape(), (b, d))));
        }
        let h = self.encoder.trunk.forward_values(&concat_columns(x, xdot))?;
        let e = &self.encoder;
        let mu = Mlp {
            layers: vec![e.head_mu.clone()],
            activate_last: false,
        }
        .forward_values(&h)?;
        let logvar = Mlp {
            layers: vec![e.head_logvar.clone()],
            activate_last: false,
        }
        .forward_values(&h)?;
        let sigma_data: Vec<f64> = logvar.data().iter().map(|v| (0.5 * v).exp()).collect();
        let z_data = mu
            .data()
            .iter()
            .zip(&sigma_data)
            .zip(eps.data())
            .map(|((m, s), e)| m + s * e)
            .collect();
        Ok(LatentSample {
            sigma: Matrix::new(b, d, sigma_data)?,
            z: Matrix::new(b, d, z_data)?,
            mu,
        })
    }

    pub fn encode(&self, x: &Matrix, xdot: &Matrix, seed: u64) -> Result<LatentSample> {
        let mut rng = rng::stream(seed, Purpose::Encode, 0);
        let eps = Matrix::new(x.rows(), self.latent_dim(), rng::normal_vec(&mut rng, x.rows() * self.latent_dim()))?;
        self.encode_with_noise(x, xdot, &eps)
    }

    /// Encodes a trajectory's states and derivatives.
    pub fn encode_trajectory(&self, traj: &crate::dynamics::Trajectory, seed: u64) -> Result<LatentSample> {
        let xdot = traj
            .derivatives
            .as_ref()
            .ok_or_else(|| Error::Contract("encode needs derivatives; estimate them first".into()))?;
        self.encode(&traj.states, xdot, seed)
    }

    /// Raw hypernetwork output `H(z)` as `[b, l, n]`.
    pub fn hypernet_coefficients(&self, z: &Matrix) -> Result<Tensor> {
        if z.cols() != self.latent_dim() {
            return Err(shape_err(
                "hypernet_coefficients",
                format!("z has {} columns, latent dimension is {}", z.cols(), self.latent_dim()),
            ));
        }
        let out = self.hypernet.forward_values(z)?;
        Tensor::new([z.rows(), self.num_terms(), self.state_dim()], out.into_data())
    }

    /// `H(z) ⊙ M` with the deterministic evaluation mask.
    pub fn masked_coefficients(&self, z: &Matrix) -> Result<Tensor> {
        let mut c = self.hypernet_coefficients(z)?;
        let m = self.mask.eval();
        let block = m.data().len();
        for (k, v) in c.data_mut().iter_mut().enumerate() {
            *v *= m.data()[k % block];
        }
        Ok(c)
    }

    pub fn mask_eval(&self) -> Matrix {
        self.mask.eval()
    }

    pub fn mask_sample_train(&self, batch: usize, seed: u64) -> Result<Tensor> {
        let (l, n) = self.mask.shape();
        let mut rng = rng::stream(seed, Purpose::Reparam, 0);
        self.mask.sample_with_uniform(&rng::open_uniform_vec(&mut rng, batch * l * n))
    }

    pub fn l0_penalty(&self) -> f64 {
        self.mask.l0_penalty()
    }

    /// `Theta(x_i) (coeffs_i ⊙ mask_i)` for every row; `mask` may be
    /// `[b, l, n]` or a shared `[l, n]`.
    pub fn predict_derivative(&self, x: &Matrix, coeffs: &Tensor, mask: &Tensor) -> Result<Matrix> {
        let (b, n, l) = (x.rows(), self.state_dim(), self.num_terms());
        if x.cols() != n || coeffs.shape() != [b, l, n] {
            return Err(shape_err(
                "predict_derivative",
                format!("x {:?} with coefficients {:?}", x.shape(), coeffs.shape()),
            ));
        }
        let shared = mask.shape() == [l, n];
        if !shared && mask.shape() != [b, l, n] {
            return Err(shape_err("predict_derivative", format!("mask {:?}", mask.shape())));
        }
        let theta = self.library.evaluate(x)?;
        let (c, m) = (coeffs.data(), mask.data());
        let mut out = Matrix::zeros(b, n);
        for i in 0..b {
            let row = theta.row(i);
            let base = i * l * n;
            let mbase = if shared { 0 } else { base };
            let o = out.row_mut(i);
            for (k, &t) in row.iter().enumerate() {
                for j in 0..n {
                    o[j] += t * c[base + k * n + j] * m[mbase + k * n + j];
                }
            }
        }
        Ok(out)
    }

    pub fn loss_with_noise(
        &self,
        x: &Matrix,
        xdot: &Matrix,
        beta: f64,
        lambda: f64,
        noise: &LossNoise,
    ) -> Result<LossComponents> {
        let theta = self.library.evaluate(x)?;
        let mut g = Graph::new();
        let (_, _, comps) = self.build_loss(&mut g, x, xdot, &theta, beta, lambda, noise)?;
        Ok(comps)
    }

    /// Evaluates the objective with noise drawn from `seed`.
    pub fn elbo_loss(&self, x: &Matrix, xdot: &Matrix, beta: f64, lambda: f64, seed: u64) -> Result<LossComponents> {
        let mut rng = rng::stream(seed, Purpose::Reparam, 0);
        let (l, n) = self.mask.shape();
        let noise = LossNoise::draw(&mut rng, x.rows(), self.latent_dim(), l * n);
        self.loss_with_noise(x, xdot, beta, lambda, &noise)
    }

    /// Forward and backward pass; gradients are added to each parameter's
    /// buffer. `theta` is the library evaluated at `x`.
    pub fn accumulate_gradients(
        &mut self,
        x: &Matrix,
        xdot: &Matrix,
        theta: &Matrix,
        beta: f64,
        lambda: f64,
        noise: &LossNoise,
    ) -> Result<LossComponents> {
        let mut g = Graph::new();
        let (vars, loss, comps) = self.build_loss(&mut g, x, xdot, theta, beta, lambda, noise)?;
        let grads = g.backward(loss)?;
        for (v, p) in vars.into_iter().zip(self.params_mut()) {
            grads.accumulate_into(v, p)?;
        }
        Ok(comps)
    }

    #[allow(clippy::too_many_arguments)]
    fn build_loss(
        &self,
        g: &mut Graph,
        x: &Matrix,
        xdot: &Matrix,
        theta: &Matrix,
        beta: f64,
        lambda: f64,
        noise: &LossNoise,
    ) -> Result<(Vec<Var>, Var, LossComponents)> {
        if !(beta >= 0.0 && lambda >= 0.0) {
            return Err(Error::Config(format!("beta and lambda must be >= 0, got {beta} and {lambda}")));
        }
        self.check_batch(x, xdot)?;
        let (b, n, l, d) = (x.rows(), self.state_dim(), self.num_terms(), self.latent_dim());
        if theta.shape() != (b, l) {
            return Err(shape_err("elbo_loss", format!("library matrix {:?}, expected {:?}", theta.shape(), (b, l))));
        }
        if noise.eps.shape() != (b, d) || noise.uniform.len() != b * l * n {
            return Err(shape_err("elbo_loss", "noise does not match the batch"));
        }

        let vars: Vec<Var> = self.params().into_iter().map(|p| g.param(p)).collect();
        let t = 2 * self.encoder.trunk.layers.len();
        let (trunk_v, rest) = vars.split_at(t);
        let (heads_v, rest) = rest.split_at(4);
        let (hyper_v, la_v) = rest.split_at(rest.len() - 1);

        let input = g.constant(Tensor::new([b, 2 * n], concat_columns(x, xdot).into_data())?);
        let h = self.encoder.trunk.forward(g, trunk_v, input)?;
        let mu = g.matmul(h, heads_v[0])?;
        let mu = g.add(mu, heads_v[1])?;
        let logvar = g.matmul(h, heads_v[2])?;
        let logvar = g.add(logvar, heads_v[3])?;
        let half = g.scale(logvar, 0.5)?;
        let sigma = g.exp(half)?;
        let eps = g.constant(Tensor::new([b, d], noise.eps.data().to_vec())?);
        let spread = g.mul(sigma, eps)?;
        let z = g.add(mu, spread)?;

        let coeffs = self.hypernet.forward(g, hyper_v, z)?;
        let coeffs = g.reshape(coeffs, &[b, l, n])?;
        let logits = noise.uniform.iter().map(|&u| u.ln() - (1.0 - u).ln()).collect();
        let gates = self.mask.sample_graph(g, la_v[0], Tensor::new([b, l, n], logits)?)?;
        let masked = g.mul(coeffs, gates)?;
        let theta_v = g.constant(Tensor::new([b, 1, l], theta.data().to_vec())?);
        let pred = g.batch_matmul(theta_v, masked)?;
        let pred = g.reshape(pred, &[b, n])?;

        let target = g.constant(Tensor::new([b, n], xdot.data().to_vec())?);
        let err = g.sub(pred, target)?;
        let err = g.square(err)?;
        let err = g.sum(err)?;
        let recon = g.scale(err, 1.0 / b as f64)?;

        let mu2 = g.square(mu)?;
        let var = g.exp(logvar)?;
        let kl = g.add_scalar(logvar, 1.0)?;
        let kl = g.sub(kl, mu2)?;
        let kl = g.sub(kl, var)?;
        let kl = g.sum(kl)?;
        let kl = g.scale(kl, -0.5 / b as f64)?;

        let l0 = self.mask.l0_graph(g, la_v[0])?;

        let wkl = g.scale(kl, beta)?;
        let wl0 = g.scale(l0, lambda)?;
        let total = g.add(recon, wkl)?;
        let total = g.add(total, wl0)?;

        let comps = LossComponents {
            total: g.value(total).data()[0],
            recon: g.value(recon).data()[0],
            kl: g.value(kl).data()[0],
            l0: g.value(l0).data()[0],
        };
        Ok((vars, total, comps))
    }

    pub fn active_terms(&self) -> usize {
        self.mask.active_count()
    }
}

fn concat_columns(a: &Matrix, b: &Matrix) -> Matrix {
    let (r, ca, cb) = (a.rows(), a.cols(), b.cols());
    let mut data = Vec::with_capacity(r * (ca + cb));
    for i in 0..r {
        data.extend_from_slice(a.row(i));
        data.extend_from_slice(b.row(i));
    }
    Matrix::new(r, ca + cb, data).expect("sized")
}

/// `b` standard-normal latent draws from the prior.
pub fn sample_prior(latent_dim: usize, batch: usize, seed: u64) -> Result<Matrix> {
    let mut rng = rng::stream(seed, Purpose::Prior, 0);
    prior_from(&mut rng, latent_dim, batch)
}

pub fn prior_from(rng: &mut Rng, latent_dim: usize, batch: usize) -> Result<Matrix> {
    if latent_dim == 0 || batch == 0 {
        return Err(Error::Config(format!(
            "prior sample needs d >= 1 and b >= 1, got {latent_dim} and {batch}"
        )));
    }
    Matrix::new(batch, latent_dim, rng::normal_vec(rng, batch * latent_dim))
}

/// Closed-form KL to the standard normal, averaged over rows.
pub fn kl_divergence(mu: &Matrix, sigma: &Matrix) -> Result<f64> {
    if mu.shape() != sigma.shape() || mu.rows() == 0 {
        return Err(shape_err("kl_divergence", format!("mu {:?}, sigma {:?}", mu.shape(), sigma.shape())));
    }
    if let Some(s) = sigma.data().iter().find(|&&s| !(s > 0.0)) {
        return Err(domain_err("kl_divergence", format!("sigma must be positive, got {s}")));
    }
    let total: f64 = mu
        .data()
        .iter()
        .zip(sigma.data())
        .map(|(&m, &s)| -0.5 * (1.0 + (s * s).ln() - m * m - s * s))
        .sum();
    Ok(total / mu.rows() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::library::LibrarySpec;

    fn tiny() -> HyperSindy {
        let cfg = ModelConfig {
            library: LibrarySpec::new(2, 1, true).unwrap(),
            latent_dim: 2,
            hidden_width: 8,
            num_hidden: 2,
        };
        HyperSindy::new(cfg, 5).unwrap()
    }

    fn batch() -> (Matrix, Matrix) {
        let x = Matrix::new(4, 2, vec![0.1, -0.3, 0.5, 0.2, -0.7, 0.9, 1.1, -0.4]).unwrap();
        let xdot = Matrix::new(4, 2, vec![0.3, 0.1, -0.2, 0.6, 0.8, -0.5, 0.0, 0.4]).unwrap();
        (x, xdot)
    }

    #[test]
    fn zero_noise_gives_mean() {
        let m = tiny();
        let (x, xdot) = batch();
        let s = m.encode_with_noise(&x, &xdot, &Matrix::zeros(4, 2)).unwrap();
        assert_eq!(s.z, s.mu);
        assert!(s.sigma.data().iter().all(|&v| v > 0.0));
    }

    #[test]
    fn zero_logvar_head_gives_unit_sigma() {
        let mut m = tiny();
        m.encoder.head_logvar = Linear::zeros(8, 2);
        let (x, xdot) = batch();
        let s = m.encode(&x, &xdot, 1).unwrap();
        assert!(s.sigma.data().iter().all(|&v| v == 1.0));
        assert_eq!(s, m.encode(&x, &xdot, 1).unwrap());
    }

    #[test]
    fn encode_requires_derivatives() {
        let m = tiny();
        let traj = crate::dynamics::Trajectory::new(0.1, Matrix::zeros(3, 2)).unwrap();
        assert!(matches!(m.encode_trajectory(&traj, 0), Err(Error::Contract(_))));
    }

    #[test]
    fn hypernet_shapes_and_identical_rows() {
        let m = tiny();
        let z = Matrix::new(3, 2, vec![0.2, -1.0, 0.2, -1.0, 0.2, -1.0]).unwrap();
        let c = m.hypernet_coefficients(&z).unwrap();
        assert_eq!(c.shape(), &[3, 3, 2]);
        assert_eq!(c.data()[..6], c.data()[6..12]);
        assert!(m.hypernet_coefficients(&Matrix::zeros(1, 3)).is_err());
    }

    #[test]
    fn lorenz_shapes() {
        let cfg = ModelConfig {
            library: LibrarySpec::new(3, 3, false).unwrap(),
            latent_dim: 6,
            hidden_width: 64,
            num_hidden: 5,
        };
        let m = HyperSindy::new(cfg, 0).unwrap();
        let z = sample_prior(6, 250, 0).unwrap();
        let c = m.hypernet_coefficients(&z).unwrap();
        assert_eq!(c.shape(), &[250, 19, 3]);
        let mask = m.mask_sample_train(250, 0).unwrap();
        let x = Matrix::zeros(250, 3);
        assert_eq!(m.predict_derivative(&x, &c, &mask).unwrap().shape(), (250, 3));
    }

    #[test]
    fn ground_truth_lorenz_prediction() {
        let cfg = ModelConfig {
            library: LibrarySpec::new(3, 3, false).unwrap(),
            latent_dim: 1,
            hidden_width: 2,
            num_hidden: 1,
        };
        let m = HyperSindy::new(cfg, 0).unwrap();
        let lib = &m.library;
        let mut c = vec![0.0; 19 * 3];
        let mut put = |e: [u32; 3], j: usize, v: f64| c[lib.term_index(&e).unwrap() * 3 + j] = v;
        put([1, 0, 0], 0, -10.0);
        put([0, 1, 0], 0, 10.0);
        put([1, 0, 0], 1, 28.0);
        put([0, 1, 0], 1, -1.0);
        put([1, 0, 1], 1, -1.0);
        put([1, 1, 0], 2, 1.0);
        put([0, 0, 1], 2, -8.0 / 3.0);
        let coeffs = Tensor::new([1, 19, 3], c).unwrap();
        let ones = Tensor::full([19, 3], 1.0);
        let x = Matrix::new(1, 3, vec![0.0, 1.0, 1.05]).unwrap();
        let out = m.predict_derivative(&x, &coeffs, &ones).unwrap();
        assert!((out.get(0, 0) - 10.0).abs() < 1e-12);
        assert!((out.get(0, 1) + 1.0).abs() < 1e-12);
        assert!((out.get(0, 2) + 2.8).abs() < 1e-12);
        let zeros = Tensor::zeros([19, 3]);
        assert!(m.predict_derivative(&x, &coeffs, &zeros).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn kl_examples() {
        let z = Matrix::zeros(2, 3);
        let one = Matrix::new(2, 3, vec![1.0; 6]).unwrap();
        assert_eq!(kl_divergence(&z, &one).unwrap(), 0.0);
        let mu = Matrix::new(1, 1, vec![1.0]).unwrap();
        let s = Matrix::new(1, 1, vec![1.0]).unwrap();
        assert_eq!(kl_divergence(&mu, &s).unwrap(), 0.5);
        assert!(matches!(kl_divergence(&mu, &Matrix::zeros(1, 1)), Err(Error::Domain { .. })));
    }

    #[test]
    fn prior_moments() {
        let z = sample_prior(3, 100_000, 42).unwrap();
        for j in 0..3 {
            let col = z.column(j);
            let mean = col.iter().sum::<f64>() / col.len() as f64;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / col.len() as f64;
            assert!(mean.abs() < 0.02, "mean {mean}");
            assert!((var - 1.0).abs() < 0.03, "var {var}");
        }
        assert!(sample_prior(0, 5, 0).is_err());
    }

    #[test]
    fn loss_components_and_weights() {
        let m = tiny();
        let (x, xdot) = batch();
        let mut rng = rng::stream(3, Purpose::Reparam, 0);
        let noise = LossNoise::draw(&mut rng, 4, 2, 6);
        let plain = m.loss_with_noise(&x, &xdot, 0.0, 0.0, &noise).unwrap();
        assert_eq!(plain.total, plain.recon);
        let weighted = m.loss_with_noise(&x, &xdot, 2.0, 0.5, &noise).unwrap();
        assert!(weighted.recon >= 0.0 && weighted.kl >= 0.0 && weighted.l0 >= 0.0);
        let expect = weighted.recon + 2.0 * weighted.kl + 0.5 * weighted.l0;
        assert!((weighted.total - expect).abs() < 1e-12);
        assert!((weighted.l0 - m.l0_penalty()).abs() < 1e-12);
        assert!(m.loss_with_noise(&x, &xdot, -1.0, 0.0, &noise).is_err());
    }

    #[test]
    fn perfect_model_has_zero_loss() {
        let mut m = tiny();
        for layer in &mut m.hypernet.layers {
            *layer = Linear::zeros(layer.in_dim(), layer.out_dim());
        }
        m.encoder.head_mu = Linear::zeros(8, 2);
        m.encoder.head_logvar = Linear::zeros(8, 2);
        m.mask.log_alpha.data_mut().iter_mut().for_each(|v| *v = -800.0);
        let (x, _) = batch();
        let xdot = Matrix::zeros(4, 2);
        let loss = m.elbo_loss(&x, &xdot, 1.0, 1.0, 0).unwrap();
        assert!(loss.total.abs() < 1e-12, "{loss:?}");
    }

    #[test]
    fn every_parameter_receives_a_gradient() {
        let mut m = tiny();
        let (x, xdot) = batch();
        let theta = m.library.evaluate(&x).unwrap();
        let mut rng = rng::stream(0, Purpose::Reparam, 0);
        let noise = LossNoise::draw(&mut rng, 4, 2, 6);
        m.accumulate_gradients(&x, &xdot, &theta, 1.0, 1.0, &noise).unwrap();
        assert!(m.params().iter().all(|p| p.grad().is_some()));
    }

    #[test]
    fn gradients_match_central_differences() {
        let mut m = tiny();
        m.mask.log_alpha.data_mut().iter_mut().enumerate().for_each(|(k, v)| *v = 0.3 * k as f64 - 1.0);
        let (x, xdot) = batch();
        let theta = m.library.evaluate(&x).unwrap();
        let mut rng = rng::stream(4, Purpose::Reparam, 0);
        let noise = LossNoise::draw(&mut rng, 4, 2, 6);
        let (beta, lambda) = (0.7, 0.3);
        m.accumulate_gradients(&x, &xdot, &theta, beta, lambda, &noise).unwrap();
        let grads: Vec<Vec<f64>> = m.params().iter().map(|p| p.grad().unwrap().to_vec()).collect();
        let h = 1e-6;
        for (pi, g) in grads.iter().enumerate() {
            for k in (0..g.len()).step_by(3) {
                let mut probe = m.clone();
                probe.params_mut()[pi].data_mut()[k] += h;
                let up = probe.loss_with_noise(&x, &xdot, beta, lambda, &noise).unwrap().total;
                probe.params_mut()[pi].data_mut()[k] -= 2.0 * h;
                let down = probe.loss_with_noise(&x, &xdot, beta, lambda, &noise).unwrap().total;
                let fd = (up - down) / (2.0 * h);
                assert!((fd - g[k]).abs() <= 1e-5 * (1.0 + fd.abs()), "param {pi}[{k}]: {fd} vs {}", g[k]);
            }
        }
    }

    #[test]
    fn parts_round_trip() {
        let m = tiny();
        let again = HyperSindy::from_parts(m.config, m.encoder.clone(), m.hypernet.clone(), m.mask.clone()).unwrap();
        assert_eq!(again, m);
        let mut wrong = m.config;
        wrong.latent_dim = 3;
        assert!(HyperSindy::from_parts(wrong, m.encoder.clone(), m.hypernet.clone(), m.mask.clone()).is_err());
    }
}

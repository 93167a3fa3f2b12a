use rand_distr::{Distribution, Uniform};

use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{shape_err, Result};
use crate::linalg::Matrix;
use crate::rng::Rng;

/// Dense layer `y = x W + b` with `W` stored as `[in, out]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Linear {
    /// Kaiming-uniform weights (bound `1/sqrt(fan_in)`), zero biases.
    pub fn init(in_dim: usize, out_dim: usize, rng: &mut Rng) -> Self {
        let bound = 1.0 / (in_dim as f64).sqrt();
        let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
        let w = (0..in_dim * out_dim).map(|_| dist.sample(rng)).collect();
        Self {
            weight: Tensor::new([in_dim, out_dim], w).expect("sized").into_param(),
            bias: Tensor::zeros([out_dim]).into_param(),
        }
    }

    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self {
            weight: Tensor::zeros([in_dim, out_dim]).into_param(),
            bias: Tensor::zeros([out_dim]).into_param(),
        }
    }

    pub fn from_parts(weight: Tensor, bias: Tensor) -> Result<Self> {
        if weight.ndim() != 2 || bias.ndim() != 1 || weight.shape()[1] != bias.shape()[0] {
            return Err(shape_err(
                "linear",
                format!("weight {:?} with bias {:?}", weight.shape(), bias.shape()),
            ));
        }
        Ok(Self {
            weight: weight.into_param(),
            bias: bias.into_param(),
        })
    }

    pub fn in_dim(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn out_dim(&self) -> usize {
        self.weight.shape()[1]
    }

    fn forward_values(&self, x: &Matrix) -> Result<Matrix> {
        let w = Matrix::new(self.in_dim(), self.out_dim(), self.weight.data().to_vec())?;
        let mut y = x.matmul(&w)?;
        let b = self.bias.data();
        for i in 0..y.rows() {
            for (v, bj) in y.row_mut(i).iter_mut().zip(b) {
                *v += bj;
            }
        }
        Ok(y)
    }
}

/// Stack of dense layers with ELU between them. The last layer is linear
/// unless `activate_last` is set.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    pub activate_last: bool,
}

impl Mlp {
    /// `hidden` ELU layers of `width`, then a linear map to `out_dim`.
    pub fn init(in_dim: usize, width: usize, hidden: usize, out_dim: usize, rng: &mut Rng) -> Self {
        let mut layers = Vec::with_capacity(hidden + 1);
        let mut prev = in_dim;
        for _ in 0..hidden {
            layers.push(Linear::init(prev, width, rng));
            prev = width;
        }
        layers.push(Linear::init(prev, out_dim, rng));
        Self {
            layers,
            activate_last: false,
        }
    }

    /// `hidden` ELU layers of `width` with no output map.
    pub fn init_trunk(in_dim: usize, width: usize, hidden: usize, rng: &mut Rng) -> Self {
        let mut layers = Vec::with_capacity(hidden);
        let mut prev = in_dim;
        for _ in 0..hidden {
            layers.push(Linear::init(prev, width, rng));
            prev = width;
        }
        Self {
            layers,
            activate_last: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for pair in self.layers.windows(2) {
            if pair[0].out_dim() != pair[1].in_dim() {
                return Err(shape_err(
                    "mlp",
                    format!("layer emits {} but next takes {}", pair[0].out_dim(), pair[1].in_dim()),
                ));
            }
        }
        Ok(())
    }

    pub fn in_dim(&self) -> usize {
        self.layers.first().map_or(0, Linear::in_dim)
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().map_or(0, Linear::out_dim)
    }

    pub fn params(&self) -> impl Iterator<Item = &Tensor> {
        self.layers.iter().flat_map(|l| [&l.weight, &l.bias])
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.layers.iter_mut().flat_map(|l| [&mut l.weight, &mut l.bias])
    }

    fn activated(&self, i: usize) -> bool {
        i + 1 < self.layers.len() || self.activate_last
    }

    pub fn forward_values(&self, x: &Matrix) -> Result<Matrix> {
        if x.cols() != self.in_dim() {
            return Err(shape_err(
                "mlp",
                format!("input has {} columns, network takes {}", x.cols(), self.in_dim()),
            ));
        }
        let mut h = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward_values(&h)?;
            if self.activated(i) {
                for v in h.data_mut() {
                    if *v <= 0.0 {
                        *v = v.exp_m1();
                    }
                }
            }
        }
        Ok(h)
    }

    /// Graph forward; `vars` are this network's parameters bound in
    /// [`Mlp::params`] order.
    pub fn forward(&self, g: &mut Graph, vars: &[Var], x: Var) -> Result<Var> {
        let mut h = x;
        for i in 0..self.layers.len() {
            h = g.matmul(h, vars[2 * i])?;
            h = g.add(h, vars[2 * i + 1])?;
            if self.activated(i) {
                h = g.elu(h)?;
            }
        }
        Ok(h)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Purpose};

    #[test]
    fn init_shapes_chain() {
        let mut rng = stream(0, Purpose::ModelInit, 0);
        let net = Mlp::init(6, 64, 5, 57, &mut rng);
        assert_eq!(net.layers.len(), 6);
        assert_eq!((net.in_dim(), net.out_dim()), (6, 57));
        net.validate().unwrap();
        assert!(net.layers.iter().all(|l| l.bias.data().iter().all(|&b| b == 0.0)));
        let bound = 1.0 / 64f64.sqrt();
        assert!(net.layers[3].weight.data().iter().all(|w| w.abs() <= bound));
    }

    #[test]
    fn graph_and_value_paths_agree() {
        let mut rng = stream(1, Purpose::ModelInit, 0);
        let net = Mlp::init(3, 8, 2, 4, &mut rng);
        let x = Matrix::new(2, 3, vec![0.5, -1.0, 2.0, -0.3, 0.0, 1.5]).unwrap();
        let direct = net.forward_values(&x).unwrap();
        let mut g = Graph::new();
        let vars: Vec<Var> = net.params().map(|p| g.param(p)).collect();
        let xv = g.constant(Tensor::new([2, 3], x.data().to_vec()).unwrap());
        let out = net.forward(&mut g, &vars, xv).unwrap();
        for (a, b) in g.value(out).data().iter().zip(direct.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_network_outputs_zero() {
        let net = Mlp {
            layers: vec![Linear::zeros(2, 5), Linear::zeros(5, 3)],
            activate_last: false,
        };
        let x = Matrix::new(1, 2, vec![3.0, -4.0]).unwrap();
        assert!(net.forward_values(&x).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn wrong_input_width_is_rejected() {
        let net = Mlp {
            layers: vec![Linear::zeros(2, 5)],
            activate_last: false,
        };
        assert!(net.forward_values(&Matrix::zeros(1, 3)).is_err());
    }
}

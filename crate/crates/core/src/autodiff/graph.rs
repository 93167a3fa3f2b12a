//! Define-by-run reverse-mode differentiation.
//!
//! A [`Graph`] is an append-only list of nodes. Each operation evaluates
//! eagerly, stores its output, and returns a [`Var`] handle. Because inputs
//! always exist before the node that consumes them, insertion order is a
//! topological order and [`Graph::backward`] is a single reverse sweep.
//!
//! Broadcasting is deliberately narrow: a binary elementwise op accepts two
//! equal shapes, or one operand whose shape is a trailing suffix of the
//! other's (bias add over a batch, mask logits over a batch of samples).

use super::tensor::Tensor;
use crate::error::{domain_err, shape_err, Error, Result};

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Operation kinds understood by [`Graph::forward`].
#[derive(Clone, Debug, PartialEq)]
pub enum OpKind {
    /// `[m, k] x [k, n] -> [m, n]`
    MatMul,
    /// `[b, m, k] x [b, k, n] -> [b, m, n]`
    BatchMatMul,
    Add,
    Sub,
    Mul,
    Scale(f64),
    AddScalar(f64),
    Exp,
    Log,
    Sigmoid,
    /// ELU with the given scale on the negative branch.
    Elu(f64),
    Square,
    Clamp(f64, f64),
    Reshape(Vec<usize>),
    Sum,
    Mean,
}

impl OpKind {
    fn name(&self) -> &'static str {
        match self {
            OpKind::MatMul => "matmul",
            OpKind::BatchMatMul => "batch_matmul",
            OpKind::Add => "add",
            OpKind::Sub => "sub",
            OpKind::Mul => "mul",
            OpKind::Scale(_) => "scale",
            OpKind::AddScalar(_) => "add_scalar",
            OpKind::Exp => "exp",
            OpKind::Log => "log",
            OpKind::Sigmoid => "sigmoid",
            OpKind::Elu(_) => "elu",
            OpKind::Square => "square",
            OpKind::Clamp(..) => "clamp",
            OpKind::Reshape(_) => "reshape",
            OpKind::Sum => "sum",
            OpKind::Mean => "mean",
        }
    }

    fn arity(&self) -> usize {
        match self {
            OpKind::MatMul | OpKind::BatchMatMul | OpKind::Add | OpKind::Sub | OpKind::Mul => 2,
            _ => 1,
        }
    }
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    kind: Option<OpKind>,
    inputs: [usize; 2],
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients of a scalar with respect to every node of a graph.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient for leaf `v`, or `None` if `v` does not influence the loss.
    /// Interior buffers are released during the sweep.
    pub fn wrt(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Adds the gradient of `v` into `param`'s buffer. Unused parameters
    /// receive an explicit zero gradient.
    pub fn accumulate_into(&self, v: Var, param: &mut Tensor) -> Result<()> {
        match self.wrt(v) {
            Some(g) => param.accumulate_grad(g),
            None => {
                param.touch_grad();
                Ok(())
            }
        }
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Inserts a leaf. It participates in differentiation iff
    /// `tensor.requires_grad()`.
    pub fn leaf(&mut self, tensor: Tensor) -> Var {
        let requires_grad = tensor.requires_grad();
        self.push(tensor, None, [0, 0], requires_grad)
    }

    /// Inserts a copy of a parameter tensor (value only, no gradient buffer).
    pub fn param(&mut self, tensor: &Tensor) -> Var {
        let mut t = Tensor::new(tensor.shape().to_vec(), tensor.data().to_vec())
            .expect("tensor invariant holds");
        t.set_requires_grad(tensor.requires_grad());
        self.leaf(t)
    }

    /// Inserts a leaf that never requires grad.
    pub fn constant(&mut self, tensor: Tensor) -> Var {
        let mut t = tensor;
        t.set_requires_grad(false);
        self.leaf(t)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(
        &mut self,
        value: Tensor,
        kind: Option<OpKind>,
        inputs: [usize; 2],
        requires_grad: bool,
    ) -> Var {
        self.nodes.push(Node {
            value,
            kind,
            inputs,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Evaluates `kind` on `inputs` and records the result.
    pub fn forward(&mut self, kind: OpKind, inputs: &[Var]) -> Result<Var> {
        if inputs.len() != kind.arity() {
            return Err(Error::Contract(format!(
                "{} expects {} inputs, got {}",
                kind.name(),
                kind.arity(),
                inputs.len()
            )));
        }
        let a = inputs[0];
        let b = inputs.get(1).copied().unwrap_or(a);
        let av = &self.nodes[a.0].value;
        let bv = &self.nodes[b.0].value;
        let value = match &kind {
            OpKind::MatMul => matmul_forward(av, bv)?,
            OpKind::BatchMatMul => batch_matmul_forward(av, bv)?,
            OpKind::Add => broadcast_binary("add", av, bv, |x, y| x + y)?,
            OpKind::Sub => broadcast_binary("sub", av, bv, |x, y| x - y)?,
            OpKind::Mul => broadcast_binary("mul", av, bv, |x, y| x * y)?,
            OpKind::Scale(c) => map(av, |x| c * x),
            OpKind::AddScalar(c) => map(av, |x| x + c),
            OpKind::Exp => map(av, f64::exp),
            OpKind::Log => {
                if let Some(bad) = av.data().iter().find(|&&x| !(x > 0.0)) {
                    return Err(domain_err("log", format!("non-positive input {bad}")));
                }
                map(av, f64::ln)
            }
            OpKind::Sigmoid => map(av, sigmoid),
            OpKind::Elu(alpha) => map(av, |x| if x > 0.0 { x } else { alpha * x.exp_m1() }),
            OpKind::Square => map(av, |x| x * x),
            OpKind::Clamp(lo, hi) => {
                if lo > hi {
                    return Err(domain_err("clamp", format!("empty interval [{lo}, {hi}]")));
                }
                map(av, |x| x.clamp(*lo, *hi))
            }
            OpKind::Reshape(shape) => av.clone().reshape(shape.clone())?,
            OpKind::Sum => Tensor::scalar(av.data().iter().sum()),
            OpKind::Mean => {
                if av.numel() == 0 {
                    return Err(shape_err("mean", "empty tensor"));
                }
                Tensor::scalar(av.data().iter().sum::<f64>() / av.numel() as f64)
            }
        };
        let requires_grad = self.nodes[a.0].requires_grad
            || (kind.arity() == 2 && self.nodes[b.0].requires_grad);
        let mut value = value;
        value.set_requires_grad(false);
        Ok(self.push(value, Some(kind), [a.0, b.0], requires_grad))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.forward(OpKind::MatMul, &[a, b])
    }

    pub fn batch_matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.forward(OpKind::BatchMatMul, &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.forward(OpKind::Add, &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.forward(OpKind::Sub, &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.forward(OpKind::Mul, &[a, b])
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        self.forward(OpKind::Scale(c), &[a])
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Result<Var> {
        self.forward(OpKind::AddScalar(c), &[a])
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.forward(OpKind::Exp, &[a])
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.forward(OpKind::Log, &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.forward(OpKind::Sigmoid, &[a])
    }

    pub fn elu(&mut self, a: Var) -> Result<Var> {
        self.forward(OpKind::Elu(1.0), &[a])
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        self.forward(OpKind::Square, &[a])
    }

    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Result<Var> {
        self.forward(OpKind::Clamp(lo, hi), &[a])
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        self.forward(OpKind::Reshape(shape.to_vec()), &[a])
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        self.forward(OpKind::Sum, &[a])
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        self.forward(OpKind::Mean, &[a])
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.nodes.is_empty() {
            return Err(Error::Contract("backward on an empty graph".into()));
        }
        let out = &self.nodes[loss.0].value;
        if out.numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                out.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        if !self.nodes[loss.0].requires_grad {
            return Ok(Gradients { grads });
        }
        grads[loss.0] = Some(vec![1.0]);

        for id in (0..=loss.0).rev() {
            let node = &self.nodes[id];
            let Some(kind) = &node.kind else { continue };
            if !node.requires_grad {
                continue;
            }
            let Some(upstream) = grads[id].take() else {
                continue;
            };
            let [ia, ib] = node.inputs;
            let a = &self.nodes[ia];
            let b = &self.nodes[ib];
            let y = &node.value;
            match kind {
                OpKind::MatMul => {
                    let (m, k, n) = (a.value.shape()[0], a.value.shape()[1], b.value.shape()[1]);
                    if a.requires_grad {
                        // dA = dC * B^T
                        let mut da = vec![0.0; m * k];
                        gemm(m, n, k, &upstream, (n, 1), b.value.data(), (1, n), &mut da);
                        add_grad(&mut grads, ia, da);
                    }
                    if b.requires_grad {
                        // dB = A^T * dC
                        let mut db = vec![0.0; k * n];
                        gemm(k, m, n, a.value.data(), (1, k), &upstream, (n, 1), &mut db);
                        add_grad(&mut grads, ib, db);
                    }
                }
                OpKind::BatchMatMul => {
                    let (bs, m, k) = (a.value.shape()[0], a.value.shape()[1], a.value.shape()[2]);
                    let n = b.value.shape()[2];
                    if a.requires_grad {
                        let mut da = vec![0.0; bs * m * k];
                        for s in 0..bs {
                            gemm(
                                m,
                                n,
                                k,
                                &upstream[s * m * n..],
                                (n, 1),
                                &b.value.data()[s * k * n..],
                                (1, n),
                                &mut da[s * m * k..(s + 1) * m * k],
                            );
                        }
                        add_grad(&mut grads, ia, da);
                    }
                    if b.requires_grad {
                        let mut db = vec![0.0; bs * k * n];
                        for s in 0..bs {
                            gemm(
                                k,
                                m,
                                n,
                                &a.value.data()[s * m * k..],
                                (1, k),
                                &upstream[s * m * n..],
                                (n, 1),
                                &mut db[s * k * n..(s + 1) * k * n],
                            );
                        }
                        add_grad(&mut grads, ib, db);
                    }
                }
                OpKind::Add | OpKind::Sub | OpKind::Mul => {
                    let na = a.value.numel();
                    let nb = b.value.numel();
                    let len = upstream.len();
                    if a.requires_grad {
                        let mut da = vec![0.0; na];
                        match kind {
                            OpKind::Mul => {
                                let bd = b.value.data();
                                for i in 0..len {
                                    da[i % na] += upstream[i] * bd[i % nb];
                                }
                            }
                            _ => {
                                for i in 0..len {
                                    da[i % na] += upstream[i];
                                }
                            }
                        }
                        add_grad(&mut grads, ia, da);
                    }
                    if b.requires_grad {
                        let mut db = vec![0.0; nb];
                        match kind {
                            OpKind::Mul => {
                                let ad = a.value.data();
                                for i in 0..len {
                                    db[i % nb] += upstream[i] * ad[i % na];
                                }
                            }
                            OpKind::Sub => {
                                for i in 0..len {
                                    db[i % nb] -= upstream[i];
                                }
                            }
                            _ => {
                                for i in 0..len {
                                    db[i % nb] += upstream[i];
                                }
                            }
                        }
                        add_grad(&mut grads, ib, db);
                    }
                }
                _ if !a.requires_grad => {}
                OpKind::Scale(c) => {
                    let da = upstream.iter().map(|g| g * c).collect();
                    add_grad(&mut grads, ia, da);
                }
                OpKind::AddScalar(_) | OpKind::Reshape(_) => add_grad(&mut grads, ia, upstream),
                OpKind::Exp => {
                    let da = zip_map(&upstream, y.data(), |g, e| g * e);
                    add_grad(&mut grads, ia, da);
                }
                OpKind::Log => {
                    let da = zip_map(&upstream, a.value.data(), |g, x| g / x);
                    add_grad(&mut grads, ia, da);
                }
                OpKind::Sigmoid => {
                    let da = zip_map(&upstream, y.data(), |g, s| g * s * (1.0 - s));
                    add_grad(&mut grads, ia, da);
                }
                OpKind::Elu(alpha) => {
                    let da = upstream
                        .iter()
                        .zip(a.value.data().iter().zip(y.data()))
                        .map(|(g, (&x, &out))| if x > 0.0 { *g } else { g * (out + alpha) })
                        .collect();
                    add_grad(&mut grads, ia, da);
                }
                OpKind::Square => {
                    let da = zip_map(&upstream, a.value.data(), |g, x| 2.0 * g * x);
                    add_grad(&mut grads, ia, da);
                }
                OpKind::Clamp(lo, hi) => {
                    let da = zip_map(&upstream, a.value.data(), |g, x| {
                        if x > *lo && x < *hi {
                            g
                        } else {
                            0.0
                        }
                    });
                    add_grad(&mut grads, ia, da);
                }
                OpKind::Sum => {
                    let da = vec![upstream[0]; a.value.numel()];
                    add_grad(&mut grads, ia, da);
                }
                OpKind::Mean => {
                    let n = a.value.numel();
                    let da = vec![upstream[0] / n as f64; n];
                    add_grad(&mut grads, ia, da);
                }
            }
        }
        Ok(Gradients { grads })
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn add_grad(grads: &mut [Option<Vec<f64>>], id: usize, g: Vec<f64>) {
    match &mut grads[id] {
        Some(existing) => {
            for (e, v) in existing.iter_mut().zip(&g) {
                *e += v;
            }
        }
        slot @ None => *slot = Some(g),
    }
}

fn zip_map(g: &[f64], x: &[f64], f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    g.iter().zip(x).map(|(&g, &x)| f(g, x)).collect()
}

fn map(t: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    Tensor::new(t.shape().to_vec(), t.data().iter().map(|&x| f(x)).collect())
        .expect("same shape")
}

fn broadcast_binary(
    op: &'static str,
    a: &Tensor,
    b: &Tensor,
    f: impl Fn(f64, f64) -> f64,
) -> Result<Tensor> {
    let (sa, sb) = (a.shape(), b.shape());
    let out_shape = if sa == sb || sa.ends_with(sb) {
        sa
    } else if sb.ends_with(sa) {
        sb
    } else {
        return Err(shape_err(op, format!("cannot broadcast {sa:?} with {sb:?}")));
    };
    let (ad, bd) = (a.data(), b.data());
    let (na, nb) = (ad.len(), bd.len());
    let n: usize = out_shape.iter().product();
    let data = if na == n && nb == n {
        ad.iter().zip(bd).map(|(&x, &y)| f(x, y)).collect()
    } else {
        (0..n).map(|i| f(ad[i % na], bd[i % nb])).collect()
    };
    Tensor::new(out_shape.to_vec(), data)
}

fn matmul_forward(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.ndim() != 2 || b.ndim() != 2 || a.shape()[1] != b.shape()[0] {
        return Err(shape_err(
            "matmul",
            format!("{:?} x {:?}", a.shape(), b.shape()),
        ));
    }
    let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
    let mut out = vec![0.0; m * n];
    gemm(m, k, n, a.data(), (k, 1), b.data(), (n, 1), &mut out);
    Tensor::new([m, n], out)
}

fn batch_matmul_forward(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.ndim() != 3 || b.ndim() != 3 || a.shape()[0] != b.shape()[0] || a.shape()[2] != b.shape()[1]
    {
        return Err(shape_err(
            "batch_matmul",
            format!("{:?} x {:?}", a.shape(), b.shape()),
        ));
    }
    let (bs, m, k, n) = (a.shape()[0], a.shape()[1], a.shape()[2], b.shape()[2]);
    let mut out = vec![0.0; bs * m * n];
    for s in 0..bs {
        gemm(
            m,
            k,
            n,
            &a.data()[s * m * k..],
            (k, 1),
            &b.data()[s * k * n..],
            (n, 1),
            &mut out[s * m * n..(s + 1) * m * n],
        );
    }
    Tensor::new([bs, m, n], out)
}

/// `c (m x n, row-major, overwritten) = a (m x k) * b (k x n)` with explicit
/// (row, column) strides for `a` and `b`, so transposes need no copies.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_strides: (usize, usize),
    b: &[f64],
    b_strides: (usize, usize),
    c: &mut [f64],
) {
    if m == 0 || n == 0 {
        return;
    }
    assert!(c.len() >= m * n);
    if k == 0 {
        c[..m * n].fill(0.0);
        return;
    }
    let last_a = (m - 1) * a_strides.0 + (k - 1) * a_strides.1;
    let last_b = (k - 1) * b_strides.0 + (n - 1) * b_strides.1;
    assert!(last_a < a.len() && last_b < b.len());
    // Small products (per-sample library contractions) skip the packing cost.
    if m * k * n <= 256 {
        for i in 0..m {
            for j in 0..n {
                let mut acc = 0.0;
                for p in 0..k {
                    acc += a[i * a_strides.0 + p * a_strides.1] * b[p * b_strides.0 + j * b_strides.1];
                }
                c[i * n + j] = acc;
            }
        }
        return;
    }
    // SAFETY: the asserts above bound every element the kernel touches.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            a_strides.0 as isize,
            a_strides.1 as isize,
            b.as_ptr(),
            b_strides.0 as isize,
            b_strides.1 as isize,
            0.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

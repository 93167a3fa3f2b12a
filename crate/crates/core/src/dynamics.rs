//! Benchmark systems, their simulators, and finite-difference derivatives.
//!
//! Parameter-noise systems (Lorenz, Rossler, Lorenz-96) redraw their
//! stochastic parameters once per step and advance with a classical RK4 step
//! while those parameters are held fixed. The draws are plain normal samples,
//! not Wiener increments, so they are not scaled by `sqrt(dt)`.
//!
//! The Lotka-Volterra system is an Ito SDE with state-dependent diffusion,
//! advanced with Euler-Maruyama. Its diffusion does not vanish on the axes,
//! so unconstrained paths can leave the positive quadrant and then blow up
//! within a few thousand steps; by default the simulator reflects negative
//! populations back through zero (see [`Boundary`]).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::rng::{self, Purpose};
use rand_distr::{Distribution, StandardNormal};

pub const DEFAULT_STEPS: usize = 10_000;
pub const DEFAULT_DT: f64 = 0.01;
pub const LORENZ96_DEFAULT_DIM: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SystemKind {
    Lorenz,
    Rossler,
    LotkaVolterra,
    Lorenz96,
}

impl SystemKind {
    pub fn name(self) -> &'static str {
        match self {
            SystemKind::Lorenz => "lorenz",
            SystemKind::Rossler => "rossler",
            SystemKind::LotkaVolterra => "lotka_volterra",
            SystemKind::Lorenz96 => "lorenz96",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "lorenz" => Ok(SystemKind::Lorenz),
            "rossler" => Ok(SystemKind::Rossler),
            "lotka_volterra" | "lotka-volterra" => Ok(SystemKind::LotkaVolterra),
            "lorenz96" => Ok(SystemKind::Lorenz96),
            other => Err(Error::Config(format!("unknown system '{other}'"))),
        }
    }
}

impl std::fmt::Display for SystemKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    ParameterNoise,
    StateDependentDiffusion,
}

/// What the SDE integrator does when a step leaves the positive orthant.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Boundary {
    /// Plain Euler-Maruyama; a blow-up surfaces as a divergence error.
    Free,
    /// Negative components are mirrored back, `x <- |x|`.
    #[default]
    Reflecting,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSpec {
    pub name: SystemKind,
    pub state_dim: usize,
    /// Lorenz `(omega, rho, beta)`, Rossler `(a, b, c)`, Lorenz-96 one
    /// forcing per coordinate; empty for Lotka-Volterra.
    pub parameter_means: Vec<f64>,
    /// Parameter standard deviation, or the diffusion multiplier for the SDE.
    pub noise_scale: f64,
    pub noise_kind: NoiseKind,
    #[serde(default)]
    pub boundary: Boundary,
}

impl SystemSpec {
    pub fn lorenz(sigma: f64) -> Self {
        Self {
            name: SystemKind::Lorenz,
            state_dim: 3,
            parameter_means: vec![10.0, 28.0, 8.0 / 3.0],
            noise_scale: sigma,
            noise_kind: NoiseKind::ParameterNoise,
            boundary: Boundary::Free,
        }
    }

    pub fn rossler(sigma: f64) -> Self {
        Self {
            name: SystemKind::Rossler,
            state_dim: 3,
            parameter_means: vec![0.2, 0.2, 5.7],
            noise_scale: sigma,
            noise_kind: NoiseKind::ParameterNoise,
            boundary: Boundary::Free,
        }
    }

    /// `diffusion_scale = 1` is the reference diffusion
    /// `(0.25x - 0.09y, -0.09x + 0.25y)`.
    pub fn lotka_volterra(diffusion_scale: f64) -> Self {
        Self {
            name: SystemKind::LotkaVolterra,
            state_dim: 2,
            parameter_means: Vec::new(),
            noise_scale: diffusion_scale,
            noise_kind: NoiseKind::StateDependentDiffusion,
            boundary: Boundary::Reflecting,
        }
    }

    pub fn lorenz96(state_dim: usize, sigma: f64) -> Self {
        Self {
            name: SystemKind::Lorenz96,
            state_dim,
            parameter_means: vec![8.0; state_dim],
            noise_scale: sigma,
            noise_kind: NoiseKind::ParameterNoise,
            boundary: Boundary::Free,
        }
    }

    /// Default spec for a system at noise level `sigma`.
    pub fn from_kind(kind: SystemKind, sigma: f64) -> Self {
        match kind {
            SystemKind::Lorenz => Self::lorenz(sigma),
            SystemKind::Rossler => Self::rossler(sigma),
            SystemKind::LotkaVolterra => Self::lotka_volterra(sigma),
            SystemKind::Lorenz96 => Self::lorenz96(LORENZ96_DEFAULT_DIM, sigma),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let expected_dim = match self.name {
            SystemKind::Lorenz | SystemKind::Rossler => Some(3),
            SystemKind::LotkaVolterra => Some(2),
            SystemKind::Lorenz96 => None,
        };
        if let Some(n) = expected_dim {
            if self.state_dim != n {
                return Err(Error::Config(format!(
                    "{} has state dimension {n}, got {}",
                    self.name, self.state_dim
                )));
            }
        } else if self.state_dim < 4 {
            return Err(Error::Config(format!(
                "lorenz96 needs at least 4 coordinates, got {}",
                self.state_dim
            )));
        }
        let params = match self.name {
            SystemKind::Lorenz | SystemKind::Rossler => 3,
            SystemKind::LotkaVolterra => 0,
            SystemKind::Lorenz96 => self.state_dim,
        };
        if self.parameter_means.len() != params {
            return Err(Error::Config(format!(
                "{} takes {params} parameter means, got {}",
                self.name,
                self.parameter_means.len()
            )));
        }
        if !(self.noise_scale >= 0.0) || !self.noise_scale.is_finite() {
            return Err(Error::Config(format!(
                "noise scale must be finite and >= 0, got {}",
                self.noise_scale
            )));
        }
        let sde = self.name == SystemKind::LotkaVolterra;
        let kind_ok = match self.noise_kind {
            NoiseKind::StateDependentDiffusion => sde,
            NoiseKind::ParameterNoise => !sde,
        };
        if !kind_ok {
            return Err(Error::Config(format!(
                "{} does not support {:?}",
                self.name, self.noise_kind
            )));
        }
        Ok(())
    }

    /// Deterministic vector field with explicit parameter values.
    pub fn vector_field(&self, params: &[f64], x: &[f64], out: &mut [f64]) {
        match self.name {
            SystemKind::Lorenz => {
                let (omega, rho, beta) = (params[0], params[1], params[2]);
                out[0] = omega * (x[1] - x[0]);
                out[1] = x[0] * (rho - x[2]) - x[1];
                out[2] = x[0] * x[1] - beta * x[2];
            }
            SystemKind::Rossler => {
                let (a, b, c) = (params[0], params[1], params[2]);
                out[0] = -x[1] - x[2];
                out[1] = x[0] + a * x[1];
                out[2] = b + x[2] * (x[0] - c);
            }
            SystemKind::Lorenz96 => {
                let n = x.len();
                for i in 0..n {
                    let next = x[(i + 1) % n];
                    let prev = x[(i + n - 1) % n];
                    let prev2 = x[(i + n - 2) % n];
                    out[i] = params[i] + (next - prev2) * prev - x[i];
                }
            }
            SystemKind::LotkaVolterra => lotka_volterra_drift(x, out),
        }
    }

    /// Vector field at the parameter means (the drift for the SDE).
    pub fn mean_field(&self, x: &[f64], out: &mut [f64]) {
        self.vector_field(&self.parameter_means, x, out);
    }
}

pub fn lotka_volterra_drift(x: &[f64], out: &mut [f64]) {
    out[0] = x[0] - x[0] * x[1];
    out[1] = -x[1] + x[0] * x[1];
}

pub fn lotka_volterra_diffusion(x: &[f64], out: &mut [f64]) {
    out[0] = 0.25 * x[0] - 0.09 * x[1];
    out[1] = -0.09 * x[0] + 0.25 * x[1];
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!("unknown split '{other}'"))),
        }
    }
}

/// Time-ordered states with an optional derivative estimate.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub dt: f64,
    pub states: Matrix,
    pub derivatives: Option<Matrix>,
    pub seed: u64,
    pub system: Option<SystemSpec>,
}

impl Trajectory {
    pub fn new(dt: f64, states: Matrix) -> Result<Self> {
        let traj = Self {
            dt,
            states,
            derivatives: None,
            seed: 0,
            system: None,
        };
        traj.validate()?;
        Ok(traj)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(Error::Config(format!("dt must be positive, got {}", self.dt)));
        }
        if self.states.rows() < 2 {
            return Err(Error::InsufficientData(format!(
                "trajectory needs at least 2 states, got {}",
                self.states.rows()
            )));
        }
        if !self.states.is_finite() {
            return Err(Error::Numerical("trajectory contains non-finite states".into()));
        }
        if let Some(d) = &self.derivatives {
            if d.shape() != self.states.shape() {
                return Err(crate::error::shape_err(
                    "trajectory",
                    format!("derivatives {:?} vs states {:?}", d.shape(), self.states.shape()),
                ));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.states.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.states.rows() == 0
    }

    pub fn state_dim(&self) -> usize {
        self.states.cols()
    }
}

fn check_step(x: &[f64], step: usize) -> Result<()> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Divergence {
            step,
            detail: format!("state {x:?}"),
        })
    }
}

fn check_inputs(spec: &SystemSpec, x0: &[f64], dt: f64, steps: usize) -> Result<()> {
    spec.validate()?;
    if x0.len() != spec.state_dim {
        return Err(Error::Config(format!(
            "initial condition has {} entries, {} needs {}",
            x0.len(),
            spec.name,
            spec.state_dim
        )));
    }
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::Config(format!("dt must be positive, got {dt}")));
    }
    if steps == 0 {
        return Err(Error::Config("steps must be at least 1".into()));
    }
    check_step(x0, 0)
}

/// One classical Runge-Kutta step of `field` from `x` into `out`.
pub fn rk4_step(
    field: &mut impl FnMut(&[f64], &mut [f64]),
    x: &[f64],
    dt: f64,
    out: &mut [f64],
) {
    let n = x.len();
    let mut k1 = vec![0.0; n];
    let mut k2 = vec![0.0; n];
    let mut k3 = vec![0.0; n];
    let mut k4 = vec![0.0; n];
    let mut tmp = vec![0.0; n];
    field(x, &mut k1);
    for i in 0..n {
        tmp[i] = x[i] + 0.5 * dt * k1[i];
    }
    field(&tmp, &mut k2);
    for i in 0..n {
        tmp[i] = x[i] + 0.5 * dt * k2[i];
    }
    field(&tmp, &mut k3);
    for i in 0..n {
        tmp[i] = x[i] + dt * k3[i];
    }
    field(&tmp, &mut k4);
    for i in 0..n {
        out[i] = x[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
}

/// Random-parameter ODE: redraw parameters each step, then one RK4 step.
pub fn simulate_rde(
    spec: &SystemSpec,
    x0: &[f64],
    dt: f64,
    steps: usize,
    seed: u64,
) -> Result<Trajectory> {
    check_inputs(spec, x0, dt, steps)?;
    if spec.noise_kind != NoiseKind::ParameterNoise {
        return Err(Error::Config(format!(
            "{} is not a parameter-noise system",
            spec.name
        )));
    }
    let n = spec.state_dim;
    let mut rng = rng::stream(seed, Purpose::Simulation, 0);
    let mut states = Vec::with_capacity((steps + 1) * n);
    states.extend_from_slice(x0);
    let mut params = spec.parameter_means.clone();
    let mut x = x0.to_vec();
    let mut next = vec![0.0; n];
    for step in 1..=steps {
        for (p, &mean) in params.iter_mut().zip(&spec.parameter_means) {
            let z: f64 = StandardNormal.sample(&mut rng);
            *p = mean + spec.noise_scale * z;
        }
        rk4_step(
            &mut |s: &[f64], o: &mut [f64]| spec.vector_field(&params, s, o),
            &x,
            dt,
            &mut next,
        );
        check_step(&next, step)?;
        std::mem::swap(&mut x, &mut next);
        states.extend_from_slice(&x);
    }
    Ok(Trajectory {
        dt,
        states: Matrix::new(steps + 1, n, states)?,
        derivatives: None,
        seed,
        system: Some(spec.clone()),
    })
}

/// Euler-Maruyama for the Lotka-Volterra SDE:
/// `x' = x + drift(x) dt + noise_scale * diffusion(x) sqrt(dt) xi`.
pub fn simulate_sde(
    spec: &SystemSpec,
    x0: &[f64],
    dt: f64,
    steps: usize,
    seed: u64,
) -> Result<Trajectory> {
    check_inputs(spec, x0, dt, steps)?;
    if spec.noise_kind != NoiseKind::StateDependentDiffusion {
        return Err(Error::Config(format!("{} is not an SDE system", spec.name)));
    }
    let n = spec.state_dim;
    let mut rng = rng::stream(seed, Purpose::Simulation, 0);
    let sqrt_dt = dt.sqrt();
    let mut states = Vec::with_capacity((steps + 1) * n);
    states.extend_from_slice(x0);
    let mut x = x0.to_vec();
    let mut drift = vec![0.0; n];
    let mut diffusion = vec![0.0; n];
    for step in 1..=steps {
        lotka_volterra_drift(&x, &mut drift);
        lotka_volterra_diffusion(&x, &mut diffusion);
        for i in 0..n {
            let xi: f64 = StandardNormal.sample(&mut rng);
            x[i] += drift[i] * dt + spec.noise_scale * diffusion[i] * sqrt_dt * xi;
            if spec.boundary == Boundary::Reflecting {
                x[i] = x[i].abs();
            }
        }
        check_step(&x, step)?;
        states.extend_from_slice(&x);
    }
    Ok(Trajectory {
        dt,
        states: Matrix::new(steps + 1, n, states)?,
        derivatives: None,
        seed,
        system: Some(spec.clone()),
    })
}

/// Dispatches to the simulator matching the system's noise model.
pub fn simulate(
    spec: &SystemSpec,
    x0: &[f64],
    dt: f64,
    steps: usize,
    seed: u64,
) -> Result<Trajectory> {
    match spec.noise_kind {
        NoiseKind::ParameterNoise => simulate_rde(spec, x0, dt, steps, seed),
        NoiseKind::StateDependentDiffusion => simulate_sde(spec, x0, dt, steps, seed),
    }
}

/// Central differences inside, one-sided first-order differences at the ends.
pub fn estimate_derivatives(traj: &Trajectory) -> Result<Trajectory> {
    let (m, n) = traj.states.shape();
    if m < 3 {
        return Err(Error::InsufficientData(format!(
            "derivative estimation needs at least 3 states, got {m}"
        )));
    }
    let dt = traj.dt;
    let x = &traj.states;
    let mut d = Matrix::zeros(m, n);
    for j in 0..n {
        d.set(0, j, (x.get(1, j) - x.get(0, j)) / dt);
        d.set(m - 1, j, (x.get(m - 1, j) - x.get(m - 2, j)) / dt);
        for t in 1..m - 1 {
            d.set(t, j, (x.get(t + 1, j) - x.get(t - 1, j)) / (2.0 * dt));
        }
    }
    let mut out = traj.clone();
    out.derivatives = Some(d);
    Ok(out)
}

const LORENZ96_TEST_X0: [f64; 10] = [7.8, 8.7, 8.5, 6.0, 9.9, 9.5, 7.5, 6.9, 6.9, 8.7];

/// Reference initial conditions for the benchmark datasets. The Lorenz-96
/// test state is a fixed rounded vector and exists only for n = 10.
pub fn initial_condition(spec: &SystemSpec, split: Split) -> Result<Vec<f64>> {
    spec.validate()?;
    let x0 = match (spec.name, split) {
        (SystemKind::Lorenz | SystemKind::Rossler, Split::Train) => vec![0.0, 1.0, 1.05],
        (SystemKind::Lorenz | SystemKind::Rossler, Split::Test) => vec![-1.0, 2.0, 0.5],
        (SystemKind::LotkaVolterra, Split::Train) => vec![4.0, 2.0],
        (SystemKind::LotkaVolterra, Split::Test) => vec![2.1, 1.0],
        (SystemKind::Lorenz96, Split::Train) => {
            let mut x = vec![8.0; spec.state_dim];
            x[0] = 8.01;
            x
        }
        (SystemKind::Lorenz96, Split::Test) => {
            if spec.state_dim != LORENZ96_TEST_X0.len() {
                return Err(Error::Config(format!(
                    "no reference test state for lorenz96 with n = {}",
                    spec.state_dim
                )));
            }
            LORENZ96_TEST_X0.to_vec()
        }
    };
    Ok(x0)
}

/// Standard dataset: 10000 steps at dt = 0.01 from the reference initial
/// condition, with derivatives estimated.
pub fn make_dataset(spec: &SystemSpec, split: Split, seed: u64) -> Result<Trajectory> {
    let x0 = initial_condition(spec, split)?;
    let traj = simulate(spec, &x0, DEFAULT_DT, DEFAULT_STEPS, seed)?;
    estimate_derivatives(&traj)
}

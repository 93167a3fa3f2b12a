//! Discovery of sparse stochastic governing equations from trajectory data.
//!
//! A variational encoder maps observed `(x, dx/dt)` pairs to a latent
//! Gaussian; a hypernetwork turns latent samples into coefficient matrices
//! over a polynomial library; a hard-concrete gate learns which library
//! terms survive. Sampling the latent prior then yields a random ODE whose
//! coefficient spread reflects the noise in the data.
//!
//! Module map:
//!
//! - [`autodiff`]: tensors, reverse-mode graph, AdamW.
//! - [`dynamics`]: benchmark simulators and derivative estimation.
//! - [`library`]: monomial candidate-function library.
//! - [`model`]: encoder, hypernetwork, sparse mask and the training loss.
//! - [`training`]: schedules, permanent thresholding, the epoch loop.
//! - [`evaluation`]: ensembles, RMSE, generation, Kramers-Moyal, E-SINDy.
//! - [`io`]: CSV and JSON formats shared with the command-line tool.

pub mod autodiff;
pub mod dynamics;
pub mod error;
pub mod evaluation;
pub mod io;
pub mod library;
pub mod linalg;
pub mod model;
pub mod rng;
pub mod training;

pub use autodiff::{AdamW, AdamWConfig, Graph, Tensor, Var};
pub use dynamics::{Split, SystemKind, SystemSpec, Trajectory};
pub use error::{Error, Result};
pub use library::{Library, LibrarySpec, Term};
pub use linalg::Matrix;
pub use model::{HyperSindy, ModelConfig};
pub use training::{TrainConfig, TrainHistory};

//! Scoring and downstream use of trained models.

pub mod ensemble;
pub mod experiment;
pub mod generate;
pub mod km;
pub mod sindy;

pub use ensemble::{coefficient_rmse, ground_truth, sample_coefficients, CoefficientEnsemble, GroundTruth, RmseReport};
pub use experiment::{table1_experiment, table1_fit, table1_run, SeedFit, Table1Options, Table1Summary};
pub use generate::{generate_trajectory, GenerateMode};
pub use km::{km_estimate, KmBin, KmField};
pub use sindy::{esindy, esindy_threshold, stlsq, tune_threshold, EsindyConfig};

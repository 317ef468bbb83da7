//! Hypothesis testing for ergodic diffusions observed at high frequency.
//!
//! The pipeline: simulate or load a discretely observed sample path,
//! maximize Euler-type quasi-likelihoods in two stages (diffusion
//! coefficient first, then drift), and form likelihood-ratio, Wald, and
//! Rao statistics with chi-square calibration, including the four-case
//! joint decision of the two-stage test.

pub mod cli;
pub mod error;
pub mod estimate;
pub mod hypotest;
pub mod linalg;
pub mod mc;
pub mod model;
pub mod quasilik;
pub mod simulate;

pub use error::{Error, Result};
pub use hypotest::{two_step_decision, StatKind, TestReport};
pub use model::{DiffusionModel, Hypothesis, ParameterSpace, Theta};
pub use simulate::{SamplePath, SimConfig, StepRule};

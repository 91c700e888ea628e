//! Regularized energy networks trained with generalized Fenchel-Young losses.
//!
//! A model maps features `x` to energy parameters `v`. Predictions are the
//! maximizers of `Φ(v, p) − Ω(p)` over the output set, and training minimizes
//! `Ω^Φ(v) + Ω(y) − Φ(v, y)` whose gradient comes from the envelope theorem.

// Negated comparisons such as `!(x > 0.0)` are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod calibration;
pub mod conjugate;
pub mod data;
pub mod energies;
pub mod error;
pub mod instances;
pub mod losses;
pub mod models;
pub mod numerics;
pub mod regularizers;
pub mod training;

pub use calibration::{AffineLossDecomposition, CalibrationReport, LabelDistribution};
pub use conjugate::{conjugate, envelope_gradient, ConjugateResult, Method, SolveStatus, SolverConfig};
pub use data::{MultilabelDataset, Standardizer, SyntheticSpec};
pub use energies::{Energy, EnergyInput};
pub use error::{Error, Result};
pub use instances::EnergyFamily;
pub use losses::{LossEval, LossKind};
pub use models::{Architecture, Model, ModelSpec};
pub use numerics::{Matrix, Rng, Vector};
pub use regularizers::{OutputSet, Regularizer, RegularizerKind};
pub use training::{GradientRoute, Task, TrainConfig, TrainReport};

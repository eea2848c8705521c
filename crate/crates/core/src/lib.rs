//! Multi-task ridge regression with a shared component, and random-matrix predictions of its risk.
//!
//! Each task `t` fits `Y_t ≈ X_tᵀW_t/√(Td)` with `W_t = W₀ + V_t`, penalising `‖W₀‖²/λ` and
//! `‖V_t‖²/γ_t`. The estimator has a closed form through an `n × n` dual system; as `d` and the
//! sample sizes grow together its train and test risks concentrate around deterministic values
//! that [`rmt`] computes from the feature covariances alone.
//!
//! ```
//! use mtl_rmt::model::{Covariance, NoiseModel};
//! use mtl_rmt::synth::{generate_problem, FeatureDistribution, GeneratorSpec, WeightSpec};
//! use mtl_rmt::{solve, theoretical_test_risk, Hyperparams, RmtConfig, RmtContext, Signal};
//!
//! let spec = GeneratorSpec {
//!     distribution: FeatureDistribution::Gaussian(Covariance::Isotropic(1.0)),
//!     seed: 7,
//!     task_sizes: vec![60, 40],
//!     d: 30,
//!     q: 1,
//!     noise: NoiseModel::isotropic(1, 0.25)?,
//!     weights: WeightSpec::TwoTaskAlpha(0.5),
//! };
//! let data = generate_problem(&spec)?;
//! let hp = Hyperparams::uniform(1.0, 1.0, 2)?;
//! let fit = solve(&data.problem, &hp)?;
//! assert_eq!(fit.w().len(), 2);
//!
//! let spectrum = mtl_rmt::synth::population_spectrum(&spec)?;
//! let ctx = RmtContext::new(spectrum, &hp, RmtConfig::default())?;
//! let report = theoretical_test_risk(&ctx, &data.noise, Signal::Weights(&data.w))?;
//! assert!(report.test_risk > report.irreducible_noise);
//! # Ok::<(), mtl_rmt::Error>(())
//! ```

// `!(x > 0.0)` also rejects NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod estimation;
pub mod linalg;
pub mod model;
pub mod rmt;
pub mod simplified;
pub mod solver;
pub mod synth;
pub mod validation;

pub use error::{Error, Result};
pub use linalg::BlockMatrix;
pub use model::{Hyperparams, MtlSolution, MultiTaskProblem, NoiseModel, SpectrumModel, TaskData};
pub use nalgebra;
pub use rmt::{theoretical_test_risk, theoretical_train_risk, RiskReport, RmtConfig, RmtContext, Signal};
pub use solver::{predict, solve, Fitter};

#[cfg(doctest)]
pub mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    pub mod chapter1 {}
    #[doc = include_str!("../../../book/src/estimator.md")]
    pub mod chapter2 {}
    #[doc = include_str!("../../../book/src/theory.md")]
    pub mod chapter3 {}
    #[doc = include_str!("../../../book/src/two_tasks.md")]
    pub mod chapter4 {}
    #[doc = include_str!("../../../book/src/estimation.md")]
    pub mod chapter5 {}
    #[doc = include_str!("../../../book/src/monte_carlo.md")]
    pub mod chapter6 {}
}

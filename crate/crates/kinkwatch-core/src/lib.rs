//! Gradient-descent training of two-layer (leaky) ReLU networks with
//! zero-bias initialization on scalar inputs.
//!
//! Besides plain simulation, the crate tracks the closed four-dimensional
//! dynamics that describe training while the activation pattern on the data
//! stays frozen, and can prove at run time that no kink will ever reach the
//! data. The [`harness`] module turns this into Monte Carlo estimates of
//! the probability that a kink does cross.

pub mod certify;
pub mod data;
pub mod embedded;
pub mod error;
pub mod harness;
pub mod linalg;
pub mod model;
pub mod reduced;
pub mod rng;

pub use certify::{certify_forever, kinks, Certificate, CertificateAccumulator, KinkReport};
pub use data::{
    augment_three_points, check_assumptions, distribution_summary, embed, example_dataset,
    regression_summary, sample, AssumptionReport, Atom, Dataset, EmbeddedDataset,
    FiniteDistribution, RegressionSummary, Sign,
};
pub use error::{Error, Result};
pub use model::{
    empirical_loss, forward, gd_step, gradient, init_weights, sgd_step, Dist, Gradient,
    Hyperparams, InitSpec, Weights,
};
pub use reduced::{
    activation_pattern, in_region, reference_operator, ActivationPattern, ReducedState,
    ReferenceOperator, SigmaMoments,
};

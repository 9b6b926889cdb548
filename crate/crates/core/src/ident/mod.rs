//! Identification of the latent degree law and the latent exposure posterior.

mod assign;
pub mod eigen;
pub mod kernels;
pub mod posterior;

pub use assign::{max_score_assignment, min_cost_assignment};
pub use eigen::{
    build_observed_matrices, eigen_recover, triangularity_diagnostic, IdentComponents, IdentQuality, ObservedMatrices,
    StochasticMatrix,
};
pub use kernels::{binom_pmf, lexi_index, one_type_kernel, propensity, LatentSupportIndex, OneTypeMode};
pub use posterior::{latent_posterior, LatentPosterior};

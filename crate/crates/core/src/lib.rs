//! Heterogeneous treatment and spillover effects under misclassified network
//! links.
//!
//! Two network proxies identify the law of the latent degree by
//! eigendecomposition; a one-type error proxy then pins down the posterior of
//! the latent exposure, which feeds a semiparametric least-squares second
//! stage with a dependency-neighborhood sandwich variance.
// NaN-rejecting guards are written as negated comparisons on purpose.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data;
pub mod error;
pub mod estim;
pub mod harness;
pub mod ident;
pub mod kde;
pub mod rng;
pub mod simgen;
pub mod spe;

pub use data::{Covariate, CovariateKind, DepNeighborhoods, ProxyId, Sample};
pub use error::{Error, Result};
pub use estim::model::{CasfModel, FnCasf, LatentCell, LinearCasf};
pub use simgen::{simulate, Adjacency, LatentNetwork, MisclassModel, ProxySymmetry, SimConfig, SimDataset};

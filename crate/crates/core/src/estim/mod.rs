//! Second stage: posterior-mixed CASF fitting, effects and inference.

pub mod effects;
pub mod fit;
pub mod model;
pub mod naive;
pub mod variance;

pub use crate::ident::propensity;
pub use effects::{default_queries, effect_contrast, effect_values, effects, EffectEstimate, EffectKind, EffectQuery};
pub use fit::{fit_theta, mixed_mean, Mixture, Problem, ThetaFit};
pub use model::{CasfModel, FnCasf, LatentCell, LinearCasf};
pub use naive::{naive_ols, proxy_mixtures, single_proxy_casf, single_proxy_effects};
pub use variance::{meat, sandwich_variance, Sandwich};

//! Weight-space averaging, posterior sampling and predictive ensembles.

pub mod predict;
pub mod swa;

pub use predict::{
    bn_refresh, ensemble_predict, entropy, mc_dropout_predict, point_predict, softmax, Member,
    PredictiveDistribution, Source,
};
pub use swa::{SwaState, SwagState};

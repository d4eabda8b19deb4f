//! Regression of probability distributions on Euclidean predictors in
//! 2-Wasserstein space.
//!
//! One-dimensional responses are handled exactly through quantile curves.
//! Responses on `d`-dimensional grids use entropy-regularized weighted
//! barycenters, which accept the signed weights produced by global and local
//! Frechet regression. Two-point geodesics are available through McCann
//! interpolation.

pub mod error;
pub mod frechet;
pub mod io;
pub mod kde;
pub mod measures;
pub mod ot1d;
pub mod regression;
pub mod render;
pub mod sim;
pub mod sinkhorn;

pub use error::{Error, Result};
pub use frechet::{global_weights, local_weights, KernelFamily, KernelSpec, PredictorSample};
pub use kde::{bin_by_predictor, kde_on_grid, Bandwidth, Bin, RawObservations};
pub use measures::{
    cost_matrix, discretize, Axis, CostMatrix, DensityGrid, DiscreteMeasure, GridSpec, GridValues,
    TransportPlan,
};
pub use ot1d::{quantile_from_density, w2_1d, weighted_quantile_barycenter, QuantileCurve};
pub use regression::{
    geodesic_check, geodesic_check_curves, mccann_interpolate, mccann_path, Coupling, FittedModel,
    Mode, PathMetric, Prediction, Responses, Solver,
};
pub use render::render_heatmap;
pub use sinkhorn::{
    exact_w2_discrete, sinkhorn_divergence, sinkhorn_plan, sinkhorn_plan_grid,
    weighted_sinkhorn_barycenter, CostUnits, LogDomain, SinkhornSettings,
};

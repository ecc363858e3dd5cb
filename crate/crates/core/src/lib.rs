//! Maximum-likelihood estimation of multivariate Hawkes processes whose
//! kernels are sums of exponentials with a shared decay grid.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod basis;
pub mod data;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod features;
pub mod io;
pub mod likelihood;
pub mod memip;
pub mod model;
pub mod newton;
pub mod quadrature;
pub mod simulate;

pub use data::{Dataset, Event, Realization};
pub use error::{Error, Result};
pub use features::{build_event_features, build_grid_features, FeatureSet, GridFeatures};
pub use memip::{memip_fit, memip_fit_select, FitOptions, FitReport, MemipFit};
pub use model::{Background, ExpSumModel, GroundTruthModel, Kernel};
pub use newton::{NewtonParams, NewtonResult, StopReason};
pub use simulate::{Scenario, SimConfig, SimModel};

//! Entropy of increasing families of distances on finite samples.
//!
//! Families come from maps, pseudogroups, flows and admissible curves of
//! anchored control systems; the estimator fits the exponential growth rate
//! of packing numbers.

pub mod curves;
pub mod driver;
pub mod error;
pub mod estimator;
pub mod family;
pub mod manifold;
pub mod metric;
pub mod ode;
pub mod scenarios;

pub use error::{Error, Result};
pub use family::{DistanceFamily, FamilyKind, Level};
pub use metric::{Distances, FiniteMetricSpace};
pub use estimator::{entropy_estimate, EntropyReport, EstimatorConfig};

//! Admissible curves of anchored control systems.

pub mod curve;
pub mod leaves;
pub mod norm;
pub mod sampling;
pub mod steering;
pub mod system;

pub use curve::{
    arc_length_reparametrize, concatenate, curve_length, restrict_subcurve, time_grid, Curve,
    DEFAULT_TIME_INTERVALS, SNAP_TOL,
};
pub use leaves::{accessibility_partition, admissible_graph_distance, AdmissibleGraph, Partition, ProbeOptions};
pub use norm::{minkowski_check, ControlNorm, MinkowskiReport, NormFn, NormKind};
pub use sampling::{
    bundle_from_library, bundle_grid, sample_bounded_curves, ControlLibrary, CurveBundle, Filtration,
    SamplingOptions, DEFAULT_SEGMENTS,
};
pub use steering::{steer, Connector, ConnectorTable, SteeringOptions};
pub use system::{quotient_norm, quotient_norm_with, AnchorFn, AnchoredSystem, QuotientOptions};

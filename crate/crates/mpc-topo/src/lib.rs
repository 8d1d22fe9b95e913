//! Multipath component (MPC) clustering by topographic decomposition of the
//! power-delay-angle profile (PDAP).
//!
//! The PDAP is read as terrain: power is height, iso-power contour lines are
//! extracted and organized in a containment tree whose leaves are cluster
//! peaks, convex characteristic points on the contours sample the cluster
//! ridges, and the ridges are fitted by analytical scatterer models (a point
//! reflector or a wide-spread wall). Clustering-validity metrics and
//! conventional baselines (k-means, k-medoids with power, DBSCAN) are
//! included for comparison, along with a synthetic scene generator used for
//! testing and demos.

pub mod baselines;
pub mod charpoint;
pub mod clusterer;
pub mod contour;
pub mod error;
pub mod geom;
pub mod metrics;
pub mod pdap;
pub mod pipeline;
pub mod scatterer;
pub mod synth;

pub use error::{Error, Result};
pub use pdap::{MpcSample, NormalizationContext, Pdap};

/// Speed of light in m/s, shared by every delay/distance conversion.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Meters traveled by light in one nanosecond.
pub const METERS_PER_NS: f64 = SPEED_OF_LIGHT * 1e-9;

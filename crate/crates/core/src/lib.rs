//! Driving-scene retrieval toolkit: spatio-temporal scene graphs built from
//! object tracks, an instance-association video distance, a graph network
//! embedding trained with semi-supervised contrastive learning, and the
//! matching evaluation tools.
//!
//! All numeric code is generic over the [`scalar::Scalar`] type; every public
//! type defaults its scalar parameter to [`Real`] (`f64`), which is what the
//! shipped binary uses.

mod binio;

pub mod augment;
pub mod config;
pub mod dataset;
pub mod evalkit;

pub mod error;

pub mod geometry;
pub mod ingest;
pub mod net;
pub mod scalar;
pub mod soia;
pub mod stgraph;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Default working scalar of the shipped pipeline.
pub type Real = f64;

/// Crate-root aliases of the central types at the default scalar.
pub type BoundingBox = geometry::BoundingBox<Real>;
pub type TrackedClip = ingest::TrackedClip<Real>;
pub type StGraph = stgraph::StGraph<Real>;
pub type ModelParams = net::ModelParams<Real>;
pub type Dataset = dataset::Dataset<Real>;

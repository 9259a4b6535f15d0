//! Upper bounds on the number of linear regions of a ReLU network inside a
//! Euclidean ball, with the machinery to check and study them.
//!
//! - [`model`]: networks, forward traces, activation patterns, local affine maps
//! - [`bound`]: layer-wise propagation of exactness/sign/slack certificates
//! - [`oracle`]: sampling and exact segment tracing used to validate bounds
//! - [`dataset`]: IDX parsing, pooling and the experiment point categories
//! - [`trainer`]: minimal SGD with checkpoints
//! - [`experiment`]: training-trajectory runs, CSV and SVG output

pub mod bound;
pub mod dataset;
pub mod error;
pub mod experiment;
pub mod model;
pub mod netfile;
pub mod oracle;
pub mod trainer;

pub use bound::{local_region_bound, local_region_bound_with_states, Ball, BoundReport};
pub use error::{Error, Result};
pub use model::{forward, ActivationPattern, Layer, Matrix, Network};

//! Streamline pattern descriptors, a denoising flow encoder, and text-to-flow
//! semantic matching over steady 3D vector fields.
//!
//! The pipeline runs field → streamlines → segments → distance matrices →
//! latents → common-space index, and every stage is usable on its own.

// `!(x > 0.0)` is used on purpose so NaN is rejected too
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod binio;
pub mod corpus;
pub mod descriptor;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod field;
pub mod matcher;
pub mod optim;
pub mod tracer;

pub use error::{FlowError, Result};

/// 3D point or vector in world units.
pub type Vec3 = nalgebra::Vector3<f64>;

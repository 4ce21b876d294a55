//! Hyperspectral pest detection.
//!
//! Spectral classification with Soft PLS-DA and its sparse variant, a
//! channel-adapted U-Net, band-restricted combinations of the two, and
//! pixel/object-level evaluation. Numeric code is generic over [`Real`]
//! (`f32`/`f64`); the aliases below fix the usual choices.

// `!(a < b)` is deliberate: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
#![allow(clippy::needless_range_loop)]

pub mod detect;
pub mod error;
pub mod hypercube;
pub mod labels;
pub mod linalg;
pub mod metrics;
pub mod pca;
pub mod pipeline;
pub mod preprocess;
pub mod sampling;
pub mod scalar;
pub mod seeds;
pub mod softplsda;
pub mod stats;
pub mod synth;
pub mod unet;

pub use error::{Error, Result};
pub use hypercube::{BackgroundType, BandSet, BugGroup, CubeMeta, Hypercube};
pub use labels::{ClassMask, Label};
pub use scalar::Real;

/// Double-precision cube used by the chemometric models.
pub type Cube64 = Hypercube<f64>;
/// Single-precision cube used for network training and storage.
pub type Cube32 = Hypercube<f32>;

//! Block-wise sample skewness and kurtosis.
//!
//! The crate partitions a series (observed, or drawn from one of ten
//! reference distributions) into fixed-size blocks and computes for each
//! block the sample skewness `S`, the sample kurtosis `K` and the
//! scale-invariant ratio
//!
//! ```text
//! R = (Σ dᵢ³)^(4/3) / Σ dᵢ⁴,    dᵢ = xᵢ − x̄
//! ```
//!
//! which ties the two together through the exact identity
//! `K·R = n^(1/3)·|S|^(4/3)`. On top of the block statistics it provides
//!
//! * closed-form skewness/kurtosis bounds and the piecewise-parabolic lower
//!   kurtosis envelope for `n = 4..=9` ([`bounds`]),
//! * deterministic, stream-splittable samplers ([`samplers`]),
//! * a streaming, order-preserving block pipeline ([`partition`]),
//! * the conditional-ECDF detector for the 4/3 power law ([`detector`]),
//! * empirical lower-envelope estimation and fitting ([`envelope`]),
//! * box-counting dimension of 2-D point sets ([`boxdim`]).
//!
//! The numeric core ([`moments`], [`bounds`], [`boxdim`]) is generic over
//! [`Scalar`]; the pipeline works in `f64`. The aliases below name the
//! concrete types used throughout.

pub mod bounds;
pub mod boxdim;
pub mod detector;
pub mod envelope;
pub mod error;
pub mod moments;
pub mod partition;
pub mod samplers;
pub mod scalar;

pub use error::{Error, ErrorCategory, Result};
pub use scalar::Scalar;

/// Block statistics in double precision.
pub type Summary = moments::MomentSummary<f64>;
/// Block statistics in single precision.
pub type SummaryF32 = moments::MomentSummary<f32>;
pub type Block = moments::SampleBlock<f64>;
pub type Bounds = bounds::BoundSet<f64>;
pub type Segment = bounds::ParabolaSegment<f64>;
pub type Points = boxdim::PointSet2D<f64>;

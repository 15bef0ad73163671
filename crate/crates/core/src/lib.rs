//! Temporal action localization with a max-pooling feature pyramid.
//!
//! Clip features are projected by two conv blocks, downsampled into a
//! multi-scale pyramid by a temporal context block (max pooling by
//! default), and every pyramid moment is classified and regressed to its
//! action boundaries by shared convolutional heads.

// Negated comparisons are how config checks reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod eval;
pub mod io;
pub mod losses;
pub mod model;
pub mod numerics;
pub mod targets;
pub mod trainer;

pub use error::{Error, Result};

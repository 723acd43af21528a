//! Stereo event-camera visual odometry.
//!
//! The crate reconstructs semi-dense inverse depth from pairs of time surfaces
//! and tracks the left camera by registering that map against the negative of
//! the current time surface. A small event simulator provides ground truth.

// `!(x > 0.0)` style checks are used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod geometry;
pub mod io;
pub mod mapping;
pub mod pipeline;
pub mod simulator;
pub mod time_surface;
pub mod tracking;

pub use error::{Error, Result};

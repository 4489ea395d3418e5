//! Average Cramér–Rao bound minimization for integrated sensing and
//! communication transceivers built on shape-reconfigurable (flexible)
//! arrays.
//!
//! The pipeline alternates between three blocks:
//!
//! * [`beamform`]: dual-function beamformer from a Schur-complement SDR with a
//!   rank-one penalty, solved by the embedded [`conic`] interior-point solver;
//! * [`rxshape`]: receive surface shape, an exact vertex search;
//! * [`txshape`]: transmit surface shape by projected gradient ascent with an
//!   SINR-feasibility projection.
//!
//! [`ao`] drives the loop; [`fisher`] and [`quadrature`] define the
//! objective; [`sensing`] verifies designs with echo synthesis, beampatterns
//! and MUSIC.

pub mod ao;
pub mod beamform;
pub mod conic;
pub mod error;
pub mod fisher;
pub mod model;
pub mod quadrature;
pub mod rxshape;
pub mod sensing;
pub mod txshape;

pub use error::{Error, Result};

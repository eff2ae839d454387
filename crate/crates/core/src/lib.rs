//! Doppler-aware GLRT target detection and 3D velocity estimation for OFDM
//! integrated sensing and communication in cell-free massive MIMO.

// Parameter checks use negated float comparisons so that NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod channel;
pub mod config;
pub mod error;
pub mod experiments;
pub mod geometry;
pub mod report;
pub mod rng;
pub mod scene;
pub mod sensing;
pub mod velocity;
pub mod waveform;

pub use error::{ConfigError, Error, Result};
pub use geometry::{PhysicalConstants, Position3, Vec3, Velocity3};
pub use num_complex::Complex64;

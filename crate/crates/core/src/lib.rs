//! Continuous-time dynamic graph learning: event-stream graphs, cluster
//! encodings, an intensity-modulated attention encoder, point-process
//! likelihood regularization, masked training and task heads.

pub mod cam;
pub mod checkpoint;
pub mod cluster;
pub mod dyngraph;
pub mod encoder;
pub mod error;
pub mod gradcheck;
pub mod learn;
pub mod params;
pub mod seed;
pub mod synth;
pub mod tape;
pub mod tpple;

pub use error::{Error, Result};

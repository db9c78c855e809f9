//! Single-furniture layout as a Markov decision process: rectangle geometry,
//! scenes, the step simulator, rasterized observations, a small
//! convolutional Q-network, DQN training and an exact value-iteration
//! oracle.

pub mod agent;
pub mod cli;
pub mod env;
pub mod error;
pub mod eval;
pub mod fsutil;
pub mod geometry;
pub mod nn;
pub mod oracle;
pub mod raster;
pub mod scene;

pub use error::{Error, Result};

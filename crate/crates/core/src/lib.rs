//! Planar manipulation stack: a quasi-static 2D physics model, domain
//! randomization, abstract-image rendering, a from-scratch value network,
//! receding-horizon planning, and the training/evaluation machinery that
//! ties them together.

pub mod error;
pub mod geom;
pub mod nn;
pub mod physics;
pub mod planner;
pub mod qvalue;
pub mod render;
pub mod rng;
pub mod scene;

pub use error::{Error, Result};

//! Edge-selective feature weaving (ESFW): a trainable correspondence network
//! for point cloud matching, with the rule-based matchers it replaces, a
//! synthetic pair generator, and a training and evaluation harness.

pub mod baselines;
pub mod cloud;
pub mod data;
pub mod encoder;
pub mod error;
pub mod graph;
pub mod harness;
pub mod model;
pub mod nn;
pub mod weaving;

pub use error::{Error, Result};

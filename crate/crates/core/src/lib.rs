//! Desk-scale laboratory for unlearning inversion: train a small
//! classifier, unlearn one sample by gradient ascent, protect the
//! unlearned model with a cosine-space perturbation defense (or the noise
//! and pruning baselines), attack the observed model pair with
//! cosine-distance gradient matching, and evaluate privacy and utility.
//!
//! Every random draw flows from an explicit seed, so full pipelines are
//! bit-reproducible (timing excepted).

pub mod attack;
pub mod defense;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod model;
pub mod unlearn;
pub mod vecmath;

pub use error::{Error, Result};

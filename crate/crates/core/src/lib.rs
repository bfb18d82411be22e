//! Contrastive music performance assessment.
//!
//! A training and evaluation framework for rating monophonic music
//! performances from pitch contours. A shared-weight 1-D convolutional
//! encoder feeds a small regression head; besides plain MSE training, the
//! encoder's latent space can be shaped by a weighted max-margin contrastive
//! loss whose margin scales with the gap between rating bins, either in a
//! two-step schedule (contrastive pre-training, then a frozen-encoder
//! regression fit) or jointly with the regression loss.

pub mod cli;
pub mod config;
pub mod contour;
pub mod data;
pub mod error;
pub mod eval;
pub mod loss;
pub mod model;
pub mod report;
pub mod rng;
pub mod trainer;

pub use error::{Error, Result};

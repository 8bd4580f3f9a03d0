//! Architecture design toolkit for downsampled isotropic demosaicing
//! networks.
//!
//! - [`archmodel`]: parameter, FLOPs and entropy model of the network family.
//! - [`search`]: exact solver for the constrained entropy maximization.
//! - [`network`]: executable networks with hand-written backward passes.
//! - [`numerics`]: the dense tensor kernel underneath.
//! - [`cfa`]: colour filter array simulation and a bilinear baseline.
//! - [`metrics`]: PSNR, SSIM and the PSNR training loss.
//! - [`harness`]: toy datasets, FLOP-matched comparisons and reports.

pub mod archmodel;
pub mod cfa;
mod error;
pub mod harness;
pub mod metrics;
pub mod network;
pub mod numerics;
pub mod search;

pub use error::{Error, Result};

//! Boundary control of unstable 1D PDEs: backstepping kernels, a DeepONet
//! imitation of the backstepping feedback, and a soft actor-critic agent that
//! uses the (optionally pretrained) DeepONet as its feature extractor.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod backstepping;
pub mod dataset;
pub mod deeponet;
pub mod env;
pub mod error;
pub mod eval;
pub mod nn;
pub mod numerics;
pub mod parallel;
pub mod sac;

pub use error::{Error, Result};

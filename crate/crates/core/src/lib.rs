//! Membership-leakage auditing and hardening for feature-attribution
//! explanations.
//!
//! The crate is organised bottom-up:
//!
//! - [`nn`]: a small dense/conv network with forward pass, parameter
//!   gradients and input gradients under three ReLU backward rules.
//! - [`data`] and [`zoo`]: datasets, the four-way member/non-member split and
//!   target/shadow model training.
//! - [`explain`]: fifteen attribution methods behind one dispatcher.
//! - [`attack`]: the explanation-only shadow-model membership inference attack
//!   and its ROC/TPR-at-low-FPR metrics.
//! - [`utility`]: explanation sensitivity under bounded input perturbation.
//! - [`harden`]: clip/mask/noise transforms, parameter search and Pareto
//!   fronts.
//!
//! Data-parallel loops go through [`par`], which uses rayon when the
//! `parallel` feature is enabled and a plain loop otherwise.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod attack;
pub mod data;
pub mod error;
pub mod explain;
pub mod harden;
pub mod nn;
pub mod par;
pub mod rng;
pub mod tensor;
pub mod utility;
pub mod zoo;

pub use error::{Error, Result};
pub use tensor::Tensor;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

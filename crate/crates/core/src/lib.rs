//! Variable selection with reference models.
//!
//! A reference model's posterior predictive distribution acts as a noise
//! filter: selection methods either project it onto submodels
//! ([`projpred`], [`iterative`]) or replace the observed target with its
//! predictive mean ([`baselines`], [`normalmeans`]).

pub mod baselines;
pub mod datagen;
pub mod error;
pub mod iterative;
pub mod linalg;
pub mod metrics;
pub mod normalmeans;
pub mod projpred;
pub mod refmodel;
pub mod rng;
pub mod stats;

pub use error::{Error, Result};

//! Optimal-transport training of latent-variable quantum circuits that model
//! ensembles of pure states, with anomaly scoring and the scaling studies that
//! characterize the loss.
//!
//! The pieces stack as follows: [`qsim`] simulates statevectors, [`ansatz`]
//! builds the layered circuits and datasets, [`cost`] evaluates ground costs,
//! [`transport`] solves the discrete OT problem, [`autodiff`] differentiates
//! through a fixed plan, and [`train`], [`anomaly`] and [`experiments`] drive
//! them.

pub mod anomaly;
pub mod ansatz;
pub mod autodiff;
pub mod cost;
pub mod error;
pub mod experiments;
pub mod optim;
pub mod oracle;
pub mod qsim;
pub mod rng;
pub mod train;
pub mod transport;

pub use error::{Error, Result};

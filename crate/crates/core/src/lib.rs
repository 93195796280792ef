//! Spiking reservoir controller for a simulated air-hockey interception task.
//!
//! The pipeline, one decision every 20 ms:
//!
//! 1. [`encoding`] turns the six observed variables into Gaussian
//!    population-coded spike trains (60 channels),
//! 2. [`snn`] pushes them through a fixed random layer of leaky
//!    integrate-and-fire neurons and low-pass filters the output spikes,
//! 3. [`policy`] reads the filtered traces with a two-way softmax and learns
//!    with an eligibility-trace policy gradient,
//! 4. [`env`] executes the chosen motion primitive on a 1 kHz table model.
//!
//! [`trainer`] closes the loop and runs multi-seed experiments;
//! [`config`] holds the flat key-value run configuration.

pub mod cli;
pub mod config;
pub mod encoding;
pub mod env;
pub mod error;
pub mod policy;
pub mod rng;
pub mod snn;
pub mod trainer;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/intro.md")]
    mod intro {}
    #[doc = include_str!("../../../book/src/environment.md")]
    mod environment {}
    #[doc = include_str!("../../../book/src/encoding.md")]
    mod encoding {}
    #[doc = include_str!("../../../book/src/reservoir.md")]
    mod reservoir {}
    #[doc = include_str!("../../../book/src/readout.md")]
    mod readout {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}

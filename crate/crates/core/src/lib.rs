//! Privacy-preserving inference for vertically partitioned time series.
//!
//! The crate is layered bottom-up: [`fxp`] ring tensors, [`netsim`]
//! transports and cost model, [`mpc`] two-party secret sharing, [`nn`]
//! plaintext models and autodiff, [`data`] datasets, [`vfl`] the three
//! inference pipelines and [`privacy`] adversarial training.

pub mod data;
pub mod fxp;
pub mod mpc;
pub mod netsim;
pub mod nn;
pub mod par;
pub mod privacy;
pub mod vfl;

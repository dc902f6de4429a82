//! Core of an elastic hybrid Mamba/attention/FFN language model: one set of
//! weights whose router-selected nested sub-networks can be sliced out of a
//! single checkpoint without retraining.
//!
//! The crate is `no_std` with `alloc`; file formats, configuration parsing and
//! the command line live in the companion `elastic` crate.
#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod corpus;
pub mod costmodel;
pub mod error;
pub mod importance;
pub mod model;
pub mod numerics;
pub mod router;
pub mod slicing;
pub mod training;

pub use error::{Error, Result};

//! Mesoscopic traffic simulation with peer-to-peer ridesharing.
//!
//! Regular drivers re-route with Dijkstra at every node under a generalized
//! toll/time cost; riders are matched on arrival to one or more rideshare
//! drivers by a dynamic program over a per-rider time-expanded network.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod agent;
pub mod config;
pub mod demand;
pub mod error;
pub mod experiment;
pub mod matching;
pub mod network;
pub mod routing;
pub mod sim;

pub use error::{Error, Result};

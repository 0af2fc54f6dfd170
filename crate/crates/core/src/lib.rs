//! Generates SQL workloads whose query costs follow a target distribution.

pub mod catalog;
pub mod config;
pub mod distribution;
pub mod forge;
pub mod model;
pub mod profiler;
pub mod refinery;
pub mod rng;
pub mod search;
pub mod pipeline;

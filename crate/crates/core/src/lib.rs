//! Speech-driven gesture generation toolkit.

pub mod autodiff;
pub mod bvh;
pub mod pose;
pub mod features;
pub mod fusion;
pub mod generator;
pub mod metrics;
pub mod dataset;

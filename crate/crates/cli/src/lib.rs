//! Command-line and HTTP front ends for counterfactual explanations.

pub mod commands;
pub mod explain;
pub mod models;
pub mod service;

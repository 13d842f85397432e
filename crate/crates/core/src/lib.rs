//! Hybrid CNN-RNN crop-yield forecasting with baselines, attribution and
//! experiment protocols.

pub mod attribution;
pub mod baselines;
pub mod data;
pub mod experiments;
pub mod features;
pub mod model;
pub mod training;

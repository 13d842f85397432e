//! The hybrid CNN-RNN network, the DFNN baseline network and the model
//! container format.

mod cnn_rnn;
mod config;
mod dfnn;
pub mod format;
mod init;

pub use cnn_rnn::{BatchInputs, CnnRnnModel, ForwardTrace};
pub use config::{CnnRnnConfig, ConvSpec};
pub use dfnn::{DfnnModel, DfnnTrace, BN_EPS, BN_MOMENTUM, DFNN_LAYERS, DFNN_WIDTH};
pub use format::{Container, ModelTag};
pub use init::{xavier_bound, xavier_init, xavier_uniform};

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("malformed model file: {0}")]
    Format(String),
}

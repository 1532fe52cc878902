//! Recurrent sequence autoencoder over mel spectrograms.
//!
//! The encoder is a stack of bidirectional GRU layers; the embedding is the
//! concatenation of every layer's final state per direction. The decoder
//! reconstructs the time-reversed input with teacher forcing, starting from
//! a `tanh` projection of the embedding.

mod gru;
mod model;
mod network;
mod train;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use model::{read_embeddings, read_model, write_embeddings, write_model, Embedding, EncoderModel};
pub use network::Autoencoder;
pub use train::{
    constant_baseline_rmse, encode, encode_batch, gradient_check, loss_gradient, output_bias_gradient, reconstruct,
    rmse, select_training_subset, train_autoencoder, Adam,
};

pub type Result<T, E = EmbedError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("training diverged at epoch {epoch}: loss {loss}")]
    TrainingDiverged { epoch: usize, loss: f64 },

    #[error("shape error: {0}")]
    Shape(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("empty training set")]
    EmptyDataset,

    #[error("model file: {0}")]
    Format(String),

    #[error(transparent)]
    Dsp(#[from] crate::dsp::DspError),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Float type the network can run in. Training uses `f32`; gradient checks
/// use `f64`.
pub trait Real:
    num_traits::Float
    + num_traits::FromPrimitive
    + ndarray::LinalgScalar
    + ndarray::ScalarOperand
    + std::ops::AddAssign
    + std::ops::SubAssign
    + std::ops::MulAssign
    + std::fmt::Debug
    + std::fmt::Display
    + Send
    + Sync
    + 'static
{
}

impl Real for f32 {}
impl Real for f64 {}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AutoencoderConfig {
    pub num_layers: usize,
    pub units_per_direction: usize,
    pub bidirectional_encoder: bool,
    pub dropout: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

/// Named hyperparameter sets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    /// Full-scale settings: 2 x 256 GRU, 64 epochs, batch 64.
    Paper,
    /// Same network, at most 2,000 samples and 16 epochs of batch 16.
    Desk,
}

impl Profile {
    pub fn config(self, seed: u64) -> AutoencoderConfig {
        match self {
            Profile::Paper => AutoencoderConfig { seed, ..AutoencoderConfig::default() },
            Profile::Desk => AutoencoderConfig { epochs: 16, batch_size: 16, seed, ..AutoencoderConfig::default() },
        }
    }

    /// Training-set cap; larger archives are subsampled.
    pub fn max_samples(self) -> Option<usize> {
        match self {
            Profile::Paper => None,
            Profile::Desk => Some(2000),
        }
    }
}

impl std::str::FromStr for Profile {
    type Err = EmbedError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper" => Ok(Profile::Paper),
            "desk" => Ok(Profile::Desk),
            other => Err(EmbedError::Config(format!("unknown profile {other:?} (expected paper or desk)"))),
        }
    }
}

impl Default for AutoencoderConfig {
    fn default() -> Self {
        AutoencoderConfig {
            num_layers: 2,
            units_per_direction: 256,
            bidirectional_encoder: true,
            dropout: 0.2,
            learning_rate: 0.001,
            batch_size: 64,
            epochs: 64,
            seed: 0,
        }
    }
}

impl AutoencoderConfig {
    pub fn directions(&self) -> usize {
        if self.bidirectional_encoder {
            2
        } else {
            1
        }
    }

    pub fn embedding_dim(&self) -> usize {
        self.num_layers * self.directions() * self.units_per_direction
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(EmbedError::Config(m.into()));
        if self.num_layers == 0 || self.units_per_direction == 0 {
            return bad("need at least one layer and one unit");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must be in [0, 1)");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning rate must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch size must be positive");
        }
        Ok(())
    }
}

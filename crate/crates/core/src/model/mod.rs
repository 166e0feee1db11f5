//! The drug-response network: omics tokenizer and transformer, drug graph
//! encoder and transformer, fusion transformer, pooling, two heads, and the
//! multi-task objective.

mod checkpoint;
mod config;
mod encoders;
mod layers;
mod loss;
mod network;
mod params;

pub use checkpoint::{Checkpoint, CHECKPOINT_FORMAT};
pub use config::{Activation, ModelConfig, Pooling, TransformerSpec};
pub use encoders::{GateWeights, ModalityTokens};
pub use loss::{focal_loss, mse_loss, total_loss, LossWeights, FOCAL_EPS};
pub use network::{Batch, BatchOutput, ForwardVars, Model};
pub use params::{Param, ParamKind, ParamStore};

//! A small pre-LayerNorm transformer with encoder (masked LM, optional NSP)
//! and decoder (causal LM) variants. Forward and backward passes are written
//! out by hand; all arithmetic is f64.

mod model;
mod params;

pub use model::{
    backward, extract_embedding, forward, loss_and_grad, loss_self, Example, ForwardOutput, LossParts,
    PooledObjective, SeqCache,
};
pub use params::{ArchConfig, LayerParams, ModelParams, Variant};

//! Conditional normalizing-flow decoders.

mod checkpoint;
mod coupling;
mod model;
mod posenc;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, parameter_bytes, read_checkpoint, write_checkpoint,
    CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use coupling::{CouplingLayer, DEFAULT_CLAMP};
pub use model::{FlowConfig, FlowModel, FlowScale, LOG_2PI};
pub use posenc::{
    positional_encoding, PositionalEncoder, DEFAULT_CONDITION_CHANNELS, DEFAULT_PE_BASE,
};

#[cfg(test)]
mod tests;

//! The message-passing network: detection encoder, attention-weighted GRU
//! updates, readouts and training losses.

mod config;
mod features;
mod layers;
mod loss;
mod params;
mod round;

pub use config::{AssocUpdate, ModelConfig};
pub use features::{build_features, frame_inputs};
pub use layers::{
    association_message, attention_head, encode_detections, readout, update_associations,
    update_detections, Edges, ATTENTION_SLOPE,
};
pub use loss::{compute_losses, same_track, LossBundle, LossVars};
pub use params::{
    AttentionSlots, GruSlots, Layout, ModelParams, ParamVars, ASSOC_READOUT_BIAS, DET_READOUT_BIAS, READOUT_INIT_SCALE,
};
pub use round::{forward, AttentionRecord, Carry, RoundOptions, RoundOutput};

#[cfg(test)]
mod tests;

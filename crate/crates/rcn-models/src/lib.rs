//! Recurrent convolutional networks for low-resolution flow maps.
//!
//! The backbone is one convolutional layer, one recurrent
//! convolutional layer with shared weights, adaptive average pooling
//! and a linear classifier. Three parameter-free extension modules —
//! wide dilated expansion of the first layer, shortcut connections in
//! the recurrence, and a classifier-weight attention unit — combine
//! into the named variants, alongside the deeper baseline models used
//! for complexity analysis.

mod attention;
mod descriptor;
mod error;
mod layers;
mod model;

pub use attention::{apply_attention, attention_map, cam_map, AttentionSource};
pub use descriptor::{ArchDescriptor, AttentionPlacement, ModelKind, DEFAULT_RCONV_STATES};
pub use error::{ModelError, Result};
pub use layers::{Conv1Layer, RconvLayer, RconvOutput};
pub use model::{
    batch_from_flow_maps, predict_classes, BuildOptions, FeatureTaps, ForwardOutput, RcnModel,
};

//! The 1D-convolutional autoencoder: three valid convolutions and two dense
//! layers down to the bottleneck, mirrored back up with transposed
//! convolutions so the reconstruction has the input's shape.

mod config;
mod network;
mod weights;

pub use config::ArchitectureConfig;
pub use network::{BackwardFault, Layer, LayerKind, Model, Trace};
pub use weights::{
    decode_weights, encode_weights, load_weights, save_weights, weights_id, TensorDescriptor, WeightsManifest,
    DEVIATION_FLAGS, MAGIC,
};

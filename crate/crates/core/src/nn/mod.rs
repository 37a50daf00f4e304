//! Dense tensors with reverse-mode differentiation, the shared-MLP point
//! encoder and the offset decoder.

mod adam;
mod checkpoint;
mod mlp;
mod tape;
mod tensor;

pub use adam::{Adam, AdamConfig};
pub use checkpoint::{fingerprint, Checkpoint};
pub use mlp::{
    decode_with_shared, encode_points, encode_pointcloud, mlp_forward, offset_decoder, Activation, GlobalFeature,
    Layer, MlpParams, MlpVars,
};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

/// Default per-point encoder widths.
pub const ENCODER_WIDTHS: [usize; 3] = [64, 128, 256];
/// Default decoder widths; the last is the offset dimension.
pub const DECODER_WIDTHS: [usize; 3] = [512, 256, 3];

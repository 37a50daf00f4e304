//! The deformation pipeline: offsets from the network or optimized
//! directly, training, template retrieval and feature interpolation.

mod context;
mod direct;
mod network;
mod template;
mod train;
mod trace;

pub use context::{subsample, LossConfig, SymmetrySource};
pub use direct::{optimize_direct, optimize_direct_traced, DeformJob, DirectOutcome, JobMode};
pub use network::{
    deform_with_feature, forward_pipeline, interpolate_targets, pipeline_gradients, target_feature, DeformNet,
    PipelineOutput,
};
pub use template::{
    select_template, train_autoencoder, Autoencoder, AutoencoderConfig, SelectionMode, Template, TemplateSet,
};
pub use trace::{LossTrace, TraceRow};
pub use train::{train, TrainConfig, TrainOutcome};

use crate::error::{Error, Result};
use crate::mesh::{TriMesh, Vec3};

/// `V + O` with the face list of `source`.
pub fn apply_offsets(source: &TriMesh, offsets: &[Vec3]) -> Result<TriMesh> {
    if offsets.len() != source.num_vertices() {
        return Err(Error::shape("offsets", source.num_vertices(), offsets.len()));
    }
    let v = source.vertices().iter().zip(offsets).map(|(v, o)| v + o).collect();
    source.with_vertices(v)
}

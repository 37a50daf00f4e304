//! Differentiable mesh deformation.
//!
//! A source triangle mesh is deformed toward a target point cloud by
//! per-vertex offsets while its connectivity stays fixed. The crate provides
//! the pieces needed to drive that end to end:
//!
//! - [`mesh`]: triangle meshes, point clouds, OBJ/XYZ I/O and normalization.
//! - [`dmso`]: differentiable surface sampling with barycentric provenance.
//! - [`losses`]: Chamfer, Earth Mover's, symmetry, Laplacian and
//!   local-permutation-invariant losses with exact gradients.
//! - [`nn`]: a small reverse-mode tensor kernel with point-cloud encoders and
//!   the offset decoder.
//! - [`deform`]: the deformation pipeline, direct offset optimization,
//!   training, template retrieval and feature interpolation.
//! - [`metrics`]: CD, EMD and solid-voxel IoU evaluation.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod deform;
pub mod dmso;
pub mod error;
pub mod losses;
pub mod mesh;
pub mod metrics;
pub mod nn;
pub mod par;
pub mod seed;
pub mod spatial;

pub use error::{Error, Result};
pub use mesh::{BoundingBox, PointCloud, SymmetryPlane, TriMesh, Vec3};

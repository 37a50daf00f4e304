//! Differentiable mesh sampling.
//!
//! Surface points are drawn uniformly by area and stored together with the
//! face they came from and their barycentric weights. Any per-vertex feature
//! (positions, offsets, ...) can then be carried to the samples with
//! [`propagate`], and gradients arriving at the samples flow back to the
//! vertices with [`scatter_gradients`], the exact adjoint of `propagate`.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;

use crate::error::{Error, Result};
use crate::mesh::{TriMesh, Vec3};
use crate::par::{self, Exec};

/// Samples per work chunk in the propagate/scatter kernels. Fixed so the
/// reduction order never depends on the thread count.
const CHUNK: usize = 2048;

/// Sampled surface points with their barycentric provenance.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleBatch {
    points: Vec<Vec3>,
    face_index: Vec<usize>,
    corners: Vec<[usize; 3]>,
    weights: Vec<[f64; 3]>,
}

impl SampleBatch {
    /// Builds a batch from explicit faces and barycentric weights.
    pub fn from_provenance(mesh: &TriMesh, faces: Vec<usize>, weights: Vec<[f64; 3]>) -> Result<Self> {
        if faces.len() != weights.len() {
            return Err(Error::shape("SampleBatch::from_provenance", faces.len(), weights.len()));
        }
        for (&f, w) in faces.iter().zip(&weights) {
            if f >= mesh.num_faces() {
                return Err(Error::InvalidArgument(format!("face {f} out of range")));
            }
            let sum = w[0] + w[1] + w[2];
            if w.iter().any(|&x| !(x >= 0.0)) || (sum - 1.0).abs() > 1e-12 {
                return Err(Error::InvalidArgument(format!("weights {w:?} are not barycentric")));
            }
        }
        let corners: Vec<[usize; 3]> = faces.iter().map(|&f| mesh.faces()[f]).collect();
        let points = corners
            .iter()
            .zip(&weights)
            .map(|(c, w)| interpolate(mesh.vertices(), c, w))
            .collect();
        Ok(SampleBatch {
            points,
            face_index: faces,
            corners,
            weights,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Positions on the mesh the batch was drawn from.
    pub fn points(&self) -> &[Vec3] {
        &self.points
    }

    pub fn face_index(&self) -> &[usize] {
        &self.face_index
    }

    /// Vertex indices of each sample's face.
    pub fn corners(&self) -> &[[usize; 3]] {
        &self.corners
    }

    pub fn weights(&self) -> &[[f64; 3]] {
        &self.weights
    }

    /// Positions of the same samples on a mesh with the same connectivity
    /// but moved vertices.
    pub fn positions_on(&self, vertices: &[Vec3]) -> Result<Vec<Vec3>> {
        propagate_vec3(self, vertices)
    }

    fn max_vertex(&self) -> Option<usize> {
        self.corners.iter().flat_map(|c| c.iter().copied()).max()
    }
}

#[inline]
fn interpolate(vertices: &[Vec3], c: &[usize; 3], w: &[f64; 3]) -> Vec3 {
    vertices[c[0]] * w[0] + vertices[c[1]] * w[1] + vertices[c[2]] * w[2]
}

/// Barycentric weights uniform over a triangle from two uniform variates.
#[inline]
pub fn warp_to_triangle(r1: f64, r2: f64) -> [f64; 3] {
    let s = r1.sqrt();
    [1.0 - s, s * (1.0 - r2), s * r2]
}

/// Draws `n` points uniformly over the mesh surface.
pub fn sample_surface(mesh: &TriMesh, n: usize, seed: u64) -> Result<SampleBatch> {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    sample_surface_with(mesh, n, &mut rng)
}

/// [`sample_surface`] with a caller-provided generator.
pub fn sample_surface_with<R: Rng + ?Sized>(mesh: &TriMesh, n: usize, rng: &mut R) -> Result<SampleBatch> {
    if n == 0 {
        return Err(Error::InvalidArgument("sample count must be at least 1".into()));
    }
    let areas = mesh.face_areas();
    let total: f64 = areas.iter().sum();
    if !(total > 0.0) || !total.is_finite() {
        return Err(Error::Degenerate("mesh has zero surface area".into()));
    }
    let faces = WeightedIndex::new(&areas)
        .map_err(|e| Error::Degenerate(format!("cannot sample faces: {e}")))?;
    let mut face_index = Vec::with_capacity(n);
    let mut weights = Vec::with_capacity(n);
    for _ in 0..n {
        face_index.push(faces.sample(rng));
        let r1: f64 = rng.random();
        let r2: f64 = rng.random();
        weights.push(warp_to_triangle(r1, r2));
    }
    let corners: Vec<[usize; 3]> = face_index.iter().map(|&f| mesh.faces()[f]).collect();
    let points = corners
        .iter()
        .zip(&weights)
        .map(|(c, w)| interpolate(mesh.vertices(), c, w))
        .collect();
    Ok(SampleBatch {
        points,
        face_index,
        corners,
        weights,
    })
}

fn check_features(batch: &SampleBatch, len: usize, dim: usize, ctx: &'static str) -> Result<usize> {
    if dim == 0 || !len.is_multiple_of(dim) {
        return Err(Error::shape(ctx, format!("a multiple of {dim}"), len));
    }
    let rows = len / dim;
    if let Some(m) = batch.max_vertex() {
        if m >= rows {
            return Err(Error::shape(ctx, format!("at least {} vertex rows", m + 1), rows));
        }
    }
    Ok(rows)
}

/// Carries per-vertex features (row-major, `dim` values per vertex) to the
/// samples: `f_p = w₁f₁ + w₂f₂ + w₃f₃`.
pub fn propagate(batch: &SampleBatch, features: &[f64], dim: usize) -> Result<Vec<f64>> {
    propagate_with(batch, features, dim, Exec::default())
}

pub fn propagate_with(batch: &SampleBatch, features: &[f64], dim: usize, exec: Exec) -> Result<Vec<f64>> {
    check_features(batch, features.len(), dim, "propagate")?;
    let mut out = vec![0.0; batch.len() * dim];
    par::for_each_chunk_mut(exec, &mut out, CHUNK * dim, |chunk, rows| {
        let first = chunk * CHUNK;
        for (k, row) in rows.chunks_mut(dim).enumerate() {
            let s = first + k;
            let c = &batch.corners[s];
            let w = &batch.weights[s];
            let (a, b, d) = (
                &features[c[0] * dim..][..dim],
                &features[c[1] * dim..][..dim],
                &features[c[2] * dim..][..dim],
            );
            for j in 0..dim {
                row[j] = w[0] * a[j] + w[1] * b[j] + w[2] * d[j];
            }
        }
    });
    Ok(out)
}

pub fn propagate_vec3(batch: &SampleBatch, features: &[Vec3]) -> Result<Vec<Vec3>> {
    let flat: Vec<f64> = features.iter().flat_map(|v| [v.x, v.y, v.z]).collect();
    Ok(propagate(batch, &flat, 3)?
        .chunks_exact(3)
        .map(|c| Vec3::new(c[0], c[1], c[2]))
        .collect())
}

/// Per-vertex gradient accumulators, row-major with `dim` values per vertex.
#[derive(Clone, Debug, PartialEq)]
pub struct VertexGradients {
    pub dim: usize,
    pub data: Vec<f64>,
}

impl VertexGradients {
    pub fn num_vertices(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn row(&self, v: usize) -> &[f64] {
        &self.data[v * self.dim..(v + 1) * self.dim]
    }

    /// Rows as 3-vectors; only meaningful when `dim == 3`.
    pub fn to_vec3(&self) -> Vec<Vec3> {
        assert_eq!(self.dim, 3, "to_vec3 needs 3-dimensional rows");
        self.data.chunks_exact(3).map(|c| Vec3::new(c[0], c[1], c[2])).collect()
    }
}

/// Adjoint of [`propagate`]: each vertex receives `Σ wᵢ·g` over the
/// samples whose face touches it.
pub fn scatter_gradients(
    batch: &SampleBatch,
    sample_grads: &[f64],
    dim: usize,
    n_vertices: usize,
) -> Result<VertexGradients> {
    scatter_gradients_with(batch, sample_grads, dim, n_vertices, Exec::default())
}

pub fn scatter_gradients_with(
    batch: &SampleBatch,
    sample_grads: &[f64],
    dim: usize,
    n_vertices: usize,
    exec: Exec,
) -> Result<VertexGradients> {
    if dim == 0 || sample_grads.len() != batch.len() * dim {
        return Err(Error::shape("scatter_gradients", batch.len() * dim, sample_grads.len()));
    }
    if let Some(m) = batch.max_vertex() {
        if m >= n_vertices {
            return Err(Error::shape("scatter_gradients", format!("more than {m} vertices"), n_vertices));
        }
    }
    // One dense buffer per fixed-size chunk of samples, summed in chunk order.
    let partials = par::map_chunks(exec, sample_grads, CHUNK * dim, |chunk, grads| {
        let mut acc = vec![0.0; n_vertices * dim];
        let first = chunk * CHUNK;
        for (k, g) in grads.chunks_exact(dim).enumerate() {
            let s = first + k;
            let c = &batch.corners[s];
            let w = &batch.weights[s];
            for corner in 0..3 {
                let dst = &mut acc[c[corner] * dim..][..dim];
                for j in 0..dim {
                    dst[j] += w[corner] * g[j];
                }
            }
        }
        acc
    });
    let mut parts = partials.into_iter();
    let mut data = parts.next().unwrap_or_else(|| vec![0.0; n_vertices * dim]);
    for p in parts {
        for (d, x) in data.iter_mut().zip(p) {
            *d += x;
        }
    }
    Ok(VertexGradients { dim, data })
}

pub fn scatter_vec3(batch: &SampleBatch, sample_grads: &[Vec3], n_vertices: usize) -> Result<Vec<Vec3>> {
    let flat: Vec<f64> = sample_grads.iter().flat_map(|v| [v.x, v.y, v.z]).collect();
    Ok(scatter_gradients(batch, &flat, 3, n_vertices)?.to_vec3())
}

use crate::error::{Error, Result};
use crate::mesh::{TriMesh, Vec3};

use super::LossGrad;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum LaplacianKind {
    /// Umbrella operator: every neighbor weighs `1/|N(i)|`.
    #[default]
    Uniform,
    /// Cotangent weights, normalized per row. Rows whose weights do not sum
    /// to a positive finite value fall back to uniform weights.
    Cotangent,
}

impl std::str::FromStr for LaplacianKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(LaplacianKind::Uniform),
            "cotangent" => Ok(LaplacianKind::Cotangent),
            other => Err(Error::InvalidArgument(format!(
                "unknown Laplacian {other:?} (expected uniform or cotangent)"
            ))),
        }
    }
}

/// Sparse mesh Laplacian `L(x)ᵢ = Σⱼ wᵢⱼ (xᵢ − xⱼ)` with rows of `w` summing
/// to one, i.e. `xᵢ` minus the weighted mean of its neighbors. Isolated
/// vertices have empty rows.
#[derive(Clone, Debug, PartialEq)]
pub struct Laplacian {
    row_start: Vec<usize>,
    cols: Vec<usize>,
    weights: Vec<f64>,
}

impl Laplacian {
    pub fn new(mesh: &TriMesh, kind: LaplacianKind) -> Self {
        let n = mesh.num_vertices();
        let mut nbrs: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        let mut add = |i: usize, j: usize, w: f64| {
            if let Some(e) = nbrs[i].iter_mut().find(|e| e.0 == j) {
                e.1 += w;
            } else {
                nbrs[i].push((j, w));
            }
        };
        for (fi, &[a, b, c]) in mesh.faces().iter().enumerate() {
            let p = mesh.face_corners(fi);
            // Weight of each edge from the angle at the opposite corner.
            for (k, (i, j)) in [(b, c), (c, a), (a, b)].into_iter().enumerate() {
                let w = match kind {
                    LaplacianKind::Uniform => 0.0,
                    LaplacianKind::Cotangent => {
                        let o = p[k];
                        let (u, v) = (p[(k + 1) % 3] - o, p[(k + 2) % 3] - o);
                        0.5 * u.dot(&v) / u.cross(&v).norm()
                    }
                };
                add(i, j, w);
                add(j, i, w);
            }
        }

        let mut row_start = Vec::with_capacity(n + 1);
        let mut cols = Vec::new();
        let mut weights = Vec::new();
        row_start.push(0);
        for mut row in nbrs {
            row.sort_by_key(|e| e.0);
            let sum: f64 = row.iter().map(|e| e.1).sum();
            let use_uniform = kind == LaplacianKind::Uniform
                || !(sum > 0.0 && sum.is_finite())
                || row.iter().any(|e| !e.1.is_finite());
            let deg = row.len() as f64;
            for (j, w) in row {
                cols.push(j);
                weights.push(if use_uniform { 1.0 / deg } else { w / sum });
            }
            row_start.push(cols.len());
        }
        Laplacian {
            row_start,
            cols,
            weights,
        }
    }

    pub fn num_vertices(&self) -> usize {
        self.row_start.len() - 1
    }

    /// `(neighbor, weight)` pairs of row `i`.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_start[i]..self.row_start[i + 1];
        self.cols[r.clone()].iter().copied().zip(self.weights[r].iter().copied())
    }

    pub fn apply(&self, x: &[Vec3]) -> Vec<Vec3> {
        assert_eq!(x.len(), self.num_vertices());
        (0..x.len())
            .map(|i| {
                self.row(i)
                    .fold(Vec3::zeros(), |acc, (j, w)| acc + (x[i] - x[j]) * w)
            })
            .collect()
    }

    pub fn apply_transpose(&self, g: &[Vec3]) -> Vec<Vec3> {
        assert_eq!(g.len(), self.num_vertices());
        let mut out = vec![Vec3::zeros(); g.len()];
        for i in 0..g.len() {
            for (j, w) in self.row(i) {
                out[i] += g[i] * w;
                out[j] -= g[i] * w;
            }
        }
        out
    }
}

/// `Σᵢ ‖Lap(S)ᵢ − Lap(S′)ᵢ‖` written through the offsets `O = V′ − V`
/// (the operator is linear), with its gradient w.r.t. the offsets.
pub fn laplacian_loss_offsets(lap: &Laplacian, offsets: &[Vec3]) -> Result<LossGrad> {
    if offsets.len() != lap.num_vertices() {
        return Err(Error::shape("laplacian_loss", lap.num_vertices(), offsets.len()));
    }
    let residual = lap.apply(offsets);
    let mut value = 0.0;
    let unit: Vec<Vec3> = residual
        .iter()
        .map(|r| {
            let len = r.norm();
            value += len;
            if len > 0.0 {
                r / len
            } else {
                Vec3::zeros()
            }
        })
        .collect();
    Ok(LossGrad {
        value,
        grad: lap.apply_transpose(&unit),
    })
}

/// Laplacian loss between a source mesh and deformed vertex positions,
/// gradient w.r.t. the deformed positions.
pub fn laplacian_loss(source: &TriMesh, deformed_vertices: &[Vec3]) -> Result<LossGrad> {
    laplacian_loss_with(&Laplacian::new(source, LaplacianKind::Uniform), source, deformed_vertices)
}

pub fn laplacian_loss_with(lap: &Laplacian, source: &TriMesh, deformed_vertices: &[Vec3]) -> Result<LossGrad> {
    if deformed_vertices.len() != source.num_vertices() {
        return Err(Error::shape(
            "laplacian_loss",
            source.num_vertices(),
            deformed_vertices.len(),
        ));
    }
    let offsets: Vec<Vec3> = deformed_vertices
        .iter()
        .zip(source.vertices())
        .map(|(d, s)| d - s)
        .collect();
    laplacian_loss_offsets(lap, &offsets)
}

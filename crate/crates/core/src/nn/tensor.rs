use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::Vec3;
use crate::par::{self, Exec};

/// Dense row-major array of `f64`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::shape("tensor data", expected, data.len()));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape,
            data: vec![0.0; n],
        }
    }

    pub fn filled(shape: Vec<usize>, value: f64) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape,
            data: vec![value; n],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Tensor {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Tensor::new(vec![rows, cols], data)
    }

    /// `N×3` matrix of point coordinates.
    pub fn from_points(points: &[Vec3]) -> Self {
        Tensor {
            shape: vec![points.len(), 3],
            data: points.iter().flat_map(|p| [p.x, p.y, p.z]).collect(),
        }
    }

    pub fn to_points(&self) -> Result<Vec<Vec3>> {
        if self.shape.len() != 2 || self.shape[1] != 3 {
            return Err(Error::shape("point tensor", "N×3", format!("{:?}", self.shape)));
        }
        Ok(self.data.chunks_exact(3).map(|c| Vec3::new(c[0], c[1], c[2])).collect())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Rows of a 2-D tensor.
    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    /// Columns of a 2-D tensor.
    pub fn cols(&self) -> usize {
        self.shape[1]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    /// The single entry of a one-element tensor.
    pub fn item(&self) -> Result<f64> {
        if self.data.len() != 1 {
            return Err(Error::shape("scalar", 1, self.data.len()));
        }
        Ok(self.data[0])
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn dot(&self, other: &Tensor) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    pub(crate) fn reshaped(mut self, shape: Vec<usize>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(Error::shape("reshape", self.data.len(), n));
        }
        self.shape = shape;
        Ok(self)
    }

    pub(crate) fn add_assign(&mut self, other: &Tensor) {
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }
}

const ROW_CHUNK: usize = 64;
const REDUCE_CHUNK: usize = 256;

/// `x · w` for `x: n×k`, `w: k×m`, one output row per input row.
pub(crate) fn matmul(exec: Exec, x: &[f64], k: usize, w: &[f64], m: usize) -> Vec<f64> {
    let parts = par::map_chunks(exec, x, ROW_CHUNK * k.max(1), |_, rows| {
        let mut out = vec![0.0; rows.len() / k.max(1) * m];
        for (xr, yr) in rows.chunks_exact(k).zip(out.chunks_exact_mut(m)) {
            for (a, wr) in xr.iter().zip(w.chunks_exact(m)) {
                for (y, wv) in yr.iter_mut().zip(wr) {
                    *y += a * wv;
                }
            }
        }
        out
    });
    parts.concat()
}

/// `g · wᵀ` for `g: n×m`, `w: k×m`.
pub(crate) fn matmul_bt(exec: Exec, g: &[f64], m: usize, w: &[f64], k: usize) -> Vec<f64> {
    let parts = par::map_chunks(exec, g, ROW_CHUNK * m.max(1), |_, rows| {
        let mut out = Vec::with_capacity(rows.len() / m.max(1) * k);
        for gr in rows.chunks_exact(m) {
            for wr in w.chunks_exact(m) {
                out.push(gr.iter().zip(wr).map(|(a, b)| a * b).sum());
            }
        }
        out
    });
    parts.concat()
}

/// `xᵀ · g` for `x: n×k`, `g: n×m`, summed over fixed row blocks in order.
pub(crate) fn matmul_at(exec: Exec, x: &[f64], k: usize, g: &[f64], m: usize) -> Vec<f64> {
    let parts = par::map_chunks(exec, x, REDUCE_CHUNK * k.max(1), |ci, rows| {
        let mut acc = vec![0.0; k * m];
        let g0 = ci * REDUCE_CHUNK * m;
        for (r, xr) in rows.chunks_exact(k).enumerate() {
            let gr = &g[g0 + r * m..g0 + (r + 1) * m];
            for (a, accr) in xr.iter().zip(acc.chunks_exact_mut(m)) {
                if *a == 0.0 {
                    continue;
                }
                for (o, gv) in accr.iter_mut().zip(gr) {
                    *o += a * gv;
                }
            }
        }
        acc
    });
    let mut out = vec![0.0; k * m];
    for p in parts {
        for (o, v) in out.iter_mut().zip(p) {
            *o += v;
        }
    }
    out
}

/// Column sums of `g: n×m`, in the same row blocks as [`matmul_at`].
pub(crate) fn column_sums(g: &[f64], m: usize) -> Vec<f64> {
    let mut out = vec![0.0; m];
    for block in g.chunks(REDUCE_CHUNK * m.max(1)) {
        let mut acc = vec![0.0; m];
        for row in block.chunks_exact(m) {
            for (a, v) in acc.iter_mut().zip(row) {
                *a += v;
            }
        }
        for (o, a) in out.iter_mut().zip(acc) {
            *o += a;
        }
    }
    out
}

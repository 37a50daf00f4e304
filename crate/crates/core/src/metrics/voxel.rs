use std::collections::VecDeque;

use bitvec::prelude::*;

use crate::error::{Error, Result};
use crate::mesh::{normalize_unit_cube, TriMesh, Vec3};

/// Shrink applied to cell boxes on the side facing the grid center, so a
/// face lying exactly on a cell boundary belongs to the more central cell.
const TIE_SHRINK: f64 = 1e-9;

/// Mapping between unit-cube coordinates and grid coordinates: the cube
/// `[-0.5, 0.5]³` covers cells `1..R-1` on every axis, leaving one cell of
/// padding on each side.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VoxelFrame {
    pub resolution: usize,
    pub origin: Vec3,
    /// Grid cells per unit length.
    pub scale: f64,
}

impl VoxelFrame {
    pub fn unit_cube(resolution: usize) -> Result<Self> {
        if resolution < 3 {
            return Err(Error::InvalidArgument(format!(
                "voxel resolution must be at least 3 (one padding cell per side), got {resolution}"
            )));
        }
        Ok(VoxelFrame {
            resolution,
            origin: Vec3::repeat(-0.5),
            scale: (resolution - 2) as f64,
        })
    }

    pub fn to_grid(&self, p: &Vec3) -> Vec3 {
        (p - self.origin) * self.scale + Vec3::repeat(1.0)
    }

    /// Center of cell `(i, j, k)` in unit-cube coordinates.
    pub fn cell_center(&self, i: usize, j: usize, k: usize) -> Vec3 {
        let g = Vec3::new(i as f64 + 0.5, j as f64 + 0.5, k as f64 + 0.5);
        (g - Vec3::repeat(1.0)) / self.scale + self.origin
    }
}

/// Occupancy of `R³` cells, x fastest.
#[derive(Clone, Debug, PartialEq)]
pub struct VoxelGrid {
    frame: VoxelFrame,
    occupancy: BitVec,
    /// The exterior flood fill reached nearly everything: the mesh is not
    /// closed and the grid holds surface cells only.
    pub leaked: bool,
}

impl VoxelGrid {
    pub fn empty(frame: VoxelFrame) -> Self {
        let r = frame.resolution;
        VoxelGrid {
            frame,
            occupancy: bitvec![0; r * r * r],
            leaked: false,
        }
    }

    pub fn resolution(&self) -> usize {
        self.frame.resolution
    }

    pub fn frame(&self) -> &VoxelFrame {
        &self.frame
    }

    fn index(&self, i: usize, j: usize, k: usize) -> usize {
        let r = self.frame.resolution;
        (k * r + j) * r + i
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> bool {
        self.occupancy[self.index(i, j, k)]
    }

    pub fn set(&mut self, i: usize, j: usize, k: usize, value: bool) {
        let idx = self.index(i, j, k);
        self.occupancy.set(idx, value);
    }

    pub fn count(&self) -> usize {
        self.occupancy.count_ones()
    }

    pub fn occupancy(&self) -> &BitSlice {
        &self.occupancy
    }
}

/// Normalizes `mesh` into the unit cube and voxelizes it as a solid.
pub fn voxelize_solid(mesh: &TriMesh, resolution: usize) -> Result<VoxelGrid> {
    let (normalized, _) = normalize_unit_cube(mesh)?;
    voxelize_in_unit_cube(&normalized, resolution)
}

/// Solid voxelization of a mesh already placed inside `[-0.5, 0.5]³`:
/// surface cells by triangle-box overlap, exterior by a 6-connected flood
/// fill from the padding, solid = not exterior.
pub fn voxelize_in_unit_cube(mesh: &TriMesh, resolution: usize) -> Result<VoxelGrid> {
    let frame = VoxelFrame::unit_cube(resolution)?;
    let r = resolution;
    let mut surface = VoxelGrid::empty(frame);
    for fi in 0..mesh.num_faces() {
        let tri = mesh.face_corners(fi).map(|p| frame.to_grid(&p));
        mark_triangle(&mut surface, &tri);
    }

    let mut exterior = bitvec![0; r * r * r];
    let mut queue = VecDeque::new();
    for k in 0..r {
        for j in 0..r {
            for i in 0..r {
                let on_border = [i, j, k].iter().any(|&c| c == 0 || c == r - 1);
                let idx = surface.index(i, j, k);
                if on_border && !surface.occupancy[idx] && !exterior[idx] {
                    exterior.set(idx, true);
                    queue.push_back((i, j, k));
                }
            }
        }
    }
    while let Some((i, j, k)) = queue.pop_front() {
        let steps: [(isize, isize, isize); 6] = [(-1, 0, 0), (1, 0, 0), (0, -1, 0), (0, 1, 0), (0, 0, -1), (0, 0, 1)];
        for (di, dj, dk) in steps {
            let (ni, nj, nk) = (i as isize + di, j as isize + dj, k as isize + dk);
            if [ni, nj, nk].iter().any(|&c| c < 0 || c >= r as isize) {
                continue;
            }
            let idx = surface.index(ni as usize, nj as usize, nk as usize);
            if !surface.occupancy[idx] && !exterior[idx] {
                exterior.set(idx, true);
                queue.push_back((ni as usize, nj as usize, nk as usize));
            }
        }
    }

    let open = r * r * r - surface.count();
    if exterior.count_ones() as f64 > 0.99 * open as f64 {
        log::warn!("voxelization leaked: the mesh does not enclose a volume; using surface cells only");
        surface.leaked = true;
        return Ok(surface);
    }
    let mut solid = surface;
    solid.occupancy = !exterior;
    Ok(solid)
}

fn cell_range(lo: f64, hi: f64, r: usize) -> std::ops::RangeInclusive<usize> {
    let a = (lo.floor() - 1.0).max(0.0) as usize;
    let b = (hi.floor() + 1.0).min(r as f64 - 1.0).max(0.0) as usize;
    a..=b
}

/// Cell `[c, c+1]` on one axis shrunk on the side facing the grid center.
fn cell_interval(c: usize, r: usize) -> (f64, f64) {
    let mid = r as f64 / 2.0;
    let (lo, hi) = (c as f64, c as f64 + 1.0);
    if hi < mid {
        (lo, hi - TIE_SHRINK)
    } else if lo > mid {
        (lo + TIE_SHRINK, hi)
    } else {
        (lo, hi)
    }
}

fn mark_triangle(grid: &mut VoxelGrid, tri: &[Vec3; 3]) {
    let r = grid.resolution();
    let lo = tri[0].inf(&tri[1]).inf(&tri[2]);
    let hi = tri[0].sup(&tri[1]).sup(&tri[2]);
    for k in cell_range(lo.z, hi.z, r) {
        let (z0, z1) = cell_interval(k, r);
        for j in cell_range(lo.y, hi.y, r) {
            let (y0, y1) = cell_interval(j, r);
            for i in cell_range(lo.x, hi.x, r) {
                let (x0, x1) = cell_interval(i, r);
                let bmin = Vec3::new(x0, y0, z0);
                let bmax = Vec3::new(x1, y1, z1);
                if triangle_box_overlap(&((bmin + bmax) * 0.5), &((bmax - bmin) * 0.5), tri) {
                    grid.set(i, j, k, true);
                }
            }
        }
    }
}

/// Separating-axis test between a triangle and an axis-aligned box given by
/// center and half extents. Touching counts as overlap.
pub fn triangle_box_overlap(center: &Vec3, half: &Vec3, tri: &[Vec3; 3]) -> bool {
    let v = [tri[0] - center, tri[1] - center, tri[2] - center];
    let e = [v[1] - v[0], v[2] - v[1], v[0] - v[2]];

    // Box face normals.
    for a in 0..3 {
        let mn = v[0][a].min(v[1][a]).min(v[2][a]);
        let mx = v[0][a].max(v[1][a]).max(v[2][a]);
        if mn > half[a] || mx < -half[a] {
            return false;
        }
    }

    // Edge cross products.
    for edge in &e {
        for a in 0..3 {
            let mut axis = Vec3::zeros();
            axis[a] = 1.0;
            let n = axis.cross(edge);
            if n == Vec3::zeros() {
                continue;
            }
            let p = [n.dot(&v[0]), n.dot(&v[1]), n.dot(&v[2])];
            let rad = half.x * n.x.abs() + half.y * n.y.abs() + half.z * n.z.abs();
            let mn = p[0].min(p[1]).min(p[2]);
            let mx = p[0].max(p[1]).max(p[2]);
            if mn > rad || mx < -rad {
                return false;
            }
        }
    }

    // Triangle plane.
    let n = e[0].cross(&e[1]);
    let d = n.dot(&v[0]);
    let rad = half.x * n.x.abs() + half.y * n.y.abs() + half.z * n.z.abs();
    d.abs() <= rad
}

/// `|A ∩ B| / |A ∪ B|`, 1 when both are empty.
pub fn metric_iou(a: &VoxelGrid, b: &VoxelGrid) -> Result<f64> {
    if a.frame != b.frame {
        return Err(Error::InvalidArgument(format!(
            "voxel grids differ: resolution {} vs {}",
            a.resolution(),
            b.resolution()
        )));
    }
    let inter = (a.occupancy.clone() & &b.occupancy).count_ones();
    let union = (a.occupancy.clone() | &b.occupancy).count_ones();
    if union == 0 {
        return Ok(1.0);
    }
    Ok(inter as f64 / union as f64)
}

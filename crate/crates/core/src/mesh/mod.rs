//! Triangle meshes, point clouds and the basic queries on them.

mod io;

pub use io::{load_mesh, load_mesh_with_stats, load_points, parse_obj, save_mesh, save_points, ObjStats};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec3 = nalgebra::Vector3<f64>;

/// Squared Euclidean distance, evaluated in a fixed order so every
/// nearest-neighbor path in the crate agrees bit for bit.
#[inline]
pub fn dist2(a: &Vec3, b: &Vec3) -> f64 {
    let dx = a.x - b.x;
    let dy = a.y - b.y;
    let dz = a.z - b.z;
    dx * dx + dy * dy + dz * dz
}

/// Vertex positions plus fixed triangle connectivity.
#[derive(Clone, Debug, PartialEq)]
pub struct TriMesh {
    vertices: Vec<Vec3>,
    faces: Vec<[usize; 3]>,
}

impl TriMesh {
    pub fn new(vertices: Vec<Vec3>, faces: Vec<[usize; 3]>) -> Result<Self> {
        if vertices.len() < 3 {
            return Err(Error::InvalidMesh(format!(
                "need at least 3 vertices, got {}",
                vertices.len()
            )));
        }
        if faces.is_empty() {
            return Err(Error::InvalidMesh("mesh has no faces".into()));
        }
        if let Some(v) = vertices.iter().position(|v| !v.iter().all(|c| c.is_finite())) {
            return Err(Error::InvalidMesh(format!("vertex {v} is not finite")));
        }
        let n = vertices.len();
        for (fi, f) in faces.iter().enumerate() {
            if let Some(&i) = f.iter().find(|&&i| i >= n) {
                return Err(Error::InvalidMesh(format!(
                    "face {fi} references vertex {i}, but the mesh has {n} vertices"
                )));
            }
            if f[0] == f[1] || f[1] == f[2] || f[0] == f[2] {
                return Err(Error::InvalidMesh(format!("face {fi} repeats a vertex: {f:?}")));
            }
        }
        Ok(TriMesh { vertices, faces })
    }

    pub fn vertices(&self) -> &[Vec3] {
        &self.vertices
    }

    pub fn faces(&self) -> &[[usize; 3]] {
        &self.faces
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn num_faces(&self) -> usize {
        self.faces.len()
    }

    /// Same connectivity, new vertex positions.
    pub fn with_vertices(&self, vertices: Vec<Vec3>) -> Result<Self> {
        if vertices.len() != self.vertices.len() {
            return Err(Error::shape("with_vertices", self.vertices.len(), vertices.len()));
        }
        if let Some(v) = vertices.iter().position(|v| !v.iter().all(|c| c.is_finite())) {
            return Err(Error::InvalidMesh(format!("vertex {v} is not finite")));
        }
        Ok(TriMesh {
            vertices,
            faces: self.faces.clone(),
        })
    }

    pub fn face_corners(&self, face: usize) -> [Vec3; 3] {
        let [a, b, c] = self.faces[face];
        [self.vertices[a], self.vertices[b], self.vertices[c]]
    }

    /// Area of every face; degenerate faces give 0.
    pub fn face_areas(&self) -> Vec<f64> {
        self.faces
            .iter()
            .map(|&[a, b, c]| triangle_area(&self.vertices[a], &self.vertices[b], &self.vertices[c]))
            .collect()
    }

    pub fn surface_area(&self) -> f64 {
        self.face_areas().iter().sum()
    }

    /// Undirected edges as sorted, deduplicated vertex pairs.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut edges: Vec<(usize, usize)> = self
            .faces
            .iter()
            .flat_map(|&[a, b, c]| [(a, b), (b, c), (c, a)])
            .map(|(i, j)| (i.min(j), i.max(j)))
            .collect();
        edges.sort_unstable();
        edges.dedup();
        edges
    }

    pub fn bounding_box(&self) -> Result<BoundingBox> {
        BoundingBox::from_points(&self.vertices)
    }
}

pub fn triangle_area(a: &Vec3, b: &Vec3, c: &Vec3) -> f64 {
    0.5 * (b - a).cross(&(c - a)).norm()
}

/// An unordered set of 3D points.
#[derive(Clone, Debug, PartialEq)]
pub struct PointCloud {
    points: Vec<Vec3>,
}

impl PointCloud {
    pub fn new(points: Vec<Vec3>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::EmptyInput("point cloud"));
        }
        if let Some(i) = points.iter().position(|p| !p.iter().all(|c| c.is_finite())) {
            return Err(Error::InvalidArgument(format!("point {i} is not finite")));
        }
        Ok(PointCloud { points })
    }

    pub fn points(&self) -> &[Vec3] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn into_points(self) -> Vec<Vec3> {
        self.points
    }

    pub fn bounding_box(&self) -> BoundingBox {
        BoundingBox::from_points(&self.points).expect("point clouds are nonempty")
    }
}

impl From<&TriMesh> for PointCloud {
    fn from(mesh: &TriMesh) -> Self {
        PointCloud {
            points: mesh.vertices.clone(),
        }
    }
}

/// Axis-aligned bounds.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoundingBox {
    pub min: Vec3,
    pub max: Vec3,
}

impl BoundingBox {
    pub fn from_points(points: &[Vec3]) -> Result<Self> {
        let first = points.first().ok_or(Error::EmptyInput("bounding box of no points"))?;
        let (min, max) = points.iter().fold((*first, *first), |(lo, hi), p| (lo.inf(p), hi.sup(p)));
        Ok(BoundingBox { min, max })
    }

    pub fn extents(&self) -> Vec3 {
        self.max - self.min
    }

    pub fn center(&self) -> Vec3 {
        (self.min + self.max) * 0.5
    }

    pub fn max_extent(&self) -> f64 {
        self.extents().max()
    }
}

/// Uniform scale followed by a translation: `p ↦ scale·p + translation`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Similarity {
    pub scale: f64,
    pub translation: [f64; 3],
}

impl Similarity {
    pub fn identity() -> Self {
        Similarity {
            scale: 1.0,
            translation: [0.0; 3],
        }
    }

    pub fn apply(&self, p: &Vec3) -> Vec3 {
        p * self.scale + Vec3::from(self.translation)
    }

    pub fn invert(&self, p: &Vec3) -> Vec3 {
        (p - Vec3::from(self.translation)) / self.scale
    }
}

/// Anything made of a list of positions that can be rebuilt with moved ones.
pub trait Geometry: Sized {
    fn positions(&self) -> &[Vec3];
    fn with_positions(&self, positions: Vec<Vec3>) -> Result<Self>;
}

impl Geometry for TriMesh {
    fn positions(&self) -> &[Vec3] {
        &self.vertices
    }

    fn with_positions(&self, positions: Vec<Vec3>) -> Result<Self> {
        self.with_vertices(positions)
    }
}

impl Geometry for PointCloud {
    fn positions(&self) -> &[Vec3] {
        &self.points
    }

    fn with_positions(&self, positions: Vec<Vec3>) -> Result<Self> {
        PointCloud::new(positions)
    }
}

pub fn bounding_box<G: Geometry>(shape: &G) -> Result<BoundingBox> {
    BoundingBox::from_points(shape.positions())
}

/// Centers the shape at the origin and scales it uniformly so its largest
/// bounding-box extent is 1.
pub fn normalize_unit_cube<G: Geometry>(shape: &G) -> Result<(G, Similarity)> {
    let bbox = bounding_box(shape)?;
    let extent = bbox.max_extent();
    if !(extent > 0.0) {
        return Err(Error::Degenerate("cannot normalize a shape with zero extent".into()));
    }
    let scale = 1.0 / extent;
    let center = bbox.center();
    let positions = shape.positions().iter().map(|p| (p - center) * scale).collect();
    let transform = Similarity {
        scale,
        translation: (-center * scale).into(),
    };
    Ok((shape.with_positions(positions)?, transform))
}

/// Axis-aligned reflection planes through the origin.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SymmetryPlane {
    /// Negates x.
    Yz,
    /// Negates y.
    #[default]
    Xz,
    /// Negates z.
    Xy,
}

impl SymmetryPlane {
    /// Index of the coordinate the reflection negates.
    pub fn axis(self) -> usize {
        match self {
            SymmetryPlane::Yz => 0,
            SymmetryPlane::Xz => 1,
            SymmetryPlane::Xy => 2,
        }
    }

    pub fn reflect(self, p: &Vec3) -> Vec3 {
        let mut q = *p;
        q[self.axis()] = -q[self.axis()];
        q
    }

    pub fn name(self) -> &'static str {
        match self {
            SymmetryPlane::Yz => "yz",
            SymmetryPlane::Xz => "xz",
            SymmetryPlane::Xy => "xy",
        }
    }
}

impl std::str::FromStr for SymmetryPlane {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "yz" => Ok(SymmetryPlane::Yz),
            "xz" => Ok(SymmetryPlane::Xz),
            "xy" => Ok(SymmetryPlane::Xy),
            other => Err(Error::InvalidArgument(format!(
                "unknown symmetry plane {other:?} (expected xy, yz or xz)"
            ))),
        }
    }
}

pub fn mirror_points(pc: &PointCloud, plane: SymmetryPlane) -> PointCloud {
    PointCloud {
        points: pc.points.iter().map(|p| plane.reflect(p)).collect(),
    }
}

/// Axis-aligned box `[min, max]` as 12 outward-facing triangles.
pub fn box_mesh(min: Vec3, max: Vec3) -> TriMesh {
    let v = |x: bool, y: bool, z: bool| {
        Vec3::new(
            if x { max.x } else { min.x },
            if y { max.y } else { min.y },
            if z { max.z } else { min.z },
        )
    };
    let vertices = vec![
        v(false, false, false),
        v(true, false, false),
        v(true, true, false),
        v(false, true, false),
        v(false, false, true),
        v(true, false, true),
        v(true, true, true),
        v(false, true, true),
    ];
    let faces = vec![
        [0, 3, 2],
        [0, 2, 1],
        [4, 5, 6],
        [4, 6, 7],
        [0, 1, 5],
        [0, 5, 4],
        [3, 7, 6],
        [3, 6, 2],
        [0, 4, 7],
        [0, 7, 3],
        [1, 2, 6],
        [1, 6, 5],
    ];
    TriMesh::new(vertices, faces).expect("box mesh is valid")
}

/// Box `[min, max]` with every face split into a `divisions × divisions`
/// grid of quads (two triangles each), sharing vertices along edges.
pub fn subdivided_box_mesh(min: Vec3, max: Vec3, divisions: usize) -> TriMesh {
    let d = divisions.max(1);
    let mut index = std::collections::HashMap::new();
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    let lerp = |lo: f64, hi: f64, k: usize| lo + (hi - lo) * (k as f64 / d as f64);
    let mut vertex = |g: [usize; 3], vertices: &mut Vec<Vec3>| -> usize {
        *index.entry(g).or_insert_with(|| {
            vertices.push(Vec3::new(
                lerp(min.x, max.x, g[0]),
                lerp(min.y, max.y, g[1]),
                lerp(min.z, max.z, g[2]),
            ));
            vertices.len() - 1
        })
    };
    // (fixed axis, fixed value, u axis, v axis); u × v points outward.
    let sides = [
        (0, 0, 2, 1),
        (0, d, 1, 2),
        (1, 0, 0, 2),
        (1, d, 2, 0),
        (2, 0, 1, 0),
        (2, d, 0, 1),
    ];
    for (axis, fixed, ua, va) in sides {
        for i in 0..d {
            for j in 0..d {
                let corner = |du: usize, dv: usize| {
                    let mut g = [0; 3];
                    g[axis] = fixed;
                    g[ua] = i + du;
                    g[va] = j + dv;
                    g
                };
                let a = vertex(corner(0, 0), &mut vertices);
                let b = vertex(corner(1, 0), &mut vertices);
                let c = vertex(corner(1, 1), &mut vertices);
                let e = vertex(corner(0, 1), &mut vertices);
                faces.push([a, b, c]);
                faces.push([a, c, e]);
            }
        }
    }
    TriMesh::new(vertices, faces).expect("subdivided box is valid")
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn tri(a: [f64; 3], b: [f64; 3], c: [f64; 3]) -> TriMesh {
        TriMesh::new(vec![a.into(), b.into(), c.into()], vec![[0, 1, 2]]).unwrap()
    }

    #[test]
    fn rejects_bad_faces() {
        let v = vec![Vec3::zeros(), Vec3::x(), Vec3::y()];
        assert!(TriMesh::new(v.clone(), vec![[0, 1, 3]]).is_err());
        assert!(TriMesh::new(v.clone(), vec![[0, 1, 1]]).is_err());
        assert!(TriMesh::new(v.clone(), vec![]).is_err());
        assert!(TriMesh::new(v[..2].to_vec(), vec![[0, 1, 0]]).is_err());
    }

    #[test]
    fn bounding_box_cases() {
        let b = BoundingBox::from_points(&[Vec3::zeros(), Vec3::new(1.0, 2.0, 3.0)]).unwrap();
        assert_eq!(b.min, Vec3::zeros());
        assert_eq!(b.max, Vec3::new(1.0, 2.0, 3.0));

        let p = Vec3::new(0.3, -2.0, 7.5);
        let b = BoundingBox::from_points(&[p]).unwrap();
        assert_eq!((b.min, b.max), (p, p));

        let b = BoundingBox::from_points(&[Vec3::new(-1.0, 0.0, 0.0), Vec3::new(1.0, 0.0, 0.0)]).unwrap();
        assert_eq!(b.min, Vec3::new(-1.0, 0.0, 0.0));
        assert_eq!(b.max, Vec3::new(1.0, 0.0, 0.0));

        assert!(BoundingBox::from_points(&[]).is_err());
    }

    #[test]
    fn normalizes_cube_and_box() {
        let cube = box_mesh(Vec3::repeat(-2.0), Vec3::repeat(2.0));
        let (n, t) = normalize_unit_cube(&cube).unwrap();
        let b = n.bounding_box().unwrap();
        assert_eq!(b.min, Vec3::repeat(-0.5));
        assert_eq!(b.max, Vec3::repeat(0.5));
        assert_eq!(t.scale, 0.25);

        let (_, t) = normalize_unit_cube(&n).unwrap();
        assert_eq!(t.scale, 1.0);
        assert!(t.translation.iter().all(|&c| c == 0.0));

        let slab = box_mesh(Vec3::zeros(), Vec3::new(4.0, 2.0, 1.0));
        let (n, _) = normalize_unit_cube(&slab).unwrap();
        assert_eq!(n.bounding_box().unwrap().extents(), Vec3::new(1.0, 0.5, 0.25));
    }

    #[test]
    fn normalize_rejects_single_point() {
        let pc = PointCloud::new(vec![Vec3::new(1.0, 1.0, 1.0); 4]).unwrap();
        assert!(matches!(normalize_unit_cube(&pc), Err(Error::Degenerate(_))));
    }

    #[test]
    fn similarity_round_trip() {
        let pc = PointCloud::new(vec![Vec3::new(3.0, 1.0, -2.0), Vec3::new(5.0, 2.0, 0.0)]).unwrap();
        let (n, t) = normalize_unit_cube(&pc).unwrap();
        for (p, q) in pc.points().iter().zip(n.points()) {
            assert_relative_eq!(t.apply(p), *q, epsilon = 1e-12);
            assert_relative_eq!(t.invert(q), *p, epsilon = 1e-12);
        }
    }

    #[test]
    fn face_area_cases() {
        assert_eq!(tri([0.0; 3], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]).face_areas(), vec![0.5]);
        assert_eq!(tri([0.0; 3], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0]).face_areas(), vec![0.0]);
        let eq = tri([0.0; 3], [1.0, 0.0, 0.0], [0.5, 3f64.sqrt() / 2.0, 0.0]);
        assert_relative_eq!(eq.face_areas()[0], 3f64.sqrt() / 4.0, epsilon = 1e-15);
    }

    #[test]
    fn mirror_cases() {
        let pc = PointCloud::new(vec![Vec3::new(1.0, 2.0, 3.0), Vec3::new(1.0, 0.0, 3.0)]).unwrap();
        let m = mirror_points(&pc, SymmetryPlane::Xz);
        assert_eq!(m.points()[0], Vec3::new(1.0, -2.0, 3.0));
        assert_eq!(m.points()[1], Vec3::new(1.0, 0.0, 3.0));
        assert_eq!(mirror_points(&m, SymmetryPlane::Xz), pc);
        assert_eq!(mirror_points(&pc, SymmetryPlane::Yz).points()[0], Vec3::new(-1.0, 2.0, 3.0));
        assert_eq!(mirror_points(&pc, SymmetryPlane::Xy).points()[0], Vec3::new(1.0, 2.0, -3.0));
    }

    #[test]
    fn subdivided_box_is_closed() {
        let m = subdivided_box_mesh(Vec3::repeat(-0.5), Vec3::repeat(0.5), 3);
        assert_eq!(m.num_vertices(), 6 * 9 + 2);
        assert_eq!(m.num_faces(), 6 * 9 * 2);
        assert_relative_eq!(m.surface_area(), 6.0, epsilon = 1e-12);
        // Every edge of a closed manifold is shared by exactly two faces.
        let mut counts = std::collections::HashMap::new();
        for &[a, b, c] in m.faces() {
            for (i, j) in [(a, b), (b, c), (c, a)] {
                *counts.entry((i.min(j), i.max(j))).or_insert(0) += 1;
            }
        }
        assert!(counts.values().all(|&n| n == 2));
        // Outward orientation: signed volume is positive.
        let vol: f64 = m
            .faces()
            .iter()
            .map(|&[a, b, c]| m.vertices()[a].dot(&m.vertices()[b].cross(&m.vertices()[c])) / 6.0)
            .sum();
        assert_relative_eq!(vol, 1.0, epsilon = 1e-12);
    }
}

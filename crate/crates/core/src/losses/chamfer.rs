use crate::error::{Error, Result};
use crate::mesh::Vec3;
use crate::par::{self, Exec};
use crate::spatial::{nearest_brute_force, KdTree, Neighbor};

use super::LossGrad;

const QUERY_CHUNK: usize = 512;

/// How nearest neighbors are found. Both give identical results.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum NnMethod {
    #[default]
    KdTree,
    BruteForce,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ChamferOptions {
    pub method: NnMethod,
    pub exec: Exec,
}

/// A point set with its search structure built once, for repeated queries
/// against a fixed target.
#[derive(Clone, Debug)]
pub struct IndexedCloud {
    tree: KdTree,
}

impl IndexedCloud {
    pub fn new(points: &[Vec3]) -> Self {
        IndexedCloud {
            tree: KdTree::new(points),
        }
    }

    pub fn points(&self) -> &[Vec3] {
        self.tree.points()
    }

    pub fn tree(&self) -> &KdTree {
        &self.tree
    }
}

/// Nearest neighbor in `points` of every query, in query order.
pub fn nearest_neighbors(queries: &[Vec3], points: &[Vec3], opts: ChamferOptions) -> Vec<Neighbor> {
    match opts.method {
        NnMethod::BruteForce => par::map_chunks(opts.exec, queries, QUERY_CHUNK, |_, qs| {
            qs.iter()
                .map(|q| nearest_brute_force(points, q).expect("nonempty"))
                .collect::<Vec<_>>()
        })
        .concat(),
        NnMethod::KdTree => nearest_in_tree(queries, &KdTree::new(points), opts.exec),
    }
}

fn nearest_in_tree(queries: &[Vec3], tree: &KdTree, exec: Exec) -> Vec<Neighbor> {
    par::map_chunks(exec, queries, QUERY_CHUNK, |_, qs| {
        qs.iter().map(|q| tree.nearest(q).expect("nonempty")).collect::<Vec<_>>()
    })
    .concat()
}

/// Two-sided Chamfer loss (sum of squared nearest distances in both
/// directions) and its gradient with respect to `pc`.
pub fn chamfer(pc: &[Vec3], pc_t: &[Vec3]) -> Result<LossGrad> {
    chamfer_with(pc, pc_t, ChamferOptions::default())
}

pub fn chamfer_with(pc: &[Vec3], pc_t: &[Vec3], opts: ChamferOptions) -> Result<LossGrad> {
    if pc.is_empty() || pc_t.is_empty() {
        return Err(Error::EmptyInput("chamfer point cloud"));
    }
    let forward = nearest_neighbors(pc, pc_t, opts);
    let backward = nearest_neighbors(pc_t, pc, opts);
    Ok(assemble(pc, pc_t, &forward, &backward))
}

/// [`chamfer_with`] against a prebuilt target index (always KD-tree).
pub fn chamfer_indexed(pc: &[Vec3], target: &IndexedCloud, exec: Exec) -> Result<LossGrad> {
    let pc_t = target.points();
    if pc.is_empty() || pc_t.is_empty() {
        return Err(Error::EmptyInput("chamfer point cloud"));
    }
    let forward = nearest_in_tree(pc, target.tree(), exec);
    let backward = nearest_in_tree(pc_t, &KdTree::new(pc), exec);
    Ok(assemble(pc, pc_t, &forward, &backward))
}

fn assemble(pc: &[Vec3], pc_t: &[Vec3], forward: &[Neighbor], backward: &[Neighbor]) -> LossGrad {
    let fwd: f64 = forward.iter().map(|n| n.dist2).sum();
    let bwd: f64 = backward.iter().map(|n| n.dist2).sum();
    let mut grad: Vec<Vec3> = pc
        .iter()
        .zip(forward)
        .map(|(p, n)| (p - pc_t[n.index]) * 2.0)
        .collect();
    for (q, n) in pc_t.iter().zip(backward) {
        grad[n.index] += (pc[n.index] - q) * 2.0;
    }
    LossGrad {
        value: fwd + bwd,
        grad,
    }
}

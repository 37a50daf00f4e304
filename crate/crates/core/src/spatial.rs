//! Static 3D KD-tree for nearest-neighbor queries.
//!
//! Distances are squared Euclidean ([`dist2`]) and ties are always resolved
//! toward the lowest point index, so results match an exhaustive scan
//! exactly.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::mesh::{dist2, Vec3};

const LEAF_SIZE: usize = 8;

/// A neighbor: point index and squared distance to the query.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Neighbor {
    pub index: usize,
    pub dist2: f64,
}

impl Neighbor {
    /// Strict "closer than" with the lowest-index tie-break.
    #[inline]
    fn better_than(&self, other: &Neighbor) -> bool {
        self.dist2 < other.dist2 || (self.dist2 == other.dist2 && self.index < other.index)
    }
}

// Max-heap order: the worst neighbor sits on top.
impl Eq for Neighbor {}

impl Ord for Neighbor {
    fn cmp(&self, other: &Self) -> Ordering {
        self.dist2
            .total_cmp(&other.dist2)
            .then(self.index.cmp(&other.index))
    }
}

impl PartialOrd for Neighbor {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Balanced tree stored implicitly over a permutation of the input points.
#[derive(Clone, Debug)]
pub struct KdTree {
    points: Vec<Vec3>,
    order: Vec<usize>,
    // `points` permuted into tree order, for contiguous leaf scans.
    sorted: Vec<Vec3>,
    // Split axis of the node whose pivot sits at this position of `order`.
    axis: Vec<u8>,
}

impl KdTree {
    pub fn new(points: &[Vec3]) -> Self {
        let mut tree = KdTree {
            points: points.to_vec(),
            order: (0..points.len()).collect(),
            sorted: Vec::new(),
            axis: vec![0; points.len()],
        };
        tree.build(0, points.len());
        tree.sorted = tree.order.iter().map(|&i| points[i]).collect();
        tree
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Vec3] {
        &self.points
    }

    fn build(&mut self, lo: usize, hi: usize) {
        if hi - lo <= LEAF_SIZE {
            return;
        }
        let span = self.order[lo..hi].iter().fold(
            (Vec3::repeat(f64::INFINITY), Vec3::repeat(f64::NEG_INFINITY)),
            |(a, b), &i| (a.inf(&self.points[i]), b.sup(&self.points[i])),
        );
        let axis = (span.1 - span.0).imax();
        let mid = (lo + hi) / 2;
        let points = &self.points;
        self.order[lo..hi].select_nth_unstable_by(mid - lo, |&a, &b| {
            points[a][axis].total_cmp(&points[b][axis]).then(a.cmp(&b))
        });
        self.axis[mid] = axis as u8;
        self.build(lo, mid);
        self.build(mid + 1, hi);
    }

    /// Closest point to `query`; `None` only for an empty tree.
    pub fn nearest(&self, query: &Vec3) -> Option<Neighbor> {
        if self.points.is_empty() {
            return None;
        }
        let mut best = Neighbor {
            index: usize::MAX,
            dist2: f64::INFINITY,
        };
        self.nearest_in(0, self.points.len(), query, &mut [0.0; 3], 0.0, &mut best);
        Some(best)
    }

    /// `off` holds the per-axis offset from `q` to this cell and `rd` its
    /// squared norm, a lower bound on any distance inside.
    fn nearest_in(&self, lo: usize, hi: usize, q: &Vec3, off: &mut [f64; 3], rd: f64, best: &mut Neighbor) {
        if hi - lo <= LEAF_SIZE {
            for k in lo..hi {
                let cand = Neighbor {
                    index: self.order[k],
                    dist2: dist2(q, &self.sorted[k]),
                };
                if cand.better_than(best) {
                    *best = cand;
                }
            }
            return;
        }
        let mid = (lo + hi) / 2;
        let cand = Neighbor {
            index: self.order[mid],
            dist2: dist2(q, &self.sorted[mid]),
        };
        if cand.better_than(best) {
            *best = cand;
        }
        let axis = self.axis[mid] as usize;
        let diff = q[axis] - self.sorted[mid][axis];
        let (near, far) = if diff < 0.0 {
            ((lo, mid), (mid + 1, hi))
        } else {
            ((mid + 1, hi), (lo, mid))
        };
        self.nearest_in(near.0, near.1, q, off, rd, best);
        let old = off[axis];
        let rd_far = rd - old * old + diff * diff;
        // `<=` and a rounding allowance keep equidistant points with lower
        // indices reachable.
        if rd_far <= best.dist2 * (1.0 + 1e-12) {
            off[axis] = diff;
            self.nearest_in(far.0, far.1, q, off, rd_far, best);
            off[axis] = old;
        }
    }

    /// The `k` closest points, nearest first.
    pub fn k_nearest(&self, query: &Vec3, k: usize) -> Vec<Neighbor> {
        let k = k.min(self.points.len());
        if k == 0 {
            return Vec::new();
        }
        let mut heap = BinaryHeap::with_capacity(k + 1);
        self.knn_in(0, self.points.len(), query, k, &mut heap);
        heap.into_sorted_vec()
    }

    fn knn_offer(heap: &mut BinaryHeap<Neighbor>, k: usize, cand: Neighbor) {
        if heap.len() < k {
            heap.push(cand);
        } else if cand.better_than(heap.peek().expect("heap is full")) {
            heap.pop();
            heap.push(cand);
        }
    }

    fn knn_in(&self, lo: usize, hi: usize, q: &Vec3, k: usize, heap: &mut BinaryHeap<Neighbor>) {
        if hi - lo <= LEAF_SIZE {
            for s in lo..hi {
                Self::knn_offer(
                    heap,
                    k,
                    Neighbor {
                        index: self.order[s],
                        dist2: dist2(q, &self.sorted[s]),
                    },
                );
            }
            return;
        }
        let mid = (lo + hi) / 2;
        Self::knn_offer(
            heap,
            k,
            Neighbor {
                index: self.order[mid],
                dist2: dist2(q, &self.sorted[mid]),
            },
        );
        let axis = self.axis[mid] as usize;
        let diff = q[axis] - self.sorted[mid][axis];
        let (near, far) = if diff < 0.0 {
            ((lo, mid), (mid + 1, hi))
        } else {
            ((mid + 1, hi), (lo, mid))
        };
        self.knn_in(near.0, near.1, q, k, heap);
        let bound = if heap.len() < k {
            f64::INFINITY
        } else {
            heap.peek().expect("heap is full").dist2
        };
        if diff * diff <= bound {
            self.knn_in(far.0, far.1, q, k, heap);
        }
    }
}

/// Exhaustive nearest neighbor with the same tie-break as [`KdTree`].
pub fn nearest_brute_force(points: &[Vec3], query: &Vec3) -> Option<Neighbor> {
    let mut best: Option<Neighbor> = None;
    for (i, p) in points.iter().enumerate() {
        let cand = Neighbor {
            index: i,
            dist2: dist2(query, p),
        };
        if best.is_none_or(|b| cand.better_than(&b)) {
            best = Some(cand);
        }
    }
    best
}

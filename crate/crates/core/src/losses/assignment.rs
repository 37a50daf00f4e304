//! Minimum-cost perfect matching between two equal-size point sets.
//!
//! [`solve_dense`] is the exact shortest-augmenting-path (Hungarian) method
//! on a full cost matrix and returns optimal dual potentials.
//! [`auction`] is Bertsekas' forward auction with ε-scaling for Euclidean
//! costs. Bids come from a KD-tree over the objects that also tracks the
//! smallest price in every subtree, so each bid is a branch-and-bound
//! search instead of a scan. Near the final ε most bids are answered from
//! short per-person candidate lists instead, which also carry over between
//! warm-started solves.

use crate::mesh::{dist2, Vec3};

/// Optimal assignment with potentials: `cost[i][j] - u[i] - v[j] >= 0`
/// everywhere and `= 0` on matched pairs.
#[derive(Clone, Debug)]
pub struct DenseSolution {
    /// Column matched to each row.
    pub assignment: Vec<usize>,
    pub cost: f64,
    pub row_potential: Vec<f64>,
    pub col_potential: Vec<f64>,
}

/// Exact min-cost assignment for an `n × n` row-major cost matrix.
pub fn solve_dense(n: usize, cost: &[f64]) -> DenseSolution {
    assert_eq!(cost.len(), n * n, "cost matrix must be n × n");
    if n == 0 {
        return DenseSolution {
            assignment: Vec::new(),
            cost: 0.0,
            row_potential: Vec::new(),
            col_potential: Vec::new(),
        };
    }
    const NONE: usize = usize::MAX;
    // 1-based with a virtual column 0, as in the classic formulation.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut row_of = vec![NONE; n + 1];
    let mut way = vec![0usize; n + 1];
    let mut minv = vec![f64::INFINITY; n + 1];
    let mut used = vec![false; n + 1];

    for i in 1..=n {
        row_of[0] = i;
        let mut j0 = 0usize;
        minv.fill(f64::INFINITY);
        used.fill(false);
        loop {
            used[j0] = true;
            let i0 = row_of[j0];
            let row = &cost[(i0 - 1) * n..i0 * n];
            let mut delta = f64::INFINITY;
            let mut j1 = NONE;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = row[j - 1] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[row_of[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if row_of[j0] == NONE {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            row_of[j0] = row_of[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut assignment = vec![0usize; n];
    for j in 1..=n {
        assignment[row_of[j] - 1] = j - 1;
    }
    let total = assignment.iter().enumerate().map(|(i, &j)| cost[i * n + j]).sum();
    DenseSolution {
        assignment,
        cost: total,
        row_potential: u[1..].to_vec(),
        col_potential: v[1..].to_vec(),
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AuctionOptions {
    /// Final ε relative to the diameter of the two point sets. The returned
    /// matching costs at most `n·ε` more than the optimum.
    pub relative_epsilon: f64,
    /// Divisor applied to ε between scaling phases.
    pub scaling: f64,
}

impl Default for AuctionOptions {
    fn default() -> Self {
        AuctionOptions {
            relative_epsilon: 1e-4,
            scaling: 5.0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct AuctionSolution {
    /// Object matched to each person.
    pub assignment: Vec<usize>,
    pub cost: f64,
    /// Primal cost minus the dual lower bound; bounds the suboptimality.
    pub gap: f64,
    /// Warm start for the next solve against the same objects.
    pub state: AuctionState,
}

/// Prices and matching of a finished auction plus, per person, the objects
/// that were within a margin of its best value. Prices only ever rise and
/// a person that moved by δ gains at most δ on any object, so a list stays
/// conclusive while its best entry is below the recorded limit minus δ.
#[derive(Clone, Debug)]
pub struct AuctionState {
    fingerprint: u64,
    prices: Vec<f64>,
    assignment: Vec<usize>,
    anchor: Vec<Vec3>,
    limit: Vec<f64>,
    list: Vec<Vec<u32>>,
}

impl AuctionState {
    /// Object prices, indexed like the objects.
    pub fn prices(&self) -> &[f64] {
        &self.prices
    }
}

fn fingerprint(objects: &[Vec3]) -> u64 {
    objects.iter().flat_map(|p| p.iter()).fold(0xcbf2_9ce4_8422_2325, |h, c| {
        (h ^ c.to_bits()).wrapping_mul(0x0100_0000_01b3)
    })
}

const LEAF_SIZE: usize = 8;
const NO_NODE: u32 = u32::MAX;

struct PricedNode {
    lo: Vec3,
    hi: Vec3,
    start: u32,
    end: u32,
    left: u32,
    right: u32,
    parent: u32,
    /// Smallest price in the subtree.
    min_price: f64,
}

/// KD-tree over the objects whose nodes also track the smallest price
/// below them, so `min_j |q − x_j| + p_j` is found by branch and bound.
/// Points and prices are stored in tree order.
struct PricedTree {
    points: Vec<Vec3>,
    prices: Vec<f64>,
    /// Object index of each slot, and the slot of each object.
    ids: Vec<usize>,
    slot: Vec<u32>,
    leaf: Vec<u32>,
    nodes: Vec<PricedNode>,
}

impl PricedTree {
    fn new(objects: &[Vec3], prices: &[f64]) -> Self {
        let n = objects.len();
        let mut ids: Vec<usize> = (0..n).collect();
        let mut nodes = Vec::with_capacity(4 * n / LEAF_SIZE + 1);
        split(objects, &mut ids, 0, n, NO_NODE, &mut nodes);
        let mut t = PricedTree {
            points: ids.iter().map(|&j| objects[j]).collect(),
            prices: ids.iter().map(|&j| prices[j]).collect(),
            slot: vec![0; n],
            leaf: vec![NO_NODE; n],
            ids,
            nodes,
        };
        for (k, &j) in t.ids.iter().enumerate() {
            t.slot[j] = k as u32;
        }
        for id in (0..t.nodes.len()).rev() {
            let nd = &t.nodes[id];
            let m = if nd.left == NO_NODE {
                for k in nd.start..nd.end {
                    t.leaf[k as usize] = id as u32;
                }
                t.leaf_min(nd)
            } else {
                t.nodes[nd.left as usize].min_price.min(t.nodes[nd.right as usize].min_price)
            };
            t.nodes[id].min_price = m;
        }
        t
    }

    fn price(&self, j: usize) -> f64 {
        self.prices[self.slot[j] as usize]
    }

    fn into_prices(self) -> Vec<f64> {
        let mut out = vec![0.0; self.ids.len()];
        for (k, &j) in self.ids.iter().enumerate() {
            out[j] = self.prices[k];
        }
        out
    }

    fn leaf_min(&self, nd: &PricedNode) -> f64 {
        self.prices[nd.start as usize..nd.end as usize]
            .iter()
            .fold(f64::INFINITY, |a, &b| a.min(b))
    }

    /// Raises the price of object `j`; prices never decrease, so the walk
    /// up stops at the first ancestor whose minimum is unchanged.
    fn raise(&mut self, j: usize, increment: f64) {
        let k = self.slot[j] as usize;
        self.prices[k] += increment;
        let mut id = self.leaf[k];
        while id != NO_NODE {
            let nd = &self.nodes[id as usize];
            let m = if nd.left == NO_NODE {
                self.leaf_min(nd)
            } else {
                self.nodes[nd.left as usize].min_price.min(self.nodes[nd.right as usize].min_price)
            };
            let nd = &mut self.nodes[id as usize];
            if m == nd.min_price {
                break;
            }
            nd.min_price = m;
            id = nd.parent;
        }
    }

    fn lower_bound(&self, q: &Vec3, id: u32) -> f64 {
        let nd = &self.nodes[id as usize];
        let gap = (nd.lo - q).sup(&(q - nd.hi)).sup(&Vec3::zeros());
        gap.norm() + nd.min_price
    }

    /// Object minimizing `|q − x_j| + p_j`, that minimum, and the runner-up
    /// value (infinite when there is a single object).
    fn best_two(&self, q: &Vec3, stack: &mut Vec<(u32, f64)>) -> (usize, f64, f64) {
        let (mut best_k, mut best, mut second) = (0, f64::INFINITY, f64::INFINITY);
        stack.clear();
        stack.push((0, self.lower_bound(q, 0)));
        while let Some((id, lb)) = stack.pop() {
            if lb >= second {
                continue;
            }
            let nd = &self.nodes[id as usize];
            if nd.left == NO_NODE {
                for k in nd.start as usize..nd.end as usize {
                    let v = dist2(q, &self.points[k]).sqrt() + self.prices[k];
                    if v < best {
                        second = best;
                        best = v;
                        best_k = k;
                    } else if v < second {
                        second = v;
                    }
                }
                continue;
            }
            self.push_children(q, nd, stack);
        }
        (self.ids[best_k], best, second)
    }

    /// `min(bound, min_j |q − x_j| + p_j)`; a tight `bound` prunes most of
    /// the tree.
    fn best(&self, q: &Vec3, bound: f64, stack: &mut Vec<(u32, f64)>) -> f64 {
        let mut best = bound;
        stack.clear();
        stack.push((0, self.lower_bound(q, 0)));
        while let Some((id, lb)) = stack.pop() {
            if lb >= best {
                continue;
            }
            let nd = &self.nodes[id as usize];
            if nd.left == NO_NODE {
                for k in nd.start as usize..nd.end as usize {
                    best = best.min(dist2(q, &self.points[k]).sqrt() + self.prices[k]);
                }
                continue;
            }
            self.push_children(q, nd, stack);
        }
        best
    }

    /// Like [`best_two`](Self::best_two), also gathering into `out` every
    /// object whose value is within `margin` of the best.
    fn collect(&self, q: &Vec3, margin: f64, out: &mut Vec<u32>, stack: &mut Vec<(u32, f64)>) -> (usize, f64, f64) {
        let (mut best_k, mut best, mut second) = (0, f64::INFINITY, f64::INFINITY);
        out.clear();
        stack.clear();
        stack.push((0, self.lower_bound(q, 0)));
        while let Some((id, lb)) = stack.pop() {
            if lb > second.max(best + margin) {
                continue;
            }
            let nd = &self.nodes[id as usize];
            if nd.left == NO_NODE {
                for k in nd.start as usize..nd.end as usize {
                    let v = dist2(q, &self.points[k]).sqrt() + self.prices[k];
                    if v < best {
                        second = best;
                        best = v;
                        best_k = k;
                    } else if v < second {
                        second = v;
                    }
                    if v <= best + margin {
                        out.push(k as u32);
                    }
                }
                continue;
            }
            self.push_children(q, nd, stack);
        }
        let cut = best + margin;
        out.retain(|&k| dist2(q, &self.points[k as usize]).sqrt() + self.prices[k as usize] <= cut);
        for k in out.iter_mut() {
            *k = self.ids[*k as usize] as u32;
        }
        (self.ids[best_k], best, second)
    }

    /// Nearer child on top of the stack.
    fn push_children(&self, q: &Vec3, nd: &PricedNode, stack: &mut Vec<(u32, f64)>) {
        let (a, b) = (nd.left, nd.right);
        let (la, lb) = (self.lower_bound(q, a), self.lower_bound(q, b));
        if la <= lb {
            stack.push((b, lb));
            stack.push((a, la));
        } else {
            stack.push((a, la));
            stack.push((b, lb));
        }
    }
}

/// Median split of `ids[start..end]` along the widest axis; returns the
/// node id. Prices are filled in afterwards.
fn split(points: &[Vec3], ids: &mut [usize], start: usize, end: usize, parent: u32, nodes: &mut Vec<PricedNode>) -> u32 {
    let (lo, hi) = ids[start..end].iter().fold(
        (Vec3::repeat(f64::INFINITY), Vec3::repeat(f64::NEG_INFINITY)),
        |(lo, hi), &j| (lo.inf(&points[j]), hi.sup(&points[j])),
    );
    let id = nodes.len() as u32;
    nodes.push(PricedNode {
        lo,
        hi,
        start: start as u32,
        end: end as u32,
        left: NO_NODE,
        right: NO_NODE,
        parent,
        min_price: f64::INFINITY,
    });
    if end - start > LEAF_SIZE {
        let axis = (hi - lo).imax();
        let mid = (start + end) / 2;
        ids[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            points[a][axis].total_cmp(&points[b][axis]).then(a.cmp(&b))
        });
        let left = split(points, ids, start, mid, id, nodes);
        let right = split(points, ids, mid, end, id, nodes);
        nodes[id as usize].left = left;
        nodes[id as usize].right = right;
    }
    id
}

/// Candidate lists are kept within this many final ε of the best value.
const LIST_MARGIN: f64 = 64.0;

/// Best-value queries for the persons, answered from their candidate lists
/// when those are conclusive and from the tree otherwise.
struct Bidder<'a> {
    persons: &'a [Vec3],
    tree: PricedTree,
    anchor: Vec<Vec3>,
    limit: Vec<f64>,
    list: Vec<Vec<u32>>,
    margin: f64,
    /// Whether bids consult the lists; off while ε is coarse.
    use_lists: bool,
    /// Absolute slack for rounding in the list certificate.
    tol: f64,
    stack: Vec<(u32, f64)>,
}

impl Bidder<'_> {
    fn value(&self, i: usize, j: usize) -> f64 {
        let k = self.tree.slot[j] as usize;
        dist2(&self.persons[i], &self.tree.points[k]).sqrt() + self.tree.prices[k]
    }

    /// Bound every object outside person `i`'s list still exceeds.
    fn list_limit(&self, i: usize) -> f64 {
        let moved = dist2(&self.persons[i], &self.anchor[i]).sqrt();
        self.limit[i] - moved - self.tol
    }

    fn refresh(&mut self, i: usize) -> (usize, f64, f64) {
        let q = self.persons[i];
        let r = self.tree.collect(&q, self.margin, &mut self.list[i], &mut self.stack);
        self.anchor[i] = q;
        self.limit[i] = r.1 + self.margin;
        r
    }

    /// Best object for person `i`, its value and the runner-up value.
    fn best_two(&mut self, i: usize) -> (usize, f64, f64) {
        if !self.use_lists {
            return self.tree.best_two(&self.persons[i], &mut self.stack);
        }
        let (mut bj, mut best, mut second) = (usize::MAX, f64::INFINITY, f64::INFINITY);
        for &j in &self.list[i] {
            let v = self.value(i, j as usize);
            if v < best {
                second = best;
                best = v;
                bj = j as usize;
            } else if v < second {
                second = v;
            }
        }
        if second <= self.list_limit(i) {
            return (bj, best, second);
        }
        self.refresh(i)
    }

    /// `min_j` value for person `i`, who currently holds value `held`.
    fn best(&mut self, i: usize, held: f64) -> f64 {
        let m = self.list[i]
            .iter()
            .fold(f64::INFINITY, |m, &j| m.min(self.value(i, j as usize)));
        if m <= self.list_limit(i) {
            return m;
        }
        if self.use_lists {
            return self.refresh(i).1;
        }
        self.tree.best(&self.persons[i], held, &mut self.stack)
    }
}

/// Auction assignment of `persons` to `objects` under Euclidean cost.
///
/// With a `warm` state from an earlier solve against the same objects, a
/// matching still certified within the cold-solve bound (`n` times the
/// final ε) is returned as is; otherwise scaling resumes from the old
/// prices at the size of the largest violation. A state built for other
/// objects is ignored.
pub fn auction(persons: &[Vec3], objects: &[Vec3], opts: &AuctionOptions, warm: Option<&AuctionState>) -> AuctionSolution {
    let n = persons.len();
    assert_eq!(n, objects.len(), "auction needs equal-size sets");
    const NONE: usize = usize::MAX;
    let cost = |i: usize, j: usize| dist2(&persons[i], &objects[j]).sqrt();

    let diameter = {
        let all = persons.iter().chain(objects);
        let (lo, hi) = all.fold(
            (Vec3::repeat(f64::INFINITY), Vec3::repeat(f64::NEG_INFINITY)),
            |(a, b), p| (a.inf(p), b.sup(p)),
        );
        if n == 0 { 0.0 } else { (hi - lo).norm() }
    };
    let final_eps = (opts.relative_epsilon * diameter).max(f64::MIN_POSITIVE);
    let scaling = opts.scaling.max(1.5);
    let print = fingerprint(objects);
    let warm = warm.filter(|w| w.fingerprint == print && w.assignment.len() == n && w.prices.len() == n);

    let mut b = Bidder {
        persons,
        tree: PricedTree::new(objects, warm.map_or(&vec![0.0; n][..], |w| &w.prices[..])),
        anchor: warm.map_or_else(|| vec![Vec3::zeros(); n], |w| w.anchor.clone()),
        limit: warm.map_or_else(|| vec![f64::NEG_INFINITY; n], |w| w.limit.clone()),
        list: warm.map_or_else(|| vec![Vec::new(); n], |w| w.list.clone()),
        margin: LIST_MARGIN * final_eps,
        use_lists: true,
        tol: 1e-12 * (1.0 + diameter),
        stack: Vec::new(),
    };
    let mut owner = vec![NONE; n];
    let mut assigned = vec![NONE; n];
    let mut queue = std::collections::VecDeque::with_capacity(n);
    let mut eps = (diameter / scaling).max(final_eps);

    let finish = |b: Bidder, assigned: Vec<usize>, total: f64, gap: f64| AuctionSolution {
        cost: total,
        gap: gap.max(0.0),
        state: AuctionState {
            fingerprint: print,
            assignment: assigned.clone(),
            anchor: b.anchor,
            limit: b.limit,
            list: b.list,
            prices: b.tree.into_prices(),
        },
        assignment: assigned,
    };

    if let Some(w) = warm {
        let (mut worst, mut slack_sum, mut total) = (0.0f64, 0.0, 0.0);
        for (i, &j) in w.assignment.iter().enumerate() {
            let c = cost(i, j);
            let held = c + b.tree.price(j);
            let slack = held - b.best(i, held);
            total += c;
            slack_sum += slack;
            worst = worst.max(slack);
            owner[j] = i;
            assigned[i] = j;
        }
        if slack_sum <= n as f64 * final_eps {
            return finish(b, assigned, total, slack_sum);
        }
        eps = worst.clamp(final_eps, eps);
    }

    loop {
        // Lists only pay off once increments are small against the margin.
        b.use_lists = 2.0 * eps <= b.margin;
        // Persons still ε-happy at this phase's ε keep their objects.
        queue.clear();
        for (i, a) in assigned.iter_mut().enumerate() {
            let j = *a;
            if j == NONE {
                queue.push_back(i);
                continue;
            }
            let held = cost(i, j) + b.tree.price(j);
            if held > b.best(i, held) + eps {
                owner[j] = NONE;
                *a = NONE;
                queue.push_back(i);
            }
        }
        while let Some(i) = queue.pop_front() {
            let (j, best, second) = b.best_two(i);
            b.tree.raise(j, if second.is_finite() { second - best + eps } else { eps });
            let prev = owner[j];
            if prev != NONE {
                assigned[prev] = NONE;
                queue.push_back(prev);
            }
            owner[j] = i;
            assigned[i] = j;
        }
        if eps <= final_eps {
            break;
        }
        eps = (eps / scaling).max(final_eps);
    }

    // Dual bound: uᵢ = minⱼ (cᵢⱼ + pⱼ), vⱼ = −pⱼ; the gap is Σ of slacks.
    b.use_lists = true;
    let (mut total, mut gap) = (0.0, 0.0);
    for (i, &j) in assigned.iter().enumerate() {
        let c = cost(i, j);
        let held = c + b.tree.price(j);
        total += c;
        gap += held - b.best(i, held);
    }
    finish(b, assigned, total, gap)
}

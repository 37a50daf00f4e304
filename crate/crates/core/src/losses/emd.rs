use crate::error::{Error, Result};
use crate::mesh::{dist2, Vec3};

use super::assignment::{auction, solve_dense, AuctionOptions, AuctionState};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EmdOptions {
    /// Largest size solved exactly; bigger inputs use the auction.
    pub exact_threshold: usize,
    pub auction: AuctionOptions,
}

impl Default for EmdOptions {
    fn default() -> Self {
        EmdOptions {
            exact_threshold: 512,
            auction: AuctionOptions::default(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct EmdResult {
    pub value: f64,
    /// Gradient with respect to the first point set.
    pub grad: Vec<Vec3>,
    /// Index in the second set matched to each point of the first.
    pub assignment: Vec<usize>,
    /// Upper bound on `value - optimum`; zero for exact solves.
    pub gap: f64,
    pub exact: bool,
    /// Optimal dual potentials (rows, columns) of exact solves.
    pub potentials: Option<(Vec<f64>, Vec<f64>)>,
    /// Auction state; warm-starts the next solve against the same target.
    pub auction: Option<AuctionState>,
}

/// Earth Mover's distance: the minimum over bijections of the summed
/// (unsquared) Euclidean distances, with its gradient w.r.t. `pc`.
pub fn emd(pc: &[Vec3], pc_t: &[Vec3]) -> Result<EmdResult> {
    emd_with(pc, pc_t, &EmdOptions::default(), None)
}

pub fn emd_with(
    pc: &[Vec3],
    pc_t: &[Vec3],
    opts: &EmdOptions,
    warm: Option<&EmdResult>,
) -> Result<EmdResult> {
    if pc.is_empty() || pc_t.is_empty() {
        return Err(Error::EmptyInput("EMD point cloud"));
    }
    if pc.len() != pc_t.len() {
        return Err(Error::CardinalityMismatch {
            left: pc.len(),
            right: pc_t.len(),
        });
    }
    // Every pairwise distance is bounded by the joint bounding-box diagonal;
    // the solvers need all of them finite.
    let (lo, hi) = pc
        .iter()
        .chain(pc_t)
        .fold((pc[0], pc[0]), |(lo, hi), p| (lo.inf(p), hi.sup(p)));
    let all_finite = pc.iter().chain(pc_t).all(|p| p.iter().all(|c| c.is_finite()));
    if !all_finite || !dist2(&lo, &hi).is_finite() {
        return Err(Error::NonFinite {
            step: 0,
            detail: "EMD distances overflow (non-finite or huge coordinates)".into(),
        });
    }
    let n = pc.len();
    let (assignment, gap, exact, potentials, state) = if n <= opts.exact_threshold {
        let cost: Vec<f64> = pc
            .iter()
            .flat_map(|p| pc_t.iter().map(move |q| dist2(p, q).sqrt()))
            .collect();
        let sol = solve_dense(n, &cost);
        (
            sol.assignment,
            0.0,
            true,
            Some((sol.row_potential, sol.col_potential)),
            None,
        )
    } else {
        let sol = auction(pc, pc_t, &opts.auction, warm.and_then(|w| w.auction.as_ref()));
        (sol.assignment, sol.gap, false, None, Some(sol.state))
    };

    let mut value = 0.0;
    let grad = pc
        .iter()
        .zip(&assignment)
        .map(|(p, &j)| {
            let d = p - pc_t[j];
            let len = dist2(p, &pc_t[j]).sqrt();
            value += len;
            if len > 0.0 {
                d / len
            } else {
                Vec3::zeros()
            }
        })
        .collect();
    Ok(EmdResult {
        value,
        grad,
        assignment,
        gap,
        exact,
        potentials,
        auction: state,
    })
}

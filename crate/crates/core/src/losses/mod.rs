//! Shape and regularization losses, each returning its value together with
//! exact gradients, and their weighted combination.

pub mod assignment;
mod chamfer;
mod emd;
mod laplacian;
mod lpi;
mod symmetry;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

pub use chamfer::{chamfer, chamfer_indexed, chamfer_with, nearest_neighbors, ChamferOptions, IndexedCloud, NnMethod};
pub use emd::{emd, emd_with, EmdOptions, EmdResult};
pub use laplacian::{laplacian_loss, laplacian_loss_offsets, laplacian_loss_with, Laplacian, LaplacianKind};
pub use lpi::{lpi_from_outputs, lpi_loss, LpiConfig, LpiLoss};
pub use symmetry::{symmetry_loss, symmetry_loss_with, SymmetryLoss};

use crate::error::{Error, Result};
use crate::mesh::Vec3;

/// A scalar loss and its gradient with respect to one point set.
#[derive(Clone, Debug, PartialEq)]
pub struct LossGrad {
    pub value: f64,
    pub grad: Vec<Vec3>,
}

/// The seven terms of the combined objective, in summation order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum LossTerm {
    CdMesh,
    EmdMesh,
    CdPoints,
    EmdPoints,
    Sym,
    Lap,
    Lpi,
}

impl LossTerm {
    pub const ALL: [LossTerm; 7] = [
        LossTerm::CdMesh,
        LossTerm::EmdMesh,
        LossTerm::CdPoints,
        LossTerm::EmdPoints,
        LossTerm::Sym,
        LossTerm::Lap,
        LossTerm::Lpi,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LossTerm::CdMesh => "cd_mesh",
            LossTerm::EmdMesh => "emd_mesh",
            LossTerm::CdPoints => "cd_points",
            LossTerm::EmdPoints => "emd_points",
            LossTerm::Sym => "sym",
            LossTerm::Lap => "lap",
            LossTerm::Lpi => "lpi",
        }
    }
}

impl fmt::Display for LossTerm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Nonnegative weight per loss term.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub cd_mesh: f64,
    pub emd_mesh: f64,
    pub cd_points: f64,
    pub emd_points: f64,
    pub sym: f64,
    pub lap: f64,
    pub lpi: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights::uniform(1.0)
    }
}

impl LossWeights {
    pub fn uniform(w: f64) -> Self {
        LossWeights {
            cd_mesh: w,
            emd_mesh: w,
            cd_points: w,
            emd_points: w,
            sym: w,
            lap: w,
            lpi: w,
        }
    }

    /// Only `term` weighted, at 1.
    pub fn only(term: LossTerm) -> Self {
        let mut w = LossWeights::uniform(0.0);
        *w.get_mut(term) = 1.0;
        w
    }

    pub fn get(&self, term: LossTerm) -> f64 {
        match term {
            LossTerm::CdMesh => self.cd_mesh,
            LossTerm::EmdMesh => self.emd_mesh,
            LossTerm::CdPoints => self.cd_points,
            LossTerm::EmdPoints => self.emd_points,
            LossTerm::Sym => self.sym,
            LossTerm::Lap => self.lap,
            LossTerm::Lpi => self.lpi,
        }
    }

    pub fn get_mut(&mut self, term: LossTerm) -> &mut f64 {
        match term {
            LossTerm::CdMesh => &mut self.cd_mesh,
            LossTerm::EmdMesh => &mut self.emd_mesh,
            LossTerm::CdPoints => &mut self.cd_points,
            LossTerm::EmdPoints => &mut self.emd_points,
            LossTerm::Sym => &mut self.sym,
            LossTerm::Lap => &mut self.lap,
            LossTerm::Lpi => &mut self.lpi,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for t in LossTerm::ALL {
            let w = self.get(t);
            if !(w >= 0.0 && w.is_finite()) {
                return Err(Error::InvalidArgument(format!("weight {t} must be finite and >= 0, got {w}")));
            }
        }
        Ok(())
    }

    /// True when the term contributes to the total.
    pub fn active(&self, term: LossTerm) -> bool {
        self.get(term) != 0.0
    }
}

/// One computed loss term with gradients keyed by the tensor they refer to.
#[derive(Clone, Debug, PartialEq)]
pub struct TermValue {
    pub term: LossTerm,
    pub value: f64,
    pub gradients: Vec<(String, Vec<Vec3>)>,
    /// Suboptimality bound of any approximate EMD inside the term.
    pub emd_gap: f64,
}

impl TermValue {
    pub fn new(term: LossTerm, value: f64) -> Self {
        TermValue {
            term,
            value,
            gradients: Vec::new(),
            emd_gap: 0.0,
        }
    }

    pub fn with_gradient(mut self, role: impl Into<String>, grad: Vec<Vec3>) -> Self {
        self.gradients.push((role.into(), grad));
        self
    }

    pub fn with_gap(mut self, gap: f64) -> Self {
        self.emd_gap = gap;
        self
    }
}

/// Weighted loss terms, their total and the combined gradients.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LossReport {
    pub terms: BTreeMap<LossTerm, f64>,
    pub total: f64,
    pub gradients: BTreeMap<String, Vec<Vec3>>,
    /// Summed suboptimality bound of approximate EMD solves (0 when exact).
    pub emd_gap: f64,
}

impl LossReport {
    pub fn term(&self, term: LossTerm) -> Option<f64> {
        self.terms.get(&term).copied()
    }

    pub fn gradient(&self, role: &str) -> Option<&[Vec3]> {
        self.gradients.get(role).map(Vec::as_slice)
    }
}

/// Weighted sum of the terms in [`LossTerm::ALL`] order. Terms with zero
/// weight are reported but contribute nothing; a missing term with nonzero
/// weight is an error.
pub fn combine(terms: Vec<TermValue>, weights: &LossWeights) -> Result<LossReport> {
    weights.validate()?;
    let mut by_term: BTreeMap<LossTerm, TermValue> = BTreeMap::new();
    for t in terms {
        if by_term.insert(t.term, t.clone()).is_some() {
            return Err(Error::InvalidArgument(format!("loss term {} given twice", t.term)));
        }
    }
    let mut report = LossReport::default();
    for term in LossTerm::ALL {
        let w = weights.get(term);
        let Some(tv) = by_term.remove(&term) else {
            if w != 0.0 {
                return Err(Error::MissingTerm(term.name()));
            }
            continue;
        };
        report.terms.insert(term, tv.value);
        report.emd_gap += tv.emd_gap;
        if w == 0.0 {
            continue;
        }
        report.total += w * tv.value;
        for (role, grad) in tv.gradients {
            match report.gradients.get_mut(&role) {
                Some(acc) => {
                    if acc.len() != grad.len() {
                        return Err(Error::shape("combine", acc.len(), grad.len()));
                    }
                    for (a, g) in acc.iter_mut().zip(&grad) {
                        *a += g * w;
                    }
                }
                None => {
                    report.gradients.insert(role, grad.iter().map(|g| g * w).collect());
                }
            }
        }
    }
    Ok(report)
}

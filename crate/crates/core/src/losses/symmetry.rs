use crate::error::Result;
use crate::mesh::{SymmetryPlane, Vec3};

use super::chamfer::{chamfer_with, ChamferOptions};
use super::emd::{emd_with, EmdOptions, EmdResult};

#[derive(Clone, Debug)]
pub struct SymmetryLoss {
    pub value: f64,
    pub chamfer: f64,
    pub emd: f64,
    pub emd_gap: f64,
    /// Gradient w.r.t. the unmirrored points.
    pub grad: Vec<Vec3>,
    /// Full EMD solve of the mirrored points; warm-starts the next call.
    pub emd_solution: EmdResult,
}

/// Chamfer plus EMD between the mirror image of `pc` and `pc_t`.
pub fn symmetry_loss(pc: &[Vec3], pc_t: &[Vec3], plane: SymmetryPlane) -> Result<SymmetryLoss> {
    symmetry_loss_with(pc, pc_t, plane, ChamferOptions::default(), &EmdOptions::default(), None)
}

pub fn symmetry_loss_with(
    pc: &[Vec3],
    pc_t: &[Vec3],
    plane: SymmetryPlane,
    chamfer_opts: ChamferOptions,
    emd_opts: &EmdOptions,
    warm: Option<&EmdResult>,
) -> Result<SymmetryLoss> {
    let mirrored: Vec<Vec3> = pc.iter().map(|p| plane.reflect(p)).collect();
    let cd = chamfer_with(&mirrored, pc_t, chamfer_opts)?;
    let em = emd_with(&mirrored, pc_t, emd_opts, warm)?;
    // The reflection is its own transpose.
    let grad = cd
        .grad
        .iter()
        .zip(&em.grad)
        .map(|(a, b)| plane.reflect(&(a + b)))
        .collect();
    Ok(SymmetryLoss {
        value: cd.value + em.value,
        chamfer: cd.value,
        emd: em.value,
        emd_gap: em.gap,
        grad,
        emd_solution: em,
    })
}

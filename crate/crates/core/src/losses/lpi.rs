use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::Vec3;

/// Configuration of the local permutation invariant loss.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LpiConfig {
    /// Length of the probe offsets δ.
    pub epsilon: f64,
    /// Coordinate axes probed (0 = x, 1 = y, 2 = z), each in the positive direction.
    pub axes: Vec<usize>,
    /// Penalize `δ + F(V+δ) − F(V)` (the moved probe) instead of `F(V+δ) − F(V)`.
    pub include_delta: bool,
}

impl Default for LpiConfig {
    fn default() -> Self {
        LpiConfig {
            epsilon: 0.05,
            axes: vec![0, 1, 2],
            include_delta: false,
        }
    }
}

impl LpiConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "LPI epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        if let Some(a) = self.axes.iter().find(|&&a| a > 2) {
            return Err(Error::InvalidArgument(format!("LPI axis {a} is not 0, 1 or 2")));
        }
        Ok(())
    }

    pub fn deltas(&self) -> Vec<Vec3> {
        self.axes
            .iter()
            .map(|&a| {
                let mut d = Vec3::zeros();
                d[a] = self.epsilon;
                d
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LpiLoss {
    pub value: f64,
    /// Gradient w.r.t. the decoder output at the unshifted positions.
    pub base_grad: Vec<Vec3>,
    /// Gradient w.r.t. the decoder output at `V + δ`, one entry per axis.
    pub shifted_grads: Vec<Vec<Vec3>>,
}

/// `Σ −min(F(V+δ) − F(V), 0)` over vertices, probes and components, from
/// already evaluated decoder outputs.
pub fn lpi_from_outputs(base: &[Vec3], shifted: &[Vec<Vec3>], config: &LpiConfig) -> Result<LpiLoss> {
    let deltas = config.deltas();
    if shifted.len() != deltas.len() {
        return Err(Error::shape("lpi_loss", deltas.len(), shifted.len()));
    }
    let mut value = 0.0;
    let mut base_grad = vec![Vec3::zeros(); base.len()];
    let mut shifted_grads = Vec::with_capacity(shifted.len());
    for (out, delta) in shifted.iter().zip(&deltas) {
        if out.len() != base.len() {
            return Err(Error::shape("lpi_loss", base.len(), out.len()));
        }
        let mut g = vec![Vec3::zeros(); base.len()];
        for (v, (fs, fb)) in out.iter().zip(base).enumerate() {
            let mut diff = fs - fb;
            if config.include_delta {
                diff += delta;
            }
            for c in 0..3 {
                if diff[c] < 0.0 {
                    value -= diff[c];
                    g[v][c] = -1.0;
                    base_grad[v][c] += 1.0;
                }
            }
        }
        shifted_grads.push(g);
    }
    Ok(LpiLoss {
        value,
        base_grad,
        shifted_grads,
    })
}

/// Evaluates `decoder` at `V` and at `V + δ` for every probe and returns the
/// loss with its gradients w.r.t. those decoder outputs.
pub fn lpi_loss<F>(mut decoder: F, vertices: &[Vec3], config: &LpiConfig) -> Result<LpiLoss>
where
    F: FnMut(&[Vec3]) -> Result<Vec<Vec3>>,
{
    config.validate()?;
    let base = decoder(vertices)?;
    let shifted = config
        .deltas()
        .iter()
        .map(|d| {
            let moved: Vec<Vec3> = vertices.iter().map(|v| v + d).collect();
            decoder(&moved)
        })
        .collect::<Result<Vec<_>>>()?;
    lpi_from_outputs(&base, &shifted, config)
}

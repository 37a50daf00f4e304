use crate::dmso::{sample_surface, scatter_vec3, SampleBatch};
use crate::error::{Error, Result};
use crate::losses::{combine, LossReport, LossTerm};
use crate::mesh::{PointCloud, TriMesh, Vec3};
use crate::nn::{Adam, AdamConfig};
use crate::seed::{self, Stream};

use super::apply_offsets;
use super::context::{source_samples, LossConfig, LossContext};
use super::trace::{LossTrace, TraceRow};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum JobMode {
    /// Offsets predicted by a trained network.
    Network,
    /// Offsets optimized directly as free variables.
    #[default]
    Direct,
    Train,
}

/// One source/target deformation problem.
#[derive(Clone, Debug)]
pub struct DeformJob {
    pub source: TriMesh,
    pub target: PointCloud,
    pub losses: LossConfig,
    pub iterations: usize,
    pub step_size: f64,
    pub seed: u64,
    /// Draw fresh surface samples every iteration. Otherwise the first
    /// draw (faces and barycentric coordinates) is kept and only moves with
    /// the vertices.
    pub resample: bool,
    pub mode: JobMode,
}

impl DeformJob {
    pub fn new(source: TriMesh, target: PointCloud) -> Self {
        DeformJob {
            source,
            target,
            losses: LossConfig::default(),
            iterations: 500,
            step_size: 1e-3,
            seed: 0,
            resample: true,
            mode: JobMode::Direct,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.losses.validate()?;
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(Error::InvalidArgument(format!("step size must be > 0, got {}", self.step_size)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct DirectOutcome {
    /// Deformed mesh at the lowest-loss iterate.
    pub mesh: TriMesh,
    pub offsets: Vec<Vec3>,
    pub best_step: usize,
    pub best_report: LossReport,
    pub trace: LossTrace,
}

/// Optimizes per-vertex offsets with Adam, starting from zero. The LPI term
/// is not evaluated in this mode since there is no decoder to probe.
pub fn optimize_direct(job: &DeformJob) -> Result<DirectOutcome> {
    let mut trace = LossTrace::default();
    optimize_direct_traced(job, &mut trace)
}

/// [`optimize_direct`] that records into `trace`, which keeps the rows
/// evaluated before a divergence error.
pub fn optimize_direct_traced(job: &DeformJob, trace: &mut LossTrace) -> Result<DirectOutcome> {
    if job.mode != JobMode::Direct {
        return Err(Error::InvalidArgument("optimize_direct needs a direct-mode job".into()));
    }
    job.validate()?;
    let mut cfg = job.losses.clone();
    cfg.weights.lpi = 0.0;
    let mut ctx = LossContext::new(&job.source, &job.target, &cfg, job.seed)?;
    let source = &job.source;
    let n_v = source.num_vertices();
    let mut flat = vec![0.0; n_v * 3];
    let mut adam = Adam::new(AdamConfig::with_lr(job.step_size))?;
    let mut best: Option<(f64, usize, Vec<Vec3>, LossReport)> = None;
    let mut kept: Option<SampleBatch> = None;

    for k in 0..=job.iterations {
        let draw = if job.resample { k as u64 } else { 0 };
        let offsets: Vec<Vec3> = flat.chunks_exact(3).map(|c| Vec3::new(c[0], c[1], c[2])).collect();
        let deformed = apply_offsets(source, &offsets)?;

        let evaluated = (|| -> Result<_> {
            let mut terms = Vec::new();
            let w = cfg.weights;
            if w.active(LossTerm::CdMesh) || w.active(LossTerm::EmdMesh) || w.active(LossTerm::Sym) {
                let batch = match kept.take() {
                    Some(b) => b,
                    None => sample_surface(&deformed, cfg.mesh_samples, seed::derive_seed(job.seed, Stream::MeshPass, draw))?,
                };
                terms.extend(ctx.mesh_pass_terms(deformed.vertices(), &batch)?);
                if !job.resample {
                    kept = Some(batch);
                }
            }
            let point_batch = if cfg.points_active() {
                // Source samples carried along by the offsets.
                let batch = source_samples(source, cfg.point_samples, job.seed, Stream::PointPass, draw)?;
                let pts = batch.positions_on(deformed.vertices())?;
                ctx.point_pass_terms(&pts, "points", &mut terms)?;
                Some(batch)
            } else {
                None
            };
            if let Some(t) = ctx.laplacian_term(&offsets)? {
                terms.push(t);
            }
            Ok((combine(terms, &cfg.weights)?, point_batch))
        })();
        let (report, point_batch) = evaluated.map_err(|e| at_step(e, k))?;
        trace.push(TraceRow::from_report(k, &report));
        if !report.total.is_finite() {
            return Err(Error::NonFinite {
                step: k,
                detail: format!("combined loss is {}", report.total),
            });
        }
        if best.as_ref().is_none_or(|b| report.total < b.0) {
            best = Some((report.total, k, offsets.clone(), report.clone()));
        }
        if k == job.iterations {
            break;
        }

        let mut grad = report
            .gradient("vertices")
            .map_or_else(|| vec![Vec3::zeros(); n_v], <[Vec3]>::to_vec);
        if let (Some(batch), Some(gp)) = (&point_batch, report.gradient("points")) {
            for (a, b) in grad.iter_mut().zip(scatter_vec3(batch, gp, n_v)?) {
                *a += b;
            }
        }
        let g: Vec<f64> = grad.iter().flat_map(|v| [v.x, v.y, v.z]).collect();
        adam.step(&mut [&mut flat], &[&g]).map_err(|e| at_step(e, k))?;
    }

    let (_, best_step, offsets, best_report) = best.expect("at least one iterate is evaluated");
    Ok(DirectOutcome {
        mesh: apply_offsets(source, &offsets)?,
        offsets,
        best_step,
        best_report,
        trace: std::mem::take(trace),
    })
}

/// Attributes a numerical failure to optimization step `k`.
fn at_step(e: Error, k: usize) -> Error {
    match e {
        Error::NonFinite { detail, .. } => Error::NonFinite { step: k, detail },
        e => e,
    }
}

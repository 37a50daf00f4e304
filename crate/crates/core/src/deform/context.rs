use rand::seq::index;
use rand::Rng;

use crate::dmso::{sample_surface, scatter_vec3, SampleBatch};
use crate::error::{Error, Result};
use crate::losses::{
    chamfer_indexed, emd_with, EmdResult, laplacian_loss_offsets, symmetry_loss_with, ChamferOptions, EmdOptions,
    IndexedCloud, Laplacian, LaplacianKind, LossTerm, LossWeights, LpiConfig, NnMethod, TermValue,
};
use crate::mesh::{PointCloud, SymmetryPlane, TriMesh, Vec3};
use crate::par::Exec;
use crate::seed::{self, Stream};

/// Which deformed sample the symmetry loss is evaluated on.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum SymmetrySource {
    #[default]
    MeshPass,
    PointPass,
    Both,
}

impl std::str::FromStr for SymmetrySource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mesh" => Ok(SymmetrySource::MeshPass),
            "points" => Ok(SymmetrySource::PointPass),
            "both" => Ok(SymmetrySource::Both),
            other => Err(Error::InvalidArgument(format!(
                "unknown symmetry source {other:?} (expected mesh, points or both)"
            ))),
        }
    }
}

/// Everything that shapes the combined objective.
#[derive(Clone, Debug, PartialEq)]
pub struct LossConfig {
    pub weights: LossWeights,
    /// Samples of the deformed mesh; also the size of the encoded clouds.
    pub mesh_samples: usize,
    /// Source points pushed through the decoder in the point pass.
    pub point_samples: usize,
    pub symmetry_plane: SymmetryPlane,
    pub symmetry_source: SymmetrySource,
    pub laplacian: LaplacianKind,
    pub lpi: LpiConfig,
    pub nn_method: NnMethod,
    pub emd: EmdOptions,
    pub exec: Exec,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            weights: LossWeights::default(),
            mesh_samples: 2048,
            point_samples: 2048,
            symmetry_plane: SymmetryPlane::default(),
            symmetry_source: SymmetrySource::default(),
            laplacian: LaplacianKind::default(),
            lpi: LpiConfig::default(),
            nn_method: NnMethod::default(),
            emd: EmdOptions::default(),
            exec: Exec::default(),
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        self.lpi.validate()?;
        if self.mesh_samples == 0 || self.point_samples == 0 {
            return Err(Error::InvalidArgument("sample counts must be at least 1".into()));
        }
        Ok(())
    }

    fn chamfer_options(&self) -> ChamferOptions {
        ChamferOptions {
            method: self.nn_method,
            exec: self.exec,
        }
    }

    pub(crate) fn points_active(&self) -> bool {
        let w = &self.weights;
        w.active(LossTerm::CdPoints)
            || w.active(LossTerm::EmdPoints)
            || (w.active(LossTerm::Sym) && self.symmetry_source != SymmetrySource::MeshPass)
    }
}

/// `n` points of `cloud`: the cloud itself when sizes match, a sorted random
/// subset when it is larger, draws with replacement when smaller.
pub fn subsample(cloud: &[Vec3], n: usize, seed: u64, idx: u64) -> Vec<Vec3> {
    if cloud.len() == n {
        return cloud.to_vec();
    }
    let mut rng = seed::rng(seed, Stream::Target, idx);
    if cloud.len() > n {
        let mut picks = index::sample(&mut rng, cloud.len(), n).into_vec();
        picks.sort_unstable();
        picks.into_iter().map(|i| cloud[i]).collect()
    } else {
        (0..n).map(|_| cloud[rng.random_range(0..cloud.len())]).collect()
    }
}

pub(crate) struct TargetSample {
    pub points: Vec<Vec3>,
    pub index: IndexedCloud,
}

impl TargetSample {
    fn new(points: Vec<Vec3>) -> Self {
        let index = IndexedCloud::new(&points);
        TargetSample { points, index }
    }
}

/// Last EMD solve of each kind, reused as the next warm start.
#[derive(Default)]
struct WarmStarts {
    mesh: Option<EmdResult>,
    points: Option<EmdResult>,
    mesh_sym: Option<EmdResult>,
    points_sym: Option<EmdResult>,
}

/// Fixed per-job state: target subsamples with their search trees, the
/// source Laplacian, and warm starts for repeated EMD solves.
pub(crate) struct LossContext {
    pub cfg: LossConfig,
    pub source: TriMesh,
    pub laplacian: Laplacian,
    pub mesh_target: TargetSample,
    point_target: Option<TargetSample>,
    warm: WarmStarts,
}

impl LossContext {
    pub fn new(source: &TriMesh, target: &PointCloud, cfg: &LossConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mesh_target = TargetSample::new(subsample(target.points(), cfg.mesh_samples, seed, 0));
        let point_target = (cfg.point_samples != cfg.mesh_samples)
            .then(|| TargetSample::new(subsample(target.points(), cfg.point_samples, seed, 1)));
        Ok(LossContext {
            cfg: cfg.clone(),
            source: source.clone(),
            laplacian: Laplacian::new(source, cfg.laplacian),
            mesh_target,
            point_target,
            warm: WarmStarts::default(),
        })
    }

    fn target(&self, mesh_pass: bool) -> &TargetSample {
        match (&self.point_target, mesh_pass) {
            (Some(t), false) => t,
            _ => &self.mesh_target,
        }
    }

    /// Chamfer and EMD of `points` against a target sample, gradients
    /// under `role`.
    fn cloud_terms(&mut self, points: &[Vec3], mesh_pass: bool, role: &str) -> Result<Vec<TermValue>> {
        let (cd_term, emd_term) = if mesh_pass {
            (LossTerm::CdMesh, LossTerm::EmdMesh)
        } else {
            (LossTerm::CdPoints, LossTerm::EmdPoints)
        };
        let weights = self.cfg.weights;
        let exec = self.cfg.exec;
        let method = self.cfg.nn_method;
        let emd_opts = self.cfg.emd;
        let target = self.target(mesh_pass);
        let mut out = Vec::new();
        if weights.active(cd_term) {
            let r = match method {
                NnMethod::KdTree => chamfer_indexed(points, &target.index, exec)?,
                NnMethod::BruteForce => crate::losses::chamfer_with(
                    points,
                    &target.points,
                    ChamferOptions { method, exec },
                )?,
            };
            out.push(TermValue::new(cd_term, r.value).with_gradient(role, r.grad));
        }
        if weights.active(emd_term) {
            let slot = if mesh_pass { &self.warm.mesh } else { &self.warm.points };
            let r = emd_with(points, &target.points, &emd_opts, slot.as_ref())?;
            out.push(TermValue::new(emd_term, r.value).with_gradient(role, r.grad.clone()).with_gap(r.gap));
            *(if mesh_pass { &mut self.warm.mesh } else { &mut self.warm.points }) = Some(r);
        }
        Ok(out)
    }

    fn symmetry(&mut self, points: &[Vec3], mesh_pass: bool) -> Result<(f64, Vec<Vec3>, f64)> {
        let plane = self.cfg.symmetry_plane;
        let copts = self.cfg.chamfer_options();
        let eopts = self.cfg.emd;
        let target = self.target(mesh_pass);
        let slot = if mesh_pass { &self.warm.mesh_sym } else { &self.warm.points_sym };
        let r = symmetry_loss_with(points, &target.points, plane, copts, &eopts, slot.as_ref())?;
        let out = (r.value, r.grad, r.emd_gap);
        *(if mesh_pass { &mut self.warm.mesh_sym } else { &mut self.warm.points_sym }) = Some(r.emd_solution);
        Ok(out)
    }

    /// Mesh-pass terms for samples `batch` of the mesh with `deformed`
    /// vertices; gradients are scattered to role `"vertices"`.
    pub fn mesh_pass_terms(&mut self, deformed: &[Vec3], batch: &SampleBatch) -> Result<Vec<TermValue>> {
        let n_v = deformed.len();
        let pts = batch.positions_on(deformed)?;
        let mut terms = self.cloud_terms(&pts, true, "samples")?;
        let sym_here = self.cfg.weights.active(LossTerm::Sym) && self.cfg.symmetry_source != SymmetrySource::PointPass;
        if sym_here {
            let (v, g, gap) = self.symmetry(&pts, true)?;
            terms.push(TermValue::new(LossTerm::Sym, v).with_gradient("samples", g).with_gap(gap));
        }
        for t in &mut terms {
            for (role, g) in &mut t.gradients {
                *role = "vertices".into();
                *g = scatter_vec3(batch, g, n_v)?;
            }
        }
        Ok(terms)
    }

    /// Point-pass terms for deformed points, gradients under role `role`.
    /// A symmetry term computed here is merged into `terms` when present.
    pub fn point_pass_terms(&mut self, points: &[Vec3], role: &str, terms: &mut Vec<TermValue>) -> Result<()> {
        let mut out = self.cloud_terms(points, false, role)?;
        let sym_here = self.cfg.weights.active(LossTerm::Sym) && self.cfg.symmetry_source != SymmetrySource::MeshPass;
        if sym_here {
            let (v, g, gap) = self.symmetry(points, false)?;
            match terms.iter_mut().find(|t| t.term == LossTerm::Sym) {
                Some(t) => {
                    t.value += v;
                    t.emd_gap += gap;
                    t.gradients.push((role.to_string(), g));
                }
                None => out.push(TermValue::new(LossTerm::Sym, v).with_gradient(role, g).with_gap(gap)),
            }
        }
        terms.extend(out);
        Ok(())
    }

    /// Laplacian term for per-vertex offsets, gradient under `"vertices"`.
    pub fn laplacian_term(&self, offsets: &[Vec3]) -> Result<Option<TermValue>> {
        if !self.cfg.weights.active(LossTerm::Lap) {
            return Ok(None);
        }
        let r = laplacian_loss_offsets(&self.laplacian, offsets)?;
        Ok(Some(TermValue::new(LossTerm::Lap, r.value).with_gradient("vertices", r.grad)))
    }
}

/// Surface samples of the source for the given stream and step.
pub(crate) fn source_samples(mesh: &TriMesh, n: usize, seed: u64, stream: Stream, step: u64) -> Result<SampleBatch> {
    sample_surface(mesh, n, seed::derive_seed(seed, stream, step))
}

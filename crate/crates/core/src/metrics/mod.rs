//! Evaluation metrics: Chamfer distance, Earth Mover's distance and IoU of
//! solid voxelizations, computed on shapes normalized to the unit cube.

mod voxel;

use serde::Serialize;

pub use voxel::{metric_iou, triangle_box_overlap, voxelize_in_unit_cube, voxelize_solid, VoxelFrame, VoxelGrid};

use crate::dmso::sample_surface;
use crate::error::Result;
use crate::losses::{chamfer_with, emd_with, ChamferOptions, EmdOptions};
use crate::mesh::{normalize_unit_cube, PointCloud, TriMesh};
use crate::seed::{self, Stream};

/// Chamfer distance between two clouds.
pub fn metric_cd(a: &PointCloud, b: &PointCloud) -> Result<f64> {
    Ok(chamfer_with(a.points(), b.points(), ChamferOptions::default())?.value)
}

/// Earth Mover's distance between two clouds of equal size.
pub fn metric_emd(a: &PointCloud, b: &PointCloud) -> Result<f64> {
    Ok(emd_with(a.points(), b.points(), &EmdOptions::default(), None)?.value)
}

/// One evaluation record. Absent metrics serialize as `null` (JSON) or an
/// empty field (CSV).
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricReport {
    pub cd: f64,
    pub emd: Option<f64>,
    pub iou: Option<f64>,
    pub leak_flag: bool,
}

impl MetricReport {
    /// `{"cd":…,"emd":…,"iou":…,"leak_flag":…}` on one line.
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("metric report serializes")
    }

    pub fn csv_header() -> &'static str {
        "cd,emd,iou,leak_flag"
    }

    pub fn to_csv_row(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        format!("{},{},{},{}", self.cd, opt(self.emd), opt(self.iou), self.leak_flag)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalConfig {
    /// Surface samples drawn from each mesh.
    pub samples: usize,
    pub resolution: usize,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            samples: 2048,
            resolution: 32,
            seed: 0,
        }
    }
}

/// Outcome of an evaluation; `emd_error` explains a missing EMD.
#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub report: MetricReport,
    pub emd_error: Option<String>,
}

/// Metrics between two point clouds, each normalized on its own. EMD is
/// skipped with an explanation when the sizes differ.
pub fn evaluate_clouds(a: &PointCloud, b: &PointCloud) -> Result<Evaluation> {
    let (na, _) = normalize_unit_cube(a)?;
    let (nb, _) = normalize_unit_cube(b)?;
    let cd = metric_cd(&na, &nb)?;
    let (emd, emd_error) = match metric_emd(&na, &nb) {
        Ok(v) => (Some(v), None),
        Err(e) => (None, Some(e.to_string())),
    };
    Ok(Evaluation {
        report: MetricReport {
            cd,
            emd,
            iou: None,
            leak_flag: false,
        },
        emd_error,
    })
}

/// Metrics between two meshes: both are normalized independently, sampled
/// with the same seed and voxelized at the configured resolution.
pub fn evaluate_meshes(a: &TriMesh, b: &TriMesh, cfg: &EvalConfig) -> Result<Evaluation> {
    let (na, _) = normalize_unit_cube(a)?;
    let (nb, _) = normalize_unit_cube(b)?;
    let s = seed::derive_seed(cfg.seed, Stream::Metrics, 0);
    let pa = PointCloud::new(sample_surface(&na, cfg.samples, s)?.points().to_vec())?;
    let pb = PointCloud::new(sample_surface(&nb, cfg.samples, s)?.points().to_vec())?;
    let ga = voxelize_in_unit_cube(&na, cfg.resolution)?;
    let gb = voxelize_in_unit_cube(&nb, cfg.resolution)?;
    Ok(Evaluation {
        report: MetricReport {
            cd: metric_cd(&pa, &pb)?,
            emd: Some(metric_emd(&pa, &pb)?),
            iou: Some(metric_iou(&ga, &gb)?),
            leak_flag: ga.leaked || gb.leaked,
        },
        emd_error: None,
    })
}

use std::path::Path;

use crate::dmso::sample_surface;
use crate::error::{Error, Result};
use crate::losses::{combine, lpi_from_outputs, LossReport, LossTerm, TermValue};
use crate::mesh::{PointCloud, TriMesh, Vec3};
use crate::nn::{
    decode_with_shared, encode_pointcloud, Activation, Checkpoint, MlpParams, MlpVars, Tape, Tensor, Var,
    DECODER_WIDTHS, ENCODER_WIDTHS,
};
use crate::seed::{self, Stream};

use super::context::{source_samples, subsample, LossConfig, LossContext};
use super::apply_offsets;

const MODULES: [&str; 3] = ["source_encoder", "target_encoder", "decoder"];

/// Source encoder, target encoder and offset decoder.
#[derive(Clone, Debug, PartialEq)]
pub struct DeformNet {
    pub source_encoder: MlpParams,
    pub target_encoder: MlpParams,
    pub decoder: MlpParams,
}

impl DeformNet {
    /// Default widths, seeded initialization, zero last decoder layer.
    pub fn new(seed: u64) -> Self {
        DeformNet::with_widths(&ENCODER_WIDTHS, &DECODER_WIDTHS[..2], seed).expect("default widths are valid")
    }

    /// Encoders `3 → encoder…`, decoder `3 + 2·feat → decoder_hidden… → 3`.
    pub fn with_widths(encoder: &[usize], decoder_hidden: &[usize], seed: u64) -> Result<Self> {
        if encoder.is_empty() || encoder.contains(&0) || decoder_hidden.contains(&0) {
            return Err(Error::InvalidArgument("layer widths must be positive".into()));
        }
        let feat = *encoder.last().unwrap_or(&0);
        let mut dec_widths = decoder_hidden.to_vec();
        dec_widths.push(3);
        let r = Activation::Relu;
        Ok(DeformNet {
            source_encoder: MlpParams::init(3, encoder, r, r, false, &mut seed::rng(seed, Stream::Init, 0))?,
            target_encoder: MlpParams::init(3, encoder, r, r, false, &mut seed::rng(seed, Stream::Init, 1))?,
            decoder: MlpParams::init(
                3 + 2 * feat,
                &dec_widths,
                r,
                Activation::Identity,
                true,
                &mut seed::rng(seed, Stream::Init, 2),
            )?,
        })
    }

    fn modules(&self) -> [(&'static str, &MlpParams); 3] {
        [
            (MODULES[0], &self.source_encoder),
            (MODULES[1], &self.target_encoder),
            (MODULES[2], &self.decoder),
        ]
    }

    pub fn fingerprint(&self) -> String {
        crate::nn::fingerprint(&self.modules())
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint::new(&self.modules())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.checkpoint().save(path)
    }

    /// Loads parameters whose architecture must match `expected`.
    pub fn load(path: &Path, expected: &DeformNet) -> Result<Self> {
        let ck = Checkpoint::load(path, &expected.fingerprint())?;
        Ok(DeformNet {
            source_encoder: ck.module(MODULES[0])?.clone(),
            target_encoder: ck.module(MODULES[1])?.clone(),
            decoder: ck.module(MODULES[2])?.clone(),
        })
    }

    /// Parameter arrays of all three modules, in a fixed order.
    pub fn arrays(&self) -> Vec<&[f64]> {
        let mut v = self.source_encoder.arrays();
        v.extend(self.target_encoder.arrays());
        v.extend(self.decoder.arrays());
        v
    }

    pub fn arrays_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v = self.source_encoder.arrays_mut();
        v.extend(self.target_encoder.arrays_mut());
        v.extend(self.decoder.arrays_mut());
        v
    }
}

/// Result of one pass of the full pipeline.
#[derive(Clone, Debug)]
pub struct PipelineOutput {
    pub deformed: TriMesh,
    pub offsets: Vec<Vec3>,
    /// Deformed point-pass cloud; empty when no point-pass term is active.
    pub points: Vec<Vec3>,
    pub report: LossReport,
}

struct NetVars {
    source: MlpVars,
    target: MlpVars,
    decoder: MlpVars,
}

impl NetVars {
    fn record(net: &DeformNet, tape: &mut Tape, trainable: bool) -> Result<Self> {
        let rec = |m: &MlpParams, t: &mut Tape| if trainable { m.on_tape(t) } else { m.on_tape_frozen(t) };
        Ok(NetVars {
            source: rec(&net.source_encoder, tape)?,
            target: rec(&net.target_encoder, tape)?,
            decoder: rec(&net.decoder, tape)?,
        })
    }

    fn gradients(&self, net: &DeformNet, g: &crate::nn::Gradients) -> Vec<Vec<f64>> {
        let mut out = self.source.gradients(&net.source_encoder, g);
        out.extend(self.target.gradients(&net.target_encoder, g));
        out.extend(self.decoder.gradients(&net.decoder, g));
        out
    }
}

/// Source encoding sample for a pipeline seed.
fn source_encoding_points(source: &TriMesh, cfg: &LossConfig, seed: u64) -> Result<Vec<Vec3>> {
    Ok(source_samples(source, cfg.mesh_samples, seed, Stream::SourceEncoding, 0)?
        .points()
        .to_vec())
}

/// Offsets for `positions` from the concatenated global feature `shared`.
fn decode(tape: &mut Tape, vars: &NetVars, positions: &[Vec3], shared: Var) -> Result<Var> {
    let x = tape.constant(Tensor::from_points(positions))?;
    decode_with_shared(tape, x, shared, &vars.decoder)
}

fn encode(tape: &mut Tape, enc: &MlpVars, points: &[Vec3]) -> Result<Var> {
    let x = tape.constant(Tensor::from_points(points))?;
    encode_pointcloud(tape, x, enc)
}

/// Runs the pipeline once. `step` selects the per-step sample draws.
pub(crate) fn run_pipeline(
    net: &DeformNet,
    ctx: &mut LossContext,
    seed: u64,
    step: u64,
    want_grads: bool,
) -> Result<(PipelineOutput, Option<Vec<Vec<f64>>>)> {
    let cfg = ctx.cfg.clone();
    let source = ctx.source.clone();
    let mut tape = Tape::with_exec(cfg.exec);
    let vars = NetVars::record(net, &mut tape, want_grads)?;

    let enc_pts = source_samples(&source, cfg.mesh_samples, seed, Stream::SourceEncoding, step)?;
    let fs = encode(&mut tape, &vars.source, enc_pts.points())?;
    let ft = encode(&mut tape, &vars.target, &ctx.mesh_target.points)?;
    let shared = tape.concat(&[fs, ft])?;

    let o_var = decode(&mut tape, &vars, source.vertices(), shared)?;
    let offsets = tape.value(o_var).to_points()?;
    let deformed = apply_offsets(&source, &offsets)?;

    let w = cfg.weights;
    let mut terms: Vec<TermValue> = Vec::new();
    if w.active(LossTerm::CdMesh) || w.active(LossTerm::EmdMesh) || w.active(LossTerm::Sym) {
        let batch = sample_surface(&deformed, cfg.mesh_samples, seed::derive_seed(seed, Stream::MeshPass, step))?;
        terms.extend(ctx.mesh_pass_terms(deformed.vertices(), &batch)?);
    }

    let mut points = Vec::new();
    let mut p_var = None;
    if cfg.points_active() {
        let batch = source_samples(&source, cfg.point_samples, seed, Stream::PointPass, step)?;
        let v = decode(&mut tape, &vars, batch.points(), shared)?;
        let op = tape.value(v).to_points()?;
        points = batch.points().iter().zip(&op).map(|(p, o)| p + o).collect();
        ctx.point_pass_terms(&points, "points", &mut terms)?;
        p_var = Some(v);
    }

    if let Some(t) = ctx.laplacian_term(&offsets)? {
        terms.push(t);
    }

    let mut shifted_vars = Vec::new();
    if w.active(LossTerm::Lpi) {
        let mut shifted = Vec::new();
        for d in cfg.lpi.deltas() {
            let moved: Vec<Vec3> = source.vertices().iter().map(|v| v + d).collect();
            let v = decode(&mut tape, &vars, &moved, shared)?;
            shifted.push(tape.value(v).to_points()?);
            shifted_vars.push(v);
        }
        let lpi = lpi_from_outputs(&offsets, &shifted, &cfg.lpi)?;
        let mut tv = TermValue::new(LossTerm::Lpi, lpi.value).with_gradient("vertices", lpi.base_grad);
        for (k, g) in lpi.shifted_grads.into_iter().enumerate() {
            tv = tv.with_gradient(format!("lpi_shift_{k}"), g);
        }
        terms.push(tv);
    }

    let report = combine(terms, &w)?;
    if !report.total.is_finite() {
        return Err(Error::NonFinite {
            step: step as usize,
            detail: format!("combined loss is {}", report.total),
        });
    }

    let grads = if want_grads {
        let mut parts: Vec<(Var, Tensor)> = Vec::new();
        for (role, g) in &report.gradients {
            let var = match role.as_str() {
                "vertices" => o_var,
                "points" => p_var.ok_or_else(|| Error::Tape("point gradient without a point pass".into()))?,
                r => {
                    let k: usize = r
                        .strip_prefix("lpi_shift_")
                        .and_then(|k| k.parse().ok())
                        .ok_or_else(|| Error::Tape(format!("unknown gradient role {r}")))?;
                    shifted_vars[k]
                }
            };
            parts.push((var, Tensor::from_points(g)));
        }
        let loss = tape.external(report.total, parts)?;
        let g = tape.backward(loss)?;
        Some(vars.gradients(net, &g))
    } else {
        None
    };

    Ok((
        PipelineOutput {
            deformed,
            offsets,
            points,
            report,
        },
        grads,
    ))
}

/// One forward pass: encode source and target, decode per-vertex offsets,
/// and evaluate every weighted loss term.
pub fn forward_pipeline(
    net: &DeformNet,
    source: &TriMesh,
    target: &PointCloud,
    cfg: &LossConfig,
    seed: u64,
) -> Result<PipelineOutput> {
    let mut ctx = LossContext::new(source, target, cfg, seed)?;
    Ok(run_pipeline(net, &mut ctx, seed, 0, false)?.0)
}

/// [`forward_pipeline`] plus the gradient of the total with respect to every
/// parameter array, in [`DeformNet::arrays`] order.
pub fn pipeline_gradients(
    net: &DeformNet,
    source: &TriMesh,
    target: &PointCloud,
    cfg: &LossConfig,
    seed: u64,
) -> Result<(PipelineOutput, Vec<Vec<f64>>)> {
    let mut ctx = LossContext::new(source, target, cfg, seed)?;
    let (out, g) = run_pipeline(net, &mut ctx, seed, 0, true)?;
    Ok((out, g.unwrap_or_default()))
}

/// Target global feature as computed by [`forward_pipeline`].
pub fn target_feature(net: &DeformNet, target: &PointCloud, cfg: &LossConfig, seed: u64) -> Result<Tensor> {
    let pts = subsample(target.points(), cfg.mesh_samples, seed, 0);
    crate::nn::encode_points(&net.target_encoder, &pts, cfg.exec)
}

/// Deformed mesh for a given target feature.
pub fn deform_with_feature(
    net: &DeformNet,
    source: &TriMesh,
    target_feature: &Tensor,
    cfg: &LossConfig,
    seed: u64,
) -> Result<TriMesh> {
    let mut tape = Tape::with_exec(cfg.exec);
    let vars = NetVars::record(net, &mut tape, false)?;
    let enc_pts = source_encoding_points(source, cfg, seed)?;
    let fs = encode(&mut tape, &vars.source, &enc_pts)?;
    let ft = tape.constant(target_feature.clone())?;
    let shared = tape.concat(&[fs, ft])?;
    let o = decode(&mut tape, &vars, source.vertices(), shared)?;
    apply_offsets(source, &tape.value(o).to_points()?)
}

/// Deforms `source` toward the feature blend `(1−t)·feat(a) + t·feat(b)`.
pub fn interpolate_targets(
    net: &DeformNet,
    source: &TriMesh,
    target_a: &PointCloud,
    target_b: &PointCloud,
    t: f64,
    cfg: &LossConfig,
    seed: u64,
) -> Result<TriMesh> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::InvalidArgument(format!("interpolation weight {t} is outside [0, 1]")));
    }
    let fa = target_feature(net, target_a, cfg, seed)?;
    let fb = target_feature(net, target_b, cfg, seed)?;
    let mixed: Vec<f64> = fa
        .data()
        .iter()
        .zip(fb.data())
        .map(|(a, b)| (1.0 - t) * a + t * b)
        .collect();
    deform_with_feature(net, source, &Tensor::vector(mixed), cfg, seed)
}

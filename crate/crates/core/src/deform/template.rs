use crate::dmso::sample_surface;
use crate::error::{Error, Result};
use crate::losses::{chamfer_with, ChamferOptions};
use crate::mesh::{PointCloud, TriMesh, Vec3};
use crate::nn::{
    encode_pointcloud, encode_points, mlp_forward, Activation, Adam, AdamConfig, MlpParams, Tape, Tensor,
    ENCODER_WIDTHS,
};
use crate::par::{self, Exec};
use crate::seed::{self, Stream};

use super::context::subsample;

#[derive(Clone, Debug, PartialEq)]
pub struct Template {
    pub id: usize,
    pub name: String,
    pub category: Option<String>,
    pub mesh: TriMesh,
    /// Fixed surface samples used by the Chamfer mode and for embedding.
    pub samples: Vec<Vec3>,
    pub embedding: Option<Vec<f64>>,
}

/// Candidate source meshes, identified by their position in the set.
#[derive(Clone, Debug, PartialEq)]
pub struct TemplateSet {
    templates: Vec<Template>,
    encoder_fingerprint: Option<String>,
}

impl TemplateSet {
    /// Samples `samples` surface points of every mesh, seeded per template.
    pub fn new(meshes: Vec<(String, TriMesh, Option<String>)>, samples: usize, seed: u64) -> Result<Self> {
        if meshes.is_empty() {
            return Err(Error::EmptyInput("template set"));
        }
        let templates = meshes
            .into_iter()
            .enumerate()
            .map(|(id, (name, mesh, category))| {
                let s = sample_surface(&mesh, samples, seed::derive_seed(seed, Stream::Template, id as u64))?;
                Ok(Template {
                    id,
                    name,
                    category,
                    samples: s.points().to_vec(),
                    mesh,
                    embedding: None,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(TemplateSet {
            templates,
            encoder_fingerprint: None,
        })
    }

    /// Caches the encoder feature of every template's samples.
    pub fn with_embeddings(mut self, encoder: &MlpParams, exec: Exec) -> Result<Self> {
        let feats = par::map_indexed(exec, self.templates.len(), |i| {
            encode_points(encoder, &self.templates[i].samples, Exec::Sequential).map(Tensor::into_data)
        });
        for (t, f) in self.templates.iter_mut().zip(feats) {
            t.embedding = Some(f?);
        }
        self.encoder_fingerprint = Some(encoder.fingerprint());
        Ok(self)
    }

    pub fn templates(&self) -> &[Template] {
        &self.templates
    }

    pub fn len(&self) -> usize {
        self.templates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.templates.is_empty()
    }

    pub fn get(&self, id: usize) -> Option<&Template> {
        self.templates.get(id)
    }
}

#[derive(Clone, Copy, Debug)]
pub enum SelectionMode<'a> {
    /// Lowest Chamfer distance between the target and template samples.
    Chamfer,
    /// Nearest cached embedding under the given encoder.
    Embedding(&'a MlpParams),
}

/// Id of the template closest to `target`, optionally restricted to one
/// category. Ties go to the lowest id.
pub fn select_template(
    target: &PointCloud,
    set: &TemplateSet,
    mode: SelectionMode<'_>,
    category: Option<&str>,
) -> Result<usize> {
    let candidates: Vec<&Template> = set
        .templates
        .iter()
        .filter(|t| category.is_none_or(|c| t.category.as_deref() == Some(c)))
        .collect();
    if candidates.is_empty() {
        return Err(Error::EmptyInput("template set after category filter"));
    }
    let scores: Vec<f64> = match mode {
        SelectionMode::Chamfer => candidates
            .iter()
            .map(|t| chamfer_with(target.points(), &t.samples, ChamferOptions::default()).map(|r| r.value))
            .collect::<Result<_>>()?,
        SelectionMode::Embedding(encoder) => {
            if set.encoder_fingerprint.as_deref() != Some(encoder.fingerprint().as_str()) {
                return Err(Error::InvalidArgument(
                    "template embeddings were not computed with this encoder".into(),
                ));
            }
            let q = encode_points(encoder, target.points(), Exec::default())?;
            candidates
                .iter()
                .map(|t| {
                    let e = t.embedding.as_ref().expect("embeddings present with fingerprint");
                    e.iter().zip(q.data()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
                })
                .collect()
        }
    };
    let mut best = 0;
    for (i, s) in scores.iter().enumerate() {
        if *s < scores[best] {
            best = i;
        }
    }
    Ok(candidates[best].id)
}

#[derive(Clone, Debug, PartialEq)]
pub struct AutoencoderConfig {
    pub steps: usize,
    pub adam: AdamConfig,
    /// Points drawn from each training cloud.
    pub input_points: usize,
    /// Size of the reconstructed point set.
    pub output_points: usize,
    pub encoder_widths: Vec<usize>,
    pub decoder_hidden: Vec<usize>,
    pub seed: u64,
    pub exec: Exec,
}

impl Default for AutoencoderConfig {
    fn default() -> Self {
        AutoencoderConfig {
            steps: 200,
            adam: AdamConfig::with_lr(1e-3),
            input_points: 256,
            output_points: 256,
            encoder_widths: ENCODER_WIDTHS.to_vec(),
            decoder_hidden: vec![256],
            seed: 0,
            exec: Exec::default(),
        }
    }
}

/// Point-cloud autoencoder; the encoder half provides retrieval embeddings.
#[derive(Clone, Debug, PartialEq)]
pub struct Autoencoder {
    pub encoder: MlpParams,
    pub decoder: MlpParams,
}

impl Autoencoder {
    pub fn new(cfg: &AutoencoderConfig) -> Result<Self> {
        let r = Activation::Relu;
        let encoder = MlpParams::init(3, &cfg.encoder_widths, r, r, false, &mut seed::rng(cfg.seed, Stream::Init, 10))?;
        let mut widths = cfg.decoder_hidden.clone();
        widths.push(3 * cfg.output_points);
        let decoder = MlpParams::init(
            encoder.output_dim(),
            &widths,
            r,
            Activation::Identity,
            false,
            &mut seed::rng(cfg.seed, Stream::Init, 11),
        )?;
        Ok(Autoencoder { encoder, decoder })
    }

    /// Reconstruction Chamfer loss with gradients for both halves when
    /// `grads` is set.
    fn loss(&self, points: &[Vec3], exec: Exec, grads: bool) -> Result<(f64, Option<Vec<Vec<f64>>>)> {
        let mut tape = Tape::with_exec(exec);
        let (ev, dv) = if grads {
            (self.encoder.on_tape(&mut tape)?, self.decoder.on_tape(&mut tape)?)
        } else {
            (self.encoder.on_tape_frozen(&mut tape)?, self.decoder.on_tape_frozen(&mut tape)?)
        };
        let x = tape.constant(Tensor::from_points(points))?;
        let f = encode_pointcloud(&mut tape, x, &ev)?;
        let row = tape.reshape(f, vec![1, self.encoder.output_dim()])?;
        let y = mlp_forward(&mut tape, row, &dv)?;
        let k = self.decoder.output_dim() / 3;
        let recon = tape.reshape(y, vec![k, 3])?;
        let r = chamfer_with(&tape.value(recon).to_points()?, points, ChamferOptions::default())?;
        if !grads {
            return Ok((r.value, None));
        }
        let loss = tape.external(r.value, vec![(recon, Tensor::from_points(&r.grad))])?;
        let g = tape.backward(loss)?;
        let mut out = ev.gradients(&self.encoder, &g);
        out.extend(dv.gradients(&self.decoder, &g));
        Ok((r.value, Some(out)))
    }

    /// Summed reconstruction Chamfer over the training clouds as sampled by
    /// [`train_autoencoder`].
    pub fn reconstruction_loss(&self, clouds: &[PointCloud], cfg: &AutoencoderConfig) -> Result<f64> {
        let mut total = 0.0;
        for (i, c) in clouds.iter().enumerate() {
            total += self.loss(&training_sample(c, cfg, i), cfg.exec, false)?.0;
        }
        Ok(total)
    }
}

fn training_sample(cloud: &PointCloud, cfg: &AutoencoderConfig, i: usize) -> Vec<Vec3> {
    subsample(cloud.points(), cfg.input_points, seed::derive_seed(cfg.seed, Stream::Training, i as u64), 0)
}

/// Trains the autoencoder with a Chamfer reconstruction loss, cycling
/// through `clouds`. Returns the model and the per-step losses.
pub fn train_autoencoder(clouds: &[PointCloud], cfg: &AutoencoderConfig) -> Result<(Autoencoder, Vec<f64>)> {
    if clouds.is_empty() {
        return Err(Error::EmptyInput("autoencoder training set"));
    }
    let mut ae = Autoencoder::new(cfg)?;
    let samples: Vec<Vec<Vec3>> = clouds.iter().enumerate().map(|(i, c)| training_sample(c, cfg, i)).collect();
    let mut adam = Adam::new(cfg.adam)?;
    let mut trace = Vec::with_capacity(cfg.steps);
    for k in 0..cfg.steps {
        let (value, grads) = ae.loss(&samples[k % samples.len()], cfg.exec, true)?;
        if !value.is_finite() {
            return Err(Error::NonFinite {
                step: k,
                detail: format!("reconstruction loss is {value}"),
            });
        }
        trace.push(value);
        let grads = grads.expect("gradients requested");
        let refs: Vec<&[f64]> = grads.iter().map(Vec::as_slice).collect();
        let mut params = ae.encoder.arrays_mut();
        params.extend(ae.decoder.arrays_mut());
        adam.step(&mut params, &refs)?;
    }
    Ok((ae, trace))
}

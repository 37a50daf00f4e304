//! Flat `key = value` run configuration.
//!
//! One setting per line, `#` starts a comment, blank lines are ignored.
//! Every key is optional; unknown or repeated keys are errors.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use meshdeform::deform::{AutoencoderConfig, DeformNet, LossConfig, SymmetrySource, TrainConfig};
use meshdeform::losses::{LaplacianKind, LossTerm, LossWeights, NnMethod};
use meshdeform::metrics::EvalConfig;
use meshdeform::nn::{AdamConfig, ENCODER_WIDTHS};
use meshdeform::par::Exec;
use meshdeform::SymmetryPlane;

const MAX_SAMPLES: usize = 1 << 22;
const MAX_STEPS: usize = 100_000_000;

struct Key {
    name: &'static str,
    kind: &'static str,
    default: &'static str,
    help: &'static str,
}

const KEYS: &[Key] = &[
    Key { name: "seed", kind: "u64", default: "0", help: "base seed; every random stream is derived from it (overridden by --seed)" },
    Key { name: "w_cd_mesh", kind: "f64 >= 0", default: "1", help: "weight of Chamfer on samples of the deformed mesh" },
    Key { name: "w_emd_mesh", kind: "f64 >= 0", default: "1", help: "weight of EMD on samples of the deformed mesh" },
    Key { name: "w_cd_points", kind: "f64 >= 0", default: "1", help: "weight of Chamfer on deformed source samples" },
    Key { name: "w_emd_points", kind: "f64 >= 0", default: "1", help: "weight of EMD on deformed source samples" },
    Key { name: "w_sym", kind: "f64 >= 0", default: "1", help: "weight of the reflective symmetry loss" },
    Key { name: "w_lap", kind: "f64 >= 0", default: "1", help: "weight of the Laplacian loss on offsets" },
    Key { name: "w_lpi", kind: "f64 >= 0", default: "1", help: "weight of the local permutation invariant loss (network mode only)" },
    Key { name: "mesh_samples", kind: "1..=4194304", default: "2048", help: "surface samples per mesh pass; also the encoded cloud size" },
    Key { name: "point_samples", kind: "1..=4194304", default: "2048", help: "source samples pushed through the deformation per point pass" },
    Key { name: "iterations", kind: "0..=100000000", default: "500", help: "direct-mode optimization steps" },
    Key { name: "step_size", kind: "f64 > 0", default: "0.001", help: "direct-mode Adam step size" },
    Key { name: "resample", kind: "bool", default: "true", help: "draw fresh surface samples every step" },
    Key { name: "symmetry_plane", kind: "xy|yz|xz", default: "xz", help: "reflection plane of the symmetry loss" },
    Key { name: "symmetry_source", kind: "mesh|points|both", default: "mesh", help: "which deformed sample the symmetry loss uses" },
    Key { name: "laplacian", kind: "uniform|cotangent", default: "uniform", help: "Laplacian weights" },
    Key { name: "lpi_epsilon", kind: "f64 > 0", default: "0.05", help: "probe offset length of the LPI loss" },
    Key { name: "lpi_include_delta", kind: "bool", default: "false", help: "penalize the moved probe (delta + F(V+delta) - F(V))" },
    Key { name: "chamfer_brute_force", kind: "bool", default: "false", help: "exhaustive nearest-neighbor search instead of the KD-tree" },
    Key { name: "emd_exact_threshold", kind: "usize", default: "512", help: "largest EMD solved exactly; bigger sets use the auction" },
    Key { name: "emd_epsilon", kind: "f64 > 0", default: "0.0001", help: "auction accuracy relative to the point set diameter" },
    Key { name: "sequential", kind: "bool", default: "false", help: "run every kernel on one thread (results are identical)" },
    Key { name: "encoder_widths", kind: "list of usize", default: "64,128,256", help: "encoder layer widths" },
    Key { name: "decoder_hidden", kind: "list of usize", default: "512,256", help: "hidden widths of the offset decoder" },
    Key { name: "train_steps", kind: "0..=100000000", default: "200", help: "network training updates" },
    Key { name: "learning_rate", kind: "f64 >= 0", default: "0.0001", help: "network training Adam learning rate" },
    Key { name: "voxel_resolution", kind: "3..=512", default: "32", help: "IoU grid resolution including one padding cell per side" },
    Key { name: "eval_samples", kind: "1..=4194304", default: "2048", help: "surface samples per shape for CD and EMD metrics" },
    Key { name: "template_samples", kind: "1..=4194304", default: "2048", help: "surface samples cached per template" },
    Key { name: "ae_steps", kind: "0..=100000000", default: "200", help: "autoencoder training steps" },
    Key { name: "ae_learning_rate", kind: "f64 >= 0", default: "0.001", help: "autoencoder Adam learning rate" },
    Key { name: "ae_points", kind: "1..=65536", default: "256", help: "autoencoder input and output cloud size" },
];

/// Human-readable description of every key.
pub fn schema() -> String {
    let mut out = String::from("# meshdeform run configuration: one `key = value` per line\n");
    for k in KEYS {
        let _ = writeln!(out, "# {} ({}): {}", k.name, k.kind, k.help);
        let _ = writeln!(out, "{} = {}", k.name, k.default);
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub weights: LossWeights,
    pub mesh_samples: usize,
    pub point_samples: usize,
    pub iterations: usize,
    pub step_size: f64,
    pub resample: bool,
    pub symmetry_plane: SymmetryPlane,
    pub symmetry_source: SymmetrySource,
    pub laplacian: LaplacianKind,
    pub lpi_epsilon: f64,
    pub lpi_include_delta: bool,
    pub chamfer_brute_force: bool,
    pub emd_exact_threshold: usize,
    pub emd_epsilon: f64,
    pub sequential: bool,
    pub encoder_widths: Vec<usize>,
    pub decoder_hidden: Vec<usize>,
    pub train_steps: usize,
    pub learning_rate: f64,
    pub voxel_resolution: usize,
    pub eval_samples: usize,
    pub template_samples: usize,
    pub ae_steps: usize,
    pub ae_learning_rate: f64,
    pub ae_points: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            weights: LossWeights::default(),
            mesh_samples: 2048,
            point_samples: 2048,
            iterations: 500,
            step_size: 1e-3,
            resample: true,
            symmetry_plane: SymmetryPlane::Xz,
            symmetry_source: SymmetrySource::MeshPass,
            laplacian: LaplacianKind::Uniform,
            lpi_epsilon: 0.05,
            lpi_include_delta: false,
            chamfer_brute_force: false,
            emd_exact_threshold: 512,
            emd_epsilon: 1e-4,
            sequential: false,
            encoder_widths: ENCODER_WIDTHS.to_vec(),
            decoder_hidden: vec![512, 256],
            train_steps: 200,
            learning_rate: 1e-4,
            voxel_resolution: 32,
            eval_samples: 2048,
            template_samples: 2048,
            ae_steps: 200,
            ae_learning_rate: 1e-3,
            ae_points: 256,
        }
    }
}

fn parse<T: FromStr>(value: &str, what: &str) -> Result<T, String> {
    value.parse().map_err(|_| format!("expected {what}, got {value:?}"))
}

fn in_range(value: &str, lo: usize, hi: usize) -> Result<usize, String> {
    let v: usize = parse(value, "a non-negative integer")?;
    if !(lo..=hi).contains(&v) {
        return Err(format!("{v} is outside {lo}..={hi}"));
    }
    Ok(v)
}

fn non_negative(value: &str) -> Result<f64, String> {
    let v: f64 = parse(value, "a number")?;
    if !(v >= 0.0 && v.is_finite()) {
        return Err(format!("{v} must be finite and >= 0"));
    }
    Ok(v)
}

fn positive(value: &str) -> Result<f64, String> {
    let v = non_negative(value)?;
    if v == 0.0 {
        return Err("must be > 0".into());
    }
    Ok(v)
}

fn widths(value: &str) -> Result<Vec<usize>, String> {
    let w = value
        .split(',')
        .map(|s| in_range(s.trim(), 1, 65536))
        .collect::<Result<Vec<_>, _>>()?;
    if w.is_empty() {
        return Err("needs at least one width".into());
    }
    Ok(w)
}

fn boolean(value: &str) -> Result<bool, String> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        other => Err(format!("expected true or false, got {other:?}")),
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        Self::parse(&text).map_err(|e| format!("{}: {e}", path.display()))
    }

    pub fn parse(text: &str) -> Result<Self, String> {
        let mut cfg = RunConfig::default();
        let mut seen = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| format!("line {}: expected `key = value`", n + 1))?;
            let (key, value) = (key.trim(), value.trim());
            if seen.contains(&key) {
                return Err(format!("line {}: key {key:?} given twice", n + 1));
            }
            cfg.set(key, value).map_err(|e| format!("line {}: {key}: {e}", n + 1))?;
            seen.push(key);
        }
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        let weight = |term| LossTerm::ALL.iter().find(|t| t.name() == term).copied();
        if let Some(term) = key.strip_prefix("w_").and_then(weight) {
            *self.weights.get_mut(term) = non_negative(value)?;
            return Ok(());
        }
        match key {
            "seed" => self.seed = parse(value, "an unsigned integer")?,
            "mesh_samples" => self.mesh_samples = in_range(value, 1, MAX_SAMPLES)?,
            "point_samples" => self.point_samples = in_range(value, 1, MAX_SAMPLES)?,
            "iterations" => self.iterations = in_range(value, 0, MAX_STEPS)?,
            "step_size" => self.step_size = positive(value)?,
            "resample" => self.resample = boolean(value)?,
            "symmetry_plane" => self.symmetry_plane = value.parse().map_err(|e| format!("{e}"))?,
            "symmetry_source" => self.symmetry_source = value.parse().map_err(|e| format!("{e}"))?,
            "laplacian" => self.laplacian = value.parse().map_err(|e| format!("{e}"))?,
            "lpi_epsilon" => self.lpi_epsilon = positive(value)?,
            "lpi_include_delta" => self.lpi_include_delta = boolean(value)?,
            "chamfer_brute_force" => self.chamfer_brute_force = boolean(value)?,
            "emd_exact_threshold" => self.emd_exact_threshold = in_range(value, 0, MAX_SAMPLES)?,
            "emd_epsilon" => self.emd_epsilon = positive(value)?,
            "sequential" => self.sequential = boolean(value)?,
            "encoder_widths" => self.encoder_widths = widths(value)?,
            "decoder_hidden" => self.decoder_hidden = widths(value)?,
            "train_steps" => self.train_steps = in_range(value, 0, MAX_STEPS)?,
            "learning_rate" => self.learning_rate = non_negative(value)?,
            "voxel_resolution" => self.voxel_resolution = in_range(value, 3, 512)?,
            "eval_samples" => self.eval_samples = in_range(value, 1, MAX_SAMPLES)?,
            "template_samples" => self.template_samples = in_range(value, 1, MAX_SAMPLES)?,
            "ae_steps" => self.ae_steps = in_range(value, 0, MAX_STEPS)?,
            "ae_learning_rate" => self.ae_learning_rate = non_negative(value)?,
            "ae_points" => self.ae_points = in_range(value, 1, 65536)?,
            _ => return Err("unknown key (see --print-config-schema)".into()),
        }
        Ok(())
    }

    pub fn exec(&self) -> Exec {
        if self.sequential {
            Exec::Sequential
        } else {
            Exec::Parallel
        }
    }

    pub fn losses(&self) -> LossConfig {
        let mut c = LossConfig {
            weights: self.weights,
            mesh_samples: self.mesh_samples,
            point_samples: self.point_samples,
            symmetry_plane: self.symmetry_plane,
            symmetry_source: self.symmetry_source,
            laplacian: self.laplacian,
            nn_method: if self.chamfer_brute_force { NnMethod::BruteForce } else { NnMethod::KdTree },
            exec: self.exec(),
            ..LossConfig::default()
        };
        c.lpi.epsilon = self.lpi_epsilon;
        c.lpi.include_delta = self.lpi_include_delta;
        c.emd.exact_threshold = self.emd_exact_threshold;
        c.emd.auction.relative_epsilon = self.emd_epsilon;
        c
    }

    pub fn network(&self) -> meshdeform::Result<DeformNet> {
        DeformNet::with_widths(&self.encoder_widths, &self.decoder_hidden, self.seed)
    }

    pub fn train(&self) -> TrainConfig {
        TrainConfig {
            losses: self.losses(),
            steps: self.train_steps,
            adam: AdamConfig::with_lr(self.learning_rate),
            seed: self.seed,
            resample: self.resample,
        }
    }

    pub fn eval(&self) -> EvalConfig {
        EvalConfig {
            samples: self.eval_samples,
            resolution: self.voxel_resolution,
            seed: self.seed,
        }
    }

    pub fn autoencoder(&self) -> AutoencoderConfig {
        AutoencoderConfig {
            steps: self.ae_steps,
            adam: AdamConfig::with_lr(self.ae_learning_rate),
            input_points: self.ae_points,
            output_points: self.ae_points,
            encoder_widths: self.encoder_widths.clone(),
            seed: self.seed,
            exec: self.exec(),
            ..AutoencoderConfig::default()
        }
    }
}

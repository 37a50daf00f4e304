use crate::error::{Error, Result};
use crate::mesh::{PointCloud, TriMesh};
use crate::nn::{Adam, AdamConfig};
use crate::seed::{self, Stream};

use super::context::{LossConfig, LossContext};
use super::network::{run_pipeline, DeformNet};
use super::trace::{LossTrace, TraceRow};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub losses: LossConfig,
    /// Parameter updates; the trace holds `steps + 1` evaluations.
    pub steps: usize,
    pub adam: AdamConfig,
    pub seed: u64,
    pub resample: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            losses: LossConfig::default(),
            steps: 200,
            adam: AdamConfig::with_lr(1e-4),
            seed: 0,
            resample: true,
        }
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub net: DeformNet,
    pub trace: LossTrace,
}

/// Cycles through `pairs`, one pipeline pass and one Adam update per step.
/// `on_epoch(epoch, net, trace)` runs after each full pass over the pairs.
pub fn train<F>(pairs: &[(TriMesh, PointCloud)], net: DeformNet, cfg: &TrainConfig, mut on_epoch: F) -> Result<TrainOutcome>
where
    F: FnMut(usize, &DeformNet, &LossTrace) -> Result<()>,
{
    if pairs.is_empty() {
        return Err(Error::EmptyInput("training pairs"));
    }
    let mut net = net;
    let mut contexts = pairs
        .iter()
        .enumerate()
        .map(|(i, (s, t))| LossContext::new(s, t, &cfg.losses, pair_seed(cfg.seed, i)))
        .collect::<Result<Vec<_>>>()?;
    let mut adam = Adam::new(cfg.adam)?;
    let mut trace = LossTrace::default();
    for k in 0..=cfg.steps {
        let p = k % pairs.len();
        let draw = if cfg.resample { (k / pairs.len()) as u64 } else { 0 };
        let update = k < cfg.steps;
        let (out, grads) = run_pipeline(&net, &mut contexts[p], pair_seed(cfg.seed, p), draw, update).map_err(|e| match e {
            Error::NonFinite { detail, .. } => Error::NonFinite { step: k, detail },
            e => e,
        })?;
        trace.push(TraceRow::from_report(k, &out.report));
        if let Some(g) = grads {
            let refs: Vec<&[f64]> = g.iter().map(Vec::as_slice).collect();
            adam.step(&mut net.arrays_mut(), &refs).map_err(|e| match e {
                Error::NonFinite { detail, .. } => Error::NonFinite { step: k, detail },
                e => e,
            })?;
            if (k + 1) % pairs.len() == 0 {
                on_epoch((k + 1) / pairs.len(), &net, &trace)?;
            }
        }
    }
    Ok(TrainOutcome { net, trace })
}

fn pair_seed(seed: u64, pair: usize) -> u64 {
    seed::derive_seed(seed, Stream::Training, pair as u64)
}

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::Vec3;
use crate::par::Exec;

use super::tape::{Gradients, Tape, Var};
use super::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Relu,
    Identity,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    /// `fan_in × fan_out`.
    pub weight: Tensor,
    pub bias: Tensor,
    pub activation: Activation,
}

/// A stack of dense layers applied to every row of the input.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    input_dim: usize,
    layers: Vec<Layer>,
}

/// Global shape feature produced by [`encode_pointcloud`].
pub type GlobalFeature = Tensor;

impl MlpParams {
    pub fn new(input_dim: usize, layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidArgument("an MLP needs at least one layer".into()));
        }
        let mut d = input_dim;
        for l in &layers {
            let s = l.weight.shape();
            if s.len() != 2 || s[0] != d {
                return Err(Error::shape("MLP layer input", d, format!("{s:?}")));
            }
            if l.bias.len() != s[1] {
                return Err(Error::shape("MLP layer bias", s[1], l.bias.len()));
            }
            if !l.weight.is_finite() || !l.bias.is_finite() {
                return Err(Error::InvalidArgument("MLP parameters must be finite".into()));
            }
            d = s[1];
        }
        Ok(MlpParams { input_dim, layers })
    }

    /// Uniform `±1/√fan_in` initialization of weights and biases. Hidden
    /// layers use `hidden`, the last layer `last`; `zero_last` zeroes the
    /// last layer.
    pub fn init<R: Rng + ?Sized>(
        input_dim: usize,
        widths: &[usize],
        hidden: Activation,
        last: Activation,
        zero_last: bool,
        rng: &mut R,
    ) -> Result<Self> {
        let mut layers = Vec::with_capacity(widths.len());
        let mut d = input_dim;
        for (i, &w) in widths.iter().enumerate() {
            let is_last = i + 1 == widths.len();
            let bound = 1.0 / (d as f64).sqrt();
            let mut draw = |n: usize| -> Vec<f64> {
                if is_last && zero_last {
                    vec![0.0; n]
                } else {
                    (0..n).map(|_| rng.random_range(-bound..bound)).collect()
                }
            };
            let weight = Tensor::matrix(d, w, draw(d * w))?;
            let bias = Tensor::vector(draw(w));
            layers.push(Layer {
                weight,
                bias,
                activation: if is_last { last } else { hidden },
            });
            d = w;
        }
        MlpParams::new(input_dim, layers)
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(self.input_dim, |l| l.bias.len())
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    /// Output width of every layer.
    pub fn widths(&self) -> Vec<usize> {
        self.layers.iter().map(|l| l.bias.len()).collect()
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    /// Architecture summary such as `3-64r-128r-256r`.
    pub fn fingerprint(&self) -> String {
        let mut s = self.input_dim.to_string();
        for l in &self.layers {
            let tag = match l.activation {
                Activation::Relu => "r",
                Activation::Identity => "",
            };
            s.push_str(&format!("-{}{tag}", l.bias.len()));
        }
        s
    }

    /// Parameter arrays in layer order (weight, then bias).
    pub fn arrays(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .flat_map(|l| [l.weight.data(), l.bias.data()])
            .collect()
    }

    pub fn arrays_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [l.weight.data_mut(), l.bias.data_mut()])
            .collect()
    }

    /// Records every parameter as a gradient-carrying leaf of `tape`.
    pub fn on_tape(&self, tape: &mut Tape) -> Result<MlpVars> {
        self.record(tape, true)
    }

    /// Records the parameters as constants (inference only).
    pub fn on_tape_frozen(&self, tape: &mut Tape) -> Result<MlpVars> {
        self.record(tape, false)
    }

    fn record(&self, tape: &mut Tape, trainable: bool) -> Result<MlpVars> {
        let layers = self
            .layers
            .iter()
            .map(|l| {
                let (w, b) = if trainable {
                    (tape.param(l.weight.clone())?, tape.param(l.bias.clone())?)
                } else {
                    (tape.constant(l.weight.clone())?, tape.constant(l.bias.clone())?)
                };
                Ok((w, b, l.activation))
            })
            .collect::<Result<_>>()?;
        Ok(MlpVars { layers })
    }
}

/// Tape handles of an [`MlpParams`].
#[derive(Clone, Debug)]
pub struct MlpVars {
    layers: Vec<(Var, Var, Activation)>,
}

impl MlpVars {
    /// Gradients in the order of [`MlpParams::arrays`]; zeros for
    /// parameters that did not reach the loss.
    pub fn gradients(&self, params: &MlpParams, grads: &Gradients) -> Vec<Vec<f64>> {
        self.layers
            .iter()
            .zip(params.layers())
            .flat_map(|(&(w, b, _), l)| {
                [
                    grads.get(w).map_or_else(|| vec![0.0; l.weight.len()], |g| g.data().to_vec()),
                    grads.get(b).map_or_else(|| vec![0.0; l.bias.len()], |g| g.data().to_vec()),
                ]
            })
            .collect()
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }
}

fn activate(tape: &mut Tape, y: Var, act: Activation) -> Result<Var> {
    match act {
        Activation::Relu => tape.relu(y),
        Activation::Identity => Ok(y),
    }
}

/// Applies every layer to each row of `x` (`N × input_dim`).
pub fn mlp_forward(tape: &mut Tape, x: Var, mlp: &MlpVars) -> Result<Var> {
    let mut h = x;
    for &(w, b, act) in &mlp.layers {
        let y = tape.linear(h, w, b)?;
        h = activate(tape, y, act)?;
    }
    Ok(h)
}

/// Shared per-point MLP followed by a max pool over the points.
pub fn encode_pointcloud(tape: &mut Tape, points: Var, encoder: &MlpVars) -> Result<Var> {
    let h = mlp_forward(tape, points, encoder)?;
    tape.max_pool(h)
}

/// Per-row offsets from `[position, source_feat, target_feat]`. The feature
/// part of the first layer is computed once and shared by all rows.
pub fn offset_decoder(
    tape: &mut Tape,
    positions: Var,
    source_feat: Var,
    target_feat: Var,
    decoder: &MlpVars,
) -> Result<Var> {
    let shared = tape.concat(&[source_feat, target_feat])?;
    decode_with_shared(tape, positions, shared, decoder)
}

/// [`offset_decoder`] with the concatenated feature already recorded.
pub fn decode_with_shared(tape: &mut Tape, positions: Var, shared: Var, decoder: &MlpVars) -> Result<Var> {
    let (first, rest) = decoder
        .layers
        .split_first()
        .ok_or_else(|| Error::InvalidArgument("empty decoder".into()))?;
    let y = tape.linear_shared(positions, shared, first.0, first.1)?;
    let mut h = activate(tape, y, first.2)?;
    for &(w, b, act) in rest {
        let y = tape.linear(h, w, b)?;
        h = activate(tape, y, act)?;
    }
    Ok(h)
}

/// Inference-only encoding of a point set.
pub fn encode_points(encoder: &MlpParams, points: &[Vec3], exec: Exec) -> Result<GlobalFeature> {
    if points.is_empty() {
        return Err(Error::EmptyInput("point cloud to encode"));
    }
    let mut tape = Tape::with_exec(exec);
    let vars = encoder.on_tape_frozen(&mut tape)?;
    let x = tape.constant(Tensor::from_points(points))?;
    let f = encode_pointcloud(&mut tape, x, &vars)?;
    Ok(tape.value(f).clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn encoder(seed: u64) -> MlpParams {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        MlpParams::init(3, &[8, 16, 12], Activation::Relu, Activation::Relu, false, &mut rng).unwrap()
    }

    fn decoder(seed: u64, feat: usize, zero_last: bool) -> MlpParams {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        MlpParams::init(3 + 2 * feat, &[10, 6, 3], Activation::Relu, Activation::Identity, zero_last, &mut rng)
            .unwrap()
    }

    fn cloud(n: usize, seed: u64) -> Vec<Vec3> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect()
    }

    #[test]
    fn init_is_seeded_and_validated() {
        assert_eq!(encoder(1), encoder(1));
        assert_ne!(encoder(1), encoder(2));
        assert_eq!(encoder(1).fingerprint(), "3-8r-16r-12r");
        let bad = Layer {
            weight: Tensor::zeros(vec![4, 2]),
            bias: Tensor::zeros(vec![2]),
            activation: Activation::Relu,
        };
        assert!(MlpParams::new(3, vec![bad]).is_err());
    }

    #[test]
    fn encoder_is_permutation_invariant() {
        let enc = encoder(4);
        let pts = cloud(50, 9);
        let mut shuffled = pts.clone();
        shuffled.reverse();
        shuffled.swap(3, 17);
        let a = encode_points(&enc, &pts, Exec::Sequential).unwrap();
        let b = encode_points(&enc, &shuffled, Exec::Parallel).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 12);
    }

    #[test]
    fn zero_weight_encoder_pools_relu_bias() {
        let mut enc = encoder(4);
        let n = enc.layers.len();
        for l in &mut enc.layers[n - 1..] {
            l.weight.data_mut().iter_mut().for_each(|w| *w = 0.0);
        }
        let bias: Vec<f64> = enc.layers[n - 1].bias.data().iter().map(|&b| b.max(0.0)).collect();
        for seed in [1, 2] {
            assert_eq!(encode_points(&enc, &cloud(7, seed), Exec::Sequential).unwrap().data(), &bias[..]);
        }
    }

    #[test]
    fn zero_last_layer_gives_zero_offsets() {
        let dec = decoder(5, 12, true);
        let enc = encoder(4);
        let mut t = Tape::new();
        let e = enc.on_tape(&mut t).unwrap();
        let d = dec.on_tape(&mut t).unwrap();
        let x = t.constant(Tensor::from_points(&cloud(20, 1))).unwrap();
        let fs = encode_pointcloud(&mut t, x, &e).unwrap();
        let ft = encode_pointcloud(&mut t, x, &e).unwrap();
        let o = offset_decoder(&mut t, x, fs, ft, &d).unwrap();
        assert!(t.value(o).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn equal_positions_equal_offsets() {
        let dec = decoder(6, 12, false);
        let enc = encoder(4);
        let mut pts = cloud(30, 2);
        pts[29] = pts[3];
        let mut t = Tape::new();
        let e = enc.on_tape(&mut t).unwrap();
        let d = dec.on_tape(&mut t).unwrap();
        let x = t.constant(Tensor::from_points(&pts)).unwrap();
        let f = encode_pointcloud(&mut t, x, &e).unwrap();
        let o = offset_decoder(&mut t, x, f, f, &d).unwrap();
        let v = t.value(o);
        assert_eq!(v.row(3), v.row(29));
    }
}

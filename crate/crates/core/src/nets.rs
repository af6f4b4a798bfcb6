//! Multi-layer perceptrons for the decoder (mixing function) and the
//! recognition network that emits surrogate natural parameters.

use rand::Rng;

use crate::numerics::tape::softplus;
use crate::numerics::{Matrix, Tape, Var};

/// Slope of the linear leak in `tanh(x) + slope·x`.
pub const LEAKY_SLOPE: f64 = 0.1;
/// Offset keeping encoder quadratic parameters strictly negative.
pub const W_OFFSET: f64 = 1e-4;
pub const DEFAULT_DECODER_HIDDEN: usize = 128;
pub const DEFAULT_ENCODER_HIDDEN: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Tanh,
    LeakyTanh,
    Relu,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Tanh => x.tanh(),
            Activation::LeakyTanh => x.tanh() + LEAKY_SLOPE * x,
            Activation::Relu => x.max(0.0),
        }
    }

    fn record(self, tape: &mut Tape, v: Var) -> Var {
        match self {
            Activation::Identity => v,
            Activation::Tanh => tape.tanh(v),
            Activation::LeakyTanh => tape.leaky_tanh(v, LEAKY_SLOPE),
            Activation::Relu => tape.relu(v),
        }
    }

    pub fn is_bounded(self) -> bool {
        matches!(self, Activation::Tanh)
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Identity => "identity",
            Activation::Tanh => "tanh",
            Activation::LeakyTanh => "leaky_tanh",
            Activation::Relu => "relu",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Some(match s {
            "identity" => Activation::Identity,
            "tanh" => Activation::Tanh,
            "leaky_tanh" => Activation::LeakyTanh,
            "relu" => Activation::Relu,
            _ => return None,
        })
    }
}

/// One affine layer `y = W·x + b` with `W` stored `out × in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpWeights {
    pub layers: Vec<Layer>,
    /// Applied after every layer except the last.
    pub activation: Activation,
    /// Applied after the last layer.
    pub output_activation: Activation,
}

/// Weight initialization schemes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Init {
    /// Uniform(−1, 1) entries with every column rescaled to unit norm.
    ColumnNormalized,
    /// Glorot-uniform weights, zero biases.
    Glorot,
}

/// Layer widths for an `n_layers`-deep net: `[in, hidden, …, hidden, out]`.
pub fn layer_dims(in_dim: usize, hidden: usize, out_dim: usize, n_layers: usize) -> Vec<usize> {
    assert!(n_layers >= 1, "an MLP needs at least one layer");
    let mut dims = vec![in_dim];
    dims.extend(std::iter::repeat_n(hidden, n_layers - 1));
    dims.push(out_dim);
    dims
}

impl MlpWeights {
    pub fn random(
        dims: &[usize],
        activation: Activation,
        init: Init,
        rng: &mut impl Rng,
    ) -> Self {
        let layers = dims
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                match init {
                    Init::ColumnNormalized => {
                        let mut weight =
                            Matrix::from_fn(fan_out, fan_in, |_, _| rng.gen_range(-1.0..1.0));
                        for j in 0..fan_in {
                            let norm = weight.col_vec(j).iter().map(|v| v * v).sum::<f64>().sqrt();
                            for i in 0..fan_out {
                                weight[(i, j)] /= norm.max(1e-12);
                            }
                        }
                        let bias = (0..fan_out).map(|_| rng.gen_range(-0.1..0.1)).collect();
                        Layer { weight, bias }
                    }
                    Init::Glorot => {
                        let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
                        let weight = Matrix::from_fn(fan_out, fan_in, |_, _| rng.gen_range(-a..a));
                        Layer {
                            weight,
                            bias: vec![0.0; fan_out],
                        }
                    }
                }
            })
            .collect();
        Self {
            layers,
            activation,
            output_activation: Activation::Identity,
        }
    }

    /// Single linear layer `y = W·x + b`.
    pub fn linear(weight: Matrix, bias: Vec<f64>) -> Self {
        Self {
            layers: vec![Layer { weight, bias }],
            activation: Activation::Identity,
            output_activation: Activation::Identity,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].weight.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.weight.rows())
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weight.is_finite() && l.bias.iter().all(|b| b.is_finite()))
    }

    fn activation_for(&self, layer: usize) -> Activation {
        if layer + 1 == self.layers.len() {
            self.output_activation
        } else {
            self.activation
        }
    }

    /// Evaluates the net on a single input vector.
    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut h = x.to_vec();
        for (li, layer) in self.layers.iter().enumerate() {
            let act = self.activation_for(li);
            h = layer
                .weight
                .matvec(&h)
                .iter()
                .zip(&layer.bias)
                .map(|(z, b)| act.apply(z + b))
                .collect();
        }
        h
    }

    /// Evaluates the net on every row of `x`.
    pub fn forward_batch(&self, x: &Matrix) -> Matrix {
        let mut h = x.clone();
        for (li, layer) in self.layers.iter().enumerate() {
            let act = self.activation_for(li);
            let mut z = h.matmul_t(&layer.weight);
            let width = z.cols();
            crate::par::for_each_row(z.as_mut_slice(), width, |_, row| {
                for (v, b) in row.iter_mut().zip(&layer.bias) {
                    *v = act.apply(*v + b);
                }
            });
            h = z;
        }
        h
    }

    /// Parameters as a flat list `[W₀, b₀, W₁, b₁, …]`, biases as `1 × out` rows.
    pub fn params(&self) -> Vec<Matrix> {
        self.layers
            .iter()
            .flat_map(|l| {
                [
                    l.weight.clone(),
                    Matrix::from_vec(1, l.bias.len(), l.bias.clone()),
                ]
            })
            .collect()
    }

    pub fn set_params(&mut self, params: &[Matrix]) {
        assert_eq!(params.len(), 2 * self.layers.len(), "parameter count mismatch");
        for (layer, pair) in self.layers.iter_mut().zip(params.chunks(2)) {
            assert_eq!(layer.weight.shape(), pair[0].shape());
            layer.weight = pair[0].clone();
            layer.bias = pair[1].as_slice().to_vec();
        }
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.as_slice().len() + l.bias.len())
            .sum()
    }

    /// Records the forward pass on `tape`. Returns the output node and the
    /// parameter leaves in [`params`](Self::params) order.
    pub fn record(&self, tape: &mut Tape, input: Var) -> (Var, Vec<Var>) {
        let mut h = input;
        let mut leaves = Vec::with_capacity(2 * self.layers.len());
        for (li, layer) in self.layers.iter().enumerate() {
            let w = tape.leaf(layer.weight.clone());
            let b = tape.leaf(Matrix::from_vec(1, layer.bias.len(), layer.bias.clone()));
            leaves.push(w);
            leaves.push(b);
            let z = tape.affine(h, w, b);
            h = self.activation_for(li).record(tape, z);
        }
        (h, leaves)
    }
}

/// Decoder evaluation `f(s; θ)`.
pub fn decoder_forward(theta: &MlpWeights, s: &[f64]) -> Vec<f64> {
    theta.forward(s)
}

/// Surrogate natural parameters for one observation.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderOutput {
    /// Linear natural parameter per component.
    pub v: Vec<f64>,
    /// Diagonal quadratic natural parameter per component, strictly negative.
    pub w: Vec<f64>,
}

/// Surrogate natural parameters for a whole sequence, `T × N` each.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderBatch {
    pub v: Matrix,
    pub w: Matrix,
}

impl EncoderBatch {
    pub fn len(&self) -> usize {
        self.v.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.v.rows() == 0
    }

    pub fn components(&self) -> usize {
        self.v.cols()
    }

    pub fn at(&self, t: usize) -> EncoderOutput {
        EncoderOutput {
            v: self.v.row(t).to_vec(),
            w: self.w.row(t).to_vec(),
        }
    }
}

fn split_head(raw: &[f64]) -> EncoderOutput {
    let n = raw.len() / 2;
    EncoderOutput {
        v: raw[..n].to_vec(),
        w: raw[n..].iter().map(|&r| -softplus(r) - W_OFFSET).collect(),
    }
}

/// Recognition network: raw head `[v | r]`, with `w = −softplus(r) − 1e-4`.
pub fn encoder_forward(phi: &MlpWeights, x: &[f64]) -> EncoderOutput {
    split_head(&phi.forward(x))
}

pub fn encoder_forward_batch(phi: &MlpWeights, x: &Matrix) -> EncoderBatch {
    let raw = phi.forward_batch(x);
    let n = raw.cols() / 2;
    EncoderBatch {
        v: raw.col_range(0, n),
        w: raw.col_range(n, 2 * n).map(|r| -softplus(r) - W_OFFSET),
    }
}

/// Encoder forward pass recorded on a tape.
pub struct RecordedEncoder {
    pub v: Var,
    pub w: Var,
    pub params: Vec<Var>,
}

pub fn record_encoder(phi: &MlpWeights, tape: &mut Tape, x: Var) -> RecordedEncoder {
    let (raw, params) = phi.record(tape, x);
    let n = tape.value(raw).cols() / 2;
    let v = tape.col_range(raw, 0, n);
    let r = tape.col_range(raw, n, 2 * n);
    let sp = tape.softplus(r);
    let neg = tape.scale(sp, -1.0);
    let w = tape.add_scalar(neg, -W_OFFSET);
    RecordedEncoder { v, w, params }
}

/// Reverse-mode gradients of a recorded scalar objective with respect to the
/// given parameter leaves.
pub fn net_gradients(
    tape: &Tape,
    objective: Var,
    params: &[Var],
) -> Result<Vec<Matrix>, crate::numerics::NumericsError> {
    let grads = tape.backward(objective)?;
    Ok(params.iter().map(|&p| grads.get_or_zeros(tape, p)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_and_linear_decoders() {
        let id = MlpWeights::linear(Matrix::identity(3), vec![0.0; 3]);
        assert_eq!(decoder_forward(&id, &[1.0, -2.0, 0.5]), vec![1.0, -2.0, 0.5]);
        let w = Matrix::from_rows(&[&[1.0, 2.0], &[0.0, -1.0], &[3.0, 0.5]]);
        let lin = MlpWeights::linear(w.clone(), vec![0.0; 3]);
        assert_eq!(decoder_forward(&lin, &[2.0, 1.0]), w.matvec(&[2.0, 1.0]));
    }

    #[test]
    fn batch_matches_single() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = MlpWeights::random(&[3, 8, 8, 5], Activation::LeakyTanh, Init::Glorot, &mut rng);
        let x = Matrix::from_fn(7, 3, |_, _| rng.gen_range(-2.0..2.0));
        let batch = net.forward_batch(&x);
        for t in 0..7 {
            let single = net.forward(x.row(t));
            for (a, b) in single.iter().zip(batch.row(t)) {
                assert!((a - b).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn zeroed_final_layer_gives_closed_form_w() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut phi = MlpWeights::random(&[4, 6, 6], Activation::Relu, Init::Glorot, &mut rng);
        let last = phi.layers.last_mut().unwrap();
        last.weight = Matrix::zeros(6, 6);
        last.bias = vec![0.0; 6];
        let out = encoder_forward(&phi, &[0.3, -1.0, 2.0, 0.0]);
        for w in out.w {
            assert!((w - (-(2f64.ln()) - 1e-4)).abs() < 1e-15);
        }
        assert_eq!(out.v, vec![0.0; 3]);
    }

    #[test]
    fn column_normalized_init_has_unit_columns() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let net = MlpWeights::random(&[3, 12], Activation::LeakyTanh, Init::ColumnNormalized, &mut rng);
        let w = &net.layers[0].weight;
        for j in 0..3 {
            let n: f64 = w.col_vec(j).iter().map(|v| v * v).sum();
            assert!((n - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn params_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let net = MlpWeights::random(&[2, 4, 3], Activation::Tanh, Init::Glorot, &mut rng);
        let mut other = MlpWeights::random(&[2, 4, 3], Activation::Tanh, Init::Glorot, &mut rng);
        other.set_params(&net.params());
        assert_eq!(other, net);
        assert_eq!(net.param_count(), 2 * 4 + 4 + 4 * 3 + 3);
    }
}

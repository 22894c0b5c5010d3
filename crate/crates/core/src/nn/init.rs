use rand::Rng as _;

use crate::rng::Rng;
use crate::tensor::Tensor;

/// Shape description of a layer's parameters, for initialization.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LayerSpec {
    /// `zero_weights` is used by the two output heads.
    Linear {
        inputs: usize,
        outputs: usize,
        zero_weights: bool,
    },
    Lstm {
        inputs: usize,
        hidden: usize,
    },
    Conv1d {
        c_in: usize,
        c_out: usize,
        kernel: usize,
    },
    BatchNorm {
        channels: usize,
    },
}

/// Glorot/Xavier uniform bound `sqrt(6 / (fan_in + fan_out))`.
pub fn xavier_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

fn uniform(shape: &[usize], bound: f64, rng: &mut Rng) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
    Tensor::new(shape.to_vec(), data).expect("finite uniform draws")
}

/// Initial `(name, tensor)` pairs for one layer. Weights are Xavier-uniform,
/// biases zero except the LSTM forget-gate slice (one), batch-norm scale one.
pub fn init_params(spec: &LayerSpec, rng: &mut Rng) -> Vec<(&'static str, Tensor)> {
    match *spec {
        LayerSpec::Linear {
            inputs,
            outputs,
            zero_weights,
        } => {
            let w = if zero_weights {
                Tensor::zeros(&[outputs, inputs])
            } else {
                uniform(&[outputs, inputs], xavier_bound(inputs, outputs), rng)
            };
            vec![("weight", w), ("bias", Tensor::zeros(&[outputs]))]
        }
        LayerSpec::Lstm { inputs, hidden } => {
            let w_ih = uniform(&[4 * hidden, inputs], xavier_bound(inputs, 4 * hidden), rng);
            let w_hh = uniform(&[4 * hidden, hidden], xavier_bound(hidden, 4 * hidden), rng);
            let mut bias = Tensor::zeros(&[4 * hidden]);
            // gate order (i, f, g, o)
            bias.data_mut()[hidden..2 * hidden].fill(1.0);
            vec![("w_ih", w_ih), ("w_hh", w_hh), ("bias", bias)]
        }
        LayerSpec::Conv1d {
            c_in,
            c_out,
            kernel,
        } => {
            let bound = xavier_bound(c_in * kernel, c_out * kernel);
            vec![("kernel", uniform(&[c_out, c_in, kernel], bound, rng))]
        }
        LayerSpec::BatchNorm { channels } => vec![
            ("gamma", Tensor::full(&[channels], 1.0)),
            ("beta", Tensor::zeros(&[channels])),
        ],
    }
}

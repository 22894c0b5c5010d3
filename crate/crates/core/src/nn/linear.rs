use super::init::{init_params, LayerSpec};
use super::params::{Bound, ParamId, ParamStore};
use crate::rng::Rng;
use crate::tensor::{Graph, Var};
use crate::{Error, Result};

/// Fully connected layer `y = x·Wᵀ + b`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub inputs: usize,
    pub outputs: usize,
}

impl Linear {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        inputs: usize,
        outputs: usize,
        zero_weights: bool,
        rng: &mut Rng,
    ) -> Self {
        let spec = LayerSpec::Linear {
            inputs,
            outputs,
            zero_weights,
        };
        let mut params = init_params(&spec, rng).into_iter();
        let (_, w) = params.next().unwrap();
        let (_, b) = params.next().unwrap();
        Linear {
            weight: store.add(format!("{name}.weight"), w),
            bias: store.add(format!("{name}.bias"), b),
            inputs,
            outputs,
        }
    }

    /// Accepts an `In` vector or a `B×In` matrix.
    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<Var> {
        let shape = g.shape(x)?.to_vec();
        let vector = match shape.as_slice() {
            &[n] if n == self.inputs => true,
            &[_, n] if n == self.inputs => false,
            s => {
                return Err(Error::Shape(format!(
                    "linear expects {} inputs, got {s:?}",
                    self.inputs
                )))
            }
        };
        let x2 = if vector {
            g.reshape(x, &[1, self.inputs])?
        } else {
            x
        };
        let xw = g.matmul_t(x2, p[self.weight])?;
        let y = g.add(xw, p[self.bias])?;
        if vector {
            g.reshape(y, &[self.outputs])
        } else {
            Ok(y)
        }
    }
}

use super::batchnorm::{BatchMoments, BatchNorm, Mode};
use super::init::{init_params, LayerSpec};
use super::params::{Bound, ParamId, ParamStore};
use crate::rng::Rng;
use crate::tensor::{Graph, Var};
use crate::{Error, Result};

/// `relu(BN₂(conv₂(relu(BN₁(conv₁(x))))) + x)` with length-preserving
/// padding and an identity skip.
#[derive(Clone, Debug, PartialEq)]
pub struct ResidualBlock {
    pub conv1: ParamId,
    pub bn1: BatchNorm,
    pub conv2: ParamId,
    pub bn2: BatchNorm,
    pub channels: usize,
    pub kernel: usize,
}

impl ResidualBlock {
    /// `kernel` must be odd so that padding `(K−1)/2` preserves length.
    pub fn new(store: &mut ParamStore, name: &str, channels: usize, kernel: usize, rng: &mut Rng) -> Result<Self> {
        if kernel % 2 == 0 {
            return Err(Error::Invalid(format!(
                "residual block kernel must be odd for same-length padding, got {kernel}"
            )));
        }
        let spec = LayerSpec::Conv1d {
            c_in: channels,
            c_out: channels,
            kernel,
        };
        let (_, k1) = init_params(&spec, rng).remove(0);
        let conv1 = store.add(format!("{name}.conv1.kernel"), k1);
        let bn1 = BatchNorm::new(store, &format!("{name}.bn1"), channels, rng);
        let (_, k2) = init_params(&spec, rng).remove(0);
        let conv2 = store.add(format!("{name}.conv2.kernel"), k2);
        let bn2 = BatchNorm::new(store, &format!("{name}.bn2"), channels, rng);
        Ok(ResidualBlock {
            conv1,
            bn1,
            conv2,
            bn2,
            channels,
            kernel,
        })
    }

    pub fn padding(&self) -> usize {
        (self.kernel - 1) / 2
    }

    /// In train mode the two batch-norm moments are returned, in order.
    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var, mode: Mode) -> Result<(Var, Vec<BatchMoments>)> {
        let pad = self.padding();
        let h = g.conv1d(x, p[self.conv1], pad)?;
        let (h, m1) = self.bn1.forward(g, p, h, mode)?;
        let h = g.relu(h)?;
        let h = g.conv1d(h, p[self.conv2], pad)?;
        let (h, m2) = self.bn2.forward(g, p, h, mode)?;
        let sum = g.add(h, x)?;
        let out = g.relu(sum)?;
        Ok((out, m1.into_iter().chain(m2).collect()))
    }

    pub fn update_running(&mut self, moments: &[BatchMoments]) {
        if let [m1, m2] = moments {
            self.bn1.update_running(m1);
            self.bn2.update_running(m2);
        }
    }
}

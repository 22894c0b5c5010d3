use super::init::{init_params, LayerSpec};
use super::params::{Bound, ParamId, ParamStore};
use crate::rng::Rng;
use crate::tensor::{Graph, Var};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics; moments are returned for the caller to commit.
    Train,
    /// Running statistics.
    Eval,
}

/// Per-channel batch mean and biased variance over `count` values.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchMoments {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub count: usize,
}

/// Batch normalization over `B×C×L` inputs, per channel.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub momentum: f64,
    pub eps: f64,
}

impl BatchNorm {
    pub const DEFAULT_MOMENTUM: f64 = 0.1;
    pub const DEFAULT_EPS: f64 = 1e-5;

    pub fn new(store: &mut ParamStore, name: &str, channels: usize, rng: &mut Rng) -> Self {
        let mut ids = init_params(&LayerSpec::BatchNorm { channels }, rng)
            .into_iter()
            .map(|(n, t)| store.add(format!("{name}.{n}"), t));
        BatchNorm {
            gamma: ids.next().unwrap(),
            beta: ids.next().unwrap(),
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            momentum: Self::DEFAULT_MOMENTUM,
            eps: Self::DEFAULT_EPS,
        }
    }

    pub fn channels(&self) -> usize {
        self.running_mean.len()
    }

    pub fn forward(
        &self,
        g: &mut Graph,
        p: &Bound,
        x: Var,
        mode: Mode,
    ) -> Result<(Var, Option<BatchMoments>)> {
        let count = match *g.shape(x)? {
            [b, c, l] if c == self.channels() => b * l,
            ref s => {
                return Err(Error::Shape(format!(
                    "batch_norm expects [B, {}, L], got {s:?}",
                    self.channels()
                )))
            }
        };
        match mode {
            Mode::Train => {
                let (y, stats) = g.batch_norm(x, p[self.gamma], p[self.beta], self.eps, None)?;
                let (mean, var) = stats.expect("batch statistics in train mode");
                Ok((y, Some(BatchMoments { mean, var, count })))
            }
            Mode::Eval => {
                let stats = Some((self.running_mean.as_slice(), self.running_var.as_slice()));
                let (y, _) = g.batch_norm(x, p[self.gamma], p[self.beta], self.eps, stats)?;
                Ok((y, None))
            }
        }
    }

    /// Exponential moving update; the variance enters unbiased (n/(n−1)).
    pub fn update_running(&mut self, m: &BatchMoments) {
        let unbias = m.count as f64 / (m.count as f64 - 1.0);
        let k = self.momentum;
        for c in 0..self.channels() {
            self.running_mean[c] = (1.0 - k) * self.running_mean[c] + k * m.mean[c];
            self.running_var[c] = (1.0 - k) * self.running_var[c] + k * m.var[c] * unbias;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use crate::tensor::Tensor;

    fn setup(c: usize) -> (ParamStore, BatchNorm) {
        let mut store = ParamStore::new();
        let bn = BatchNorm::new(&mut store, "bn", c, &mut rng::keyed(0, 0, 0));
        (store, bn)
    }

    #[test]
    fn constant_channel_normalizes_to_zero() {
        let (store, bn) = setup(1);
        let mut g = Graph::new();
        let p = store.bind(&mut g, false);
        let x = g.constant(Tensor::full(&[2, 1, 3], 4.2));
        let (y, _) = bn.forward(&mut g, &p, x, Mode::Train).unwrap();
        assert!(g.value(y).unwrap().data().iter().all(|v| v.abs() < 1e-3));
    }

    #[test]
    fn train_mode_moments() {
        let (store, bn) = setup(2);
        let mut g = Graph::new();
        let p = store.bind(&mut g, false);
        let data: Vec<f64> = (0..2 * 2 * 5).map(|i| ((i * 7) % 11) as f64 * 0.3 - 1.0).collect();
        let x = g.constant(Tensor::new([2, 2, 5], data).unwrap());
        let (y, m) = bn.forward(&mut g, &p, x, Mode::Train).unwrap();
        let m = m.unwrap();
        let y = g.value(y).unwrap().data();
        for c in 0..2 {
            let vals: Vec<f64> = (0..2)
                .flat_map(|b| y[(b * 2 + c) * 5..(b * 2 + c + 1) * 5].to_vec())
                .collect();
            let mean = vals.iter().sum::<f64>() / 10.0;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 10.0;
            assert!(mean.abs() < 1e-9);
            let target = m.var[c] / (m.var[c] + bn.eps);
            assert!((var - target).abs() < 1e-6);
        }
    }

    #[test]
    fn eval_mode_with_neutral_stats_is_identity() {
        let (store, bn) = setup(2);
        let mut g = Graph::new();
        let p = store.bind(&mut g, false);
        let data = vec![0.5, -1.0, 2.0, 0.25];
        let x = g.constant(Tensor::new([1, 2, 2], data.clone()).unwrap());
        let (y, m) = bn.forward(&mut g, &p, x, Mode::Eval).unwrap();
        assert!(m.is_none());
        for (a, b) in g.value(y).unwrap().data().iter().zip(&data) {
            assert!((a - b).abs() < 1e-4 * b.abs().max(1.0));
        }
    }

    #[test]
    fn train_mode_needs_two_values() {
        let (store, bn) = setup(1);
        let mut g = Graph::new();
        let p = store.bind(&mut g, false);
        let x = g.constant(Tensor::zeros(&[1, 1, 1]));
        assert!(bn.forward(&mut g, &p, x, Mode::Train).is_err());
    }

    #[test]
    fn running_update_uses_unbiased_variance() {
        let (_, mut bn) = setup(1);
        bn.update_running(&BatchMoments {
            mean: vec![2.0],
            var: vec![3.0],
            count: 4,
        });
        assert!((bn.running_mean[0] - 0.2).abs() < 1e-15);
        assert!((bn.running_var[0] - (0.9 + 0.1 * 4.0)).abs() < 1e-15);
    }
}

use super::config::ModelConfig;
use crate::nn::{init_params, BatchMoments, Bound, LayerSpec, Linear, Mode, ParamId, ParamStore, ResidualBlock};
use crate::rng::Rng;
use crate::tensor::{Axis, Graph, Reduction, Tensor, Var};
use crate::{Error, Result};

/// Both heads for one document.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DiscriminatorOutput {
    /// Pre-sigmoid realness score.
    pub adv_logit: f64,
    /// Predicted label, in label units.
    pub y_hat: f64,
}

/// Graph handles produced by one batched discriminator pass.
#[derive(Clone, Debug)]
pub struct DiscVars {
    /// `[B]` adversarial logits.
    pub adv: Var,
    /// `[B]` label predictions.
    pub y_hat: Var,
    /// Batch-norm moments in block order (train mode only).
    pub moments: Vec<BatchMoments>,
}

/// Residual 1-D CNN over `D×N` document matrices with a shared fully
/// connected layer feeding an adversarial head and a regression head.
#[derive(Clone, Debug, PartialEq)]
pub struct Discriminator {
    pub params: ParamStore,
    input_conv: ParamId,
    pub blocks: Vec<ResidualBlock>,
    shared: Linear,
    adv_head: Linear,
    reg_head: Linear,
    /// Predictions are `label_shift + label_scale · head`; identity until
    /// a trainer fits them to the labeled set.
    pub label_shift: f64,
    pub label_scale: f64,
    cfg: ModelConfig,
}

impl Discriminator {
    pub fn new(cfg: &ModelConfig, rng: &mut Rng) -> Result<Self> {
        cfg.validate()?;
        let mut params = ParamStore::new();
        let spec = LayerSpec::Conv1d {
            c_in: cfg.embed_dim,
            c_out: cfg.channels,
            kernel: cfg.kernel,
        };
        let (_, k) = init_params(&spec, rng).remove(0);
        let input_conv = params.add("input.kernel", k);
        let blocks = (0..cfg.n_blocks)
            .map(|i| ResidualBlock::new(&mut params, &format!("block{i}"), cfg.channels, cfg.kernel, rng))
            .collect::<Result<Vec<_>>>()?;
        let shared = Linear::new(&mut params, "shared", cfg.channels, cfg.channels, false, rng);
        let adv_head = Linear::new(&mut params, "adv_head", cfg.channels, 1, true, rng);
        let reg_head = Linear::new(&mut params, "reg_head", cfg.channels, 1, true, rng);
        Ok(Discriminator {
            params,
            input_conv,
            blocks,
            shared,
            adv_head,
            reg_head,
            label_shift: 0.0,
            label_scale: 1.0,
            cfg: cfg.clone(),
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    /// Parameter ids of the regression head (weight, bias).
    pub fn regression_head(&self) -> [ParamId; 2] {
        [self.reg_head.weight, self.reg_head.bias]
    }

    /// Parameter ids of the adversarial head (weight, bias).
    pub fn adversarial_head(&self) -> [ParamId; 2] {
        [self.adv_head.weight, self.adv_head.bias]
    }

    /// Batched pass over `docs[B×D×N]`.
    pub fn forward(&self, g: &mut Graph, p: &Bound, docs: Var, mode: Mode) -> Result<DiscVars> {
        let cfg = &self.cfg;
        let batch = match *g.shape(docs)? {
            [b, d, n] if d == cfg.max_len && n == cfg.embed_dim => b,
            ref s => {
                return Err(Error::Shape(format!(
                    "documents must be [B, {}, {}], got {s:?}",
                    cfg.max_len, cfg.embed_dim
                )))
            }
        };
        let pad = (cfg.kernel - 1) / 2;
        let channels_first = g.transpose(docs)?;
        let mut h = g.conv1d(channels_first, p[self.input_conv], pad)?;
        let mut moments = Vec::with_capacity(2 * self.blocks.len());
        for block in &self.blocks {
            let (out, m) = block.forward(g, p, h, mode)?;
            h = out;
            moments.extend(m);
        }
        let pooled = g.reduce(h, Reduction::Mean, Axis::Last)?;
        let shared = self.shared.forward(g, p, pooled)?;
        let shared = g.relu(shared)?;
        let adv = self.adv_head.forward(g, p, shared)?;
        let adv = g.reshape(adv, &[batch])?;
        let reg = self.reg_head.forward(g, p, shared)?;
        let reg = g.reshape(reg, &[batch])?;
        let y_hat = if self.label_shift == 0.0 && self.label_scale == 1.0 {
            reg
        } else {
            let scaled = g.scale(reg, self.label_scale)?;
            let shift = g.constant(Tensor::full(&[batch], self.label_shift));
            g.add(scaled, shift)?
        };
        Ok(DiscVars { adv, y_hat, moments })
    }

    /// Commits train-mode batch statistics to the running statistics.
    pub fn update_running(&mut self, moments: &[BatchMoments]) {
        for (block, m) in self.blocks.iter_mut().zip(moments.chunks(2)) {
            block.update_running(m);
        }
    }

    /// Scores a batch of document matrices outside any training graph.
    pub fn discriminate_batch(&self, docs: &Tensor, mode: Mode) -> Result<Vec<DiscriminatorOutput>> {
        let mut g = Graph::new();
        let p = self.params.bind(&mut g, false);
        let dv = g.leaf(docs, false);
        let out = self.forward(&mut g, &p, dv, mode)?;
        let adv = g.value(out.adv)?.data();
        let y = g.value(out.y_hat)?.data();
        Ok(adv
            .iter()
            .zip(y)
            .map(|(&adv_logit, &y_hat)| DiscriminatorOutput { adv_logit, y_hat })
            .collect())
    }

    /// Scores one `D×N` document. Train mode needs `D ≥ 2`.
    pub fn discriminate(&self, doc: &Tensor, mode: Mode) -> Result<DiscriminatorOutput> {
        let batched = doc.reshaped(&[1, self.cfg.max_len, self.cfg.embed_dim])?;
        Ok(self.discriminate_batch(&batched, mode)?[0])
    }
}

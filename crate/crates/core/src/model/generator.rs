use super::config::{GenerationPath, ModelConfig};
use super::sequence::SoftSequence;
use crate::nn::{Bound, EmbeddingTable, Linear, Lstm, ParamStore};
use crate::rng::Rng;
use crate::tensor::{Graph, Tensor, Var};
use crate::{Error, Result};

/// LSTM sentence decoder conditioned on noise and a target label.
#[derive(Clone, Debug, PartialEq)]
pub struct Generator {
    pub params: ParamStore,
    init_h: Linear,
    init_c: Linear,
    lstm: Lstm,
    output: Linear,
    cfg: ModelConfig,
}

impl Generator {
    pub fn new(cfg: &ModelConfig, rng: &mut Rng) -> Result<Self> {
        cfg.validate()?;
        let mut params = ParamStore::new();
        let zin = cfg.noise_dim + 1;
        let init_h = Linear::new(&mut params, "init_h", zin, cfg.hidden, false, rng);
        let init_c = Linear::new(&mut params, "init_c", zin, cfg.hidden, false, rng);
        let lstm = Lstm::new(&mut params, "lstm", cfg.embed_dim, cfg.hidden, rng);
        let output = Linear::new(&mut params, "output", cfg.hidden, cfg.vocab_size, false, rng);
        Ok(Generator {
            params,
            init_h,
            init_c,
            lstm,
            output,
            cfg: cfg.clone(),
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    /// Batched decoding: `z[B×Z]`, `cond[B×1]` → soft rows `B×D×V`.
    ///
    /// The LSTM input at step t is the previous row's expected embedding
    /// (zero at the first step).
    pub fn forward(
        &self,
        g: &mut Graph,
        p: &Bound,
        table: Var,
        z: Var,
        cond: Var,
        path: GenerationPath,
    ) -> Result<Var> {
        let cfg = &self.cfg;
        let batch = match *g.shape(z)? {
            [b, zd] if zd == cfg.noise_dim => b,
            ref s => {
                return Err(Error::Shape(format!(
                    "noise must be [B, {}], got {s:?}",
                    cfg.noise_dim
                )))
            }
        };
        if g.shape(cond)? != [batch, 1] {
            return Err(Error::Shape(format!(
                "condition must be [{batch}, 1], got {:?}",
                g.shape(cond)?
            )));
        }
        if g.shape(table)? != [cfg.vocab_size, cfg.embed_dim] {
            return Err(Error::Shape("embedding table does not match model config".into()));
        }
        let zc = g.concat(z, cond, 1)?;
        let h0 = self.init_h.forward(g, p, zc)?;
        let mut h = g.tanh(h0)?;
        let c0 = self.init_c.forward(g, p, zc)?;
        let mut c = g.tanh(c0)?;
        let mut x = g.constant(Tensor::zeros(&[batch, cfg.embed_dim]));
        let mut rows = Vec::with_capacity(cfg.max_len);
        for _ in 0..cfg.max_len {
            (h, c) = self.lstm.step(g, p, x, h, c)?;
            let logits = self.output.forward(g, p, h)?;
            let scaled = g.scale(logits, 1.0 / cfg.temperature)?;
            let mut row = g.softmax_rows(scaled)?;
            if path == GenerationPath::StraightThrough {
                row = g.straight_through(row)?;
            }
            x = g.matmul(row, table)?;
            rows.push(g.reshape(row, &[batch, 1, cfg.vocab_size])?);
        }
        g.concat_all(&rows, 1)
    }

    /// Decodes a single `(z, y_cond)` pair outside any training graph.
    pub fn generate(
        &self,
        table: &EmbeddingTable,
        z: &[f64],
        y_cond: f64,
        path: GenerationPath,
    ) -> Result<SoftSequence> {
        if !y_cond.is_finite() {
            return Err(Error::NonFinite(format!("condition {y_cond}")));
        }
        let mut g = Graph::new();
        let p = self.params.bind(&mut g, false);
        let tv = table.bind(&mut g, false);
        let zv = g.constant(Tensor::new([1, z.len()], z.to_vec())?);
        let cond = if self.cfg.conditional { y_cond } else { 0.0 };
        let cv = g.constant(Tensor::new([1, 1], vec![cond])?);
        let out = self.forward(&mut g, &p, tv, zv, cv, path)?;
        let rows = g.value(out)?.reshaped(&[self.cfg.max_len, self.cfg.vocab_size])?;
        SoftSequence::new(rows)
    }
}

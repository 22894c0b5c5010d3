use rand::Rng as _;
use rand_distr::StandardNormal;

use super::adam::{Adam, AdamState};
use super::config::{Precision, TrainConfig};
use super::loss::{discriminator_loss, generator_loss, mae_loss, DiscriminatorLoss};
use super::metrics::{EpochRecord, EvalMetrics, MetricHistory};
use crate::data::{encode_document, make_batches, BatchCycler, Example, Vocabulary};
use crate::model::{soft_embed_var, Discriminator, Generator};
use crate::nn::{BatchMoments, Bound, EmbeddingTable, Mode};
use crate::rng::{self, stream, Rng};
use crate::tensor::{Graph, Tensor, Var};
use crate::{Error, Result};

/// Both networks plus the embedding table they share.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub generator: Generator,
    pub discriminator: Discriminator,
    pub embeddings: EmbeddingTable,
}

impl Model {
    pub fn new(generator: Generator, discriminator: Discriminator, embeddings: EmbeddingTable) -> Result<Self> {
        let cfg = generator.config();
        if discriminator.config() != cfg {
            return Err(Error::Invalid("generator and discriminator configs differ".into()));
        }
        if embeddings.vocab_size() != cfg.vocab_size || embeddings.dim() != cfg.embed_dim {
            return Err(Error::Shape(format!(
                "embedding table is {}×{}, model expects {}×{}",
                embeddings.vocab_size(),
                embeddings.dim(),
                cfg.vocab_size,
                cfg.embed_dim
            )));
        }
        Ok(Model {
            generator,
            discriminator,
            embeddings,
        })
    }

    pub fn max_len(&self) -> usize {
        self.generator.config().max_len
    }

    /// Regression-head predictions in eval mode, batched in chunks.
    pub fn predict(&self, set: &EncodedSet) -> Result<Vec<f64>> {
        const CHUNK: usize = 256;
        if set.max_len != self.max_len() {
            return Err(Error::Shape(format!(
                "documents encoded to length {}, model expects {}",
                set.max_len,
                self.max_len()
            )));
        }
        let chunks: Vec<&[usize]> = set.ids.chunks(CHUNK * set.max_len).collect();
        let run = |ids: &&[usize]| -> Result<Vec<f64>> {
            let mut g = Graph::new();
            let table = self.embeddings.bind(&mut g, false);
            let docs = self.embeddings.lookup(&mut g, table, ids, ids.len() / set.max_len)?;
            let p = self.discriminator.params.bind(&mut g, false);
            let out = self.discriminator.forward(&mut g, &p, docs, Mode::Eval)?;
            Ok(g.value(out.y_hat)?.data().to_vec())
        };
        #[cfg(feature = "parallel")]
        let parts: Vec<Result<Vec<f64>>> = {
            use rayon::prelude::*;
            chunks.par_iter().map(run).collect()
        };
        #[cfg(not(feature = "parallel"))]
        let parts: Vec<Result<Vec<f64>>> = chunks.iter().map(run).collect();
        let mut out = Vec::with_capacity(set.len());
        for p in parts {
            out.extend(p?);
        }
        Ok(out)
    }
}

/// Documents encoded to fixed-length id rows, with labels when every
/// example has one.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedSet {
    ids: Vec<usize>,
    labels: Option<Vec<f64>>,
    max_len: usize,
}

impl EncodedSet {
    pub fn encode(examples: &[Example], vocab: &Vocabulary, max_len: usize) -> Self {
        let ids = examples
            .iter()
            .flat_map(|e| encode_document(&e.tokens, vocab, max_len))
            .collect();
        let labels = examples.iter().map(|e| e.label).collect();
        EncodedSet { ids, labels, max_len }
    }

    pub fn from_ids(ids: Vec<usize>, labels: Option<Vec<f64>>, max_len: usize) -> Result<Self> {
        if max_len == 0 || ids.len() % max_len != 0 {
            return Err(Error::Shape(format!("{} ids do not split into rows of {max_len}", ids.len())));
        }
        if let Some(l) = &labels {
            if l.len() != ids.len() / max_len {
                return Err(Error::Shape(format!("{} labels for {} documents", l.len(), ids.len() / max_len)));
            }
        }
        Ok(EncodedSet { ids, labels, max_len })
    }

    pub fn len(&self) -> usize {
        self.ids.len() / self.max_len
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn max_len(&self) -> usize {
        self.max_len
    }

    pub fn doc(&self, i: usize) -> &[usize] {
        &self.ids[i * self.max_len..(i + 1) * self.max_len]
    }

    pub fn labels(&self) -> Option<&[f64]> {
        self.labels.as_deref()
    }

    fn require_labels(&self, what: &str) -> Result<&[f64]> {
        self.labels()
            .ok_or_else(|| Error::Invalid(format!("{what} set contains unlabeled examples")))
    }
}

/// Real documents for one discriminator update: the first `labels.len()`
/// documents are labeled.
#[derive(Clone, Debug, PartialEq)]
pub struct RealBatch {
    pub ids: Vec<usize>,
    pub docs: usize,
    pub labels: Vec<f64>,
}

/// Generator inputs: noise `B×Z` and conditioning labels `B×1`.
#[derive(Clone, Debug, PartialEq)]
pub struct Noise {
    pub z: Tensor,
    pub cond: Tensor,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepMetrics {
    pub d_loss: f64,
    pub g_loss: f64,
    /// Labeled-batch MAE before the update.
    pub batch_mae: f64,
}

struct DGraph {
    loss: DiscriminatorLoss,
    // read by the gradient-isolation tests
    #[allow(dead_code)]
    gen: Bound,
    disc: Bound,
    table: Var,
    moments: Vec<BatchMoments>,
}

struct GGraph {
    loss: Var,
    gen: Bound,
    #[allow(dead_code)]
    disc: Bound,
}

fn finite_or_abort(v: f64, what: &str, step: u64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Numerical(format!("{what} is {v} at step {step}; training diverged")))
    }
}

fn round_to(precision: Precision, params: &mut [Tensor]) {
    if precision == Precision::F32 {
        for p in params {
            p.data_mut().iter_mut().for_each(|v| *v = *v as f32 as f64);
        }
    }
}

/// Mutable training state: networks, optimizer moments, and stream
/// positions.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub model: Model,
    pub cfg: TrainConfig,
    pub opt_g: AdamState,
    pub opt_d: AdamState,
    pub opt_e: AdamState,
    /// Labels sampled as generator conditions.
    pub cond_pool: Vec<f64>,
    /// Completed epochs.
    pub epoch: usize,
    /// Completed train steps.
    pub step: u64,
    pub cycler: Option<BatchCycler>,
}

impl Trainer {
    /// Fresh state. With `standardize_labels` the regression head works in
    /// units of the labeled set's mean and standard deviation.
    pub fn new(mut model: Model, cfg: TrainConfig, labeled: &EncodedSet, unlabeled_len: usize) -> Result<Self> {
        cfg.validate()?;
        let labels = labeled.require_labels("labeled")?;
        if labels.is_empty() {
            return Err(Error::Invalid("training needs at least one labeled example".into()));
        }
        if cfg.standardize_labels {
            let n = labels.len() as f64;
            let mean = labels.iter().sum::<f64>() / n;
            let sd = (labels.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / n).sqrt();
            model.discriminator.label_shift = mean;
            model.discriminator.label_scale = if sd > 1e-12 { sd } else { 1.0 };
        }
        let cycler = if cfg.use_unlabeled && unlabeled_len > 0 {
            Some(BatchCycler::new(unlabeled_len, cfg.batch_unlabeled, cfg.seed)?)
        } else {
            None
        };
        Ok(Trainer {
            opt_g: AdamState::new(model.generator.params.tensors()),
            opt_d: AdamState::new(model.discriminator.params.tensors()),
            opt_e: AdamState::new(model.embeddings.params.tensors()),
            cond_pool: labels.to_vec(),
            epoch: 0,
            step: 0,
            cycler,
            model,
            cfg,
        })
    }

    fn adam(&self) -> Adam {
        Adam {
            lr: self.cfg.learning_rate,
            beta1: self.cfg.beta1,
            beta2: self.cfg.beta2,
            eps: self.cfg.adam_eps,
        }
    }

    /// Standard-normal noise and conditions drawn from the labeled labels
    /// (zero for an unconditional model).
    pub fn sample_noise(&self, rng: &mut Rng, n: usize) -> Result<Noise> {
        let zd = self.model.generator.config().noise_dim;
        let z: Vec<f64> = (0..n * zd).map(|_| rng.sample(StandardNormal)).collect();
        let conditional = self.model.generator.config().conditional;
        let cond: Vec<f64> = (0..n)
            .map(|_| {
                if conditional {
                    self.cond_pool[rng.random_range(0..self.cond_pool.len())]
                } else {
                    0.0
                }
            })
            .collect();
        Ok(Noise {
            z: Tensor::new([n, zd], z)?,
            cond: Tensor::new([n, 1], cond)?,
        })
    }

    /// Generated documents `B×D×N` on `g`.
    fn fake_docs(&self, g: &mut Graph, gen: &Bound, table: Var, noise: &Noise) -> Result<Var> {
        let z = g.constant(noise.z.clone());
        let cond = g.constant(noise.cond.clone());
        let rows = self
            .model
            .generator
            .forward(g, gen, table, z, cond, self.cfg.generation_path)?;
        soft_embed_var(g, rows, table)
    }

    fn d_graph(&self, g: &mut Graph, batch: &RealBatch, noise: &Noise, gen_trainable: bool) -> Result<DGraph> {
        let m = &self.model;
        let table = m.embeddings.bind(g, true);
        let gen = m.generator.params.bind(g, gen_trainable);
        let disc = m.discriminator.params.bind(g, true);

        // Detached: the discriminator sees the generated values only.
        let fixed_table = g.constant(m.embeddings.matrix().clone());
        let generated = self.fake_docs(g, &gen, fixed_table, noise)?;
        let fake_value = g.value(generated)?.clone();
        let fake_in = g.constant(fake_value);

        let real_in = m.embeddings.lookup(g, table, &batch.ids, batch.docs)?;
        let real = m.discriminator.forward(g, &disc, real_in, Mode::Train)?;
        let fake = m.discriminator.forward(g, &disc, fake_in, Mode::Train)?;

        let n_lab = batch.labels.len();
        let labeled = if n_lab > 0 {
            let y_hat = g.narrow(real.y_hat, 0, 0, n_lab)?;
            let y = g.constant(Tensor::new([n_lab], batch.labels.clone())?);
            Some((y_hat, y))
        } else {
            None
        };
        let mut loss = discriminator_loss(g, real.adv, fake.adv, labeled, self.cfg.lambda_reg)?;
        if self.cfg.regress_generated && self.cfg.lambda_reg > 0.0 {
            let n_fake = noise.cond.shape()[0];
            let target = g.constant(noise.cond.reshaped(&[n_fake])?);
            let mae = mae_loss(g, fake.y_hat, target)?;
            let weighted = g.scale(mae, self.cfg.lambda_reg)?;
            loss.total = g.add(loss.total, weighted)?;
        }
        Ok(DGraph {
            loss,
            gen,
            disc,
            table,
            moments: real.moments,
        })
    }

    fn g_graph(&self, g: &mut Graph, noise: &Noise, disc_trainable: bool) -> Result<GGraph> {
        let m = &self.model;
        let gen = m.generator.params.bind(g, true);
        let disc = m.discriminator.params.bind(g, disc_trainable);
        let table = g.constant(m.embeddings.matrix().clone());
        let docs = self.fake_docs(g, &gen, table, noise)?;
        let out = m.discriminator.forward(g, &disc, docs, Mode::Train)?;
        let loss = generator_loss(g, out.adv)?;
        Ok(GGraph { loss, gen, disc })
    }

    /// Discriminator objective on a fixed batch, without updating anything.
    pub fn discriminator_loss_value(&self, batch: &RealBatch, noise: &Noise) -> Result<f64> {
        let mut g = Graph::new();
        let d = self.d_graph(&mut g, batch, noise, false)?;
        Ok(g.value(d.loss.total)?.data()[0])
    }

    /// Generator objective for fixed noise, without updating anything.
    pub fn generator_loss_value(&self, noise: &Noise) -> Result<f64> {
        let mut g = Graph::new();
        let gg = self.g_graph(&mut g, noise, false)?;
        Ok(g.value(gg.loss)?.data()[0])
    }

    /// One discriminator (and embedding, if trainable) update; commits the
    /// real batch's normalization statistics. Returns the loss and the
    /// labeled MAE before the update.
    pub fn update_discriminator(&mut self, batch: &RealBatch, noise: &Noise) -> Result<(f64, Option<f64>)> {
        let mut g = Graph::new();
        let d = self.d_graph(&mut g, batch, noise, false)?;
        let loss = finite_or_abort(g.value(d.loss.total)?.data()[0], "discriminator loss", self.step)?;
        let mae = match d.loss.regression {
            Some(v) => Some(g.value(v)?.data()[0]),
            None => None,
        };
        g.backward(d.loss.total)?;
        let hp = self.adam();
        let m = &mut self.model;
        m.discriminator.params.collect_grads(&g, &d.disc)?;
        self.opt_d.step(&hp, m.discriminator.params.tensors_mut())?;
        m.discriminator.params.zero_grads();
        round_to(self.cfg.precision, m.discriminator.params.tensors_mut());
        m.discriminator.update_running(&d.moments);
        if m.embeddings.trainable {
            m.embeddings.collect_grad(&g, d.table)?;
            self.opt_e.step(&hp, m.embeddings.params.tensors_mut())?;
            m.embeddings.params.zero_grads();
            round_to(self.cfg.precision, m.embeddings.params.tensors_mut());
            m.embeddings.enforce_pad();
        }
        Ok((loss, mae))
    }

    /// One generator update through the differentiable generation path.
    pub fn update_generator(&mut self, noise: &Noise) -> Result<f64> {
        let mut g = Graph::new();
        let gg = self.g_graph(&mut g, noise, false)?;
        let loss = finite_or_abort(g.value(gg.loss)?.data()[0], "generator loss", self.step)?;
        g.backward(gg.loss)?;
        let hp = self.adam();
        let gen = &mut self.model.generator.params;
        gen.collect_grads(&g, &gg.gen)?;
        self.opt_g.step(&hp, gen.tensors_mut())?;
        gen.zero_grads();
        round_to(self.cfg.precision, gen.tensors_mut());
        Ok(loss)
    }

    /// d_steps discriminator updates then one generator update, for the
    /// given labeled indices and the next unlabeled batch.
    pub fn train_step(
        &mut self,
        labeled: &EncodedSet,
        unlabeled: Option<&EncodedSet>,
        labeled_idx: &[usize],
    ) -> Result<StepMetrics> {
        if labeled_idx.is_empty() {
            return Err(Error::Invalid("empty labeled batch".into()));
        }
        let labels_all = labeled.require_labels("labeled")?;
        let mut ids = Vec::new();
        let mut labels = Vec::with_capacity(labeled_idx.len());
        for &i in labeled_idx {
            ids.extend_from_slice(labeled.doc(i));
            labels.push(labels_all[i]);
        }
        let mut docs = labeled_idx.len();
        if let (Some(cycler), Some(pool)) = (self.cycler.as_mut(), unlabeled) {
            for &i in cycler.next_batch() {
                ids.extend_from_slice(pool.doc(i));
                docs += 1;
            }
        }
        let batch = RealBatch { ids, docs, labels };

        let mut rng = rng::keyed(self.cfg.seed, stream::NOISE, self.step);
        let mut d_total = 0.0;
        let mut batch_mae = 0.0;
        for k in 0..self.cfg.d_steps {
            let noise = self.sample_noise(&mut rng, self.cfg.batch_generated)?;
            let (loss, mae) = self.update_discriminator(&batch, &noise)?;
            d_total += loss;
            if k == 0 {
                batch_mae = mae.ok_or_else(|| Error::Invalid("labeled batch produced no regression term".into()))?;
            }
        }
        let noise = self.sample_noise(&mut rng, self.cfg.batch_generated)?;
        let g_loss = self.update_generator(&noise)?;
        self.step += 1;
        Ok(StepMetrics {
            d_loss: d_total / self.cfg.d_steps as f64,
            g_loss,
            batch_mae,
        })
    }

    /// One pass over the labeled set; returns mean (d_loss, g_loss, mae).
    pub fn run_epoch(&mut self, labeled: &EncodedSet, unlabeled: Option<&EncodedSet>) -> Result<(f64, f64, f64)> {
        let batches = make_batches(labeled.len(), self.cfg.batch_labeled, self.cfg.seed, self.epoch as u64)?;
        let (mut d, mut gl, mut mae) = (0.0, 0.0, 0.0);
        for b in &batches {
            let s = self.train_step(labeled, unlabeled, b)?;
            d += s.d_loss;
            gl += s.g_loss;
            mae += s.batch_mae;
        }
        self.epoch += 1;
        let n = batches.len() as f64;
        Ok((d / n, gl / n, mae / n))
    }
}

/// Result of a training run.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub trainer: Trainer,
    /// Networks at the epoch with the lowest validation MAE (the initial
    /// networks when no epoch ran).
    pub best: Model,
    /// 0 when no epoch ran.
    pub best_epoch: usize,
    pub history: MetricHistory,
}

/// Trains from scratch; see [`train_with`].
pub fn train(
    model: Model,
    cfg: TrainConfig,
    labeled: &EncodedSet,
    unlabeled: &EncodedSet,
    validation: &EncodedSet,
) -> Result<TrainOutcome> {
    let trainer = Trainer::new(model, cfg, labeled, unlabeled.len())?;
    train_with(trainer, labeled, unlabeled, validation, |_, _, _| Ok(()))
}

/// Runs the remaining epochs of `trainer`, calling `on_epoch` after each
/// one with its record and whether it is the new best.
pub fn train_with<F>(
    mut trainer: Trainer,
    labeled: &EncodedSet,
    unlabeled: &EncodedSet,
    validation: &EncodedSet,
    mut on_epoch: F,
) -> Result<TrainOutcome>
where
    F: FnMut(&EpochRecord, &Trainer, bool) -> Result<()>,
{
    validation.require_labels("validation")?;
    if validation.is_empty() {
        return Err(Error::Invalid("validation set is empty".into()));
    }
    let mut history = MetricHistory::default();
    let mut best = trainer.model.clone();
    let mut best_epoch = 0;
    let mut best_mae = f64::INFINITY;
    let pool = (!unlabeled.is_empty()).then_some(unlabeled);
    while trainer.epoch < trainer.cfg.epochs {
        let (d_loss, g_loss, train_mae) = trainer.run_epoch(labeled, pool)?;
        let val = evaluate(&trainer.model, validation)?;
        let record = EpochRecord {
            epoch: trainer.epoch,
            d_loss,
            g_loss,
            train_mae,
            val_mae: finite_or_abort(val.mae, "validation MAE", trainer.step)?,
            val_rmse: val.rmse,
        };
        let improved = record.val_mae < best_mae;
        if improved {
            best_mae = record.val_mae;
            best = trainer.model.clone();
            best_epoch = record.epoch;
        }
        history.records.push(record);
        on_epoch(&record, &trainer, improved)?;
    }
    Ok(TrainOutcome {
        trainer,
        best,
        best_epoch,
        history,
    })
}

/// MAE and RMSE of the regression head on a labeled set, in eval mode.
pub fn evaluate(model: &Model, set: &EncodedSet) -> Result<EvalMetrics> {
    let labels = set.require_labels("evaluation")?;
    if labels.is_empty() {
        return Err(Error::Invalid("cannot evaluate on an empty dataset".into()));
    }
    let pred = model.predict(set)?;
    EvalMetrics::compute(&pred, labels).ok_or_else(|| Error::Shape("prediction count mismatch".into()))
}

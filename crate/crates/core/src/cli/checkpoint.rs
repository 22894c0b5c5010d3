//! Binary checkpoints: magic, version, then named sections of
//! `(name, rank, dims, little-endian f64 values)`.

use std::fs;
use std::path::Path;

use crate::data::{BatchCycler, Vocabulary};
use crate::model::{build_model, GenerationPath, ModelConfig};
use crate::nn::{EmbeddingTable, ParamStore};
use crate::tensor::Tensor;
use crate::train::{AdamState, Model, Precision, TrainConfig, Trainer};
use crate::{Error, Result};

pub const MAGIC: &[u8; 8] = b"TRGANCKP";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Section {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Section {
    fn vector(name: impl Into<String>, data: Vec<f64>) -> Self {
        Section {
            name: name.into(),
            shape: vec![data.len()],
            data,
        }
    }

    fn tensor(name: impl Into<String>, t: &Tensor) -> Self {
        Section {
            name: name.into(),
            shape: t.shape().to_vec(),
            data: t.data().to_vec(),
        }
    }
}

pub fn encode_sections(sections: &[Section]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    for s in sections {
        out.extend_from_slice(&(s.name.len() as u32).to_le_bytes());
        out.extend_from_slice(s.name.as_bytes());
        out.extend_from_slice(&(s.shape.len() as u32).to_le_bytes());
        for &d in &s.shape {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in &s.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Checkpoint(format!("truncated at byte {}", self.pos)));
        }
        self.pos += n;
        Ok(&self.bytes[self.pos - n..self.pos])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn decode_sections(bytes: &[u8]) -> Result<Vec<Section>> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(MAGIC.len()).ok() != Some(MAGIC.as_slice()) {
        return Err(Error::Checkpoint("not a checkpoint file (bad magic)".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!(
            "format version {version} is not supported (expected {VERSION})"
        )));
    }
    let mut sections = Vec::new();
    while r.pos < bytes.len() {
        let len = r.u32()? as usize;
        let name = String::from_utf8(r.take(len)?.to_vec())
            .map_err(|_| Error::Checkpoint("section name is not UTF-8".into()))?;
        let rank = r.u32()? as usize;
        if rank > 8 {
            return Err(Error::Checkpoint(format!("section `{name}` has rank {rank}")));
        }
        let shape = (0..rank)
            .map(|_| r.u64().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let count = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .filter(|&c| c <= bytes.len())
            .ok_or_else(|| Error::Checkpoint(format!("section `{name}` is too large")))?;
        let data = (0..count)
            .map(|_| r.u64().map(f64::from_bits))
            .collect::<Result<Vec<_>>>()?;
        sections.push(Section { name, shape, data });
    }
    Ok(sections)
}

/// A restorable training state plus the vocabulary needed to encode text.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub trainer: Trainer,
    pub vocab: Vocabulary,
}

fn split_u64(v: u64) -> [f64; 2] {
    [(v & 0xFFFF_FFFF) as f64, (v >> 32) as f64]
}

fn join_u64(lo: f64, hi: f64) -> u64 {
    (lo as u64) | ((hi as u64) << 32)
}

fn bool_f(b: bool) -> f64 {
    if b {
        1.0
    } else {
        0.0
    }
}

fn push_store(out: &mut Vec<Section>, prefix: &str, store: &ParamStore) {
    for (name, t) in store.iter() {
        out.push(Section::tensor(format!("{prefix}/{name}"), t));
    }
}

fn push_adam(out: &mut Vec<Section>, prefix: &str, store: &ParamStore, st: &AdamState) {
    out.push(Section::vector(format!("adam/{prefix}/t"), split_u64(st.t).to_vec()));
    for (((name, t), m), v) in store.iter().zip(&st.m).zip(&st.v) {
        out.push(Section {
            name: format!("adam/{prefix}/m/{name}"),
            shape: t.shape().to_vec(),
            data: m.clone(),
        });
        out.push(Section {
            name: format!("adam/{prefix}/v/{name}"),
            shape: t.shape().to_vec(),
            data: v.clone(),
        });
    }
}

impl Checkpoint {
    pub fn to_sections(&self) -> Vec<Section> {
        let t = &self.trainer;
        let m = &t.model;
        let mc = m.generator.config();
        let tc = &t.cfg;
        let mut out = vec![
            Section::vector(
                "model_config",
                vec![
                    mc.vocab_size as f64,
                    mc.embed_dim as f64,
                    mc.max_len as f64,
                    mc.hidden as f64,
                    mc.noise_dim as f64,
                    mc.channels as f64,
                    mc.kernel as f64,
                    mc.n_blocks as f64,
                    mc.temperature,
                    bool_f(mc.conditional),
                ],
            ),
            Section::vector("train_config", {
                let mut v = vec![
                    tc.learning_rate,
                    tc.beta1,
                    tc.beta2,
                    tc.adam_eps,
                    tc.lambda_reg,
                    tc.batch_labeled as f64,
                    tc.batch_unlabeled as f64,
                    tc.batch_generated as f64,
                    tc.epochs as f64,
                ];
                v.extend(split_u64(tc.seed));
                v.extend([
                    tc.d_steps as f64,
                    bool_f(tc.precision == Precision::F32),
                    bool_f(tc.generation_path == GenerationPath::StraightThrough),
                    bool_f(tc.regress_generated),
                    bool_f(tc.standardize_labels),
                    bool_f(tc.use_unlabeled),
                ]);
                v
            }),
            Section::vector("state", {
                let mut v = vec![t.epoch as f64];
                v.extend(split_u64(t.step));
                v.push(bool_f(m.embeddings.trainable));
                match &t.cycler {
                    Some(c) => {
                        let (pass, pos) = c.state();
                        v.extend([1.0, c.len() as f64]);
                        v.extend(split_u64(pass));
                        v.push(pos as f64);
                    }
                    None => v.extend([0.0; 5]),
                }
                v
            }),
            Section::vector(
                "label_scaler",
                vec![m.discriminator.label_shift, m.discriminator.label_scale],
            ),
            Section::vector("cond_pool", t.cond_pool.clone()),
            Section::vector(
                "vocab",
                self.vocab
                    .words()
                    .collect::<Vec<_>>()
                    .join("\n")
                    .bytes()
                    .map(f64::from)
                    .collect(),
            ),
            Section::tensor("embedding", m.embeddings.matrix()),
        ];
        push_store(&mut out, "gen", &m.generator.params);
        push_store(&mut out, "disc", &m.discriminator.params);
        for (i, b) in m.discriminator.blocks.iter().enumerate() {
            for (j, bn) in [&b.bn1, &b.bn2].into_iter().enumerate() {
                out.push(Section::vector(format!("bn/{i}/{j}/mean"), bn.running_mean.clone()));
                out.push(Section::vector(format!("bn/{i}/{j}/var"), bn.running_var.clone()));
            }
        }
        push_adam(&mut out, "gen", &m.generator.params, &t.opt_g);
        push_adam(&mut out, "disc", &m.discriminator.params, &t.opt_d);
        push_adam(&mut out, "emb", &m.embeddings.params, &t.opt_e);
        out
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        encode_sections(&self.to_sections())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let sections = decode_sections(bytes)?;
        let lookup = Sections { sections: &sections };

        let mc = lookup.vector("model_config", 10)?;
        let model_cfg = ModelConfig {
            vocab_size: mc[0] as usize,
            embed_dim: mc[1] as usize,
            max_len: mc[2] as usize,
            hidden: mc[3] as usize,
            noise_dim: mc[4] as usize,
            channels: mc[5] as usize,
            kernel: mc[6] as usize,
            n_blocks: mc[7] as usize,
            temperature: mc[8],
            conditional: mc[9] != 0.0,
        };
        model_cfg
            .validate()
            .map_err(|e| Error::Checkpoint(format!("stored model config is invalid: {e}")))?;
        let tc = lookup.vector("train_config", 17)?;
        let train_cfg = TrainConfig {
            learning_rate: tc[0],
            beta1: tc[1],
            beta2: tc[2],
            adam_eps: tc[3],
            lambda_reg: tc[4],
            batch_labeled: tc[5] as usize,
            batch_unlabeled: tc[6] as usize,
            batch_generated: tc[7] as usize,
            epochs: tc[8] as usize,
            seed: join_u64(tc[9], tc[10]),
            d_steps: tc[11] as usize,
            precision: if tc[12] != 0.0 { Precision::F32 } else { Precision::F64 },
            generation_path: if tc[13] != 0.0 {
                GenerationPath::StraightThrough
            } else {
                GenerationPath::Soft
            },
            regress_generated: tc[14] != 0.0,
            standardize_labels: tc[15] != 0.0,
            use_unlabeled: tc[16] != 0.0,
        };
        train_cfg
            .validate()
            .map_err(|e| Error::Checkpoint(format!("stored training config is invalid: {e}")))?;
        let st = lookup.vector("state", 9)?;
        let scaler = lookup.vector("label_scaler", 2)?;
        let cond_pool = lookup.get("cond_pool")?.data.clone();
        if cond_pool.is_empty() {
            return Err(Error::Checkpoint("empty condition pool".into()));
        }
        let vocab_bytes: Vec<u8> = lookup.get("vocab")?.data.iter().map(|&b| b as u8).collect();
        let vocab_text =
            String::from_utf8(vocab_bytes).map_err(|_| Error::Checkpoint("vocabulary is not UTF-8".into()))?;
        let vocab = if vocab_text.is_empty() {
            Vocabulary::new()
        } else {
            Vocabulary::from_tokens(vocab_text.split('\n'))
                .map_err(|e| Error::Checkpoint(format!("vocabulary: {e}")))?
        };
        if vocab.len() != model_cfg.vocab_size {
            return Err(Error::Checkpoint(format!(
                "vocabulary has {} entries, model expects {}",
                vocab.len(),
                model_cfg.vocab_size
            )));
        }

        let emb = lookup.tensor("embedding", &[model_cfg.vocab_size, model_cfg.embed_dim])?;
        let embeddings = EmbeddingTable::new(emb, st[3] != 0.0)?;
        let (mut gen, mut disc) = build_model(&model_cfg, 0)?;
        lookup.fill_store("gen", &mut gen.params)?;
        lookup.fill_store("disc", &mut disc.params)?;
        for (i, b) in disc.blocks.iter_mut().enumerate() {
            for (j, bn) in [&mut b.bn1, &mut b.bn2].into_iter().enumerate() {
                bn.running_mean = lookup.vector(&format!("bn/{i}/{j}/mean"), model_cfg.channels)?.to_vec();
                bn.running_var = lookup.vector(&format!("bn/{i}/{j}/var"), model_cfg.channels)?.to_vec();
            }
        }
        disc.label_shift = scaler[0];
        disc.label_scale = scaler[1];
        let opt_g = lookup.adam("gen", &gen.params)?;
        let opt_d = lookup.adam("disc", &disc.params)?;
        let opt_e = lookup.adam("emb", &embeddings.params)?;
        let cycler = if st[4] != 0.0 {
            Some(BatchCycler::resume(
                st[5] as usize,
                train_cfg.batch_unlabeled,
                train_cfg.seed,
                join_u64(st[6], st[7]),
                st[8] as usize,
            )?)
        } else {
            None
        };
        let used = 7 + gen.params.len() + disc.params.len() + 4 * disc.blocks.len()
            + 3 + 2 * (gen.params.len() + disc.params.len() + embeddings.params.len());
        if used != sections.len() {
            return Err(Error::Checkpoint(format!(
                "{} sections present, {used} expected",
                sections.len()
            )));
        }
        let model = Model::new(gen, disc, embeddings)?;
        Ok(Checkpoint {
            trainer: Trainer {
                model,
                cfg: train_cfg,
                opt_g,
                opt_d,
                opt_e,
                cond_pool,
                epoch: st[0] as usize,
                step: join_u64(st[1], st[2]),
                cycler,
            },
            vocab,
        })
    }
}

struct Sections<'a> {
    sections: &'a [Section],
}

impl<'a> Sections<'a> {
    fn get(&self, name: &str) -> Result<&'a Section> {
        self.sections
            .iter()
            .find(|s| s.name == name)
            .ok_or_else(|| Error::Checkpoint(format!("missing section `{name}`")))
    }

    fn vector(&self, name: &str, len: usize) -> Result<&'a [f64]> {
        let s = self.get(name)?;
        if s.shape != [len] {
            return Err(Error::Checkpoint(format!(
                "section `{name}` has shape {:?}, expected [{len}]",
                s.shape
            )));
        }
        Ok(&s.data)
    }

    fn tensor(&self, name: &str, shape: &[usize]) -> Result<Tensor> {
        let s = self.get(name)?;
        if s.shape != shape {
            return Err(Error::Checkpoint(format!(
                "section `{name}` has shape {:?}, expected {shape:?}",
                s.shape
            )));
        }
        Tensor::new(s.shape.clone(), s.data.clone())
            .map_err(|e| Error::Checkpoint(format!("section `{name}`: {e}")))
    }

    fn fill_store(&self, prefix: &str, store: &mut ParamStore) -> Result<()> {
        let mut loaded = Vec::with_capacity(store.len());
        for (name, t) in store.iter() {
            loaded.push((name.to_string(), self.tensor(&format!("{prefix}/{name}"), t.shape())?));
        }
        store.load_values(loaded.iter().map(|(n, t)| (n.as_str(), t)))
    }

    fn adam(&self, prefix: &str, store: &ParamStore) -> Result<AdamState> {
        let t = self.vector(&format!("adam/{prefix}/t"), 2)?;
        let mut st = AdamState::new(store.tensors());
        st.t = join_u64(t[0], t[1]);
        for (i, (name, p)) in store.iter().enumerate() {
            st.m[i] = self.tensor(&format!("adam/{prefix}/m/{name}"), p.shape())?.into_data();
            st.v[i] = self.tensor(&format!("adam/{prefix}/v/{name}"), p.shape())?.into_data();
        }
        Ok(st)
    }
}

//! `key = value` run configuration files.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::model::ModelConfig;
use crate::train::TrainConfig;
use crate::{Error, Result};

/// Everything `train` needs. `vocab_size` and `embed_dim` in `model` are
/// placeholders until the embedding file is read.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub freeze_embeddings: bool,
    pub embeddings: PathBuf,
    /// Mixed labeled/unlabeled TSV.
    pub train_corpus: PathBuf,
    /// Extra unlabeled documents; labels in this file are ignored.
    pub unlabeled: Option<PathBuf>,
    pub validation: PathBuf,
    pub output_dir: PathBuf,
}

const KEYS: &[&str] = &[
    "max_doc_len",
    "hidden_size",
    "noise_dim",
    "channels",
    "kernel_size",
    "n_blocks",
    "temperature",
    "conditional",
    "learning_rate",
    "beta1",
    "beta2",
    "adam_eps",
    "lambda_reg",
    "batch_labeled",
    "batch_unlabeled",
    "batch_generated",
    "epochs",
    "seed",
    "d_steps",
    "precision",
    "generation_path",
    "regress_generated",
    "standardize_labels",
    "use_unlabeled",
    "freeze_embeddings",
    "embeddings",
    "train",
    "unlabeled",
    "validation",
    "output_dir",
];

fn value<T: FromStr>(key: &str, raw: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    raw.parse().map_err(|e: T::Err| Error::Config {
        key: key.into(),
        msg: format!("cannot parse `{raw}`: {e}"),
    })
}

fn flag(key: &str, raw: &str) -> Result<bool> {
    match raw {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(Error::Config {
            key: key.into(),
            msg: format!("expected true or false, got `{raw}`"),
        }),
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, path, base)
    }

    /// Parses config text; relative paths resolve against `base`.
    pub fn parse(text: &str, path: &Path, base: &Path) -> Result<Self> {
        let mut pairs: BTreeMap<&str, &str> = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(Error::parse(path, i + 1, format!("expected `key = value`, got `{line}`")));
            };
            let (k, v) = (k.trim(), v.trim());
            let Some(&key) = KEYS.iter().find(|&&known| known == k) else {
                return Err(Error::parse(path, i + 1, format!("unknown key `{k}`")));
            };
            if pairs.insert(key, v).is_some() {
                return Err(Error::parse(path, i + 1, format!("duplicate key `{k}`")));
            }
        }

        let mut model = ModelConfig::default();
        let mut train = TrainConfig::default();
        let mut freeze_embeddings = true;
        let mut paths: BTreeMap<&str, PathBuf> = BTreeMap::new();
        for (&key, &raw) in &pairs {
            match key {
                "max_doc_len" => model.max_len = value(key, raw)?,
                "hidden_size" => model.hidden = value(key, raw)?,
                "noise_dim" => model.noise_dim = value(key, raw)?,
                "channels" => model.channels = value(key, raw)?,
                "kernel_size" => model.kernel = value(key, raw)?,
                "n_blocks" => model.n_blocks = value(key, raw)?,
                "temperature" => model.temperature = value(key, raw)?,
                "conditional" => model.conditional = flag(key, raw)?,
                "learning_rate" => train.learning_rate = value(key, raw)?,
                "beta1" => train.beta1 = value(key, raw)?,
                "beta2" => train.beta2 = value(key, raw)?,
                "adam_eps" => train.adam_eps = value(key, raw)?,
                "lambda_reg" => train.lambda_reg = value(key, raw)?,
                "batch_labeled" => train.batch_labeled = value(key, raw)?,
                "batch_unlabeled" => train.batch_unlabeled = value(key, raw)?,
                "batch_generated" => train.batch_generated = value(key, raw)?,
                "epochs" => train.epochs = value(key, raw)?,
                "seed" => train.seed = value(key, raw)?,
                "d_steps" => train.d_steps = value(key, raw)?,
                "precision" => train.precision = value(key, raw)?,
                "generation_path" => train.generation_path = value(key, raw)?,
                "regress_generated" => train.regress_generated = flag(key, raw)?,
                "standardize_labels" => train.standardize_labels = flag(key, raw)?,
                "use_unlabeled" => train.use_unlabeled = flag(key, raw)?,
                "freeze_embeddings" => freeze_embeddings = flag(key, raw)?,
                _ => {
                    let p = Path::new(raw);
                    paths.insert(key, if p.is_absolute() { p.to_path_buf() } else { base.join(p) });
                }
            }
        }
        let mut required = |key: &str| {
            paths.remove(key).ok_or_else(|| Error::Config {
                key: key.into(),
                msg: "required key is missing".into(),
            })
        };
        let cfg = RunConfig {
            embeddings: required("embeddings")?,
            train_corpus: required("train")?,
            validation: required("validation")?,
            output_dir: required("output_dir")?,
            unlabeled: paths.remove("unlabeled"),
            model,
            train,
            freeze_embeddings,
        };
        for (key, p) in [
            ("embeddings", Some(&cfg.embeddings)),
            ("train", Some(&cfg.train_corpus)),
            ("validation", Some(&cfg.validation)),
            ("unlabeled", cfg.unlabeled.as_ref()),
        ] {
            if let Some(p) = p {
                if !p.is_file() {
                    return Err(Error::Config {
                        key: key.into(),
                        msg: format!("file {} does not exist", p.display()),
                    });
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<()> {
        let as_config = |e: Error, key: &str| match e {
            Error::Invalid(msg) => Error::Config { key: key.into(), msg },
            other => other,
        };
        self.train.validate().map_err(|e| as_config(e, "training"))?;
        // vocab_size/embed_dim are filled in later; check the rest here
        let m = ModelConfig {
            vocab_size: self.model.vocab_size.max(3),
            embed_dim: self.model.embed_dim.max(1),
            ..self.model.clone()
        };
        m.validate().map_err(|e| as_config(e, "model"))
    }

    /// Canonical `key = value` listing of every setting, paths included.
    pub fn render(&self) -> String {
        let m = &self.model;
        let t = &self.train;
        let mut s = String::new();
        let mut kv = |k: &str, v: &dyn std::fmt::Display| {
            writeln!(s, "{k} = {v}").unwrap();
        };
        kv("max_doc_len", &m.max_len);
        kv("hidden_size", &m.hidden);
        kv("noise_dim", &m.noise_dim);
        kv("channels", &m.channels);
        kv("kernel_size", &m.kernel);
        kv("n_blocks", &m.n_blocks);
        kv("temperature", &m.temperature);
        kv("conditional", &m.conditional);
        kv("learning_rate", &t.learning_rate);
        kv("beta1", &t.beta1);
        kv("beta2", &t.beta2);
        kv("adam_eps", &t.adam_eps);
        kv("lambda_reg", &t.lambda_reg);
        kv("batch_labeled", &t.batch_labeled);
        kv("batch_unlabeled", &t.batch_unlabeled);
        kv("batch_generated", &t.batch_generated);
        kv("epochs", &t.epochs);
        kv("seed", &t.seed);
        kv("d_steps", &t.d_steps);
        kv("precision", &t.precision);
        kv("generation_path", &t.generation_path);
        kv("regress_generated", &t.regress_generated);
        kv("standardize_labels", &t.standardize_labels);
        kv("use_unlabeled", &t.use_unlabeled);
        kv("freeze_embeddings", &self.freeze_embeddings);
        kv("embeddings", &self.embeddings.display());
        kv("train", &self.train_corpus.display());
        if let Some(u) = &self.unlabeled {
            kv("unlabeled", &u.display());
        }
        kv("validation", &self.validation.display());
        kv("output_dir", &self.output_dir.display());
        s
    }
}

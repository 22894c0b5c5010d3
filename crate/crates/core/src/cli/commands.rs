use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::Path;

use rand::Rng as _;
use rand_distr::StandardNormal;

use super::checkpoint::Checkpoint;
use super::config::RunConfig;
use super::gradcheck::run_suite;
use crate::baseline::{pooled_features, ridge_fit, ridge_predict};
use crate::data::{
    format_label, load_corpus, load_embeddings, synth_corpus, write_corpus, write_embeddings, Corpus, Example,
    SynthSpec,
};
use crate::model::{build_model, decode_tokens, ModelConfig};
use crate::rng::{self, stream};
use crate::tensor::Fault;
use crate::train::{evaluate, train_with, EncodedSet, EvalMetrics, MetricHistory, Model, Trainer};
use crate::{Error, Result};

fn out_err(e: io::Error) -> Error {
    Error::io(Path::new("<stdout>"), e)
}

fn load_reporting(path: &Path) -> Result<Corpus> {
    let c = load_corpus(path)?;
    if c.dropped > 0 {
        eprintln!("warning: {}: dropped {} empty documents", path.display(), c.dropped);
    }
    Ok(c)
}

fn labeled_only(path: &Path) -> Result<Vec<Example>> {
    let c = load_reporting(path)?;
    if !c.unlabeled.is_empty() {
        return Err(Error::Invalid(format!(
            "{}: {} unlabeled examples (first at line {}); a labeled corpus is required",
            path.display(),
            c.unlabeled.len(),
            c.unlabeled[0].line
        )));
    }
    if c.labeled.is_empty() {
        return Err(Error::Invalid(format!("{}: no labeled examples", path.display())));
    }
    Ok(c.labeled)
}

fn print_metrics(m: &EvalMetrics) -> Result<()> {
    let mut out = io::stdout().lock();
    writeln!(out, "mae,rmse").map_err(out_err)?;
    writeln!(out, "{:.6},{:.6}", m.mae, m.rmse).map_err(out_err)
}

pub fn train(config: &Path) -> Result<()> {
    let cfg = RunConfig::load(config)?;
    let (vocab, mut table) = load_embeddings(&cfg.embeddings)?;
    table.trainable = !cfg.freeze_embeddings;
    let corpus = load_reporting(&cfg.train_corpus)?;
    let mut unlabeled = corpus.unlabeled;
    if let Some(p) = &cfg.unlabeled {
        let extra = load_reporting(p)?;
        unlabeled.extend(extra.labeled.into_iter().chain(extra.unlabeled).map(|e| Example { label: None, ..e }));
    }
    let validation = labeled_only(&cfg.validation)?;

    let model_cfg = ModelConfig {
        vocab_size: vocab.len(),
        embed_dim: table.dim(),
        ..cfg.model.clone()
    };
    let d = model_cfg.max_len;
    let labeled_set = EncodedSet::encode(&corpus.labeled, &vocab, d);
    let unlabeled_set = EncodedSet::encode(&unlabeled, &vocab, d);
    let validation_set = EncodedSet::encode(&validation, &vocab, d);

    let (gen, disc) = build_model(&model_cfg, cfg.train.seed)?;
    let model = Model::new(gen, disc, table)?;
    let trainer = Trainer::new(model, cfg.train.clone(), &labeled_set, unlabeled_set.len())?;

    let dir = &cfg.output_dir;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let (g_count, d_count) = model_cfg.parameter_counts();
    let manifest = format!(
        "# trgan {}\n# vocabulary {}, embedding dim {}\n# parameters: generator {g_count}, discriminator {d_count}\n# examples: labeled {}, unlabeled {}, validation {}\n{}",
        env!("CARGO_PKG_VERSION"),
        vocab.len(),
        model_cfg.embed_dim,
        labeled_set.len(),
        unlabeled_set.len(),
        validation_set.len(),
        cfg.render()
    );
    let manifest_path = dir.join("manifest.txt");
    fs::write(&manifest_path, manifest).map_err(|e| Error::io(&manifest_path, e))?;

    let csv_path = dir.join("metrics.csv");
    let best_path = dir.join("best.ckpt");
    let final_path = dir.join("final.ckpt");
    let mut csv = BufWriter::new(File::create(&csv_path).map_err(|e| Error::io(&csv_path, e))?);
    writeln!(csv, "{}", MetricHistory::CSV_HEADER).map_err(|e| Error::io(&csv_path, e))?;
    if cfg.train.epochs == 0 {
        Checkpoint { trainer: trainer.clone(), vocab: vocab.clone() }.save(&best_path)?;
    }
    let outcome = train_with(trainer, &labeled_set, &unlabeled_set, &validation_set, |rec, t, improved| {
        writeln!(csv, "{}", MetricHistory::csv_row(rec))
            .and_then(|_| csv.flush())
            .map_err(|e| Error::io(&csv_path, e))?;
        eprintln!(
            "epoch {:>4}  d_loss {:.4}  g_loss {:.4}  train_mae {:.4}  val_mae {:.4}  val_rmse {:.4}{}",
            rec.epoch,
            rec.d_loss,
            rec.g_loss,
            rec.train_mae,
            rec.val_mae,
            rec.val_rmse,
            if improved { "  *" } else { "" }
        );
        if improved {
            Checkpoint { trainer: t.clone(), vocab: vocab.clone() }.save(&best_path)?;
        }
        Ok(())
    })?;
    Checkpoint { trainer: outcome.trainer, vocab }.save(&final_path)?;
    eprintln!("best epoch {}; outputs in {}", outcome.best_epoch, dir.display());
    Ok(())
}

pub fn eval(checkpoint: &Path, corpus: &Path) -> Result<()> {
    let ck = Checkpoint::load(checkpoint)?;
    let examples = labeled_only(corpus)?;
    let set = EncodedSet::encode(&examples, &ck.vocab, ck.trainer.model.max_len());
    print_metrics(&evaluate(&ck.trainer.model, &set)?)
}

pub fn generate(checkpoint: &Path, n: usize, seed: u64) -> Result<()> {
    let ck = Checkpoint::load(checkpoint)?;
    let t = &ck.trainer;
    let gen = &t.model.generator;
    let cfg = gen.config();
    let mut rng = rng::keyed(seed, stream::SAMPLE, 0);
    let mut out = io::stdout().lock();
    for _ in 0..n {
        let z: Vec<f64> = (0..cfg.noise_dim).map(|_| rng.sample(StandardNormal)).collect();
        let pick = t.cond_pool[rng.random_range(0..t.cond_pool.len())];
        let y = if cfg.conditional { pick } else { 0.0 };
        let seq = gen.generate(&t.model.embeddings, &z, y, t.cfg.generation_path)?;
        let text = decode_tokens(&seq, &ck.vocab).join(" ").replace('\t', " ");
        writeln!(out, "{y}\t{text}").map_err(out_err)?;
    }
    Ok(())
}

pub fn gradcheck(inject: Option<&str>) -> Result<()> {
    let fault = match inject {
        None => None,
        Some("tanh") => Some(Fault::TanhDerivative),
        Some(other) => return Err(Error::Invalid(format!("unknown fault `{other}`"))),
    };
    let report = run_suite(fault)?;
    let mut out = io::stdout().lock();
    writeln!(out, "{:<24} {:>12} {:>10}  status", "layer", "max_rel_err", "threshold").map_err(out_err)?;
    for c in &report {
        writeln!(
            out,
            "{:<24} {:>12.3e} {:>10.0e}  {}",
            c.name,
            c.max_error,
            c.threshold,
            if c.passed() { "ok" } else { "FAIL" }
        )
        .map_err(out_err)?;
    }
    let failed: Vec<&str> = report.iter().filter(|c| !c.passed()).map(|c| c.name).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Error::Numerical(format!("gradient check failed for: {}", failed.join(", "))))
    }
}

pub fn synth_data(out: &Path, spec: &SynthSpec) -> Result<()> {
    let s = synth_corpus(spec)?;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    write_embeddings(&out.join("embeddings.txt"), &s.vocab, &s.table)?;
    write_corpus(&out.join("train.tsv"), s.split.labeled.iter().chain(&s.split.unlabeled))?;
    write_corpus(&out.join("validation.tsv"), &s.split.validation)?;
    let cfg = format!(
        "# synthetic corpus: {} labeled, {} unlabeled, {} validation, {} tokens per document\nembeddings = embeddings.txt\ntrain = train.tsv\nvalidation = validation.tsv\noutput_dir = run\nmax_doc_len = {}\nseed = {}\n",
        spec.labeled, spec.unlabeled, spec.validation, spec.doc_len, spec.doc_len, spec.seed
    );
    let cfg_path = out.join("train.cfg");
    fs::write(&cfg_path, cfg).map_err(|e| Error::io(&cfg_path, e))?;
    if let Some((w, b)) = &s.planted {
        let line: Vec<String> = w.iter().chain([b]).map(|v| format_label(*v)).collect();
        let p = out.join("planted.txt");
        fs::write(&p, line.join(" ") + "\n").map_err(|e| Error::io(&p, e))?;
    }
    eprintln!("wrote synthetic corpus to {}", out.display());
    Ok(())
}

pub fn baseline(embeddings: &Path, train: &Path, test: &Path, alpha: f64) -> Result<()> {
    let (vocab, table) = load_embeddings(embeddings)?;
    let corpus = load_reporting(train)?;
    if corpus.labeled.is_empty() {
        return Err(Error::Invalid(format!("{}: no labeled examples", train.display())));
    }
    let test_examples = labeled_only(test)?;
    // documents are pooled over all their tokens, so no length limit applies
    let max_len = |ex: &[Example]| ex.iter().map(|e| e.tokens.len()).max().unwrap_or(1);
    let fit_set = EncodedSet::encode(&corpus.labeled, &vocab, max_len(&corpus.labeled));
    let test_set = EncodedSet::encode(&test_examples, &vocab, max_len(&test_examples));
    let x = pooled_features(&fit_set, &table)?;
    let model = ridge_fit(&x, fit_set.labels().expect("labeled"), alpha)?;
    eprintln!("ridge: alpha {alpha}, normal-equation residual {:.3e}", model.residual);
    let pred = ridge_predict(&model, &pooled_features(&test_set, &table)?)?;
    let m = EvalMetrics::compute(&pred, test_set.labels().expect("labeled")).expect("non-empty");
    print_metrics(&m)
}

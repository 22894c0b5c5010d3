//! Finite-difference verification of every differentiable layer at tiny
//! sizes.

use rand::Rng as _;

use crate::model::{soft_embed_var, Discriminator, GenerationPath, Generator, ModelConfig};
use crate::nn::{BatchNorm, Bound, Linear, Lstm, Mode, ParamStore, ResidualBlock};
use crate::rng::{self, stream, Rng};
use crate::tensor::{grad_check_many, Activation, Fault, Graph, Tensor, Var};
use crate::train::{bce_with_logits, mae_loss};
use crate::Result;

pub const STEP: f64 = 1e-5;
/// Bound for layers containing relu or absolute-value kinks.
pub const KINK_TOL: f64 = 1e-4;
pub const SMOOTH_TOL: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct LayerCheck {
    pub name: &'static str,
    pub max_error: f64,
    pub threshold: f64,
}

impl LayerCheck {
    pub fn passed(&self) -> bool {
        self.max_error < self.threshold
    }
}

fn uniform(rng: &mut Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(lo..hi)).collect()).expect("finite")
}

/// Uniform in ±[0.1, 1): keeps kinked ops away from their kink.
fn off_zero(rng: &mut Rng, shape: &[usize]) -> Tensor {
    let mut t = uniform(rng, shape, 0.1, 1.0);
    for v in t.data_mut() {
        if rng.random_bool(0.5) {
            *v = -*v;
        }
    }
    t
}

/// `Σ out ⊙ w` for a fixed random `w`, so every output entry matters.
fn weighted_sum(g: &mut Graph, out: Var, seed: u64) -> Result<Var> {
    let shape = g.shape(out)?.to_vec();
    let w = uniform(&mut rng::keyed(seed, stream::SAMPLE, 1000), &shape, -1.0, 1.0);
    let wv = g.constant(w);
    let prod = g.mul(out, wv)?;
    g.sum(prod)
}

fn tiny_config() -> ModelConfig {
    ModelConfig {
        vocab_size: 6,
        embed_dim: 4,
        max_len: 5,
        hidden: 4,
        noise_dim: 3,
        channels: 4,
        kernel: 3,
        n_blocks: 1,
        temperature: 1.0,
        conditional: true,
    }
}

/// Fills zero-initialised parameters with small random values so their
/// gradients are actually exercised.
fn perturb(store: &mut ParamStore, rng: &mut Rng) {
    for t in store.tensors_mut() {
        if t.data().iter().all(|&v| v == 0.0) {
            for v in t.data_mut() {
                *v = rng.random_range(-0.5..0.5);
            }
        }
    }
}

fn check<F>(name: &'static str, threshold: f64, fault: Option<Fault>, inputs: &[Tensor], f: F) -> Result<LayerCheck>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let errs = grad_check_many(
        |g, v| {
            if let Some(fl) = fault {
                g.inject_fault(fl);
            }
            f(g, v)
        },
        inputs,
        STEP,
    )?;
    Ok(LayerCheck {
        name,
        max_error: errs.into_iter().fold(0.0, f64::max),
        threshold,
    })
}

fn with_store(store: &ParamStore, extra: &[Tensor]) -> Vec<Tensor> {
    let mut v = store.tensors().to_vec();
    v.extend_from_slice(extra);
    v
}

/// Every layer check, in a fixed order; `fault` corrupts the engine for
/// testing the checker itself.
pub fn run_suite(fault: Option<Fault>) -> Result<Vec<LayerCheck>> {
    let mut rng = rng::keyed(7, stream::SAMPLE, 0);
    let mut out = Vec::new();

    let a = uniform(&mut rng, &[3, 4], -1.0, 1.0);
    let b = uniform(&mut rng, &[4, 2], -1.0, 1.0);
    out.push(check("matmul", SMOOTH_TOL, fault, &[a, b], |g, v| {
        let y = g.matmul(v[0], v[1])?;
        weighted_sum(g, y, 1)
    })?);

    let x = uniform(&mut rng, &[2, 3, 6], -1.0, 1.0);
    let k = uniform(&mut rng, &[2, 3, 3], -1.0, 1.0);
    out.push(check("conv1d", SMOOTH_TOL, fault, &[x, k], |g, v| {
        let y = g.conv1d(v[0], v[1], 1)?;
        weighted_sum(g, y, 2)
    })?);

    for (name, act, tol) in [
        ("tanh", Some(Activation::Tanh), SMOOTH_TOL),
        ("sigmoid", Some(Activation::Sigmoid), SMOOTH_TOL),
        ("softplus", None, SMOOTH_TOL),
        ("relu", Some(Activation::Relu), KINK_TOL),
    ] {
        let x = off_zero(&mut rng, &[3, 4]);
        out.push(check(name, tol, fault, &[x], |g, v| {
            let y = match act {
                Some(a) => g.activation(v[0], a)?,
                None => g.softplus(v[0])?,
            };
            weighted_sum(g, y, 3)
        })?);
    }

    let x = uniform(&mut rng, &[3, 5], -2.0, 2.0);
    out.push(check("softmax", SMOOTH_TOL, fault, &[x], |g, v| {
        let y = g.softmax_rows(v[0])?;
        weighted_sum(g, y, 4)
    })?);

    let mut store = ParamStore::new();
    let lin = Linear::new(&mut store, "lin", 4, 3, false, &mut rng);
    perturb(&mut store, &mut rng);
    let x = uniform(&mut rng, &[2, 4], -1.0, 1.0);
    let n = store.len();
    out.push(check("linear", SMOOTH_TOL, fault, &with_store(&store, &[x]), |g, v| {
        let p = Bound::from_vars(v[..n].to_vec());
        let y = lin.forward(g, &p, v[n])?;
        weighted_sum(g, y, 5)
    })?);

    let mut store = ParamStore::new();
    let lstm = Lstm::new(&mut store, "lstm", 3, 4, &mut rng);
    let xs: Vec<Tensor> = (0..3).map(|_| uniform(&mut rng, &[2, 3], -1.0, 1.0)).collect();
    let h0 = uniform(&mut rng, &[2, 4], -0.5, 0.5);
    let c0 = uniform(&mut rng, &[2, 4], -0.5, 0.5);
    let n = store.len();
    let mut extra = xs;
    extra.extend([h0, c0]);
    out.push(check("lstm", SMOOTH_TOL, fault, &with_store(&store, &extra), |g, v| {
        let p = Bound::from_vars(v[..n].to_vec());
        let hs = lstm.unroll(g, &p, &v[n..n + 3], v[n + 3], v[n + 4])?;
        let all = g.concat_all(&hs, 1)?;
        weighted_sum(g, all, 6)
    })?);

    let mut store = ParamStore::new();
    let bn = BatchNorm::new(&mut store, "bn", 2, &mut rng);
    for t in store.tensors_mut() {
        for v in t.data_mut() {
            *v += rng.random_range(-0.3..0.3);
        }
    }
    let x = uniform(&mut rng, &[3, 2, 4], -1.0, 1.0);
    let n = store.len();
    out.push(check("batch_norm", SMOOTH_TOL, fault, &with_store(&store, &[x]), |g, v| {
        let p = Bound::from_vars(v[..n].to_vec());
        let (y, _) = bn.forward(g, &p, v[n], Mode::Train)?;
        weighted_sum(g, y, 7)
    })?);

    let mut store = ParamStore::new();
    let block = ResidualBlock::new(&mut store, "res", 2, 3, &mut rng)?;
    let x = uniform(&mut rng, &[2, 2, 5], -1.0, 1.0);
    let n = store.len();
    out.push(check("residual_block", KINK_TOL, fault, &with_store(&store, &[x]), |g, v| {
        let p = Bound::from_vars(v[..n].to_vec());
        let (y, _) = block.forward(g, &p, v[n], Mode::Train)?;
        weighted_sum(g, y, 8)
    })?);

    let cfg = tiny_config();
    let rows = uniform(&mut rng, &[cfg.max_len, cfg.vocab_size], 0.0, 1.0);
    let table = uniform(&mut rng, &[cfg.vocab_size, cfg.embed_dim], -1.0, 1.0);
    out.push(check("soft_embed", SMOOTH_TOL, fault, &[rows, table.clone()], |g, v| {
        let y = soft_embed_var(g, v[0], v[1])?;
        weighted_sum(g, y, 9)
    })?);

    let gen = Generator::new(&cfg, &mut rng)?;
    let z = uniform(&mut rng, &[2, cfg.noise_dim], -1.0, 1.0);
    let cond = Tensor::new([2, 1], vec![0.3, -0.7])?;
    let ng = gen.params.len();
    let gen_inputs = with_store(&gen.params, &[table.clone()]);
    out.push(check("generator", SMOOTH_TOL, fault, &gen_inputs, |g, v| {
        let p = Bound::from_vars(v[..ng].to_vec());
        let zv = g.constant(z.clone());
        let cv = g.constant(cond.clone());
        let rows = gen.forward(g, &p, v[ng], zv, cv, GenerationPath::Soft)?;
        weighted_sum(g, rows, 10)
    })?);

    let mut disc = Discriminator::new(&cfg, &mut rng)?;
    perturb(&mut disc.params, &mut rng);
    let docs = uniform(&mut rng, &[3, cfg.max_len, cfg.embed_dim], -1.0, 1.0);
    let nd = disc.params.len();
    let disc_inputs = with_store(&disc.params, &[docs]);
    for (name, reg) in [("discriminator_adv_head", false), ("discriminator_reg_head", true)] {
        out.push(check(name, KINK_TOL, fault, &disc_inputs, |g, v| {
            let p = Bound::from_vars(v[..nd].to_vec());
            let o = disc.forward(g, &p, v[nd], Mode::Train)?;
            weighted_sum(g, if reg { o.y_hat } else { o.adv }, 11)
        })?);
    }

    let logits = uniform(&mut rng, &[5], -3.0, 3.0);
    out.push(check("bce_with_logits", SMOOTH_TOL, fault, &[logits], |g, v| {
        let real = bce_with_logits(g, v[0], true)?;
        let fake = bce_with_logits(g, v[0], false)?;
        let fake = g.scale(fake, 0.5)?;
        g.add(real, fake)
    })?);

    let y_hat = off_zero(&mut rng, &[6]);
    out.push(check("mae_loss", KINK_TOL, fault, &[y_hat], |g, v| {
        let y = g.constant(Tensor::zeros(&[6]));
        mae_loss(g, v[0], y)
    })?);

    let fixed_table = table;
    out.push(check("end_to_end", KINK_TOL, fault, &gen.params.tensors().to_vec(), |g, v| {
        let p = Bound::from_vars(v.to_vec());
        let tv = g.constant(fixed_table.clone());
        let zv = g.constant(z.clone());
        let cv = g.constant(cond.clone());
        let rows = gen.forward(g, &p, tv, zv, cv, GenerationPath::Soft)?;
        let docs = soft_embed_var(g, rows, tv)?;
        let dp = disc.params.bind(g, false);
        let o = disc.forward(g, &dp, docs, Mode::Train)?;
        weighted_sum(g, o.adv, 12)
    })?);

    Ok(out)
}

use super::init::{init_params, LayerSpec};
use super::params::{Bound, ParamId, ParamStore};
use crate::rng::Rng;
use crate::tensor::{Graph, Var};
use crate::{Error, Result};

/// LSTM cell with gate order (input, forget, candidate, output).
#[derive(Clone, Debug, PartialEq)]
pub struct Lstm {
    pub w_ih: ParamId,
    pub w_hh: ParamId,
    pub bias: ParamId,
    pub inputs: usize,
    pub hidden: usize,
}

impl Lstm {
    pub fn new(store: &mut ParamStore, name: &str, inputs: usize, hidden: usize, rng: &mut Rng) -> Self {
        let mut ids = init_params(&LayerSpec::Lstm { inputs, hidden }, rng)
            .into_iter()
            .map(|(n, t)| store.add(format!("{name}.{n}"), t));
        Lstm {
            w_ih: ids.next().unwrap(),
            w_hh: ids.next().unwrap(),
            bias: ids.next().unwrap(),
            inputs,
            hidden,
        }
    }

    fn expect_rows(&self, g: &Graph, v: Var, width: usize, what: &str) -> Result<usize> {
        match *g.shape(v)? {
            [b, w] if w == width => Ok(b),
            ref s => Err(Error::Shape(format!("lstm {what}: expected [B, {width}], got {s:?}"))),
        }
    }

    /// One step on a batch: `x[B×I]`, `h[B×H]`, `c[B×H]` → `(h′, c′)`.
    ///
    /// ```text
    /// i, f, o = σ(·)   g = tanh(·)
    /// c′ = f⊙c + i⊙g   h′ = o⊙tanh(c′)
    /// ```
    pub fn step(&self, g: &mut Graph, p: &Bound, x: Var, h: Var, c: Var) -> Result<(Var, Var)> {
        let b = self.expect_rows(g, x, self.inputs, "input")?;
        let hb = self.expect_rows(g, h, self.hidden, "hidden state")?;
        let cb = self.expect_rows(g, c, self.hidden, "cell state")?;
        if b != hb || b != cb {
            return Err(Error::Shape(format!("lstm batch sizes {b}/{hb}/{cb}")));
        }
        let hd = self.hidden;
        let xi = g.matmul_t(x, p[self.w_ih])?;
        let hh = g.matmul_t(h, p[self.w_hh])?;
        let pre = g.add(xi, hh)?;
        let pre = g.add(pre, p[self.bias])?;
        let i_pre = g.narrow(pre, 1, 0, hd)?;
        let f_pre = g.narrow(pre, 1, hd, hd)?;
        let g_pre = g.narrow(pre, 1, 2 * hd, hd)?;
        let o_pre = g.narrow(pre, 1, 3 * hd, hd)?;
        let i = g.sigmoid(i_pre)?;
        let f = g.sigmoid(f_pre)?;
        let cand = g.tanh(g_pre)?;
        let o = g.sigmoid(o_pre)?;
        let keep = g.mul(f, c)?;
        let write = g.mul(i, cand)?;
        let c_next = g.add(keep, write)?;
        let squashed = g.tanh(c_next)?;
        let h_next = g.mul(o, squashed)?;
        Ok((h_next, c_next))
    }

    /// Runs `step` over `inputs`, each `B×I`, returning every hidden state.
    pub fn unroll(&self, g: &mut Graph, p: &Bound, inputs: &[Var], h0: Var, c0: Var) -> Result<Vec<Var>> {
        if inputs.is_empty() {
            return Err(Error::Invalid("lstm unroll needs at least one step".into()));
        }
        let (mut h, mut c) = (h0, c0);
        let mut out = Vec::with_capacity(inputs.len());
        for &x in inputs {
            (h, c) = self.step(g, p, x, h, c)?;
            out.push(h);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use crate::tensor::{grad_check_many, Tensor};

    fn sigmoid(x: f64) -> f64 {
        1.0 / (1.0 + (-x).exp())
    }

    #[test]
    fn zero_params_give_zero_state() {
        let mut store = ParamStore::new();
        let cell = Lstm::new(&mut store, "lstm", 3, 2, &mut rng::keyed(0, 0, 0));
        for t in store.tensors_mut() {
            t.data_mut().fill(0.0);
        }
        let mut g = Graph::new();
        let p = store.bind(&mut g, false);
        let x = g.constant(Tensor::full(&[1, 3], 0.7));
        let h = g.constant(Tensor::full(&[1, 2], 0.3));
        let c = g.constant(Tensor::zeros(&[1, 2]));
        let (h2, c2) = cell.step(&mut g, &p, x, h, c).unwrap();
        assert_eq!(g.value(h2).unwrap().data(), &[0.0, 0.0]);
        assert_eq!(g.value(c2).unwrap().data(), &[0.0, 0.0]);
    }

    #[test]
    fn scalar_cell_matches_hand_equations() {
        let mut store = ParamStore::new();
        let cell = Lstm::new(&mut store, "lstm", 1, 1, &mut rng::keyed(0, 0, 0));
        // rows: i, f, g, o
        let w_ih = [0.5, -0.3, 0.8, 0.1];
        let w_hh = [-0.2, 0.4, 0.6, -0.7];
        let b = [0.05, 1.0, -0.1, 0.2];
        store.get_mut(cell.w_ih).data_mut().copy_from_slice(&w_ih);
        store.get_mut(cell.w_hh).data_mut().copy_from_slice(&w_hh);
        store.get_mut(cell.bias).data_mut().copy_from_slice(&b);
        let (x, h, c) = (0.9, -0.4, 0.25);

        let pre: Vec<f64> = (0..4).map(|k| w_ih[k] * x + w_hh[k] * h + b[k]).collect();
        let (i, f, gg, o) = (sigmoid(pre[0]), sigmoid(pre[1]), pre[2].tanh(), sigmoid(pre[3]));
        let c_ref = f * c + i * gg;
        let h_ref = o * c_ref.tanh();

        let mut g = Graph::new();
        let p = store.bind(&mut g, false);
        let xv = g.constant(Tensor::scalar(x).reshaped(&[1, 1]).unwrap());
        let hv = g.constant(Tensor::scalar(h).reshaped(&[1, 1]).unwrap());
        let cv = g.constant(Tensor::scalar(c).reshaped(&[1, 1]).unwrap());
        let (h2, c2) = cell.step(&mut g, &p, xv, hv, cv).unwrap();
        assert!((g.value(h2).unwrap().data()[0] - h_ref).abs() < 1e-12);
        assert!((g.value(c2).unwrap().data()[0] - c_ref).abs() < 1e-12);
    }

    #[test]
    fn unroll_single_step_equals_step() {
        let mut store = ParamStore::new();
        let cell = Lstm::new(&mut store, "lstm", 2, 3, &mut rng::keyed(4, 0, 0));
        let mut g = Graph::new();
        let p = store.bind(&mut g, false);
        let x = g.constant(Tensor::new([1, 2], vec![0.3, -1.0]).unwrap());
        let h = g.constant(Tensor::zeros(&[1, 3]));
        let c = g.constant(Tensor::zeros(&[1, 3]));
        let (h1, _) = cell.step(&mut g, &p, x, h, c).unwrap();
        let hs = cell.unroll(&mut g, &p, &[x], h, c).unwrap();
        assert_eq!(g.value(h1).unwrap(), g.value(hs[0]).unwrap());
        assert!(cell.unroll(&mut g, &p, &[], h, c).is_err());
    }

    #[test]
    fn unroll_gradients_match_finite_differences() {
        let mut store = ParamStore::new();
        let cell = Lstm::new(&mut store, "lstm", 2, 3, &mut rng::keyed(8, 0, 0));
        let xs = Tensor::new([3, 2], vec![0.5, -0.2, 0.1, 0.9, -0.6, 0.3]).unwrap();
        let mut inputs = vec![xs];
        inputs.extend(store.tensors().iter().cloned());
        let errs = grad_check_many(
            |g, v| {
                let p = Bound::from_vars(v[1..].to_vec());
                let steps: Vec<Var> = (0..3)
                    .map(|t| g.narrow(v[0], 0, t, 1))
                    .collect::<Result<_>>()?;
                let h0 = g.constant(Tensor::full(&[1, 3], 0.1));
                let c0 = g.constant(Tensor::full(&[1, 3], -0.2));
                let hs = cell.unroll(g, &p, &steps, h0, c0)?;
                let all = g.concat_all(&hs, 0)?;
                let w = g.constant(Tensor::new([3, 3], (0..9).map(|i| i as f64 * 0.3 - 1.0).collect()).unwrap());
                let prod = g.mul(all, w)?;
                g.sum(prod)
            },
            &inputs,
            1e-5,
        )
        .unwrap();
        assert!(errs.iter().all(|&e| e < 1e-5), "{errs:?}");
    }
}

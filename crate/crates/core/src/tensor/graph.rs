use std::str::FromStr;
use std::sync::atomic::{AtomicU32, Ordering};

use super::Tensor;
use crate::kernels::{self, ConvDims, Exec};
use crate::{Error, Result};

static NEXT_GRAPH_ID: AtomicU32 = AtomicU32::new(1);

/// Handle to a node of one particular [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var {
    graph: u32,
    index: u32,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Sigmoid,
    Tanh,
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Activation::Relu),
            "sigmoid" => Ok(Activation::Sigmoid),
            "tanh" => Ok(Activation::Tanh),
            other => Err(Error::Invalid(format!("unknown activation `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Reduction {
    Sum,
    Mean,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    All,
    Last,
}

/// Deliberate backward-pass corruption, used to prove the gradient checker
/// catches broken derivatives.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Fault {
    TanhDerivative,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add,
    AddBias,
    Sub,
    Mul,
    Scale(f64),
    MatMul,
    MatMulBt,
    Transpose,
    Reshape,
    Conv1d { padding: usize },
    Act(Activation),
    Softplus,
    Abs,
    SoftmaxRows,
    Reduce(Reduction, Axis),
    Concat { axis: usize },
    Narrow { axis: usize, start: usize },
    Gather { ids: Vec<usize>, masked_row: Option<usize> },
    StraightThrough,
    BatchNorm { xhat: Vec<f64>, inv_std: Vec<f64>, batch_stats: bool },
}

#[derive(Debug)]
struct Node {
    op: Op,
    parents: Vec<usize>,
    value: Tensor,
    requires_grad: bool,
}

/// The computation record: an append-only, topologically ordered list of
/// operations. Gradients accumulate across [`Graph::backward`] calls until
/// [`Graph::reset_grads`].
#[derive(Debug)]
pub struct Graph {
    id: u32,
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
    exec: Exec,
    fault: Option<Fault>,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

/// Splits a shape around `axis` into (outer, dim, inner) extents.
fn split_at_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn transpose_last2(data: &[f64], batch: usize, rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; data.len()];
    for b in 0..batch {
        let base = b * rows * cols;
        for r in 0..rows {
            for c in 0..cols {
                out[base + c * rows + r] = data[base + r * cols + c];
            }
        }
    }
    out
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

impl Graph {
    pub fn new() -> Self {
        Graph {
            id: NEXT_GRAPH_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
            grads: Vec::new(),
            exec: Exec::default(),
            fault: None,
        }
    }

    pub fn with_exec(exec: Exec) -> Self {
        Graph {
            exec,
            ..Self::new()
        }
    }

    pub fn inject_fault(&mut self, fault: Fault) {
        self.fault = Some(fault);
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn idx(&self, v: Var) -> Result<usize> {
        if v.graph != self.id || v.index as usize >= self.nodes.len() {
            return Err(Error::Invalid("variable is not on this graph".into()));
        }
        Ok(v.index as usize)
    }

    fn push(&mut self, op: Op, parents: Vec<usize>, value: Tensor) -> Var {
        let requires_grad = parents.iter().any(|&p| self.nodes[p].requires_grad);
        self.push_node(op, parents, value, requires_grad)
    }

    fn push_node(&mut self, op: Op, parents: Vec<usize>, value: Tensor, rg: bool) -> Var {
        let index = self.nodes.len() as u32;
        self.nodes.push(Node {
            op,
            parents,
            value,
            requires_grad: rg,
        });
        self.grads.push(None);
        Var {
            graph: self.id,
            index,
        }
    }

    fn node(&self, v: Var) -> Result<&Node> {
        Ok(&self.nodes[self.idx(v)?])
    }

    /// Copies `t` onto the graph as a leaf.
    pub fn leaf(&mut self, t: &Tensor, requires_grad: bool) -> Var {
        let value = Tensor::from_raw(t.shape().to_vec(), t.data().to_vec());
        self.push_node(Op::Leaf, Vec::new(), value, requires_grad)
    }

    /// Moves `t` onto the graph as a constant leaf.
    pub fn constant(&mut self, t: Tensor) -> Var {
        let value = Tensor::from_raw(t.shape().to_vec(), t.into_data());
        self.push_node(Op::Leaf, Vec::new(), value, false)
    }

    pub fn value(&self, v: Var) -> Result<&Tensor> {
        Ok(&self.node(v)?.value)
    }

    pub fn shape(&self, v: Var) -> Result<&[usize]> {
        Ok(self.node(v)?.value.shape())
    }

    pub fn requires_grad(&self, v: Var) -> Result<bool> {
        Ok(self.node(v)?.requires_grad)
    }

    /// Accumulated gradient of the last backward roots with respect to `v`.
    pub fn grad(&self, v: Var) -> Result<Option<&[f64]>> {
        let i = self.idx(v)?;
        Ok(self.grads[i].as_deref())
    }

    pub fn reset_grads(&mut self) {
        self.grads.iter_mut().for_each(|g| *g = None);
    }

    // ---- elementwise ----------------------------------------------------

    /// Elementwise sum. `b` may be rank-1 matching the last axis of `a`
    /// (bias broadcast).
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.idx(a)?, self.idx(b)?);
        let (va, vb) = (&self.nodes[ia].value, &self.nodes[ib].value);
        if va.shape() == vb.shape() {
            let data = va.data().iter().zip(vb.data()).map(|(x, y)| x + y).collect();
            let t = Tensor::from_raw(va.shape().to_vec(), data);
            return Ok(self.push(Op::Add, vec![ia, ib], t));
        }
        let last = *va.shape().last().unwrap();
        if vb.rank() == 1 && vb.len() == last {
            let data = va
                .data()
                .chunks(last)
                .flat_map(|row| row.iter().zip(vb.data()).map(|(x, y)| x + y))
                .collect();
            let t = Tensor::from_raw(va.shape().to_vec(), data);
            return Ok(self.push(Op::AddBias, vec![ia, ib], t));
        }
        Err(Error::Shape(format!(
            "add: {:?} and {:?}",
            va.shape(),
            vb.shape()
        )))
    }

    fn zip_same(&mut self, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Result<Var> {
        let (ia, ib) = (self.idx(a)?, self.idx(b)?);
        let (va, vb) = (&self.nodes[ia].value, &self.nodes[ib].value);
        if va.shape() != vb.shape() {
            return Err(Error::Shape(format!(
                "{op:?}: {:?} and {:?}",
                va.shape(),
                vb.shape()
            )));
        }
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        let t = Tensor::from_raw(va.shape().to_vec(), data);
        Ok(self.push(op, vec![ia, ib], t))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same(a, b, Op::Sub, |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same(a, b, Op::Mul, |x, y| x * y)
    }

    fn map(&mut self, x: Var, op: Op, f: impl Fn(f64) -> f64) -> Result<Var> {
        let ix = self.idx(x)?;
        let v = &self.nodes[ix].value;
        let t = Tensor::from_raw(v.shape().to_vec(), v.data().iter().map(|&e| f(e)).collect());
        Ok(self.push(op, vec![ix], t))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        self.map(x, Op::Scale(c), |e| c * e)
    }

    pub fn activation(&mut self, x: Var, kind: Activation) -> Result<Var> {
        match kind {
            Activation::Relu => self.map(x, Op::Act(kind), |e| e.max(0.0)),
            Activation::Sigmoid => self.map(x, Op::Act(kind), sigmoid),
            Activation::Tanh => self.map(x, Op::Act(kind), f64::tanh),
        }
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.activation(x, Activation::Relu)
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.activation(x, Activation::Sigmoid)
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.activation(x, Activation::Tanh)
    }

    /// `ln(1 + eˣ)` in overflow-free form.
    pub fn softplus(&mut self, x: Var) -> Result<Var> {
        self.map(x, Op::Softplus, softplus)
    }

    /// |x| with subgradient 0 at 0.
    pub fn abs(&mut self, x: Var) -> Result<Var> {
        self.map(x, Op::Abs, f64::abs)
    }

    // ---- linear algebra -------------------------------------------------

    fn matrix_dims(&self, i: usize, what: &str) -> Result<(usize, usize)> {
        match self.nodes[i].value.shape() {
            &[r, c] => Ok((r, c)),
            s => Err(Error::Shape(format!("{what}: expected a matrix, got {s:?}"))),
        }
    }

    /// `a[m×k] · b[k×n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.idx(a)?, self.idx(b)?);
        let (m, k) = self.matrix_dims(ia, "matmul")?;
        let (k2, n) = self.matrix_dims(ib, "matmul")?;
        if k != k2 {
            return Err(Error::Shape(format!("matmul: [{m}, {k}] · [{k2}, {n}]")));
        }
        let out = kernels::matmul(
            self.exec,
            self.nodes[ia].value.data(),
            self.nodes[ib].value.data(),
            m,
            k,
            n,
        );
        Ok(self.push(Op::MatMul, vec![ia, ib], Tensor::from_raw(vec![m, n], out)))
    }

    /// `a[m×k] · b[n×k]ᵀ`, the layout of a fully connected layer.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.idx(a)?, self.idx(b)?);
        let (m, k) = self.matrix_dims(ia, "matmul_t")?;
        let (n, k2) = self.matrix_dims(ib, "matmul_t")?;
        if k != k2 {
            return Err(Error::Shape(format!("matmul_t: [{m}, {k}] · [{n}, {k2}]ᵀ")));
        }
        let out = kernels::matmul_bt(
            self.exec,
            self.nodes[ia].value.data(),
            self.nodes[ib].value.data(),
            m,
            k,
            n,
        );
        Ok(self.push(Op::MatMulBt, vec![ia, ib], Tensor::from_raw(vec![m, n], out)))
    }

    /// Swaps the last two axes of a rank-2 or rank-3 tensor.
    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let ix = self.idx(x)?;
        let v = &self.nodes[ix].value;
        let (batch, r, c) = match v.shape() {
            &[r, c] => (1, r, c),
            &[b, r, c] => (b, r, c),
            s => return Err(Error::Shape(format!("transpose: rank {}", s.len()))),
        };
        let data = transpose_last2(v.data(), batch, r, c);
        let mut shape = v.shape().to_vec();
        let rank = shape.len();
        shape.swap(rank - 2, rank - 1);
        Ok(self.push(Op::Transpose, vec![ix], Tensor::from_raw(shape, data)))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let ix = self.idx(x)?;
        let t = self.nodes[ix].value.reshaped(shape)?;
        Ok(self.push(Op::Reshape, vec![ix], t))
    }

    /// Cross-correlation of `input` (`C_in×L` or `B×C_in×L`) with
    /// `kernels` (`C_out×C_in×K`), zero padding on both ends.
    pub fn conv1d(&mut self, input: Var, kernels: Var, padding: usize) -> Result<Var> {
        let (ix, iw) = (self.idx(input)?, self.idx(kernels)?);
        let d = self.conv_dims(ix, iw, padding)?;
        let out = kernels::conv1d_forward(
            self.exec,
            self.nodes[ix].value.data(),
            self.nodes[iw].value.data(),
            d,
        );
        let shape = if self.nodes[ix].value.rank() == 2 {
            vec![d.c_out, d.out_len()]
        } else {
            vec![d.batch, d.c_out, d.out_len()]
        };
        Ok(self.push(
            Op::Conv1d { padding },
            vec![ix, iw],
            Tensor::from_raw(shape, out),
        ))
    }

    fn conv_dims(&self, ix: usize, iw: usize, padding: usize) -> Result<ConvDims> {
        let (batch, c_in, len) = match self.nodes[ix].value.shape() {
            &[c, l] => (1, c, l),
            &[b, c, l] => (b, c, l),
            s => return Err(Error::Shape(format!("conv1d input {s:?}"))),
        };
        let (c_out, c_in2, kernel) = match self.nodes[iw].value.shape() {
            &[o, c, k] => (o, c, k),
            s => return Err(Error::Shape(format!("conv1d kernels {s:?}"))),
        };
        if c_in != c_in2 {
            return Err(Error::Shape(format!(
                "conv1d: input has {c_in} channels, kernels expect {c_in2}"
            )));
        }
        if kernel > len + 2 * padding {
            return Err(Error::Shape(format!(
                "conv1d: kernel {kernel} longer than padded input {}",
                len + 2 * padding
            )));
        }
        Ok(ConvDims {
            batch,
            c_in,
            c_out,
            len,
            kernel,
            padding,
        })
    }

    /// Row-wise softmax of a matrix, max-subtracted for stability.
    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        let ix = self.idx(x)?;
        let (_, c) = self.matrix_dims(ix, "softmax_rows")?;
        let v = &self.nodes[ix].value;
        let mut data = Vec::with_capacity(v.len());
        for row in v.data().chunks(c) {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let start = data.len();
            data.extend(row.iter().map(|&e| (e - max).exp()));
            let total: f64 = data[start..].iter().sum();
            data[start..].iter_mut().for_each(|e| *e /= total);
        }
        let t = Tensor::from_raw(v.shape().to_vec(), data);
        Ok(self.push(Op::SoftmaxRows, vec![ix], t))
    }

    pub fn reduce(&mut self, x: Var, kind: Reduction, axis: Axis) -> Result<Var> {
        let ix = self.idx(x)?;
        let v = &self.nodes[ix].value;
        let (shape, width) = match axis {
            Axis::All => (vec![1], v.len()),
            Axis::Last => {
                let s = v.shape();
                let out = if s.len() == 1 {
                    vec![1]
                } else {
                    s[..s.len() - 1].to_vec()
                };
                (out, *s.last().unwrap())
            }
        };
        let scale = match kind {
            Reduction::Sum => 1.0,
            Reduction::Mean => 1.0 / width as f64,
        };
        let data = v
            .data()
            .chunks(width)
            .map(|row| row.iter().sum::<f64>() * scale)
            .collect();
        Ok(self.push(Op::Reduce(kind, axis), vec![ix], Tensor::from_raw(shape, data)))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        self.reduce(x, Reduction::Sum, Axis::All)
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        self.reduce(x, Reduction::Mean, Axis::All)
    }

    pub fn concat(&mut self, a: Var, b: Var, axis: usize) -> Result<Var> {
        self.concat_all(&[a, b], axis)
    }

    /// Concatenates any number of tensors along `axis`.
    pub fn concat_all(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let idx: Vec<usize> = parts.iter().map(|&v| self.idx(v)).collect::<Result<_>>()?;
        let Some(&first) = idx.first() else {
            return Err(Error::Invalid("concat of zero tensors".into()));
        };
        let base = self.nodes[first].value.shape().to_vec();
        if axis >= base.len() {
            return Err(Error::Shape(format!("concat axis {axis} on rank {}", base.len())));
        }
        let mut total = 0;
        for &i in &idx {
            let s = self.nodes[i].value.shape();
            let compatible = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(d, (x, y))| d == axis || x == y);
            if !compatible {
                return Err(Error::Shape(format!("concat: {base:?} vs {s:?} on axis {axis}")));
            }
            total += s[axis];
        }
        let (outer, _, inner) = split_at_axis(&base, axis);
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &i in &idx {
                let v = &self.nodes[i].value;
                let block = v.shape()[axis] * inner;
                data.extend_from_slice(&v.data()[o * block..(o + 1) * block]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        Ok(self.push(Op::Concat { axis }, idx, Tensor::from_raw(shape, data)))
    }

    /// The sub-range `[start, start+len)` of `axis`.
    pub fn narrow(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let ix = self.idx(x)?;
        let v = &self.nodes[ix].value;
        let shape = v.shape();
        if axis >= shape.len() || len == 0 || start + len > shape[axis] {
            return Err(Error::Shape(format!(
                "narrow: [{start}, {}) of axis {axis} in {shape:?}",
                start + len
            )));
        }
        let (outer, dim, inner) = split_at_axis(shape, axis);
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let from = (o * dim + start) * inner;
            data.extend_from_slice(&v.data()[from..from + len * inner]);
        }
        let mut out_shape = shape.to_vec();
        out_shape[axis] = len;
        Ok(self.push(
            Op::Narrow { axis, start },
            vec![ix],
            Tensor::from_raw(out_shape, data),
        ))
    }

    /// Row lookup into a `V×N` table. Gradient never reaches `masked_row`.
    pub fn gather_rows(&mut self, table: Var, ids: &[usize], masked_row: Option<usize>) -> Result<Var> {
        let it = self.idx(table)?;
        let (v, n) = self.matrix_dims(it, "gather_rows")?;
        if ids.is_empty() {
            return Err(Error::Invalid("gather_rows: no ids".into()));
        }
        if let Some(&bad) = ids.iter().find(|&&id| id >= v) {
            return Err(Error::Invalid(format!("token id {bad} out of range [0, {v})")));
        }
        let src = self.nodes[it].value.data();
        let mut data = Vec::with_capacity(ids.len() * n);
        for &id in ids {
            data.extend_from_slice(&src[id * n..(id + 1) * n]);
        }
        Ok(self.push(
            Op::Gather {
                ids: ids.to_vec(),
                masked_row,
            },
            vec![it],
            Tensor::from_raw(vec![ids.len(), n], data),
        ))
    }

    /// Forward: one-hot at each row's argmax (ties to the lowest index).
    /// Backward: identity.
    pub fn straight_through(&mut self, x: Var) -> Result<Var> {
        let ix = self.idx(x)?;
        let v = &self.nodes[ix].value;
        let c = *v.shape().last().unwrap();
        let mut data = vec![0.0; v.len()];
        for (r, row) in v.data().chunks(c).enumerate() {
            data[r * c + argmax(row)] = 1.0;
        }
        let t = Tensor::from_raw(v.shape().to_vec(), data);
        Ok(self.push(Op::StraightThrough, vec![ix], t))
    }

    /// Per-channel normalization of `x[B×C×L]` followed by `gamma·x̂ + beta`.
    ///
    /// With `stats = None` the batch mean and biased variance are used and
    /// returned; otherwise the given `(mean, var)` are treated as constants.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        eps: f64,
        stats: Option<(&[f64], &[f64])>,
    ) -> Result<(Var, Option<(Vec<f64>, Vec<f64>)>)> {
        let (ix, ig, ib) = (self.idx(x)?, self.idx(gamma)?, self.idx(beta)?);
        let (b, c, l) = match self.nodes[ix].value.shape() {
            &[b, c, l] => (b, c, l),
            s => return Err(Error::Shape(format!("batch_norm input {s:?}"))),
        };
        for &p in &[ig, ib] {
            if self.nodes[p].value.shape() != [c] {
                return Err(Error::Shape(format!(
                    "batch_norm affine {:?} for {c} channels",
                    self.nodes[p].value.shape()
                )));
            }
        }
        let xs = self.nodes[ix].value.data();
        let n = (b * l) as f64;
        let (mean, var, batch_stats) = match stats {
            Some((m, v)) => {
                if m.len() != c || v.len() != c {
                    return Err(Error::Shape("batch_norm running stats".into()));
                }
                (m.to_vec(), v.to_vec(), false)
            }
            None => {
                if b * l < 2 {
                    return Err(Error::Invalid(
                        "batch_norm train mode needs at least 2 values per channel".into(),
                    ));
                }
                let mut mean = vec![0.0; c];
                let mut var = vec![0.0; c];
                for ch in 0..c {
                    let mut s = 0.0;
                    for bi in 0..b {
                        s += xs[(bi * c + ch) * l..(bi * c + ch + 1) * l].iter().sum::<f64>();
                    }
                    mean[ch] = s / n;
                    let mut q = 0.0;
                    for bi in 0..b {
                        q += xs[(bi * c + ch) * l..(bi * c + ch + 1) * l]
                            .iter()
                            .map(|e| (e - mean[ch]).powi(2))
                            .sum::<f64>();
                    }
                    var[ch] = q / n;
                }
                (mean, var, true)
            }
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let gs = self.nodes[ig].value.data();
        let bs = self.nodes[ib].value.data();
        let mut xhat = vec![0.0; xs.len()];
        let mut out = vec![0.0; xs.len()];
        for (i, (&e, (h, o))) in xs.iter().zip(xhat.iter_mut().zip(out.iter_mut())).enumerate() {
            let ch = (i / l) % c;
            *h = (e - mean[ch]) * inv_std[ch];
            *o = gs[ch] * *h + bs[ch];
        }
        let shape = self.nodes[ix].value.shape().to_vec();
        let var_out = self.push(
            Op::BatchNorm {
                xhat,
                inv_std,
                batch_stats,
            },
            vec![ix, ig, ib],
            Tensor::from_raw(shape, out),
        );
        Ok((var_out, batch_stats.then_some((mean, var))))
    }

    // ---- backward -------------------------------------------------------

    /// Back-propagates from a scalar root, adding ∂root/∂node into every
    /// reachable node that requires gradients.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        let r = self.idx(root)?;
        if self.nodes[r].value.len() != 1 {
            return Err(Error::Shape(format!(
                "backward root must be scalar, got {:?}",
                self.nodes[r].value.shape()
            )));
        }
        let mut pass: Vec<Option<Vec<f64>>> = vec![None; r + 1];
        pass[r] = Some(vec![1.0]);
        for i in (0..=r).rev() {
            let Some(g) = pass[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            for (p, contrib) in self.vjp(i, &g) {
                match &mut pass[p] {
                    Some(acc) => acc.iter_mut().zip(&contrib).for_each(|(a, c)| *a += c),
                    slot => *slot = Some(contrib),
                }
            }
            match &mut self.grads[i] {
                Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, c)| *a += c),
                slot => *slot = Some(g),
            }
        }
        Ok(())
    }

    fn vjp(&self, i: usize, g: &[f64]) -> Vec<(usize, Vec<f64>)> {
        let node = &self.nodes[i];
        let ps = &node.parents;
        let need = |k: usize| self.nodes[ps[k]].requires_grad;
        let pval = |k: usize| &self.nodes[ps[k]].value;
        let y = node.value.data();
        let mut out = Vec::with_capacity(ps.len());
        match &node.op {
            Op::Leaf => {}
            Op::Add | Op::Reshape | Op::StraightThrough => {
                for k in 0..ps.len() {
                    if need(k) {
                        out.push((ps[k], g.to_vec()));
                    }
                }
            }
            Op::AddBias => {
                if need(0) {
                    out.push((ps[0], g.to_vec()));
                }
                if need(1) {
                    let n = pval(1).len();
                    let mut gb = vec![0.0; n];
                    for row in g.chunks(n) {
                        gb.iter_mut().zip(row).for_each(|(a, b)| *a += b);
                    }
                    out.push((ps[1], gb));
                }
            }
            Op::Sub => {
                if need(0) {
                    out.push((ps[0], g.to_vec()));
                }
                if need(1) {
                    out.push((ps[1], g.iter().map(|v| -v).collect()));
                }
            }
            Op::Mul => {
                if need(0) {
                    let b = pval(1).data();
                    out.push((ps[0], g.iter().zip(b).map(|(x, y)| x * y).collect()));
                }
                if need(1) {
                    let a = pval(0).data();
                    out.push((ps[1], g.iter().zip(a).map(|(x, y)| x * y).collect()));
                }
            }
            Op::Scale(c) => out.push((ps[0], g.iter().map(|v| c * v).collect())),
            Op::MatMul => {
                let (a, b) = (pval(0), pval(1));
                let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
                if need(0) {
                    out.push((ps[0], kernels::matmul_bt(self.exec, g, b.data(), m, n, k)));
                }
                if need(1) {
                    out.push((ps[1], kernels::matmul_at(self.exec, a.data(), g, m, k, n)));
                }
            }
            Op::MatMulBt => {
                let (a, b) = (pval(0), pval(1));
                let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[0]);
                if need(0) {
                    out.push((ps[0], kernels::matmul(self.exec, g, b.data(), m, n, k)));
                }
                if need(1) {
                    out.push((ps[1], kernels::matmul_at(self.exec, g, a.data(), m, n, k)));
                }
            }
            Op::Transpose => {
                let s = node.value.shape();
                let (batch, r, c) = match *s {
                    [r, c] => (1, r, c),
                    [b, r, c] => (b, r, c),
                    _ => unreachable!(),
                };
                out.push((ps[0], transpose_last2(g, batch, r, c)));
            }
            Op::Conv1d { padding } => {
                let d = self
                    .conv_dims(ps[0], ps[1], *padding)
                    .expect("validated at forward");
                if need(0) {
                    let w = pval(1).data();
                    out.push((ps[0], kernels::conv1d_backward_input(self.exec, g, w, d)));
                }
                if need(1) {
                    let x = pval(0).data();
                    out.push((ps[1], kernels::conv1d_backward_kernel(self.exec, g, x, d)));
                }
            }
            Op::Act(kind) => {
                let d: Vec<f64> = match kind {
                    Activation::Relu => g
                        .iter()
                        .zip(y)
                        .map(|(gv, &yv)| if yv > 0.0 { *gv } else { 0.0 })
                        .collect(),
                    Activation::Sigmoid => {
                        g.iter().zip(y).map(|(gv, yv)| gv * yv * (1.0 - yv)).collect()
                    }
                    Activation::Tanh => {
                        let corrupt = if self.fault == Some(Fault::TanhDerivative) {
                            1.1
                        } else {
                            1.0
                        };
                        g.iter()
                            .zip(y)
                            .map(|(gv, yv)| gv * (1.0 - yv * yv) * corrupt)
                            .collect()
                    }
                };
                out.push((ps[0], d));
            }
            Op::Softplus => {
                let x = pval(0).data();
                out.push((ps[0], g.iter().zip(x).map(|(gv, &xv)| gv * sigmoid(xv)).collect()));
            }
            Op::Abs => {
                let x = pval(0).data();
                let d = g
                    .iter()
                    .zip(x)
                    .map(|(gv, &xv)| {
                        if xv > 0.0 {
                            *gv
                        } else if xv < 0.0 {
                            -gv
                        } else {
                            0.0
                        }
                    })
                    .collect();
                out.push((ps[0], d));
            }
            Op::SoftmaxRows => {
                let c = *node.value.shape().last().unwrap();
                let mut d = vec![0.0; y.len()];
                for ((dr, yr), gr) in d.chunks_mut(c).zip(y.chunks(c)).zip(g.chunks(c)) {
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for ((dv, yv), gv) in dr.iter_mut().zip(yr).zip(gr) {
                        *dv = yv * (gv - dot);
                    }
                }
                out.push((ps[0], d));
            }
            Op::Reduce(kind, axis) => {
                let x = pval(0);
                let width = match axis {
                    Axis::All => x.len(),
                    Axis::Last => *x.shape().last().unwrap(),
                };
                let scale = match kind {
                    Reduction::Sum => 1.0,
                    Reduction::Mean => 1.0 / width as f64,
                };
                let mut d = Vec::with_capacity(x.len());
                for gv in g {
                    d.extend(std::iter::repeat(gv * scale).take(width));
                }
                out.push((ps[0], d));
            }
            Op::Concat { axis } => {
                let (outer, _, inner) = split_at_axis(node.value.shape(), *axis);
                let total = node.value.shape()[*axis] * inner;
                let mut offset = 0;
                for k in 0..ps.len() {
                    let block = pval(k).shape()[*axis] * inner;
                    if need(k) {
                        let mut d = Vec::with_capacity(outer * block);
                        for o in 0..outer {
                            let from = o * total + offset;
                            d.extend_from_slice(&g[from..from + block]);
                        }
                        out.push((ps[k], d));
                    }
                    offset += block;
                }
            }
            Op::Narrow { axis, start } => {
                let x = pval(0);
                let (outer, dim, inner) = split_at_axis(x.shape(), *axis);
                let len = node.value.shape()[*axis];
                let mut d = vec![0.0; x.len()];
                for o in 0..outer {
                    let to = (o * dim + start) * inner;
                    let from = o * len * inner;
                    d[to..to + len * inner].copy_from_slice(&g[from..from + len * inner]);
                }
                out.push((ps[0], d));
            }
            Op::Gather { ids, masked_row } => {
                let table = pval(0);
                let n = table.shape()[1];
                let mut d = vec![0.0; table.len()];
                for (t, &id) in ids.iter().enumerate() {
                    if Some(id) == *masked_row {
                        continue;
                    }
                    d[id * n..(id + 1) * n]
                        .iter_mut()
                        .zip(&g[t * n..(t + 1) * n])
                        .for_each(|(a, b)| *a += b);
                }
                out.push((ps[0], d));
            }
            Op::BatchNorm {
                xhat,
                inv_std,
                batch_stats,
            } => {
                let s = node.value.shape();
                let (b, c, l) = (s[0], s[1], s[2]);
                let gamma = pval(1).data();
                let mut dbeta = vec![0.0; c];
                let mut dgamma = vec![0.0; c];
                for (i, (gv, hv)) in g.iter().zip(xhat).enumerate() {
                    let ch = (i / l) % c;
                    dbeta[ch] += gv;
                    dgamma[ch] += gv * hv;
                }
                if need(0) {
                    let n = (b * l) as f64;
                    let d = g
                        .iter()
                        .zip(xhat)
                        .enumerate()
                        .map(|(i, (gv, hv))| {
                            let ch = (i / l) % c;
                            if *batch_stats {
                                gamma[ch] * inv_std[ch] / n
                                    * (n * gv - dbeta[ch] - hv * dgamma[ch])
                            } else {
                                gv * gamma[ch] * inv_std[ch]
                            }
                        })
                        .collect();
                    out.push((ps[0], d));
                }
                if need(1) {
                    out.push((ps[1], dgamma));
                }
                if need(2) {
                    out.push((ps[2], dbeta));
                }
            }
        }
        out
    }
}

/// Index of the largest entry; ties resolve to the lowest index.
pub(crate) fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn add_and_identity() {
        let mut g = Graph::new();
        let a = g.leaf(&t(&[2], &[1.0, 2.0]), true);
        let b = g.leaf(&t(&[2], &[3.0, 4.0]), true);
        let s = g.add(a, b).unwrap();
        assert_eq!(g.value(s).unwrap().data(), &[4.0, 6.0]);
        let z = g.constant(Tensor::zeros(&[2]));
        let s2 = g.add(a, z).unwrap();
        assert_eq!(g.value(s2).unwrap().data(), &[1.0, 2.0]);
        let root = g.sum(s).unwrap();
        g.backward(root).unwrap();
        assert_eq!(g.grad(a).unwrap().unwrap(), &[1.0, 1.0]);
    }

    #[test]
    fn add_rejects_incompatible() {
        let mut g = Graph::new();
        let a = g.leaf(&Tensor::zeros(&[2, 3]), false);
        let b = g.leaf(&Tensor::zeros(&[2]), false);
        assert!(g.add(a, b).is_err());
    }

    #[test]
    fn bias_broadcast_gradient_sums_rows() {
        let mut g = Graph::new();
        let a = g.leaf(&Tensor::zeros(&[3, 2]), false);
        let b = g.leaf(&t(&[2], &[1.0, -1.0]), true);
        let s = g.add(a, b).unwrap();
        assert_eq!(g.value(s).unwrap().data(), &[1.0, -1.0, 1.0, -1.0, 1.0, -1.0]);
        let root = g.sum(s).unwrap();
        g.backward(root).unwrap();
        assert_eq!(g.grad(b).unwrap().unwrap(), &[3.0, 3.0]);
    }

    #[test]
    fn matmul_examples() {
        let mut g = Graph::new();
        let i2 = g.leaf(&t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]), false);
        let a = g.leaf(&t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]), false);
        let p = g.matmul(i2, a).unwrap();
        assert_eq!(g.value(p).unwrap().data(), &[1.0, 2.0, 3.0, 4.0]);
        let ones = g.leaf(&t(&[2, 1], &[1.0, 1.0]), false);
        let q = g.matmul(a, ones).unwrap();
        assert_eq!(g.value(q).unwrap().data(), &[3.0, 7.0]);
        assert!(g.matmul(ones, ones).is_err());
    }

    #[test]
    fn conv_examples() {
        let mut g = Graph::new();
        let x = g.leaf(&t(&[1, 4], &[1.0, -2.0, 3.0, 0.5]), false);
        let k = g.leaf(&t(&[1, 1, 1], &[1.0]), false);
        let y = g.conv1d(x, k, 0).unwrap();
        assert_eq!(g.value(y).unwrap().data(), &[1.0, -2.0, 3.0, 0.5]);

        let x = g.leaf(&t(&[1, 2], &[1.0, 3.0]), false);
        let k = g.leaf(&t(&[1, 1, 2], &[0.5, 0.5]), false);
        let y = g.conv1d(x, k, 0).unwrap();
        assert_eq!(g.value(y).unwrap().data(), &[2.0]);

        let k3 = g.leaf(&t(&[1, 1, 3], &[1.0, 1.0, 1.0]), false);
        assert!(g.conv1d(x, k3, 0).is_err());
        assert!(g.conv1d(x, k3, 1).is_ok());
    }

    #[test]
    fn activation_values() {
        let mut g = Graph::new();
        let x = g.leaf(&t(&[2], &[-1.0, 2.0]), false);
        let r = g.relu(x).unwrap();
        assert_eq!(g.value(r).unwrap().data(), &[0.0, 2.0]);
        let z = g.leaf(&t(&[1], &[0.0]), true);
        let s = g.sigmoid(z).unwrap();
        assert_eq!(g.value(s).unwrap().data(), &[0.5]);
        let th = g.tanh(z).unwrap();
        assert_eq!(g.value(th).unwrap().data(), &[0.0]);
        g.backward(th).unwrap();
        assert_eq!(g.grad(z).unwrap().unwrap(), &[1.0]);
        assert!("gelu".parse::<Activation>().is_err());
    }

    #[test]
    fn relu_derivative_at_zero_is_zero() {
        let mut g = Graph::new();
        let x = g.leaf(&t(&[1], &[0.0]), true);
        let r = g.relu(x).unwrap();
        g.backward(r).unwrap();
        assert_eq!(g.grad(x).unwrap().unwrap(), &[0.0]);
    }

    #[test]
    fn softmax_examples() {
        let mut g = Graph::new();
        let x = g.leaf(&t(&[2, 3], &[2.0, 2.0, 2.0, -1.0, 0.0, 5.0]), false);
        let s = g.softmax_rows(x).unwrap();
        let v = g.value(s).unwrap().data().to_vec();
        for e in &v[..3] {
            assert!((e - 1.0 / 3.0).abs() < 1e-15);
        }
        let x2 = g.leaf(&t(&[1, 2], &[0.0, 3f64.ln()]), false);
        let s2 = g.softmax_rows(x2).unwrap();
        let v2 = g.value(s2).unwrap().data();
        assert!((v2[0] - 0.25).abs() < 1e-15 && (v2[1] - 0.75).abs() < 1e-15);
    }

    #[test]
    fn reduce_examples() {
        let mut g = Graph::new();
        let x = g.leaf(&t(&[3], &[1.0, 2.0, 3.0]), true);
        let m = g.mean(x).unwrap();
        assert_eq!(g.value(m).unwrap().item(), Some(2.0));
        g.backward(m).unwrap();
        for v in g.grad(x).unwrap().unwrap() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        let z = g.leaf(&Tensor::zeros(&[2, 2]), false);
        let s = g.sum(z).unwrap();
        assert_eq!(g.value(s).unwrap().item(), Some(0.0));
        let rows = g.reduce(x, Reduction::Sum, Axis::Last).unwrap();
        assert_eq!(g.value(rows).unwrap().shape(), &[1]);
    }

    #[test]
    fn concat_examples() {
        let mut g = Graph::new();
        let a = g.leaf(&t(&[1], &[1.0]), true);
        let b = g.leaf(&t(&[1], &[2.0]), true);
        let c = g.concat(a, b, 0).unwrap();
        assert_eq!(g.value(c).unwrap().data(), &[1.0, 2.0]);

        let p = g.leaf(&Tensor::full(&[2, 3], 1.0), true);
        let q = g.leaf(&Tensor::full(&[2, 1], 2.0), true);
        let r = g.concat(p, q, 1).unwrap();
        assert_eq!(g.value(r).unwrap().shape(), &[2, 4]);
        assert_eq!(g.value(r).unwrap().data(), &[1.0, 1.0, 1.0, 2.0, 1.0, 1.0, 1.0, 2.0]);
        let w = g.leaf(&t(&[2, 4], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]), false);
        let prod = g.mul(r, w).unwrap();
        let root = g.sum(prod).unwrap();
        g.backward(root).unwrap();
        assert_eq!(g.grad(p).unwrap().unwrap(), &[1.0, 2.0, 3.0, 5.0, 6.0, 7.0]);
        assert_eq!(g.grad(q).unwrap().unwrap(), &[4.0, 8.0]);

        let bad = g.leaf(&Tensor::zeros(&[3, 1]), false);
        assert!(g.concat(p, bad, 1).is_err());
    }

    #[test]
    fn backward_errors() {
        let mut g = Graph::new();
        let x = g.leaf(&Tensor::zeros(&[2]), true);
        assert!(g.backward(x).is_err());
        let mut other = Graph::new();
        let y = other.leaf(&Tensor::zeros(&[1]), true);
        assert!(g.backward(y).is_err());
    }

    #[test]
    fn backward_accumulates_until_reset() {
        let mut g = Graph::new();
        let x = g.leaf(&t(&[2], &[1.0, 2.0]), true);
        let m = g.mean(x).unwrap();
        g.backward(m).unwrap();
        g.backward(m).unwrap();
        assert_eq!(g.grad(x).unwrap().unwrap(), &[1.0, 1.0]);
        g.reset_grads();
        assert!(g.grad(x).unwrap().is_none());
    }

    #[test]
    fn straight_through_examples() {
        let mut g = Graph::new();
        let x = g.leaf(&t(&[2, 3], &[0.2, 0.5, 0.3, 0.4, 0.4, 0.2]), true);
        let s = g.straight_through(x).unwrap();
        assert_eq!(g.value(s).unwrap().data(), &[0.0, 1.0, 0.0, 1.0, 0.0, 0.0]);
        let w = g.leaf(&t(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]), false);
        let p = g.mul(s, w).unwrap();
        let root = g.sum(p).unwrap();
        g.backward(root).unwrap();
        assert_eq!(g.grad(x).unwrap().unwrap(), &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
    }

    #[test]
    fn gather_masks_pad_gradient() {
        let mut g = Graph::new();
        let table = g.leaf(&t(&[3, 2], &[0.0, 0.0, 1.0, 2.0, 3.0, 4.0]), true);
        let rows = g.gather_rows(table, &[0, 2, 2], Some(0)).unwrap();
        assert_eq!(g.value(rows).unwrap().data(), &[0.0, 0.0, 3.0, 4.0, 3.0, 4.0]);
        let root = g.sum(rows).unwrap();
        g.backward(root).unwrap();
        assert_eq!(g.grad(table).unwrap().unwrap(), &[0.0, 0.0, 0.0, 0.0, 2.0, 2.0]);
        assert!(g.gather_rows(table, &[3], None).is_err());
    }
}

use crate::data::Vocabulary;
use crate::nn::{EmbeddingTable, PAD};
use crate::tensor::{Graph, Tensor, Var};
use crate::{Error, Result};

const ROW_SUM_TOL: f64 = 1e-9;

/// `D×V` row-stochastic matrix: one token distribution per position.
#[derive(Clone, Debug, PartialEq)]
pub struct SoftSequence {
    rows: Tensor,
}

impl SoftSequence {
    pub fn new(rows: Tensor) -> Result<Self> {
        let v = match *rows.shape() {
            [_, v] => v,
            ref s => return Err(Error::Shape(format!("soft sequence must be D×V, got {s:?}"))),
        };
        for (i, row) in rows.data().chunks(v).enumerate() {
            let sum: f64 = row.iter().sum();
            if row.iter().any(|&p| !(p >= 0.0)) || (sum - 1.0).abs() > ROW_SUM_TOL {
                return Err(Error::Invalid(format!("row {i} is not a distribution (sum {sum})")));
            }
        }
        Ok(SoftSequence { rows })
    }

    /// One-hot rows for the given ids.
    pub fn one_hot(ids: &[usize], vocab_size: usize) -> Result<Self> {
        if ids.is_empty() {
            return Err(Error::Invalid("empty id sequence".into()));
        }
        let mut data = vec![0.0; ids.len() * vocab_size];
        for (t, &id) in ids.iter().enumerate() {
            if id >= vocab_size {
                return Err(Error::Invalid(format!("token id {id} out of range")));
            }
            data[t * vocab_size + id] = 1.0;
        }
        Self::new(Tensor::new([ids.len(), vocab_size], data)?)
    }

    pub fn rows(&self) -> &Tensor {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn vocab_size(&self) -> usize {
        self.rows.shape()[1]
    }

    /// Per-row argmax, ties to the lowest id.
    pub fn argmax_ids(&self) -> Vec<usize> {
        self.rows
            .data()
            .chunks(self.vocab_size())
            .map(crate::tensor::graph_argmax)
            .collect()
    }
}

/// Expected embedding `s · table`, as a graph op.
pub fn soft_embed_var(g: &mut Graph, rows: Var, table: Var) -> Result<Var> {
    match *g.shape(rows)? {
        [_, _] => g.matmul(rows, table),
        [b, d, v] => {
            let flat = g.reshape(rows, &[b * d, v])?;
            let emb = g.matmul(flat, table)?;
            let n = g.shape(table)?[1];
            g.reshape(emb, &[b, d, n])
        }
        ref s => Err(Error::Shape(format!("soft_embed rows {s:?}"))),
    }
}

/// `D×N` expected-embedding document matrix.
pub fn soft_embed(s: &SoftSequence, table: &EmbeddingTable) -> Result<Tensor> {
    if s.vocab_size() != table.vocab_size() {
        return Err(Error::Shape(format!(
            "sequence over {} tokens, table has {}",
            s.vocab_size(),
            table.vocab_size()
        )));
    }
    let mut g = Graph::new();
    let r = g.leaf(s.rows(), false);
    let t = table.bind(&mut g, false);
    let out = soft_embed_var(&mut g, r, t)?;
    Ok(g.value(out)?.clone())
}

/// One-hot at each row's argmax.
pub fn straight_through(s: &SoftSequence) -> SoftSequence {
    let ids = s.argmax_ids();
    SoftSequence::one_hot(&ids, s.vocab_size()).expect("argmax ids are in range")
}

/// Argmax tokens; PAD renders as empty and trailing PADs are dropped.
pub fn decode_tokens(s: &SoftSequence, vocab: &Vocabulary) -> Vec<String> {
    let ids = s.argmax_ids();
    let end = ids.iter().rposition(|&id| id != PAD).map_or(0, |i| i + 1);
    ids[..end]
        .iter()
        .map(|&id| {
            if id == PAD {
                String::new()
            } else {
                vocab.token(id).unwrap_or_default().to_string()
            }
        })
        .collect()
}

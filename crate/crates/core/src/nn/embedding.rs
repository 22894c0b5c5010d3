use super::params::{ParamId, ParamStore};
use crate::tensor::{Graph, Tensor, Var};
use crate::{Error, Result};

/// Reserved padding token id; its row is zero and never trained.
pub const PAD: usize = 0;
/// Reserved unknown-token id.
pub const UNK: usize = 1;

/// `V×N` word vectors, optionally trainable.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable {
    pub params: ParamStore,
    id: ParamId,
    pub trainable: bool,
}

impl EmbeddingTable {
    /// Row [`PAD`] is forced to zero.
    pub fn new(mut matrix: Tensor, trainable: bool) -> Result<Self> {
        let n = match *matrix.shape() {
            [v, n] if v >= 2 => n,
            ref s => {
                return Err(Error::Shape(format!(
                    "embedding table must be V×N with V ≥ 2, got {s:?}"
                )))
            }
        };
        matrix.data_mut()[..n].fill(0.0);
        let mut params = ParamStore::new();
        let id = params.add("embedding", matrix);
        Ok(EmbeddingTable {
            params,
            id,
            trainable,
        })
    }

    pub fn matrix(&self) -> &Tensor {
        self.params.get(self.id)
    }

    pub fn vocab_size(&self) -> usize {
        self.matrix().shape()[0]
    }

    pub fn dim(&self) -> usize {
        self.matrix().shape()[1]
    }

    /// Puts the table on `g`; it tracks gradients only if trainable and
    /// `allow_grad`.
    pub fn bind(&self, g: &mut Graph, allow_grad: bool) -> Var {
        g.leaf(self.matrix(), self.trainable && allow_grad)
    }

    /// `ids` of `B` documents of `D` tokens each → `B×D×N`.
    pub fn lookup(&self, g: &mut Graph, table: Var, ids: &[usize], docs: usize) -> Result<Var> {
        if docs == 0 || ids.len() % docs != 0 {
            return Err(Error::Shape(format!("{} ids for {docs} documents", ids.len())));
        }
        let rows = g.gather_rows(table, ids, Some(PAD))?;
        g.reshape(rows, &[docs, ids.len() / docs, self.dim()])
    }

    /// `D×N` document matrix for one id sequence, outside any graph.
    pub fn embed_lookup(&self, ids: &[usize]) -> Result<Tensor> {
        let mut g = Graph::new();
        let table = self.bind(&mut g, false);
        let rows = g.gather_rows(table, ids, Some(PAD))?;
        Ok(g.value(rows)?.clone())
    }

    /// Adds accumulated gradients to the table and re-zeros the PAD row.
    pub fn collect_grad(&mut self, g: &Graph, table: Var) -> Result<()> {
        if let Some(grad) = g.grad(table)? {
            self.params.get_mut(self.id).accumulate_grad(grad);
        }
        Ok(())
    }

    /// Keeps the PAD row at exactly zero after an optimizer update.
    pub fn enforce_pad(&mut self) {
        let n = self.dim();
        self.params.get_mut(self.id).data_mut()[..n].fill(0.0);
    }
}

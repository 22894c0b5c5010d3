use rand::seq::SliceRandom;

use crate::rng::{self, Rng};
use crate::{Error, Result};

/// Shuffled index batches of `0..len`, keyed by `(seed, epoch)`; the final
/// partial batch is kept.
pub fn make_batches(len: usize, batch_size: usize, seed: u64, epoch: u64) -> Result<Vec<Vec<usize>>> {
    make_batches_on(len, batch_size, &mut rng::keyed(seed, rng::stream::SHUFFLE_LABELED, epoch))
}

fn make_batches_on(len: usize, batch_size: usize, rng: &mut Rng) -> Result<Vec<Vec<usize>>> {
    if batch_size == 0 {
        return Err(Error::Invalid("batch size must be at least 1".into()));
    }
    if len == 0 {
        return Err(Error::Invalid("cannot batch an empty example list".into()));
    }
    let mut order: Vec<usize> = (0..len).collect();
    order.shuffle(rng);
    Ok(order.chunks(batch_size).map(<[usize]>::to_vec).collect())
}

/// Endless batch stream over `0..len`, reshuffled on every pass.
///
/// Used for the unlabeled pool so it cycles independently of the labeled
/// stream that defines an epoch.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchCycler {
    len: usize,
    batch_size: usize,
    seed: u64,
    pass: u64,
    pos: usize,
    current: Vec<Vec<usize>>,
}

impl BatchCycler {
    pub fn new(len: usize, batch_size: usize, seed: u64) -> Result<Self> {
        Self::resume(len, batch_size, seed, 0, 0)
    }

    /// Rebuilds a cycler at a saved `(pass, pos)`.
    pub fn resume(len: usize, batch_size: usize, seed: u64, pass: u64, pos: usize) -> Result<Self> {
        let current = Self::pass_batches(len, batch_size, seed, pass)?;
        if pos > current.len() {
            return Err(Error::Invalid(format!("cycler position {pos} out of range")));
        }
        Ok(BatchCycler {
            len,
            batch_size,
            seed,
            pass,
            pos,
            current,
        })
    }

    fn pass_batches(len: usize, batch_size: usize, seed: u64, pass: u64) -> Result<Vec<Vec<usize>>> {
        make_batches_on(len, batch_size, &mut rng::keyed(seed, rng::stream::SHUFFLE_UNLABELED, pass))
    }

    pub fn next_batch(&mut self) -> &[usize] {
        if self.pos == self.current.len() {
            self.pass += 1;
            self.pos = 0;
            self.current = Self::pass_batches(self.len, self.batch_size, self.seed, self.pass)
                .expect("validated at construction");
        }
        self.pos += 1;
        &self.current[self.pos - 1]
    }

    /// Size of the cycled pool.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// `(pass, position)` for checkpointing.
    pub fn state(&self) -> (u64, usize) {
        (self.pass, self.pos)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_per_key() {
        assert_eq!(make_batches(20, 3, 7, 2).unwrap(), make_batches(20, 3, 7, 2).unwrap());
    }

    #[test]
    fn epochs_permute_differently() {
        for seed in 0..5 {
            let a: Vec<usize> = make_batches(5, 5, seed, 0).unwrap().concat();
            let b: Vec<usize> = make_batches(5, 5, seed, 1).unwrap().concat();
            assert_ne!(a, b, "seed {seed}");
        }
    }

    #[test]
    fn partition_sizes() {
        let sizes: Vec<usize> = make_batches(10, 4, 0, 0).unwrap().iter().map(Vec::len).collect();
        assert_eq!(sizes, [4, 4, 2]);
        let mut all = make_batches(10, 4, 0, 0).unwrap().concat();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn errors() {
        assert!(make_batches(0, 4, 0, 0).is_err());
        assert!(make_batches(4, 0, 0, 0).is_err());
    }

    #[test]
    fn cycler_wraps_and_resumes() {
        let mut c = BatchCycler::new(5, 2, 1).unwrap();
        let first: Vec<Vec<usize>> = (0..3).map(|_| c.next_batch().to_vec()).collect();
        let mut seen = first.concat();
        seen.sort_unstable();
        assert_eq!(seen, [0, 1, 2, 3, 4]);
        let (pass, pos) = c.state();
        let mut resumed = BatchCycler::resume(5, 2, 1, pass, pos).unwrap();
        for _ in 0..7 {
            assert_eq!(c.next_batch(), resumed.next_batch());
        }
        assert!(c.state().0 >= 1);
    }
}

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{PatchPair, PATCH_SIZE};
use crate::tensor::{Dims, Tensor4};

/// Iterator over (clean, noisy) batches of shape (b, 1, 40, 40).
pub struct Minibatches<'a> {
    pairs: &'a [PatchPair],
    order: Vec<usize>,
    batch: usize,
    next: usize,
}

/// Shuffles `pairs` for `epoch` and yields batches of `batch` patches; the
/// last batch may be shorter.
///
/// The order starts from a canonical (source, offset) sort, so it depends
/// only on the set of pairs, `seed` and `epoch`.
pub fn minibatches(pairs: &[PatchPair], batch: usize, seed: u64, epoch: u64) -> Minibatches<'_> {
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    order.sort_by_key(|&i| pairs[i].key());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch);
    order.shuffle(&mut rng);
    Minibatches { pairs, order, batch: batch.max(1), next: 0 }
}

impl Minibatches<'_> {
    /// Indices into the original pair slice, in visiting order.
    pub fn order(&self) -> &[usize] {
        &self.order
    }
}

impl Iterator for Minibatches<'_> {
    type Item = (Tensor4<f32>, Tensor4<f32>);

    fn next(&mut self) -> Option<Self::Item> {
        if self.next >= self.order.len() {
            return None;
        }
        let end = (self.next + self.batch).min(self.order.len());
        let idx = &self.order[self.next..end];
        self.next = end;
        let dims = Dims::new(idx.len(), 1, PATCH_SIZE, PATCH_SIZE);
        let mut clean = Vec::with_capacity(dims.len());
        let mut noisy = Vec::with_capacity(dims.len());
        for &i in idx {
            clean.extend_from_slice(self.pairs[i].clean.data());
            noisy.extend_from_slice(self.pairs[i].noisy.data());
        }
        Some((
            Tensor4::from_vec(dims, clean).expect("patch dims"),
            Tensor4::from_vec(dims, noisy).expect("patch dims"),
        ))
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let left = (self.order.len() - self.next).div_ceil(self.batch);
        (left, Some(left))
    }
}

impl ExactSizeIterator for Minibatches<'_> {}

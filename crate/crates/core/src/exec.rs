//! Execution mode for the batch-parallel kernels.
//!
//! Reductions are always combined in batch-item order, so threaded and
//! sequential runs produce identical bits. Sequential mode additionally
//! keeps all work on the calling thread.

use std::sync::atomic::{AtomicBool, Ordering};

use rayon::prelude::*;

static SEQUENTIAL: AtomicBool = AtomicBool::new(false);

/// Forces every kernel onto the calling thread.
pub fn set_sequential(on: bool) {
    SEQUENTIAL.store(on, Ordering::SeqCst);
}

pub fn is_sequential() -> bool {
    SEQUENTIAL.load(Ordering::SeqCst)
}

/// Applies `f` to every `chunk`-sized piece of `data`, with per-worker scratch
/// state built by `init`.
pub(crate) fn for_each_chunk<T, S, I, F>(data: &mut [T], chunk: usize, init: I, f: F)
where
    T: Send,
    I: Fn() -> S + Sync + Send,
    F: Fn(&mut S, usize, &mut [T]) + Sync + Send,
{
    if is_sequential() {
        let mut scratch = init();
        for (i, piece) in data.chunks_mut(chunk).enumerate() {
            f(&mut scratch, i, piece);
        }
    } else {
        data.par_chunks_mut(chunk)
            .enumerate()
            .for_each_init(init, |scratch, (i, piece)| f(scratch, i, piece));
    }
}

/// Maps `0..n` through `f`, returning results in index order.
pub(crate) fn map_indices<R, S, I, F>(n: usize, init: I, f: F) -> Vec<R>
where
    R: Send,
    I: Fn() -> S + Sync + Send,
    F: Fn(&mut S, usize) -> R + Sync + Send,
{
    if is_sequential() {
        let mut scratch = init();
        (0..n).map(|i| f(&mut scratch, i)).collect()
    } else {
        (0..n)
            .into_par_iter()
            .map_init(init, |scratch, i| f(scratch, i))
            .collect()
    }
}

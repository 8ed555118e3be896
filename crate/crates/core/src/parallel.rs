//! Deterministic parallel reductions over sample indices.
//!
//! Per-sample contributions are folded serially inside fixed-size chunks
//! and the chunk accumulators are merged in chunk order. The summation tree
//! therefore depends only on `n`, never on the thread count or scheduling,
//! so results are bit-identical across runs and across `--threads`
//! settings.

use rayon::prelude::*;

/// Fixed chunk length of the reduction tree. Changing this constant changes
/// rounding at the last bit; it is part of the reproducibility contract.
pub const CHUNK: usize = 2048;

/// Folds `fold(acc, i)` over `i in 0..n` with a deterministic two-level
/// reduction: serial within chunks of [`CHUNK`], chunk results merged in
/// order.
pub fn indexed_sum<A, N, F, M>(n: usize, new_acc: N, fold: F, merge: M) -> A
where
    A: Send,
    N: Fn() -> A + Sync,
    F: Fn(&mut A, usize) + Sync,
    M: Fn(&mut A, A),
{
    if n == 0 {
        return new_acc();
    }
    let n_chunks = n.div_ceil(CHUNK);
    let partials: Vec<A> = (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let mut acc = new_acc();
            let lo = c * CHUNK;
            let hi = usize::min(lo + CHUNK, n);
            for i in lo..hi {
                fold(&mut acc, i);
            }
            acc
        })
        .collect();
    let mut iter = partials.into_iter();
    let mut total = iter.next().expect("n > 0 implies at least one chunk");
    for part in iter {
        merge(&mut total, part);
    }
    total
}

/// Deterministic sum of `f(i)` over `0..n`.
pub fn indexed_sum_f64<F>(n: usize, f: F) -> f64
where
    F: Fn(usize) -> f64 + Sync,
{
    indexed_sum(n, || 0.0, |acc, i| *acc += f(i), |acc, part| *acc += part)
}

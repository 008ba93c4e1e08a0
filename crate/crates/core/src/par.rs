//! Deterministic fan-out over worker threads.
//!
//! Results are returned in input order and do not depend on the thread
//! count: each item is mapped independently and reductions happen on the
//! caller side in a fixed order.

/// Resolves a requested thread count: `0` means "auto" (host parallelism,
/// capped at 8).
pub fn effective_threads(requested: usize) -> usize {
    if requested == 0 {
        std::thread::available_parallelism()
            .map(|n| n.get())
            .unwrap_or(1)
            .min(8)
    } else {
        requested
    }
}

/// Maps `f` over `items` on up to `threads` workers, preserving input order.
pub fn par_map<T, R, F>(items: &[T], threads: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync,
{
    let threads = effective_threads(threads).min(items.len()).max(1);
    if threads <= 1 || items.len() <= 1 {
        return items.iter().map(&f).collect();
    }

    // Contiguous chunks; per-item work is independent, so chunking only
    // affects scheduling, never values.
    let chunk_len = items.len().div_ceil(threads);
    let mut out = Vec::with_capacity(items.len());
    std::thread::scope(|scope| {
        let handles: Vec<_> = items
            .chunks(chunk_len)
            .map(|chunk| scope.spawn(|| chunk.iter().map(&f).collect::<Vec<R>>()))
            .collect();
        for handle in handles {
            out.extend(handle.join().expect("worker panicked"));
        }
    });
    out
}

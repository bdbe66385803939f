//! Internal parallelism cap.
//!
//! Kernels split independent output rows across scoped threads when the cap
//! allows it; every element is still computed by the same sequential inner
//! loop, so results are identical for any thread count.

use std::sync::atomic::{AtomicUsize, Ordering};

static MAX_THREADS: AtomicUsize = AtomicUsize::new(1);

/// Sets the maximum number of worker threads kernels may use (min 1).
pub fn set_max_threads(n: usize) {
    MAX_THREADS.store(n.max(1), Ordering::Relaxed);
}

pub fn max_threads() -> usize {
    MAX_THREADS.load(Ordering::Relaxed)
}

/// Reads the `AQG_THREADS` env var, if set, and applies it as the cap.
pub fn configure_from_env() {
    if let Ok(v) = std::env::var("AQG_THREADS") {
        match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => set_max_threads(n),
            _ => log::warn!("ignoring invalid AQG_THREADS value {v:?}"),
        }
    }
}

/// Runs `f(start, chunk)` over disjoint chunks of `0..len`, in parallel when
/// the thread cap and problem size warrant it.
pub fn for_each_chunk<F>(len: usize, min_chunk: usize, f: F)
where
    F: Fn(usize, usize) + Send + Sync,
{
    let threads = max_threads().min(len / min_chunk.max(1)).max(1);
    if threads <= 1 {
        f(0, len);
        return;
    }
    let chunk = len.div_ceil(threads);
    std::thread::scope(|scope| {
        for t in 0..threads {
            let start = t * chunk;
            let end = (start + chunk).min(len);
            if start < end {
                let f = &f;
                scope.spawn(move || f(start, end - start));
            }
        }
    });
}

/// Calls `f(row_index, row)` for every `row_len`-sized row of `out`,
/// splitting contiguous row ranges across threads when the cap allows.
pub fn for_each_row<T: Send>(out: &mut [T], row_len: usize, f: impl Fn(usize, &mut [T]) + Send + Sync) {
    if row_len == 0 || out.is_empty() {
        return;
    }
    debug_assert_eq!(out.len() % row_len, 0);
    let rows = out.len() / row_len;
    let threads = max_threads().min(rows).max(1);
    if threads <= 1 {
        for (r, row) in out.chunks_mut(row_len).enumerate() {
            f(r, row);
        }
        return;
    }
    let chunk_rows = rows.div_ceil(threads);
    std::thread::scope(|scope| {
        for (t, seg) in out.chunks_mut(chunk_rows * row_len).enumerate() {
            let f = &f;
            scope.spawn(move || {
                for (i, row) in seg.chunks_mut(row_len).enumerate() {
                    f(t * chunk_rows + i, row);
                }
            });
        }
    });
}

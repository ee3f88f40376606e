//! Deterministic data parallelism.
//!
//! Work is split into chunks whose boundaries depend only on the problem size,
//! never on the worker count. Workers pull chunk indices from an atomic
//! counter and results are combined in chunk order, so floating-point sums
//! are associated identically whether the job ran on 1 thread or 16.
//! `QUADNAV_THREADS` caps the worker count (0 or unset means auto).

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

/// Worker count from `QUADNAV_THREADS`, capped by available parallelism.
pub fn worker_threads() -> usize {
    let auto = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    match std::env::var("QUADNAV_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        None | Some(0) => auto,
        Some(n) => n.min(auto),
    }
}

/// Splits `0..len` into chunks of at most `chunk_size` and maps each chunk on
/// the worker pool. Returns per-chunk results in chunk order (index order, so
/// callers can fold them deterministically).
///
/// `f` receives the chunk's index range `(start, end)`.
pub fn map_chunks<T, F>(len: usize, chunk_size: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize, usize) -> T + Sync,
{
    assert!(chunk_size > 0, "chunk_size must be positive");
    if len == 0 {
        return Vec::new();
    }
    let n_chunks = len.div_ceil(chunk_size);
    let bounds = |c: usize| (c * chunk_size, ((c + 1) * chunk_size).min(len));

    let threads = worker_threads().min(n_chunks);
    if threads <= 1 {
        return (0..n_chunks).map(|c| { let (s, e) = bounds(c); f(s, e) }).collect();
    }

    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<T>>> = Mutex::new((0..n_chunks).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..threads {
            scope.spawn(|| loop {
                let c = next.fetch_add(1, Ordering::Relaxed);
                if c >= n_chunks {
                    break;
                }
                let (s, e) = bounds(c);
                let out = f(s, e);
                slots.lock().unwrap()[c] = Some(out);
            });
        }
    });
    slots.into_inner().unwrap().into_iter().map(|t| t.unwrap()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chunk_results_arrive_in_index_order() {
        let out = map_chunks(10, 3, |s, e| (s, e));
        assert_eq!(out, vec![(0, 3), (3, 6), (6, 9), (9, 10)]);
    }

    #[test]
    fn chunked_sum_matches_sequential_bitwise() {
        // Sum association is fixed by chunk boundaries, not worker count.
        let xs: Vec<f64> = (0..1000).map(|i| (i as f64 * 0.731).sin() * 1e-3).collect();
        let partials = map_chunks(xs.len(), 128, |s, e| xs[s..e].iter().sum::<f64>());
        let chunked: f64 = partials.iter().sum();
        let reference: f64 = {
            let mut acc = 0.0;
            for c in 0..xs.len().div_ceil(128) {
                let (s, e) = (c * 128, ((c + 1) * 128).min(xs.len()));
                acc += xs[s..e].iter().sum::<f64>();
            }
            acc
        };
        assert_eq!(chunked.to_bits(), reference.to_bits());
    }

    #[test]
    fn empty_input_yields_no_chunks() {
        let out = map_chunks(0, 8, |s, e| (s, e));
        assert!(out.is_empty());
    }
}

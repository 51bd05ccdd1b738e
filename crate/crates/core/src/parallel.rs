//! Deterministic data parallelism over particle ranges.
//!
//! Work is split into exactly `workers` contiguous chunks whose boundaries
//! depend only on the item count, and per-chunk results are merged in chunk
//! order. Results are therefore bit-identical for a fixed worker count,
//! which the reproducibility guarantees rely on.

use std::ops::Range;

/// Contiguous near-equal chunk ranges covering `0..len`.
pub fn chunk_ranges(len: usize, workers: usize) -> Vec<Range<usize>> {
    let workers = workers.max(1).min(len.max(1));
    let base = len / workers;
    let extra = len % workers;
    let mut out = Vec::with_capacity(workers);
    let mut start = 0;
    for w in 0..workers {
        let size = base + usize::from(w < extra);
        out.push(start..start + size);
        start += size;
    }
    out
}

/// Run `work` over each chunk with a fresh accumulator, returning the
/// accumulators in chunk order for a sequential merge by the caller.
pub fn accumulate_chunks<A, I, W>(len: usize, workers: usize, init: I, work: W) -> Vec<A>
where
    A: Send,
    I: Fn() -> A + Sync,
    W: Fn(&mut A, Range<usize>) + Sync,
{
    let ranges = chunk_ranges(len, workers);
    if ranges.len() <= 1 {
        let mut acc = init();
        if let Some(r) = ranges.into_iter().next() {
            work(&mut acc, r);
        }
        return vec![acc];
    }
    std::thread::scope(|scope| {
        let handles: Vec<_> = ranges
            .into_iter()
            .map(|r| {
                scope.spawn(|| {
                    let mut acc = init();
                    work(&mut acc, r);
                    acc
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    })
}

/// Parallel in-place map over disjoint chunks. Each element is written by
/// exactly one worker, so the result does not depend on scheduling at all.
pub fn for_each_chunk_mut<T, F>(data: &mut [T], workers: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync,
{
    let len = data.len();
    let ranges = chunk_ranges(len, workers);
    if ranges.len() <= 1 {
        if !data.is_empty() {
            f(0, data);
        }
        return;
    }
    let f = &f;
    std::thread::scope(|scope| {
        let mut rest = data;
        let mut offset = 0;
        for r in ranges {
            let (head, tail) = rest.split_at_mut(r.len());
            rest = tail;
            let start = offset;
            offset += r.len();
            scope.spawn(move || f(start, head));
        }
    });
}

/// Fallible variant of [`for_each_chunk_mut`]. Errors are reported in
/// chunk order, so the surfaced error is deterministic too.
pub fn try_for_each_chunk_mut<T, F>(data: &mut [T], workers: usize, f: F) -> crate::error::Result<()>
where
    T: Send,
    F: Fn(usize, &mut [T]) -> crate::error::Result<()> + Sync,
{
    let len = data.len();
    let ranges = chunk_ranges(len, workers);
    if ranges.len() <= 1 {
        if !data.is_empty() {
            f(0, data)?;
        }
        return Ok(());
    }
    let f = &f;
    let results = std::thread::scope(|scope| {
        let mut handles = Vec::new();
        let mut rest = data;
        let mut offset = 0;
        for r in ranges {
            let (head, tail) = rest.split_at_mut(r.len());
            rest = tail;
            let start = offset;
            offset += r.len();
            handles.push(scope.spawn(move || f(start, head)));
        }
        handles
            .into_iter()
            .map(|h| h.join().unwrap())
            .collect::<Vec<_>>()
    });
    results.into_iter().collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chunks_cover_everything_once() {
        for (len, workers) in [(10, 3), (7, 7), (5, 16), (0, 4), (100, 1)] {
            let ranges = chunk_ranges(len, workers);
            let total: usize = ranges.iter().map(|r| r.len()).sum();
            assert_eq!(total, len);
            for pair in ranges.windows(2) {
                assert_eq!(pair[0].end, pair[1].start);
            }
        }
    }

    #[test]
    fn parallel_sum_matches_serial_for_any_worker_count() {
        let data: Vec<f64> = (0..1000).map(|i| (i as f64).sin()).collect();
        let serial: f64 = data.iter().sum();
        for workers in [1, 2, 3, 8] {
            let parts = accumulate_chunks(data.len(), workers, || 0.0f64, |acc, r| {
                for i in r {
                    *acc += data[i];
                }
            });
            let merged: f64 = parts.iter().sum();
            assert!((merged - serial).abs() < 1e-9);
        }
    }

    #[test]
    fn in_place_map_touches_every_element() {
        let mut data = vec![1.0f64; 100];
        for_each_chunk_mut(&mut data, 4, |start, chunk| {
            for (i, v) in chunk.iter_mut().enumerate() {
                *v = (start + i) as f64;
            }
        });
        for (i, v) in data.iter().enumerate() {
            assert_eq!(*v, i as f64);
        }
    }
}

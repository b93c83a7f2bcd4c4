//! Order-preserving parallel map over an index range.

use std::ops::Range;

/// Applies `f` to every index in `range` on up to `workers` threads; the
/// output is in index order whatever the thread count.
pub fn map_indexed<T, F>(range: Range<usize>, workers: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync,
{
    let n = range.len();
    let workers = workers.clamp(1, n.max(1));
    if workers == 1 {
        return range.map(f).collect();
    }
    let chunk = n.div_ceil(workers);
    let f = &f;
    std::thread::scope(|s| {
        let handles: Vec<_> = (0..workers)
            .map(|w| {
                let lo = range.start + w * chunk;
                let hi = (lo + chunk).min(range.end);
                s.spawn(move || (lo..hi).map(f).collect::<Vec<T>>())
            })
            .collect();
        handles.into_iter().flat_map(|h| h.join().expect("worker panicked")).collect()
    })
}

#[cfg(test)]
mod tests {
    #[test]
    fn order_is_kept() {
        for w in 1..6 {
            assert_eq!(super::map_indexed(3..40, w, |i| i * i), (3..40).map(|i| i * i).collect::<Vec<_>>());
        }
    }
}

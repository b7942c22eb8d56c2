//! Order-preserving parallel map over event indices.

/// Evaluates `f(0..n)` on up to `workers` threads, each taking a contiguous
/// block. The result is in index order regardless of `workers`.
pub fn map_indexed<T, F>(n: usize, workers: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync,
{
    let workers = workers.clamp(1, n.max(1));
    if workers == 1 {
        return (0..n).map(f).collect();
    }
    let per = n.div_ceil(workers);
    let f = &f;
    std::thread::scope(|s| {
        let handles: Vec<_> = (0..workers)
            .map(|w| {
                let range = (w * per).min(n)..((w + 1) * per).min(n);
                s.spawn(move || range.map(f).collect::<Vec<T>>())
            })
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("worker thread panicked"))
            .collect()
    })
}

/// [`map_indexed`] for fallible work; the first error in index order wins.
pub fn try_map_indexed<T, E, F>(n: usize, workers: usize, f: F) -> Result<Vec<T>, E>
where
    T: Send,
    E: Send,
    F: Fn(usize) -> Result<T, E> + Sync,
{
    map_indexed(n, workers, f).into_iter().collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_is_worker_invariant() {
        let one = map_indexed(37, 1, |i| i * i);
        for w in [2, 3, 8, 100] {
            assert_eq!(map_indexed(37, w, |i| i * i), one);
        }
        assert!(map_indexed(0, 4, |i| i).is_empty());
    }

    #[test]
    fn first_error_is_reported() {
        let r: Result<Vec<usize>, usize> = try_map_indexed(10, 3, |i| if i % 4 == 3 { Err(i) } else { Ok(i) });
        assert_eq!(r, Err(3));
    }
}

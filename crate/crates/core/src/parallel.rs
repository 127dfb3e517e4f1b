//! Order-preserving fan-out over scoped threads.

use std::num::NonZeroUsize;
use std::thread;

/// Worker count to use when the caller asks for `0` (automatic).
pub fn resolve_workers(requested: usize) -> usize {
    if requested > 0 {
        requested
    } else {
        thread::available_parallelism().map_or(1, NonZeroUsize::get)
    }
}

/// Applies `f` to every item on up to `workers` threads. Results come back in
/// item order, so the output never depends on scheduling.
pub fn parallel_map<T, R, F>(items: &[T], workers: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(usize, &T) -> R + Sync,
{
    let workers = resolve_workers(workers).min(items.len()).max(1);
    if workers == 1 {
        return items.iter().enumerate().map(|(i, t)| f(i, t)).collect();
    }
    let mut slots: Vec<Option<R>> = (0..items.len()).map(|_| None).collect();
    thread::scope(|s| {
        let f = &f;
        let handles: Vec<_> = (0..workers)
            .map(|w| {
                s.spawn(move || {
                    (w..items.len())
                        .step_by(workers)
                        .map(|i| (i, f(i, &items[i])))
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        for h in handles {
            for (i, r) in h.join().expect("worker panicked") {
                slots[i] = Some(r);
            }
        }
    });
    slots.into_iter().map(|r| r.expect("every item mapped")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn keeps_order_for_any_worker_count() {
        let items: Vec<u64> = (0..37).collect();
        let serial = parallel_map(&items, 1, |i, x| x * 3 + i as u64);
        for w in [2, 3, 8, 64] {
            assert_eq!(parallel_map(&items, w, |i, x| x * 3 + i as u64), serial);
        }
        assert!(parallel_map(&[] as &[u8], 4, |_, x| *x).is_empty());
    }
}

//! Bounded fan-out with deterministic result order.

use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Mutex;

/// Applies `f` to every item on at most `limit` threads and returns the
/// results in input order. On failure the error of the lowest failing index
/// is returned; workers stop picking up new items once any item fails.
pub fn bounded_map<T, R, E, F>(items: &[T], limit: usize, f: F) -> Result<Vec<R>, E>
where
    T: Sync,
    R: Send,
    E: Send,
    F: Fn(usize, &T) -> Result<R, E> + Sync,
{
    match bounded_map_partial(items, limit, f) {
        (done, None) => Ok(done),
        (_, Some(e)) => Err(e),
    }
}

/// Like [`bounded_map`], but also hands back the results of the items before
/// the first failure.
pub fn bounded_map_partial<T, R, E, F>(items: &[T], limit: usize, f: F) -> (Vec<R>, Option<E>)
where
    T: Sync,
    R: Send,
    E: Send,
    F: Fn(usize, &T) -> Result<R, E> + Sync,
{
    let limit = limit.max(1).min(items.len().max(1));
    let next = AtomicUsize::new(0);
    let failed = AtomicBool::new(false);
    let slots: Mutex<Vec<Option<Result<R, E>>>> = Mutex::new((0..items.len()).map(|_| None).collect());
    let work = || loop {
        if failed.load(Ordering::Relaxed) {
            break;
        }
        let i = next.fetch_add(1, Ordering::Relaxed);
        if i >= items.len() {
            break;
        }
        let r = f(i, &items[i]);
        if r.is_err() {
            failed.store(true, Ordering::Relaxed);
        }
        slots.lock().expect("result slots")[i] = Some(r);
    };
    if limit == 1 {
        work();
    } else {
        std::thread::scope(|s| {
            for _ in 0..limit {
                s.spawn(work);
            }
        });
    }
    // Items are claimed in index order, so every index below the first failure
    // was processed and any skipped slot comes after it.
    let mut done = Vec::with_capacity(items.len());
    for slot in slots.into_inner().expect("result slots") {
        match slot.expect("slot skipped before the first failure") {
            Ok(r) => done.push(r),
            Err(e) => return (done, Some(e)),
        }
    }
    (done, None)
}

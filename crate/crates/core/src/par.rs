/// Worker count from `AMF_THREADS` (0 means sequential), else the number of
/// available cores.
pub fn thread_budget() -> usize {
    match std::env::var("AMF_THREADS").ok().and_then(|s| s.trim().parse::<usize>().ok()) {
        Some(0) => 1,
        Some(n) => n,
        None => std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1),
    }
}

/// Evaluate `f(0..n)` across scoped threads, preserving index order.
pub(crate) fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync,
{
    let threads = thread_budget().min(n).max(1);
    if threads == 1 {
        return (0..n).map(f).collect();
    }
    let mut out: Vec<Option<T>> = (0..n).map(|_| None).collect();
    let chunk = n.div_ceil(threads);
    std::thread::scope(|s| {
        for (t, slots) in out.chunks_mut(chunk).enumerate() {
            let f = &f;
            s.spawn(move || {
                for (k, slot) in slots.iter_mut().enumerate() {
                    *slot = Some(f(t * chunk + k));
                }
            });
        }
    });
    out.into_iter().map(|v| v.expect("every slot is filled")).collect()
}

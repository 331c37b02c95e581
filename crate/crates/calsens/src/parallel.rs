//! Data-parallel map with a sequential fallback.
//!
//! Built with the `parallel` feature (default), [`par_map`] fans out over a
//! rayon pool; results are collected in input order, so every downstream
//! reduction is bit-identical regardless of thread count. Without the
//! feature the same API runs sequentially.

/// Map `f` over `0..n`, preserving index order in the output.
#[cfg(feature = "parallel")]
pub fn par_map<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    use rayon::prelude::*;
    (0..n).into_par_iter().map(f).collect()
}

/// Map `f` over `0..n`, preserving index order in the output.
#[cfg(not(feature = "parallel"))]
pub fn par_map<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    (0..n).map(f).collect()
}

/// Run `f` inside a pool capped at `threads` workers (0 = library default).
///
/// Without the `parallel` feature the cap is meaningless and `f` runs inline.
#[cfg(feature = "parallel")]
pub fn with_thread_cap<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> T {
    if threads == 0 {
        return f();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .expect("failed to build thread pool");
    pool.install(f)
}

/// Run `f` inside a pool capped at `threads` workers (0 = library default).
#[cfg(not(feature = "parallel"))]
pub fn with_thread_cap<T: Send>(_threads: usize, f: impl FnOnce() -> T + Send) -> T {
    f()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preserves_order() {
        let v = par_map(100, |i| i * i);
        assert_eq!(v[7], 49);
        assert_eq!(v.len(), 100);
    }

    #[test]
    fn thread_cap_runs() {
        let s = with_thread_cap(1, || par_map(10, |i| i).iter().sum::<usize>());
        assert_eq!(s, 45);
    }
}

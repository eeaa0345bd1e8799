//! Data-parallel helpers. With the `parallel` feature these run on the
//! rayon pool; without it they fall back to sequential iteration. Output
//! order always matches input order, so reductions over the results are
//! reproducible regardless of the worker count.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Maps `f` over `items`, preserving order.
#[cfg(feature = "parallel")]
pub fn map<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    items.par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn map<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    F: Fn(&T) -> R,
{
    items.iter().map(f).collect()
}

/// Maps `f` over `0..n`, preserving order.
#[cfg(feature = "parallel")]
pub fn map_range<R, F>(n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn map_range<R, F>(n: usize, f: F) -> Vec<R>
where
    F: Fn(usize) -> R,
{
    (0..n).map(f).collect()
}

/// Sequential reference versions, available with either feature setting.
pub mod seq {
    pub fn map<T, R, F: Fn(&T) -> R>(items: &[T], f: F) -> Vec<R> {
        items.iter().map(f).collect()
    }

    pub fn map_range<R, F: Fn(usize) -> R>(n: usize, f: F) -> Vec<R> {
        (0..n).map(f).collect()
    }
}

/// Runs `f` with at most `threads` workers. `None` uses the global pool.
#[cfg(feature = "parallel")]
pub fn with_threads<R: Send, F: FnOnce() -> R + Send>(threads: Option<usize>, f: F) -> R {
    match threads {
        Some(n) if n > 0 => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map(|pool| pool.install(f))
            .unwrap_or_else(|e| panic!("failed to build thread pool: {e}")),
        _ => f(),
    }
}

#[cfg(not(feature = "parallel"))]
pub fn with_threads<R, F: FnOnce() -> R>(_threads: Option<usize>, f: F) -> R {
    f()
}

#[cfg(test)]
mod tests {
    #[test]
    fn order_is_preserved() {
        let xs: Vec<usize> = (0..1000).collect();
        assert_eq!(super::map(&xs, |x| x * 2), super::seq::map(&xs, |x| x * 2));
        assert_eq!(super::map_range(10, |i| i), (0..10).collect::<Vec<_>>());
        assert_eq!(
            super::with_threads(Some(2), || super::map_range(3, |i| i + 1)),
            vec![1, 2, 3]
        );
    }
}

//! Order-preserving parallel/sequential dispatch.
//!
//! With the `parallel` feature the closures run on the rayon pool; without it
//! they run inline. Both paths collect in input order, so results are
//! identical regardless of feature flags or thread count.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

pub(crate) fn map_range<U, F>(n: usize, f: F) -> Vec<U>
where
    U: Send,
    F: Fn(usize) -> U + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        (0..n).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(f).collect()
    }
}

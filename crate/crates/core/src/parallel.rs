//! Index-ordered data-parallel map with a sequential fallback.
//!
//! Results always come back in index order, so any reduction the caller
//! performs afterwards is identical whichever path produced them.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Execution {
    /// Rayon when the `parallel` feature is on, sequential otherwise.
    #[default]
    Auto,
    Sequential,
}

impl Execution {
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Execution::Auto
    }

    pub fn map<T, R, F>(self, items: &[T], f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(usize, &T) -> R + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        {
            if self.is_parallel() {
                return items.par_iter().enumerate().map(|(i, x)| f(i, x)).collect();
            }
        }
        items.iter().enumerate().map(|(i, x)| f(i, x)).collect()
    }

    pub fn map_range<R, F>(self, n: usize, f: F) -> Vec<R>
    where
        R: Send,
        F: Fn(usize) -> R + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        {
            if self.is_parallel() {
                return (0..n).into_par_iter().map(&f).collect();
            }
        }
        (0..n).map(f).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn both_paths_agree_in_order() {
        let xs: Vec<u64> = (0..5000).collect();
        let a = Execution::Auto.map(&xs, |i, x| (i as u64) * 3 + x);
        let b = Execution::Sequential.map(&xs, |i, x| (i as u64) * 3 + x);
        assert_eq!(a, b);
    }
}

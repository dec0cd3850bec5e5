//! Data-parallel map helpers.
//!
//! Batch elements (sequences, rollout records, finite-difference coordinates)
//! are independent, so they map cleanly onto rayon. `par_map` uses the rayon
//! pool when the `parallel` feature is enabled and degrades to a plain
//! sequential map otherwise; `seq_map` is always sequential and exists so the
//! bench suite can compare both paths in one build.
//!
//! Results come back in input order and all reductions downstream run
//! sequentially over the collected vector, so parallel and sequential builds
//! produce bitwise-identical numbers.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Map over a slice, in parallel when the `parallel` feature is enabled.
#[cfg(feature = "parallel")]
pub fn par_map<T: Sync, U: Send, F>(items: &[T], f: F) -> Vec<U>
where
    F: Fn(&T) -> U + Sync + Send,
{
    items.par_iter().map(f).collect()
}

/// Map over a slice, in parallel when the `parallel` feature is enabled.
#[cfg(not(feature = "parallel"))]
pub fn par_map<T: Sync, U: Send, F>(items: &[T], f: F) -> Vec<U>
where
    F: Fn(&T) -> U + Sync + Send,
{
    items.iter().map(f).collect()
}

/// Map over index range, in parallel when the `parallel` feature is enabled.
#[cfg(feature = "parallel")]
pub fn par_map_range<U: Send, F>(n: usize, f: F) -> Vec<U>
where
    F: Fn(usize) -> U + Sync + Send,
{
    (0..n).into_par_iter().map(f).collect()
}

/// Map over index range, in parallel when the `parallel` feature is enabled.
#[cfg(not(feature = "parallel"))]
pub fn par_map_range<U: Send, F>(n: usize, f: F) -> Vec<U>
where
    F: Fn(usize) -> U + Sync + Send,
{
    (0..n).map(f).collect()
}

/// Always-sequential map with the same signature as [`par_map`].
pub fn seq_map<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    F: Fn(&T) -> U,
{
    items.iter().map(f).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn par_and_seq_agree_bitwise() {
        let xs: Vec<f32> = (0..257).map(|i| (i as f32) * 0.37 - 40.0).collect();
        let f = |x: &f32| (x.sin() * x.exp().min(1e6)).to_bits();
        assert_eq!(par_map(&xs, f), seq_map(&xs, f));
    }

    #[test]
    fn order_is_preserved() {
        let xs: Vec<usize> = (0..1000).collect();
        let ys = par_map_range(xs.len(), |i| i * 2);
        assert!(ys.iter().enumerate().all(|(i, &y)| y == 2 * i));
    }
}

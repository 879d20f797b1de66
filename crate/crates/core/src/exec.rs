//! Data-parallel helpers. With the `parallel` feature they run on rayon; without
//! it every call degrades to a plain sequential loop. Results are always in
//! input order, so the choice never changes output.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Requested execution strategy. `Parallel` falls back to sequential when the
/// crate is built without the `parallel` feature.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Execution {
    Sequential,
    #[default]
    Parallel,
}

impl Execution {
    /// Whether work will actually be spread over threads.
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Execution::Parallel
    }
}

/// Below this many items the per-call overhead of a fork outweighs the work.
pub const MIN_PARALLEL_ITEMS: usize = 256;

pub fn map_slice<T, U, F>(items: &[T], exec: Execution, f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if exec.is_parallel() && items.len() >= MIN_PARALLEL_ITEMS {
        return items.par_iter().map(f).collect();
    }
    let _ = exec;
    items.iter().map(f).collect()
}

pub fn map_slice_mut<T, U, F>(items: &mut [T], exec: Execution, f: F) -> Vec<U>
where
    T: Send,
    U: Send,
    F: Fn(usize, &mut T) -> U + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if exec.is_parallel() && items.len() >= MIN_PARALLEL_ITEMS {
        return items
            .par_iter_mut()
            .enumerate()
            .map(|(i, t)| f(i, t))
            .collect();
    }
    let _ = exec;
    items.iter_mut().enumerate().map(|(i, t)| f(i, t)).collect()
}

/// Applies `f` to every item with no size threshold, for coarse-grained work
/// such as whole simulation runs. `threads = Some(n)` pins a dedicated pool.
pub fn for_each_coarse<T, F>(items: Vec<T>, exec: Execution, threads: Option<usize>, f: F)
where
    T: Send,
    F: Fn(T) + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if exec.is_parallel() && threads != Some(1) {
        let run = || items.into_par_iter().for_each(&f);
        match threads {
            Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
                Ok(pool) => pool.install(run),
                Err(e) => {
                    log::warn!("thread pool unavailable ({e}); using global pool");
                    run()
                }
            },
            None => run(),
        }
        return;
    }
    let _ = (exec, threads);
    items.into_iter().for_each(f)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Mutex;

    #[test]
    fn map_preserves_order_either_way() {
        let xs: Vec<u64> = (0..5000).collect();
        let seq = map_slice(&xs, Execution::Sequential, |x| x * x);
        let par = map_slice(&xs, Execution::Parallel, |x| x * x);
        assert_eq!(seq, par);
    }

    #[test]
    fn map_mut_sees_indices() {
        let mut xs = vec![0usize; 1000];
        let out = map_slice_mut(&mut xs, Execution::Parallel, |i, x| {
            *x = i;
            i * 2
        });
        assert_eq!(xs, (0..1000).collect::<Vec<_>>());
        assert_eq!(out[999], 1998);
    }

    #[test]
    fn coarse_visits_everything() {
        let seen = Mutex::new(Vec::new());
        for_each_coarse((0..64).collect(), Execution::Parallel, Some(4), |i: i32| {
            seen.lock().unwrap().push(i)
        });
        let mut seen = seen.into_inner().unwrap();
        seen.sort();
        assert_eq!(seen, (0..64).collect::<Vec<_>>());
    }
}

//! Bounded task execution.
//!
//! Subspace tasks share nothing mutable, so the only contract an executor has
//! to honour is "run every index exactly once with at most `workers` tasks in
//! flight". Results are collected by index, which makes the output
//! independent of completion order.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

pub trait Executor: Sync {
    /// Maximum number of tasks in flight.
    fn workers(&self) -> usize;

    /// Calls `task(i)` once for every `i in 0..n_tasks`.
    fn execute(&self, n_tasks: usize, task: &(dyn Fn(usize) + Sync));
}

/// Fixed-size pool of scoped OS threads pulling indices from a shared counter.
#[derive(Debug, Clone, Copy)]
pub struct WorkerPool {
    workers: usize,
}

impl WorkerPool {
    pub fn new(workers: usize) -> Self {
        Self {
            workers: workers.max(1),
        }
    }
}

impl Executor for WorkerPool {
    fn workers(&self) -> usize {
        self.workers
    }

    fn execute(&self, n_tasks: usize, task: &(dyn Fn(usize) + Sync)) {
        let threads = self.workers.min(n_tasks);
        if threads <= 1 {
            (0..n_tasks).for_each(task);
            return;
        }
        let next = AtomicUsize::new(0);
        std::thread::scope(|scope| {
            for _ in 0..threads {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    if i >= n_tasks {
                        break;
                    }
                    task(i);
                });
            }
        });
    }
}

/// Maps `f` over `0..n` on `exec`, returning results in index order.
pub fn map_indexed<T, F>(exec: &dyn Executor, n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync,
{
    let slots: Vec<Mutex<Option<T>>> = (0..n).map(|_| Mutex::new(None)).collect();
    exec.execute(n, &|i| {
        let out = f(i);
        *slots[i].lock().unwrap() = Some(out);
    });
    slots
        .into_iter()
        .map(|s| s.into_inner().unwrap().expect("executor skipped a task"))
        .collect()
}

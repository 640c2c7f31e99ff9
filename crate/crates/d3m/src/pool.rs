use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;

use d3m_core::exec::Executor;

/// Runs jobs on up to `workers` scoped threads. Workers pull job indices
/// from a shared counter; results are returned in index order, so the output
/// never depends on the worker count.
#[derive(Debug, Clone, Copy)]
pub struct ThreadPool {
    workers: usize,
}

impl ThreadPool {
    pub fn new(workers: usize) -> Self {
        ThreadPool { workers: workers.max(1) }
    }

    /// One worker per available core.
    pub fn available() -> Self {
        ThreadPool::new(thread::available_parallelism().map_or(1, |n| n.get()))
    }

    pub fn workers(&self) -> usize {
        self.workers
    }
}

impl Executor for ThreadPool {
    fn run<T, F>(&self, jobs: usize, job: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync,
    {
        let threads = self.workers.min(jobs);
        if threads <= 1 {
            return (0..jobs).map(job).collect();
        }
        let next = AtomicUsize::new(0);
        let slots: Vec<Mutex<Option<T>>> = (0..jobs).map(|_| Mutex::new(None)).collect();
        thread::scope(|s| {
            for _ in 0..threads {
                s.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    if i >= jobs {
                        break;
                    }
                    let out = job(i);
                    *slots[i].lock().expect("result slot") = Some(out);
                });
            }
        });
        slots
            .into_iter()
            .map(|m| m.into_inner().expect("result slot").expect("every job ran"))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use d3m_core::exec::Sequential;

    #[test]
    fn results_are_in_index_order() {
        for workers in [1, 2, 3, 8, 64] {
            let out = ThreadPool::new(workers).run(37, |i| i * i);
            assert_eq!(out, Sequential.run(37, |i| i * i));
        }
        assert!(ThreadPool::new(4).run(0, |i| i).is_empty());
        assert_eq!(ThreadPool::new(0).workers(), 1);
    }

    #[test]
    fn jobs_run_concurrently() {
        let live = AtomicUsize::new(0);
        let peak = AtomicUsize::new(0);
        ThreadPool::new(4).run(16, |_| {
            let now = live.fetch_add(1, Ordering::SeqCst) + 1;
            peak.fetch_max(now, Ordering::SeqCst);
            thread::sleep(std::time::Duration::from_millis(5));
            live.fetch_sub(1, Ordering::SeqCst);
        });
        assert!(peak.load(Ordering::SeqCst) > 1);
    }
}

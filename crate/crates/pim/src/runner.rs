//! Thread-pool execution of λ trials.

use std::num::NonZeroUsize;

use pim_core::pim::{Sequential, TrialRunner};
use pim_core::{LambdaTrial, Result};

/// Spreads λ trials over scoped worker threads; results keep grid order.
#[derive(Debug, Clone, Copy)]
pub struct Threaded {
    threads: NonZeroUsize,
}

impl Threaded {
    pub fn new(threads: NonZeroUsize) -> Self {
        Threaded { threads }
    }

    /// One worker per available CPU.
    pub fn available() -> Self {
        Threaded::new(std::thread::available_parallelism().unwrap_or(NonZeroUsize::MIN))
    }

    pub fn threads(&self) -> usize {
        self.threads.get()
    }
}

impl TrialRunner for Threaded {
    fn run(&self, lambdas: &[f64], trial: &(dyn Fn(f64) -> Result<LambdaTrial> + Sync)) -> Vec<Result<LambdaTrial>> {
        let workers = self.threads.get().min(lambdas.len());
        if workers <= 1 {
            return Sequential.run(lambdas, trial);
        }
        let mut out: Vec<Option<Result<LambdaTrial>>> = (0..lambdas.len()).map(|_| None).collect();
        std::thread::scope(|s| {
            let handles: Vec<_> = (0..workers)
                .map(|w| {
                    s.spawn(move || {
                        (w..lambdas.len())
                            .step_by(workers)
                            .map(|i| (i, trial(lambdas[i])))
                            .collect::<Vec<_>>()
                    })
                })
                .collect();
            for h in handles {
                for (i, r) in h.join().expect("λ worker panicked") {
                    out[i] = Some(r);
                }
            }
        });
        out.into_iter().map(|r| r.expect("every trial ran")).collect()
    }
}

//! Data-parallel training and evaluation on the rayon pool.
//!
//! Samples fan out across threads; results are collected in sample order,
//! so outputs equal the sequential ones bit for bit.

use rayon::prelude::*;
use videollm_core::metrics::MetricReport;
use videollm_core::model::{Example, SampleOutput, Task, VideoLlm};
use videollm_core::numerics::{Gradients, ParamStore};
use videollm_core::trainer::{infer_sample, sample_gradients, score, BatchExecutor, EvalMode, TrainConfig};
use videollm_core::Real;

/// Per-sample gradients on the current rayon pool.
#[derive(Debug, Clone, Copy, Default)]
pub struct Parallel;

impl BatchExecutor for Parallel {
    fn run<T: Real>(
        &self,
        model: &VideoLlm,
        store: &ParamStore<T>,
        batch: &[(&Example, u64)],
        cfg: &TrainConfig,
    ) -> videollm_core::Result<Vec<(f64, Gradients<T>)>> {
        batch.par_iter().map(|(ex, seed)| sample_gradients(model, store, ex, cfg, *seed)).collect()
    }
}

pub fn evaluate<T: Real>(
    model: &VideoLlm,
    store: &ParamStore<T>,
    data: &[Example],
    task: Task,
    mode: EvalMode,
) -> videollm_core::Result<(MetricReport, Vec<SampleOutput>)> {
    let outputs: Vec<SampleOutput> = data
        .par_iter()
        .map(|ex| infer_sample(model, store, ex, task, mode))
        .collect::<videollm_core::Result<_>>()?;
    let report = score(&model.config, task, data, &outputs)?;
    Ok((report, outputs))
}

/// Runs `f` on a pool of `threads` workers, or on the global pool.
pub fn with_threads<R: Send>(threads: Option<usize>, f: impl FnOnce() -> R + Send) -> R {
    match threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .expect("thread pool")
            .install(f),
        None => f(),
    }
}

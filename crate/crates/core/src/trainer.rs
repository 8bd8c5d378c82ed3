//! Optimization, evaluation and checkpoints.
//!
//! Training minimizes the task loss of [`VideoLlm::loss`] with AdamW under a
//! cosine schedule and global-norm clipping. Each batch is a list of
//! per-sample graphs; their gradients are merged in batch order, so the
//! result does not depend on how the samples were scheduled. The
//! [`BatchExecutor`] trait lets a caller fan the samples out over threads.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{config_err, Error, Result};
use crate::matching::SetLossWeights;
use crate::metrics::{
    average_precision, class_mean_recall_at_k, detection_map, edit_score, framewise_accuracy, label_runs, rank_at_k, rouge_l,
    run_labels, segmental_f1, DetectionSample, MetricReport,
};
use crate::model::{caption_words, horizon_targets, next_targets, Example, ModelConfig, SampleOutput, Task, VideoLlm, TOP_K};
use crate::numerics::{Graph, Gradients, ParamId, ParamStore, Real, Tensor};

/// tIoU thresholds of the detection mAP.
pub const MAP_THRESHOLDS: [f64; 5] = [0.1, 0.2, 0.3, 0.4, 0.5];

/// Optimization settings for one task.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(default, deny_unknown_fields))]
pub struct TrainConfig {
    pub task: Task,
    pub steps: usize,
    pub batch_size: usize,
    /// Peak rate of heads, translator and adapters.
    pub learning_rate: f64,
    /// Peak rate of reasoner parameters when they train.
    pub reasoner_learning_rate: f64,
    /// Cosine floor as a fraction of the peak.
    pub min_lr_fraction: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub clip_norm: f64,
    /// Train every reasoner parameter regardless of the tuning method.
    pub full_reasoner: bool,
    pub set_loss: SetLossWeights,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            task: Task::Online,
            steps: 1000,
            batch_size: 8,
            learning_rate: 1e-3,
            reasoner_learning_rate: 1e-4,
            min_lr_fraction: 0.1,
            weight_decay: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            clip_norm: 1.0,
            full_reasoner: false,
            set_loss: SetLossWeights::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(config_err("batch_size", "must be positive"));
        }
        for (name, v) in [("learning_rate", self.learning_rate), ("reasoner_learning_rate", self.reasoner_learning_rate)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(config_err(name, "must be positive and finite"));
            }
        }
        if !(0.0..=1.0).contains(&self.min_lr_fraction) {
            return Err(config_err("min_lr_fraction", "must be in [0, 1]"));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(config_err("weight_decay", "must be non-negative"));
        }
        for (name, v) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&v) {
                return Err(config_err(name, "must be in [0, 1)"));
            }
        }
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return Err(config_err("epsilon", "must be positive"));
        }
        if !(self.clip_norm.is_finite() && self.clip_norm > 0.0) {
            return Err(config_err("clip_norm", "must be positive"));
        }
        self.set_loss.validate()
    }
}

/// Cosine decay from `peak` at step 0 to `floor · peak` at `total`.
pub fn cosine_lr(step: usize, total: usize, peak: f64, floor: f64) -> f64 {
    if total == 0 {
        return peak;
    }
    let t = (step.min(total) as f64) / total as f64;
    peak * (floor + (1.0 - floor) * 0.5 * (1.0 + num_traits::Float::cos(core::f64::consts::PI * t)))
}

/// AdamW moments for every parameter of a store.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamW<T> {
    pub step: u64,
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
}

impl<T: Real> AdamW<T> {
    pub fn new(store: &ParamStore<T>) -> Self {
        let zeros: Vec<Tensor<T>> = store.iter().map(|(_, p)| Tensor::zeros(p.value.shape())).collect();
        Self {
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    /// One update of the trainable parameters that have a gradient.
    /// Weight decay applies to rank-2 parameters only and is decoupled from
    /// the adaptive step.
    pub fn update(&mut self, store: &mut ParamStore<T>, grads: &Gradients<T>, cfg: &TrainConfig, lr: impl Fn(ParamId) -> f64) {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - num_traits::Float::powi(cfg.beta1, t);
        let c2 = 1.0 - num_traits::Float::powi(cfg.beta2, t);
        let (b1, b2, eps) = (T::from_f64(cfg.beta1), T::from_f64(cfg.beta2), T::from_f64(cfg.epsilon));
        let ids: Vec<ParamId> = store.trainable_ids();
        for id in ids {
            let Some(g) = grads.get(id) else { continue };
            let rate = lr(id);
            let decay = if store.value(id).shape().len() == 2 { T::from_f64(1.0 - rate * cfg.weight_decay) } else { T::one() };
            let (step, c1, c2) = (T::from_f64(rate), T::from_f64(c1), T::from_f64(c2));
            let m = self.m[id.0].data_mut();
            let v = self.v[id.0].data_mut();
            let p = store.value_mut(id).data_mut();
            for (((p, m), v), &g) in p.iter_mut().zip(m.iter_mut()).zip(v.iter_mut()).zip(g.data()) {
                *m = b1 * *m + (T::one() - b1) * g;
                *v = b2 * *v + (T::one() - b2) * g * g;
                let update = (*m / c1) / (num_traits::Float::sqrt(*v / c2) + eps);
                *p = *p * decay - step * update;
            }
        }
    }
}

/// Position of the epoch-shuffled sampler.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(deny_unknown_fields))]
pub struct SamplerState {
    pub seed: u64,
    pub epoch: u64,
    pub cursor: usize,
}

impl SamplerState {
    pub fn new(seed: u64) -> Self {
        Self { seed, epoch: 0, cursor: 0 }
    }

    fn order(&self, n: usize) -> Vec<usize> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.epoch);
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut rng);
        idx
    }

    /// Next `batch` dataset indices; every epoch visits each index once.
    pub fn next_batch(&mut self, n: usize, batch: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(batch);
        let mut order = self.order(n);
        while out.len() < batch {
            if self.cursor >= n {
                self.epoch += 1;
                self.cursor = 0;
                order = self.order(n);
            }
            out.push(order[self.cursor]);
            self.cursor += 1;
        }
        out
    }
}

fn mix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Dropout seed of batch slot `slot` at `step`.
pub fn dropout_seed(seed: u64, step: usize, slot: usize) -> u64 {
    mix(mix(seed ^ mix(step as u64)) ^ slot as u64)
}

/// Loss and gradients of one example.
pub fn sample_gradients<T: Real>(
    model: &VideoLlm,
    store: &ParamStore<T>,
    ex: &Example,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<(f64, Gradients<T>)> {
    let mut g = if model.config.reasoner.dropout > 0.0 { Graph::training(store, seed) } else { Graph::new(store) };
    let loss = model.loss(&mut g, ex, cfg.task, &cfg.set_loss)?;
    let value = g.value(loss).item().as_f64();
    if !value.is_finite() {
        return Err(Error::NonFinite(format!("loss of sample {}", ex.id)));
    }
    Ok((value, g.backward(loss)?))
}

/// Computes per-sample losses and gradients of one batch, in batch order.
pub trait BatchExecutor {
    fn run<T: Real>(
        &self,
        model: &VideoLlm,
        store: &ParamStore<T>,
        batch: &[(&Example, u64)],
        cfg: &TrainConfig,
    ) -> Result<Vec<(f64, Gradients<T>)>>;
}

/// Runs the samples one after another on the calling thread.
#[derive(Debug, Clone, Copy, Default)]
pub struct Sequential;

impl BatchExecutor for Sequential {
    fn run<T: Real>(
        &self,
        model: &VideoLlm,
        store: &ParamStore<T>,
        batch: &[(&Example, u64)],
        cfg: &TrainConfig,
    ) -> Result<Vec<(f64, Gradients<T>)>> {
        batch.iter().map(|(ex, seed)| sample_gradients(model, store, ex, cfg, *seed)).collect()
    }
}

/// One logged optimizer step.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(deny_unknown_fields))]
pub struct StepLog {
    pub step: usize,
    pub loss: f64,
    pub lr: f64,
    /// Global gradient norm before clipping.
    pub grad_norm: f64,
}

/// Owns the optimizer state of a run.
#[derive(Debug, Clone)]
pub struct Trainer<T> {
    pub config: TrainConfig,
    pub optimizer: AdamW<T>,
    pub sampler: SamplerState,
    pub step: usize,
    pub log: Vec<StepLog>,
    reasoner_ids: Vec<bool>,
}

impl<T: Real> Trainer<T> {
    /// Validates the config and applies the task's tuning partition.
    pub fn new(model: &VideoLlm, store: &mut ParamStore<T>, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        model.partition(store, config.task, config.full_reasoner)?;
        let mut reasoner_ids = vec![false; store.len()];
        for id in model.reasoner.param_ids() {
            reasoner_ids[id.0] = true;
        }
        Ok(Self {
            optimizer: AdamW::new(store),
            sampler: SamplerState::new(config.seed),
            step: 0,
            log: Vec::new(),
            reasoner_ids,
            config,
        })
    }

    fn peak(&self, id: ParamId) -> f64 {
        if self.reasoner_ids[id.0] {
            self.config.reasoner_learning_rate
        } else {
            self.config.learning_rate
        }
    }

    /// One optimizer step on the next batch of `data`.
    pub fn step<E: BatchExecutor>(&mut self, model: &VideoLlm, store: &mut ParamStore<T>, data: &[Example], exec: &E) -> Result<StepLog> {
        if data.is_empty() {
            return Err(Error::Argument("training set is empty".into()));
        }
        let idx = self.sampler.next_batch(data.len(), self.config.batch_size);
        let batch: Vec<(&Example, u64)> =
            idx.iter().enumerate().map(|(slot, &i)| (&data[i], dropout_seed(self.config.seed, self.step, slot))).collect();
        let results = exec.run(model, store, &batch, &self.config)?;
        let mut grads = Gradients::empty(store.len());
        let mut loss = 0.0;
        for (l, g) in &results {
            loss += l;
            grads.merge(g);
        }
        let inv = 1.0 / results.len() as f64;
        loss *= inv;
        grads.scale(T::from_f64(inv));
        if !loss.is_finite() || !grads.is_finite() {
            return Err(Error::NonFinite(format!("loss {loss} at step {}", self.step)));
        }
        let norm = grads.global_norm().as_f64();
        if norm > self.config.clip_norm {
            grads.scale(T::from_f64(self.config.clip_norm / norm));
        }
        let factor = cosine_lr(self.step, self.config.steps, 1.0, self.config.min_lr_fraction);
        let peaks: Vec<f64> = (0..store.len()).map(|i| self.peak(ParamId(i))).collect();
        self.optimizer.update(store, &grads, &self.config, |id| peaks[id.0] * factor);
        let entry = StepLog {
            step: self.step,
            loss,
            lr: self.config.learning_rate * factor,
            grad_norm: norm,
        };
        self.step += 1;
        self.log.push(entry);
        Ok(entry)
    }
}

/// Trains for `config.steps` steps and returns the checkpoint and step log.
pub fn train<E: BatchExecutor>(
    model: &VideoLlm,
    mut store: ParamStore<f32>,
    data: &[Example],
    config: TrainConfig,
    exec: &E,
) -> Result<(Checkpoint, Vec<StepLog>)> {
    if data.is_empty() {
        return Err(Error::Argument("training set is empty".into()));
    }
    let mut trainer = Trainer::new(model, &mut store, config)?;
    for _ in 0..trainer.config.steps {
        trainer.step(model, &mut store, data, exec)?;
    }
    let ckpt = Checkpoint {
        model: model.config.clone(),
        train: trainer.config.clone(),
        step: trainer.step,
        sampler: trainer.sampler,
        store,
    };
    Ok((ckpt, trainer.log))
}

/// Everything needed to rebuild a trained model.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub step: usize,
    pub sampler: SamplerState,
    /// Values and trainable flags in canonical (registration) order.
    pub store: ParamStore<f32>,
}

impl Checkpoint {
    /// An untrained checkpoint of `model` at step 0.
    pub fn initial(model: &VideoLlm, store: ParamStore<f32>, train: TrainConfig) -> Self {
        Self {
            model: model.config.clone(),
            sampler: SamplerState::new(train.seed),
            train,
            step: 0,
            store,
        }
    }

    /// Rebuilds the model layout and checks that the stored parameters match
    /// it by name and shape.
    pub fn restore(&self) -> Result<VideoLlm> {
        let (model, fresh) = VideoLlm::build::<f32>(self.model.clone())?;
        if fresh.len() != self.store.len() {
            return Err(Error::Contract(format!("checkpoint has {} parameters, model {}", self.store.len(), fresh.len())));
        }
        for ((_, a), (_, b)) in fresh.iter().zip(self.store.iter()) {
            if a.name != b.name || a.value.shape() != b.value.shape() {
                return Err(Error::Contract(format!("checkpoint parameter {} does not match model parameter {}", b.name, a.name)));
            }
        }
        Ok(model)
    }

    /// Errors unless the checkpoint was trained for `task`.
    pub fn check_task(&self, task: Task) -> Result<()> {
        if self.train.task != task {
            return Err(Error::Contract(format!(
                "checkpoint trained for {}, evaluated on {}",
                self.train.task.name(),
                task.name()
            )));
        }
        Ok(())
    }
}

/// FNV-1a over names and value bits of `ids`.
pub fn fingerprint<T: Real>(store: &ParamStore<T>, ids: &[ParamId]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    let mut eat = |bytes: &[u8]| {
        for &b in bytes {
            h ^= b as u64;
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
    };
    for &id in ids {
        let p = store.get(id);
        eat(p.name.as_bytes());
        for &x in p.value.data() {
            eat(&x.as_f64().to_bits().to_le_bytes());
        }
    }
    h
}

/// Fingerprint of the frozen parameters.
pub fn frozen_fingerprint<T: Real>(store: &ParamStore<T>) -> u64 {
    let ids: Vec<ParamId> = store.ids().filter(|&id| !store.is_trainable(id)).collect();
    fingerprint(store, &ids)
}

/// How the per-token tasks are run at evaluation time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(rename_all = "snake_case"))]
pub enum EvalMode {
    /// Streaming for online and future, whole-sequence otherwise.
    #[default]
    Auto,
    Full,
    Streaming,
}

/// Inference on one example.
pub fn infer_sample<T: Real>(model: &VideoLlm, store: &ParamStore<T>, ex: &Example, task: Task, mode: EvalMode) -> Result<SampleOutput> {
    let streaming = match mode {
        EvalMode::Auto => task.is_streaming(),
        EvalMode::Full => false,
        EvalMode::Streaming => true,
    };
    if streaming {
        model.infer_streaming(store, ex, task)
    } else {
        model.infer(store, ex, task)
    }
}

/// Runs inference over `data` and scores it.
pub fn evaluate<T: Real>(
    model: &VideoLlm,
    store: &ParamStore<T>,
    data: &[Example],
    task: Task,
    mode: EvalMode,
) -> Result<(MetricReport, Vec<SampleOutput>)> {
    let outputs = data.iter().map(|ex| infer_sample(model, store, ex, task, mode)).collect::<Result<Vec<_>>>()?;
    let report = score(&model.config, task, data, &outputs)?;
    Ok((report, outputs))
}

/// Metric names registered for each task.
pub fn metric_names(task: Task) -> &'static [&'static str] {
    match task {
        Task::Online => &["accuracy", "recall@5", "next_recall@5"],
        Task::Future => &["recall@5", "top1"],
        Task::Memory => &["mAP", "mAP@0.1", "mAP@0.2", "mAP@0.3", "mAP@0.4", "mAP@0.5"],
        Task::Nlq => &["rank1@0.3", "rank1@0.5", "rank5@0.3", "rank5@0.5"],
        Task::Dense => &["accuracy", "edit", "f1@10", "f1@25", "f1@50"],
        Task::Hd => &["mAP", "saliency_ap"],
        Task::Caption => &["rouge_l"],
    }
}

/// Scores outputs of `task` against the examples they came from.
pub fn score(config: &ModelConfig, task: Task, data: &[Example], outputs: &[SampleOutput]) -> Result<MetricReport> {
    if data.is_empty() {
        return Err(Error::Undefined("evaluation over zero samples".into()));
    }
    if data.len() != outputs.len() {
        return Err(Error::Argument(format!("{} examples, {} outputs", data.len(), outputs.len())));
    }
    for (ex, out) in data.iter().zip(outputs) {
        if ex.id != out.sample_id || out.task != task.name() {
            return Err(Error::Argument(format!("output {} ({}) does not belong to sample {}", out.sample_id, out.task, ex.id)));
        }
    }
    let mut m: BTreeMap<String, f64> = BTreeMap::new();
    let mut thresholds = Vec::new();
    match task {
        Task::Online => {
            let gt: Vec<usize> = data.iter().flat_map(|e| e.labels.iter().copied()).collect();
            let pred: Vec<usize> = outputs.iter().flat_map(|o| o.labels.iter().copied()).collect();
            let topk: Vec<Vec<usize>> = outputs.iter().flat_map(|o| o.topk.iter().cloned()).collect();
            m.insert("accuracy".into(), framewise_accuracy(&pred, &gt)?);
            m.insert("recall@5".into(), class_mean_recall_at_k(&topk, &gt, TOP_K)?);
            let (mut nk, mut ng) = (Vec::new(), Vec::new());
            for (ex, out) in data.iter().zip(outputs) {
                for (t, k) in next_targets(ex).into_iter().zip(&out.next_topk) {
                    if let Some(t) = t {
                        ng.push(t);
                        nk.push(k.clone());
                    }
                }
            }
            m.insert("next_recall@5".into(), class_mean_recall_at_k(&nk, &ng, TOP_K)?);
        }
        Task::Future => {
            let (mut topk, mut gt) = (Vec::new(), Vec::new());
            for (ex, out) in data.iter().zip(outputs) {
                let h = config.horizons;
                let targets: Vec<Vec<Option<usize>>> = (0..h).map(|j| horizon_targets(ex, config.gap, j)).collect();
                for i in 0..ex.units() {
                    for (j, t) in targets.iter().enumerate() {
                        if let (Some(t), Some(k)) = (t[i], out.topk.get(i * h + j)) {
                            gt.push(t);
                            topk.push(k.clone());
                        }
                    }
                }
            }
            m.insert("recall@5".into(), class_mean_recall_at_k(&topk, &gt, TOP_K)?);
            let top1: Vec<usize> = topk.iter().map(|k| k.first().copied().unwrap_or(usize::MAX)).collect();
            m.insert("top1".into(), framewise_accuracy(&top1, &gt)?);
        }
        Task::Dense => {
            let gt: Vec<usize> = data.iter().flat_map(|e| e.labels.iter().copied()).collect();
            let pred: Vec<usize> = outputs.iter().flat_map(|o| o.labels.iter().copied()).collect();
            m.insert("accuracy".into(), framewise_accuracy(&pred, &gt)?);
            let n = data.len() as f64;
            let edit: f64 = data.iter().zip(outputs).map(|(e, o)| edit_score(&run_labels(&o.labels), &run_labels(&e.labels))).sum();
            m.insert("edit".into(), edit / n);
            for (name, tau) in [("f1@10", 0.1), ("f1@25", 0.25), ("f1@50", 0.5)] {
                let f: f64 = data.iter().zip(outputs).map(|(e, o)| segmental_f1(&label_runs(&o.labels), &label_runs(&e.labels), tau)).sum();
                m.insert(name.into(), f / n);
            }
        }
        Task::Memory | Task::Hd => {
            let samples: Vec<DetectionSample> = data
                .iter()
                .zip(outputs)
                .map(|(e, o)| {
                    let gt = if task == Task::Memory {
                        e.segments.clone()
                    } else {
                        e.query.as_ref().map(|q| q.all_answers.clone()).unwrap_or_default()
                    };
                    DetectionSample {
                        predictions: o.predictions.clone(),
                        ground_truth: gt,
                    }
                })
                .collect();
            let (map, per) = detection_map(&samples, &MAP_THRESHOLDS);
            m.insert("mAP".into(), map);
            thresholds = MAP_THRESHOLDS.to_vec();
            if task == Task::Memory {
                for (t, v) in MAP_THRESHOLDS.iter().zip(per) {
                    m.insert(format!("mAP@{t}"), v);
                }
            } else {
                let mut total = 0.0;
                for (e, o) in data.iter().zip(outputs) {
                    let q = e.query.as_ref().ok_or_else(|| Error::Contract(format!("sample {} has no query", e.id)))?;
                    total += saliency_ap(&o.saliency, &e.labels, q.category)?;
                }
                m.insert("saliency_ap".into(), total / data.len() as f64);
            }
        }
        Task::Nlq => {
            let mut gt = Vec::with_capacity(data.len());
            for e in data {
                let q = e.query.as_ref().ok_or_else(|| Error::Contract(format!("sample {} has no query", e.id)))?;
                gt.push(q.answer.interval());
            }
            let ranked: Vec<Vec<(f64, f64)>> = outputs.iter().map(|o| o.predictions.iter().map(|s| s.interval()).collect()).collect();
            thresholds = vec![0.3, 0.5];
            for (k, t) in [(1, 0.3), (1, 0.5), (5, 0.3), (5, 0.5)] {
                m.insert(format!("rank{k}@{t}"), rank_at_k(&ranked, &gt, k, t)?);
            }
        }
        Task::Caption => {
            let mut total = 0.0;
            let mut count = 0usize;
            for (e, o) in data.iter().zip(outputs) {
                let units = e.caption_units();
                if units.len() != o.captions.len() {
                    return Err(Error::Argument(format!("sample {}: {} captions for {} events", e.id, o.captions.len(), units.len())));
                }
                for (u, c) in units.iter().zip(&o.captions) {
                    total += rouge_l(caption_words(c), caption_words(&e.captions[*u]));
                    count += 1;
                }
            }
            if count == 0 {
                return Err(Error::Undefined("no captioned events".into()));
            }
            m.insert("rouge_l".into(), total / count as f64);
        }
    }
    Ok(MetricReport {
        task: task.name().into(),
        metrics: m,
        samples: data.len(),
        classes: config.classes,
        thresholds,
    })
}

/// AP of units ranked by saliency (ties to the earlier unit), relevant when
/// their label is `category`.
pub fn saliency_ap(saliency: &[f64], labels: &[usize], category: usize) -> Result<f64> {
    if saliency.len() != labels.len() {
        return Err(Error::Argument(format!("{} saliency scores for {} units", saliency.len(), labels.len())));
    }
    let mut order: Vec<usize> = (0..labels.len()).collect();
    order.sort_by(|&a, &b| saliency[b].total_cmp(&saliency[a]).then(a.cmp(&b)));
    let tp: Vec<bool> = order.iter().map(|&i| labels[i] == category).collect();
    let n_gt = tp.iter().filter(|&&t| t).count();
    Ok(average_precision(&tp, n_gt))
}

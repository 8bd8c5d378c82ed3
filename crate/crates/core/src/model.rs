//! The assembled model: translator, reasoner, tuning adapters and every task
//! head over one parameter store, plus task losses, batch inference and the
//! streaming session.
//!
//! Sequence layout fed to the reasoner:
//!
//! ```text
//! [prompt tokens] [visual tokens] [text tokens] [query token]
//! ```
//!
//! Prompts exist only under prompt tuning. Text is present for the
//! text-conditioned tasks and the query token for the retrieval tasks when
//! the summary is read from it.

use alloc::collections::VecDeque;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::adapters::{partition_parameters, prefix_inject, Adapters, TuningConfig};
use crate::error::{config_err, shape_err, Error, Result};
use crate::heads::{argmax, decode_proposals, top_k, CaptionGenerator, DenseHead, FutureHead, MemoryHead, OnlineHead, SummarySource};
use crate::ingest::{pool_units, unitize, EOT_ID, FIRST_WORD_ID};
use crate::matching::{set_loss_graph, SegmentTarget, SetLossWeights};
use crate::metrics::Segment;
use crate::numerics::{grad_check, kernels, r, GradCheckOptions, GradCheckReport, Graph, ParamId, ParamStore, Real, Tensor, Var};
use crate::reasoner::{forward_graph, step, ReasonerConfig, ReasonerWeights, SessionState};
use crate::synthworld::StreamSample;
use crate::translator::Translator;

/// Candidates kept per token for recall metrics.
pub const TOP_K: usize = 5;

/// Task families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(rename_all = "snake_case"))]
pub enum Task {
    /// Current and next unit category per token.
    Online,
    /// Categories of the next `N_f` units per token.
    Future,
    /// Every segment of the memory.
    Memory,
    /// Per-token categories.
    Dense,
    /// The most recent segment matching a text query.
    Nlq,
    /// Query-relevant units and segments.
    Hd,
    /// A caption for the last unit of every segment.
    Caption,
}

impl Task {
    pub const ALL: [Task; 7] = [Task::Online, Task::Future, Task::Memory, Task::Dense, Task::Nlq, Task::Hd, Task::Caption];

    pub fn name(self) -> &'static str {
        match self {
            Task::Online => "online",
            Task::Future => "future",
            Task::Memory => "memory",
            Task::Dense => "dense",
            Task::Nlq => "nlq",
            Task::Hd => "hd",
            Task::Caption => "caption",
        }
    }

    pub fn parse(name: &str) -> Option<Task> {
        Task::ALL.into_iter().find(|t| t.name() == name)
    }

    /// Tasks whose inputs end with a text query.
    pub fn uses_text(self) -> bool {
        matches!(self, Task::Nlq | Task::Hd)
    }

    /// Tasks that read a summary state after the memory.
    pub fn uses_summary(self) -> bool {
        matches!(self, Task::Memory | Task::Nlq | Task::Hd)
    }

    /// Tasks evaluated by stepping the reasoner one unit at a time.
    pub fn is_streaming(self) -> bool {
        matches!(self, Task::Online | Task::Future)
    }
}

#[cfg(feature = "serde")]
fn default_horizons() -> usize {
    4
}

#[cfg(feature = "serde")]
fn default_proposals() -> usize {
    10
}

#[cfg(feature = "serde")]
fn default_caption_len() -> usize {
    4
}

/// Model shape and task options.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(deny_unknown_fields))]
pub struct ModelConfig {
    pub feature_dim: usize,
    pub frames_per_unit: usize,
    pub classes: usize,
    /// Text vocabulary size including reserved ids.
    pub vocab_size: usize,
    pub reasoner: ReasonerConfig,
    #[cfg_attr(feature = "serde", serde(default = "TuningConfig::basic"))]
    pub tuning: TuningConfig,
    /// Anticipation horizons `N_f`.
    #[cfg_attr(feature = "serde", serde(default = "default_horizons"))]
    pub horizons: usize,
    /// Units skipped between a token and its first anticipated unit.
    #[cfg_attr(feature = "serde", serde(default))]
    pub gap: usize,
    /// Memory proposals `N_m`.
    #[cfg_attr(feature = "serde", serde(default = "default_proposals"))]
    pub proposals: usize,
    #[cfg_attr(feature = "serde", serde(default))]
    pub summary: SummarySource,
    /// Longest generated caption, end-of-text included.
    #[cfg_attr(feature = "serde", serde(default = "default_caption_len"))]
    pub caption_len: usize,
    #[cfg_attr(feature = "serde", serde(default))]
    pub seed: u64,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.reasoner.validate()?;
        self.tuning.validate()?;
        if self.feature_dim == 0 {
            return Err(config_err("feature_dim", "must be ≥ 1"));
        }
        if self.frames_per_unit == 0 {
            return Err(config_err("frames_per_unit", "must be ≥ 1"));
        }
        if self.classes < 2 {
            return Err(config_err("classes", format!("need at least 2 categories, got {}", self.classes)));
        }
        if self.vocab_size <= FIRST_WORD_ID {
            return Err(config_err("vocab_size", format!("must exceed the {FIRST_WORD_ID} reserved ids")));
        }
        if self.horizons == 0 {
            return Err(config_err("horizons", "must be ≥ 1"));
        }
        if self.proposals == 0 {
            return Err(config_err("proposals", "must be ≥ 1"));
        }
        if self.caption_len == 0 {
            return Err(config_err("caption_len", "must be ≥ 1"));
        }
        if self.tuning.method == crate::adapters::Method::Prompt && self.tuning.r >= self.reasoner.max_positions {
            return Err(config_err("tuning.r", "prompt length leaves no room for tokens"));
        }
        Ok(())
    }
}

/// Text query of an example.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(deny_unknown_fields))]
pub struct QueryTarget {
    pub category: usize,
    /// Most-recent-occurrence query ids.
    pub text: Vec<usize>,
    pub answer: Segment,
    /// Every-occurrence query ids.
    pub all_text: Vec<usize>,
    pub all_answers: Vec<Segment>,
}

/// Pooled tokens of one stream with its ground truth; times in units.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub id: u64,
    /// `N × d_v`.
    pub tokens: Tensor<f32>,
    pub labels: Vec<usize>,
    pub future: Vec<usize>,
    pub segments: Vec<Segment>,
    pub query: Option<QueryTarget>,
    /// Caption ids per unit.
    pub captions: Vec<Vec<usize>>,
}

impl Example {
    /// Unitizes and pools a generated stream.
    pub fn from_stream(sample: &StreamSample, frames_per_unit: usize) -> Result<Self> {
        let tokens = pool_units(&unitize(&sample.features, frames_per_unit)?)?;
        if tokens.len() != sample.labels.len() {
            return Err(shape_err("example", format!("{} units for {} labels", tokens.len(), sample.labels.len())));
        }
        let q = &sample.query;
        Ok(Self {
            id: sample.seed,
            tokens: tokens.tokens,
            labels: sample.labels.clone(),
            future: sample.future.clone(),
            segments: sample.segments.clone(),
            query: Some(QueryTarget {
                category: q.category,
                text: q.text.ids.clone(),
                answer: q.answer,
                all_text: q.all_text.ids.clone(),
                all_answers: q.all_answers.clone(),
            }),
            captions: sample.captions.iter().map(|c| c.ids.clone()).collect(),
        })
    }

    pub fn units(&self) -> usize {
        self.labels.len()
    }

    /// Labels of the stream followed by its future labels.
    pub fn extended_labels(&self) -> Vec<usize> {
        self.labels.iter().chain(&self.future).copied().collect()
    }

    /// Units whose caption is supervised: the last unit of every segment.
    pub fn caption_units(&self) -> Vec<usize> {
        self.segments.iter().map(|s| s.end as usize - 1).collect()
    }

    fn query(&self, task: Task) -> Result<&QueryTarget> {
        self.query
            .as_ref()
            .ok_or_else(|| Error::Contract(format!("task {} needs a query", task.name())))
    }
}

/// Ids of every model component; parameter values live in a separate store
/// so the same layout serves 32-bit training and 64-bit checking.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoLlm {
    pub config: ModelConfig,
    pub reasoner: ReasonerWeights,
    pub translator: Translator,
    pub adapters: Adapters,
    /// Text embedding table, `vocab_size × d`.
    pub text: ParamId,
    pub online: OnlineHead,
    pub future: FutureHead,
    pub memory: MemoryHead,
    pub dense: DenseHead,
    pub caption: CaptionGenerator,
}

/// Row ranges of an encoded sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layout {
    pub prompt: usize,
    pub visual: usize,
    pub text: usize,
    pub query: usize,
}

impl Layout {
    pub fn len(&self) -> usize {
        self.prompt + self.visual + self.text + self.query
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Final hidden states of one encoded example.
#[derive(Debug, Clone, Copy)]
pub struct Encoded {
    /// `N × d` over the visual tokens.
    pub visual: Var,
    /// `1 × d` summary row for the retrieval tasks.
    pub summary: Option<Var>,
    pub layout: Layout,
}

impl VideoLlm {
    /// Registers every component in a fresh store, deterministic in
    /// `config.seed`. Parameter names are prefixed by component:
    /// `reasoner.`, `translator.`, `adapters.`, `text.`, `online.`,
    /// `future.`, `memory.`, `dense.` and `caption.`.
    pub fn build<T: Real>(config: ModelConfig) -> Result<(Self, ParamStore<T>)> {
        config.validate()?;
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let (d, k) = (config.reasoner.hidden, config.classes);
        let reasoner = ReasonerWeights::register(&mut store, "reasoner.", config.reasoner, &mut rng)?;
        let translator = Translator::register(&mut store, "translator.", config.feature_dim, d, &mut rng);
        let adapters = Adapters::register(&mut store, "adapters.", &config.reasoner, &config.tuning, translator.bias, &mut rng)?;
        let text = store.add(
            "text.embeddings",
            crate::reasoner::normal_tensor(&[config.vocab_size, d], crate::reasoner::INIT_STD, &mut rng),
            true,
        );
        let online = OnlineHead::register(&mut store, "online.", d, k, &mut rng);
        let future = FutureHead::register(&mut store, "future.", d, k, config.horizons, &mut rng)?;
        let memory = MemoryHead::register(&mut store, "memory.", d, k, config.proposals, &mut rng)?;
        let dense = DenseHead::register(&mut store, "dense.", d, k, config.reasoner.max_positions, &mut rng);
        let caption = CaptionGenerator::register(&mut store, "caption.", d, config.reasoner.heads, config.vocab_size, config.caption_len, &mut rng)?;
        Ok((
            Self {
                config,
                reasoner,
                translator,
                adapters,
                text,
                online,
                future,
                memory,
                dense,
                caption,
            },
            store,
        ))
    }

    /// Parameters a task trains regardless of the tuning method: the
    /// translator and the task's own head, text table and query token.
    pub fn task_params(&self, task: Task) -> Vec<ParamId> {
        let mut out: Vec<ParamId> = self.translator.params().to_vec();
        match task {
            Task::Online => out.extend(self.online.params()),
            Task::Future => out.extend(self.future.params()),
            Task::Dense => out.extend(self.dense.class.params()),
            Task::Memory | Task::Nlq | Task::Hd => {
                out.extend(self.memory.params());
                if task == Task::Hd {
                    out.extend(self.dense.saliency.params());
                }
                if task.uses_text() {
                    out.push(self.text);
                }
                if self.config.summary == SummarySource::QueryToken {
                    out.push(self.reasoner.query_token);
                }
            }
            Task::Caption => out.extend(self.caption.params()),
        }
        out
    }

    /// Applies the tuning partition for `task`; with `full_reasoner` every
    /// reasoner parameter trains too. Returns the trainable ids.
    pub fn partition<T: Real>(&self, store: &mut ParamStore<T>, task: Task, full_reasoner: bool) -> Result<Vec<ParamId>> {
        let mut always = self.task_params(task);
        if full_reasoner {
            always.extend(self.reasoner.param_ids());
        }
        partition_parameters(store, &self.reasoner, &always, &self.config.tuning, &self.adapters)
    }

    fn check_example(&self, ex: &Example) -> Result<()> {
        if ex.tokens.cols() != self.config.feature_dim {
            return Err(shape_err("model input", format!("features of width {}, model {}", ex.tokens.cols(), self.config.feature_dim)));
        }
        if ex.tokens.rows() != ex.labels.len() || ex.labels.is_empty() {
            return Err(shape_err("model input", format!("{} tokens, {} labels", ex.tokens.rows(), ex.labels.len())));
        }
        if let Some(&bad) = ex.labels.iter().chain(&ex.future).find(|&&l| l >= self.config.classes) {
            return Err(Error::Index {
                what: "unit label",
                index: bad,
                len: self.config.classes,
            });
        }
        Ok(())
    }

    /// Records translation, layout assembly and the reasoner for one example.
    pub fn encode<T: Real>(&self, g: &mut Graph<'_, T>, ex: &Example, task: Task) -> Result<Encoded> {
        self.check_example(ex)?;
        let n = ex.units();
        let d = self.config.reasoner.hidden;
        let x = g.input(ex.tokens.cast::<T>());
        let visual = self.translator.translate_graph(g, x)?;
        let mut parts = Vec::new();
        let mut layout = Layout {
            prompt: 0,
            visual: n,
            text: 0,
            query: 0,
        };
        if let Some(p) = self.adapters.prompt() {
            if p.rank > 0 {
                parts.push(g.param(p.tokens));
                layout.prompt = p.rank;
            }
        }
        parts.push(visual);
        if task.uses_text() {
            let q = ex.query(task)?;
            let ids = if task == Task::Nlq { &q.text } else { &q.all_text };
            if let Some(&bad) = ids.iter().find(|&&i| i >= self.config.vocab_size) {
                return Err(Error::Index {
                    what: "text id",
                    index: bad,
                    len: self.config.vocab_size,
                });
            }
            let table = g.param(self.text);
            parts.push(g.gather_rows(table, ids)?);
            layout.text = ids.len();
        }
        if task.uses_summary() && self.config.summary == SummarySource::QueryToken {
            let q = g.param(self.reasoner.query_token);
            parts.push(g.reshape(q, 1, d)?);
            layout.query = 1;
        }
        let x = if parts.len() == 1 { parts[0] } else { g.concat_rows(&parts)? };
        let h = forward_graph(g, &self.reasoner, self.adapters.view(), x)?;
        let visual = g.rows(h, layout.prompt, n)?;
        let summary = if task.uses_summary() { Some(g.rows(h, layout.len() - 1, 1)?) } else { None };
        Ok(Encoded { visual, summary, layout })
    }

    /// Records the task loss of one example.
    pub fn loss<T: Real>(&self, g: &mut Graph<'_, T>, ex: &Example, task: Task, weights: &SetLossWeights) -> Result<Var> {
        let enc = self.encode(g, ex, task)?;
        let n = ex.units();
        match task {
            Task::Online => {
                let (cur, next) = self.online.logits(g, enc.visual)?;
                let cur_t: Vec<Option<usize>> = ex.labels.iter().map(|&l| Some(l)).collect();
                let next_t = next_targets(ex);
                let a = mean_ce(g, cur, &cur_t)?;
                let b = mean_ce(g, next, &next_t)?;
                g.add(a, b)
            }
            Task::Future => {
                let logits = self.future.logits(g, enc.visual)?;
                let targets: Vec<Vec<Option<usize>>> = (0..logits.len()).map(|j| horizon_targets(ex, self.config.gap, j)).collect();
                let count = targets.iter().flatten().filter(|t| t.is_some()).count().max(1);
                let w = vec![r::<T>(1.0 / count as f64); n];
                let mut terms = Vec::with_capacity(logits.len());
                for (l, t) in logits.iter().zip(&targets) {
                    terms.push((g.cross_entropy(*l, t, &w)?, T::one()));
                }
                g.weighted_sum(&terms)
            }
            Task::Dense => {
                let logits = self.dense.class_logits(g, enc.visual)?;
                let t: Vec<Option<usize>> = ex.labels.iter().map(|&l| Some(l)).collect();
                mean_ce(g, logits, &t)
            }
            Task::Memory | Task::Nlq | Task::Hd => {
                let summary = enc.summary.expect("retrieval tasks read a summary");
                let props = self.memory.predict(g, summary)?;
                let targets = self.segment_targets(ex, task)?;
                let (set, _) = set_loss_graph(g, props.class_logits, props.boundaries, &targets, weights)?;
                if task != Task::Hd {
                    return Ok(set);
                }
                let q = ex.query(task)?;
                let sal = self.dense.saliency_logits(g, summary, n)?;
                let t: Vec<Option<T>> = ex.labels.iter().map(|&l| Some(if l == q.category { T::one() } else { T::zero() })).collect();
                let bce = g.bce_with_logits(sal, &t, r(1.0 / n as f64))?;
                g.add(set, bce)
            }
            Task::Caption => {
                let units = ex.caption_units();
                let mut terms = Vec::with_capacity(units.len());
                let scale = 1.0 / units.len() as f64;
                for u in units {
                    let target = &ex.captions[u];
                    let cond = g.rows(enc.visual, u, 1)?;
                    let logits = self.caption.logits(g, cond, target)?;
                    let t: Vec<Option<usize>> = target.iter().map(|&i| Some(i)).collect();
                    terms.push((mean_ce(g, logits, &t)?, r(scale)));
                }
                g.weighted_sum(&terms)
            }
        }
    }

    /// Set-loss targets of a retrieval example, normalized to its span.
    pub fn segment_targets(&self, ex: &Example, task: Task) -> Result<Vec<SegmentTarget>> {
        let span = ex.units() as f64;
        let segs: Vec<Segment> = match task {
            Task::Memory => ex.segments.clone(),
            Task::Nlq => vec![ex.query(task)?.answer],
            Task::Hd => ex.query(task)?.all_answers.clone(),
            _ => return Err(Error::Contract(format!("task {} has no segment targets", task.name()))),
        };
        if segs.len() > self.config.proposals {
            return Err(Error::Capacity {
                needed: segs.len(),
                capacity: self.config.proposals,
            });
        }
        Ok(segs.iter().map(|s| SegmentTarget::from_interval(s.category, s.start, s.end, span)).collect())
    }

    /// Whole-sequence inference for one example.
    pub fn infer<T: Real>(&self, store: &ParamStore<T>, ex: &Example, task: Task) -> Result<SampleOutput> {
        let mut g = Graph::new(store);
        let enc = self.encode(&mut g, ex, task)?;
        let mut out = SampleOutput::new(ex.id, task);
        match task {
            Task::Online => {
                let (cur, next) = self.online.logits(&mut g, enc.visual)?;
                fill_online(&mut out, g.value(cur), g.value(next));
            }
            Task::Future => {
                let logits = self.future.logits(&mut g, enc.visual)?;
                let values: Vec<Tensor<T>> = logits.iter().map(|&v| g.value(v).clone()).collect();
                fill_future(&mut out, &values);
            }
            Task::Dense => {
                let logits = self.dense.class_logits(&mut g, enc.visual)?;
                let v = g.value(logits);
                out.labels = (0..v.rows()).map(|i| argmax(v.row(i)).0).collect();
            }
            Task::Memory | Task::Nlq | Task::Hd => {
                let summary = enc.summary.expect("retrieval tasks read a summary");
                let props = self.memory.predict(&mut g, summary)?;
                let mut segs = decode_proposals(g.value(props.class_logits), g.value(props.boundaries), ex.units() as f64);
                rank_segments(&mut segs);
                out.predictions = segs;
                if task == Task::Hd {
                    let sal = self.dense.saliency_logits(&mut g, summary, ex.units())?;
                    out.saliency = g.value(sal).data().iter().map(|&x| kernels::sigmoid(x).as_f64()).collect();
                }
            }
            Task::Caption => {
                let h = g.value(enc.visual).clone();
                for u in ex.caption_units() {
                    out.captions.push(self.caption.generate(store, h.row(u), self.config.caption_len)?);
                }
            }
        }
        Ok(out)
    }

    /// Streaming inference: tokens enter one at a time through [`StreamSession`].
    pub fn infer_streaming<T: Real>(&self, store: &ParamStore<T>, ex: &Example, task: Task) -> Result<SampleOutput> {
        if !task.is_streaming() {
            return Err(Error::Contract(format!("task {} is not evaluated by streaming", task.name())));
        }
        self.check_example(ex)?;
        let mut session = StreamSession::new(self, store)?;
        let mut out = SampleOutput::new(ex.id, task);
        for i in 0..ex.units() {
            let h = session.push(ex.tokens.row(i))?;
            let row = Tensor::matrix(1, h.len(), h);
            match task {
                Task::Online => {
                    let (cur, next) = self.online_row(store, &row)?;
                    fill_online(&mut out, &cur, &next);
                }
                _ => {
                    let values = self.future_row(store, &row)?;
                    fill_future(&mut out, &values);
                }
            }
        }
        Ok(out)
    }

    /// Online head logits for hidden rows.
    pub fn online_row<T: Real>(&self, store: &ParamStore<T>, h: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
        let mut g = Graph::new(store);
        let x = g.input(h.clone());
        let (c, n) = self.online.logits(&mut g, x)?;
        Ok((g.value(c).clone(), g.value(n).clone()))
    }

    fn future_row<T: Real>(&self, store: &ParamStore<T>, h: &Tensor<T>) -> Result<Vec<Tensor<T>>> {
        let mut g = Graph::new(store);
        let x = g.input(h.clone());
        let logits = self.future.logits(&mut g, x)?;
        Ok(logits.iter().map(|&v| g.value(v).clone()).collect())
    }

    /// Copies every `reasoner.` parameter of `source` into `store` by name.
    pub fn load_reasoner<T: Real>(&self, store: &mut ParamStore<T>, source: &ParamStore<T>) -> Result<usize> {
        let mut copied = 0;
        for id in self.reasoner.param_ids() {
            let name = store.get(id).name.clone();
            let src = source
                .find(&name)
                .ok_or_else(|| Error::Argument(format!("source has no parameter {name}")))?;
            store.assign(id, source.value(src).clone())?;
            copied += 1;
        }
        Ok(copied)
    }
}

/// Full-model 64-bit gradient check of the `task` loss on one example.
///
/// Adapters are moved off their identity initialization (gates to 0, other
/// entries uniform in ±0.5) so their gradients are exercised, and reasoner
/// matrices are scaled by 3 so attention gradients sit well above
/// finite-difference noise. Only the task's trainable partition is checked.
pub fn check_gradients(config: ModelConfig, ex: &Example, task: Task, opts: GradCheckOptions) -> Result<GradCheckReport> {
    let seed = config.seed;
    let (m, mut store) = VideoLlm::build::<f64>(config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    for id in m.adapters.params() {
        let v = store.value_mut(id);
        let gate = v.len() == 1;
        for x in v.data_mut() {
            *x = if gate { 0.0 } else { rng.random_range(-0.5..0.5) };
        }
    }
    for (id, spec) in &m.reasoner.specs {
        if spec.kind == crate::reasoner::ParamKind::Matrix {
            store.value_mut(*id).scale_assign(3.0);
        }
    }
    m.partition(&mut store, task, false)?;
    let weights = SetLossWeights::default();
    grad_check(&mut store, opts, |g| m.loss(g, ex, task, &weights))
}

fn mean_ce<T: Real>(g: &mut Graph<'_, T>, logits: Var, targets: &[Option<usize>]) -> Result<Var> {
    let count = targets.iter().filter(|t| t.is_some()).count().max(1);
    let w = vec![r::<T>(1.0 / count as f64); targets.len()];
    g.cross_entropy(logits, targets, &w)
}

/// Next-unit targets; the last token uses the first future label if known.
pub fn next_targets(ex: &Example) -> Vec<Option<usize>> {
    let ext = ex.extended_labels();
    (0..ex.units()).map(|i| ext.get(i + 1).copied()).collect()
}

/// Targets of horizon `j` (0-based): the label `gap + j + 1` units ahead.
pub fn horizon_targets(ex: &Example, gap: usize, j: usize) -> Vec<Option<usize>> {
    let ext = ex.extended_labels();
    (0..ex.units()).map(|i| ext.get(i + gap + j + 1).copied()).collect()
}

/// Score descending, then start, class and end ascending.
pub fn rank_segments(segs: &mut [Segment]) {
    segs.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then(a.start.total_cmp(&b.start))
            .then(a.category.cmp(&b.category))
            .then(a.end.total_cmp(&b.end))
    });
}

fn fill_online<T: Real>(out: &mut SampleOutput, cur: &Tensor<T>, next: &Tensor<T>) {
    for i in 0..cur.rows() {
        out.labels.push(argmax(cur.row(i)).0);
        out.topk.push(top_k(cur.row(i), TOP_K));
        out.next_topk.push(top_k(next.row(i), TOP_K));
    }
}

fn fill_future<T: Real>(out: &mut SampleOutput, horizons: &[Tensor<T>]) {
    for i in 0..horizons[0].rows() {
        for h in horizons {
            out.topk.push(top_k(h.row(i), TOP_K));
        }
    }
}

/// Model outputs for one example; fields unused by the task stay empty.
#[derive(Debug, Clone, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(deny_unknown_fields))]
pub struct SampleOutput {
    pub sample_id: u64,
    pub task: String,
    /// Ranked segments, times in units.
    #[cfg_attr(feature = "serde", serde(default, skip_serializing_if = "Vec::is_empty"))]
    pub predictions: Vec<Segment>,
    /// Top-1 category per token.
    #[cfg_attr(feature = "serde", serde(default, skip_serializing_if = "Vec::is_empty"))]
    pub labels: Vec<usize>,
    /// Best categories per token (online) or per token and horizon, horizon
    /// fastest (future).
    #[cfg_attr(feature = "serde", serde(default, skip_serializing_if = "Vec::is_empty"))]
    pub topk: Vec<Vec<usize>>,
    /// Best next-unit categories per token.
    #[cfg_attr(feature = "serde", serde(default, skip_serializing_if = "Vec::is_empty"))]
    pub next_topk: Vec<Vec<usize>>,
    /// Relevance probability per unit.
    #[cfg_attr(feature = "serde", serde(default, skip_serializing_if = "Vec::is_empty"))]
    pub saliency: Vec<f64>,
    /// Generated ids per captioned unit.
    #[cfg_attr(feature = "serde", serde(default, skip_serializing_if = "Vec::is_empty"))]
    pub captions: Vec<Vec<usize>>,
}

impl SampleOutput {
    pub fn new(sample_id: u64, task: Task) -> Self {
        Self {
            sample_id,
            task: task.name().into(),
            ..Self::default()
        }
    }
}

/// Strips everything from the first end-of-text id.
pub fn caption_words(ids: &[usize]) -> &[usize] {
    let end = ids.iter().position(|&i| i == EOT_ID).unwrap_or(ids.len());
    &ids[..end]
}

/// Incremental inference over an unbounded unit stream.
///
/// Every pooled unit is translated and fed through [`step`]. When the
/// session reaches the position capacity, the oldest unit is evicted and the
/// caches are rebuilt from the retained window.
#[derive(Debug, Clone)]
pub struct StreamSession<'m, T> {
    model: &'m VideoLlm,
    store: &'m ParamStore<T>,
    state: SessionState<T>,
    window: VecDeque<Vec<T>>,
    evictions: usize,
}

impl<'m, T: Real> StreamSession<'m, T> {
    pub fn new(model: &'m VideoLlm, store: &'m ParamStore<T>) -> Result<Self> {
        let mut s = Self {
            model,
            store,
            state: SessionState::new(model.config.reasoner),
            window: VecDeque::new(),
            evictions: 0,
        };
        s.reset()?;
        Ok(s)
    }

    fn reset(&mut self) -> Result<()> {
        self.state = SessionState::new(self.model.config.reasoner);
        if let Some(bank) = self.model.adapters.prefix() {
            prefix_inject(&mut self.state, self.store, bank)?;
        }
        if let Some(p) = self.model.adapters.prompt() {
            let tokens = self.store.value(p.tokens);
            for i in 0..p.rank {
                step(&mut self.state, tokens.row(i), self.store, &self.model.reasoner, None)?;
            }
        }
        Ok(())
    }

    /// Translates one pooled unit, feeds it and returns its hidden state.
    pub fn push(&mut self, pooled: &[f32]) -> Result<Vec<T>> {
        let t = &self.model.translator;
        if pooled.len() != t.input_dim {
            return Err(shape_err("stream", format!("unit of width {}, translator {}", pooled.len(), t.input_dim)));
        }
        let x: Vec<T> = pooled.iter().map(|&v| T::from_f64(v as f64)).collect();
        let w = self.store.value(t.weight);
        let token = kernels::linear_rows(&x, 1, w.data(), w.rows(), w.cols(), Some(self.store.value(t.bias).data()));
        self.push_token(token)
    }

    /// Feeds an already translated token.
    pub fn push_token(&mut self, token: Vec<T>) -> Result<Vec<T>> {
        if self.state.position() >= self.model.config.reasoner.max_positions {
            self.window.pop_front();
            self.evictions += 1;
            self.reset()?;
            let lora = self.model.adapters.lora();
            for row in &self.window {
                step(&mut self.state, row, self.store, &self.model.reasoner, lora)?;
            }
        }
        let (h, _) = step(&mut self.state, &token, self.store, &self.model.reasoner, self.model.adapters.lora())?;
        self.window.push_back(token);
        Ok(h)
    }

    /// Units currently attended to.
    pub fn window_len(&self) -> usize {
        self.window.len()
    }

    pub fn evictions(&self) -> usize {
        self.evictions
    }

    pub fn state(&self) -> &SessionState<T> {
        &self.state
    }
}

#[cfg(test)]
mod tests;

//! Task heads on top of the reasoner's final hidden states.
//!
//! Every head is a composition of layer norms and single linear maps applied
//! to final reasoner outputs. The caption generator is the one exception: it
//! is a small language model of its own, conditioned on one hidden state.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand_chacha::ChaCha8Rng;

use crate::error::{shape_err, Error, Result};
use crate::ingest::EOT_ID;
use crate::metrics::Segment;
use crate::numerics::{r, Graph, ParamId, ParamStore, Real, Tensor, Var};
use crate::reasoner::{
    forward_graph, normal_tensor, step, AdapterView, Mode, ReasonerConfig, ReasonerWeights, SessionState, INIT_STD, LN_EPS,
};
use crate::translator::{Modality, TranslatedSequence};

/// Standard deviation of the memory separators' initial shifts, so that
/// proposals start distinct.
pub const SEPARATOR_SHIFT_STD: f64 = 0.5;

/// A `d × out` linear map with bias.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    pub fn register<T: Real>(store: &mut ParamStore<T>, name: &str, input: usize, output: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            weight: store.add(format!("{name}.weight"), normal_tensor(&[input, output], INIT_STD, rng), true),
            bias: store.add(format!("{name}.bias"), Tensor::zeros(&[output]), true),
        }
    }

    pub fn apply<T: Real>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let (w, b) = (g.param(self.weight), g.param(self.bias));
        g.linear(x, w, Some(b))
    }

    pub fn params(&self) -> [ParamId; 2] {
        [self.weight, self.bias]
    }
}

/// A layer norm with its own gain and shift.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Norm {
    pub gain: ParamId,
    pub shift: ParamId,
}

impl Norm {
    pub fn register<T: Real>(store: &mut ParamStore<T>, name: &str, d: usize, shift_std: f64, rng: &mut ChaCha8Rng) -> Self {
        let shift = if shift_std > 0.0 { normal_tensor(&[d], shift_std, rng) } else { Tensor::zeros(&[d]) };
        Self {
            gain: store.add(format!("{name}.gain"), Tensor::full(&[d], T::one()), true),
            shift: store.add(format!("{name}.shift"), shift, true),
        }
    }

    pub fn apply<T: Real>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let (a, b) = (g.param(self.gain), g.param(self.shift));
        g.layer_norm(x, a, b, r(LN_EPS))
    }

    pub fn params(&self) -> [ParamId; 2] {
        [self.gain, self.shift]
    }
}

/// Current-unit and next-unit classifiers reading the same hidden state.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OnlineHead {
    pub current: Linear,
    pub next: Linear,
    pub classes: usize,
}

impl OnlineHead {
    pub fn register<T: Real>(store: &mut ParamStore<T>, prefix: &str, d: usize, classes: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            current: Linear::register(store, &format!("{prefix}current"), d, classes, rng),
            next: Linear::register(store, &format!("{prefix}next"), d, classes, rng),
            classes,
        }
    }

    /// `(current, next)` logits, each `n × K`.
    pub fn logits<T: Real>(&self, g: &mut Graph<'_, T>, c: Var) -> Result<(Var, Var)> {
        Ok((self.current.apply(g, c)?, self.next.apply(g, c)?))
    }

    pub fn params(&self) -> Vec<ParamId> {
        [self.current.params(), self.next.params()].concat()
    }
}

/// Per-horizon layer-norm separators in front of one shared classifier.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FutureHead {
    pub separators: Vec<Norm>,
    pub classifier: Linear,
    pub classes: usize,
}

impl FutureHead {
    pub fn register<T: Real>(store: &mut ParamStore<T>, prefix: &str, d: usize, classes: usize, horizons: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        if horizons == 0 {
            return Err(crate::error::config_err("horizons", "must be ≥ 1"));
        }
        Ok(Self {
            separators: (0..horizons).map(|j| Norm::register(store, &format!("{prefix}separator{j}"), d, 0.0, rng)).collect(),
            classifier: Linear::register(store, &format!("{prefix}classifier"), d, classes, rng),
            classes,
        })
    }

    pub fn horizons(&self) -> usize {
        self.separators.len()
    }

    /// One `n × K` logit block per horizon; horizon `j` (from 0) scores unit
    /// `i + j + 1`.
    pub fn logits<T: Real>(&self, g: &mut Graph<'_, T>, c: Var) -> Result<Vec<Var>> {
        self.separators
            .iter()
            .map(|sep| {
                let a = sep.apply(g, c)?;
                self.classifier.apply(g, a)
            })
            .collect()
    }

    pub fn params(&self) -> Vec<ParamId> {
        self.separators.iter().flat_map(Norm::params).chain(self.classifier.params()).collect()
    }
}

/// Where the memory head reads its summary from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(rename_all = "snake_case"))]
pub enum SummarySource {
    /// The appended learnable query token.
    #[default]
    QueryToken,
    /// The last memory token itself.
    LastToken,
}

/// `N_m` separators, a `(K+1)`-way class map (index `K` is no-object) and a
/// two-output boundary map squashed to `(center, width) ∈ (0,1)²`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MemoryHead {
    pub separators: Vec<Norm>,
    pub class: Linear,
    pub boundary: Linear,
    pub classes: usize,
}

/// Proposal logits and squashed boundaries.
#[derive(Debug, Clone, Copy)]
pub struct ProposalVars {
    /// `N_m × (K+1)`.
    pub class_logits: Var,
    /// `N_m × 2`, columns center and width.
    pub boundaries: Var,
}

impl MemoryHead {
    pub fn register<T: Real>(store: &mut ParamStore<T>, prefix: &str, d: usize, classes: usize, proposals: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        if proposals == 0 {
            return Err(crate::error::config_err("proposals", "must be ≥ 1"));
        }
        Ok(Self {
            separators: (0..proposals)
                .map(|j| Norm::register(store, &format!("{prefix}separator{j}"), d, SEPARATOR_SHIFT_STD, rng))
                .collect(),
            class: Linear::register(store, &format!("{prefix}class"), d, classes + 1, rng),
            boundary: Linear::register(store, &format!("{prefix}boundary"), d, 2, rng),
            classes,
        })
    }

    pub fn proposals(&self) -> usize {
        self.separators.len()
    }

    /// Proposals from one `1 × d` summary row.
    pub fn predict<T: Real>(&self, g: &mut Graph<'_, T>, summary: Var) -> Result<ProposalVars> {
        if g.value(summary).rows() != 1 {
            return Err(shape_err("memory head", format!("summary {:?}", g.value(summary).shape())));
        }
        let rows = self.separators.iter().map(|s| s.apply(g, summary)).collect::<Result<Vec<_>>>()?;
        let m = g.concat_rows(&rows)?;
        let class_logits = self.class.apply(g, m)?;
        let b = self.boundary.apply(g, m)?;
        let boundaries = g.sigmoid(b);
        Ok(ProposalVars { class_logits, boundaries })
    }

    pub fn params(&self) -> Vec<ParamId> {
        self.separators
            .iter()
            .flat_map(Norm::params)
            .chain(self.class.params())
            .chain(self.boundary.params())
            .collect()
    }
}

/// `[c − w/2, c + w/2] · span`, clipped to `[0, span]`.
pub fn decode_interval(center: f64, width: f64, span: f64) -> (f64, f64) {
    let lo = ((center - width / 2.0) * span).clamp(0.0, span);
    let hi = ((center + width / 2.0) * span).clamp(0.0, span);
    (lo, hi)
}

/// Scored segments from proposal outputs: each proposal names its most likely
/// real class, scored by that class's probability.
pub fn decode_proposals<T: Real>(class_logits: &Tensor<T>, boundaries: &Tensor<T>, span: f64) -> Vec<Segment> {
    let k = class_logits.cols() - 1;
    (0..class_logits.rows())
        .map(|j| {
            let p = crate::numerics::softmax(class_logits.row(j));
            let (class, prob) = argmax(&p[..k]);
            let (start, end) = decode_interval(boundaries.at(j, 0).as_f64(), boundaries.at(j, 1).as_f64(), span);
            Segment {
                start,
                end,
                category: class,
                score: prob.as_f64(),
            }
        })
        .collect()
}

/// Index and value of the largest entry; ties go to the lowest index.
pub fn argmax<T: Real>(xs: &[T]) -> (usize, T) {
    let mut best = (0, xs[0]);
    for (i, &x) in xs.iter().enumerate().skip(1) {
        if x > best.1 {
            best = (i, x);
        }
    }
    best
}

/// Indices of the `k` largest entries, best first; ties go to the lower index.
pub fn top_k<T: Real>(xs: &[T], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[b].partial_cmp(&xs[a]).unwrap_or(core::cmp::Ordering::Equal).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

/// Per-token class logits, plus per-memory-position saliency read from the
/// summary state that follows the text condition.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DenseHead {
    pub class: Linear,
    /// `d × S` map from the summary state to one saliency logit per memory
    /// position.
    pub saliency: Linear,
    pub classes: usize,
}

impl DenseHead {
    pub fn register<T: Real>(store: &mut ParamStore<T>, prefix: &str, d: usize, classes: usize, max_tokens: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            class: Linear::register(store, &format!("{prefix}class"), d, classes, rng),
            saliency: Linear::register(store, &format!("{prefix}saliency"), d, max_tokens, rng),
            classes,
        }
    }

    pub fn class_logits<T: Real>(&self, g: &mut Graph<'_, T>, c: Var) -> Result<Var> {
        self.class.apply(g, c)
    }

    /// `1 × n` saliency logits for the first `n` memory positions.
    pub fn saliency_logits<T: Real>(&self, g: &mut Graph<'_, T>, summary: Var, n: usize) -> Result<Var> {
        let all = self.saliency.apply(g, summary)?;
        let width = g.value(all).cols();
        if n > width {
            return Err(Error::Capacity { needed: n, capacity: width });
        }
        if n == width {
            return Ok(all);
        }
        // A 1 × width row is the same buffer as a width × 1 column.
        let col = g.reshape(all, width, 1)?;
        let head = g.rows(col, 0, n)?;
        g.reshape(head, 1, n)
    }

    pub fn params(&self) -> Vec<ParamId> {
        [self.class.params(), self.saliency.params()].concat()
    }
}

/// Appends text rows after the visual memory.
pub fn condition_on_text<T: Real>(memory: &TranslatedSequence<T>, text: &Tensor<T>, max_positions: usize) -> Result<TranslatedSequence<T>> {
    let needed = memory.len() + text.rows();
    if needed > max_positions {
        return Err(Error::Capacity {
            needed,
            capacity: max_positions,
        });
    }
    let mut out = memory.clone();
    out.push_rows(text, Modality::Text)?;
    Ok(out)
}

/// A small causal language model with tied input/output embeddings, fed one
/// conditioning state before its first word.
#[derive(Debug, Clone, PartialEq)]
pub struct CaptionGenerator {
    pub weights: ReasonerWeights,
    pub embeddings: ParamId,
    pub vocab_size: usize,
    pub max_len: usize,
}

impl CaptionGenerator {
    pub fn register<T: Real>(
        store: &mut ParamStore<T>,
        prefix: &str,
        hidden: usize,
        heads: usize,
        vocab_size: usize,
        max_len: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        if max_len == 0 {
            return Err(crate::error::config_err("caption max_len", "must be ≥ 1"));
        }
        let config = ReasonerConfig {
            mode: Mode::Causal,
            ..ReasonerConfig::gpt2_like(2, heads, hidden, max_len + 1)
        };
        let weights = ReasonerWeights::register(store, &format!("{prefix}lm."), config, rng)?;
        let embeddings = store.add(format!("{prefix}embeddings"), normal_tensor(&[vocab_size, hidden], INIT_STD, rng), true);
        Ok(Self {
            weights,
            embeddings,
            vocab_size,
            max_len,
        })
    }

    /// Teacher-forced logits: row `t` predicts `target[t]` from the
    /// conditioning row and `target[..t]`.
    pub fn logits<T: Real>(&self, g: &mut Graph<'_, T>, cond: Var, target: &[usize]) -> Result<Var> {
        if target.is_empty() || target.len() > self.max_len {
            return Err(shape_err("caption", format!("target of {} tokens, max {}", target.len(), self.max_len)));
        }
        let table = g.param(self.embeddings);
        let mut parts = vec![cond];
        if target.len() > 1 {
            parts.push(g.gather_rows(table, &target[..target.len() - 1])?);
        }
        let x = g.concat_rows(&parts)?;
        let h = forward_graph(g, &self.weights, AdapterView::default(), x)?;
        g.matmul_t(h, table)
    }

    /// Greedy decoding, ties to the lowest id; stops after emitting
    /// end-of-text or `max_len` tokens.
    pub fn generate<T: Real>(&self, store: &ParamStore<T>, cond: &[T], max_len: usize) -> Result<Vec<usize>> {
        if max_len == 0 {
            return Err(Error::Argument("caption max_len must be ≥ 1".into()));
        }
        let max_len = max_len.min(self.max_len);
        let table = store.value(self.embeddings);
        let mut state = SessionState::new(self.weights.config);
        let (mut h, _) = step(&mut state, cond, store, &self.weights, None)?;
        let mut out = Vec::new();
        loop {
            let logits: Vec<T> = (0..self.vocab_size).map(|v| crate::numerics::kernels::dot(&h, table.row(v))).collect();
            let (id, _) = argmax(&logits);
            out.push(id);
            if id == EOT_ID || out.len() == max_len {
                return Ok(out);
            }
            h = step(&mut state, table.row(id), store, &self.weights, None)?.0;
        }
    }

    pub fn params(&self) -> Vec<ParamId> {
        self.weights.param_ids().filter(|&id| id != self.weights.query_token).chain([self.embeddings]).collect()
    }
}

//! Token-at-a-time causal inference from cached keys and values.
//!
//! Every row computation goes through the same kernels as the taped pass, so
//! a streamed hidden state is bit-identical to the matching row of
//! [`forward_full`](super::forward_full).

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::{Mode, ReasonerConfig, ReasonerWeights, LN_EPS};
use crate::adapters::LoraFactors;
use crate::error::{shape_err, Error, Result};
use crate::numerics::kernels::{attend_row, gelu, layer_norm_row, linear_rows, matmul_nt_acc, PrefixRows};
use crate::numerics::{r, ParamId, ParamStore, Real};

#[derive(Debug, Clone, PartialEq)]
struct LayerCache<T> {
    keys: Vec<T>,
    values: Vec<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct PrefixCache<T> {
    pub(crate) keys: Vec<T>,
    pub(crate) values: Vec<T>,
    pub(crate) count: usize,
    pub(crate) logit_bias: T,
}

/// Per-layer key/value caches of one causal stream.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionState<T> {
    config: ReasonerConfig,
    caches: Vec<LayerCache<T>>,
    prefix: Vec<PrefixCache<T>>,
    position: usize,
}

/// Work done by one [`step`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct StepStats {
    /// Multiply-adds in attention scores and value mixing, summed over layers.
    pub attention_macs: u64,
}

impl<T: Real> SessionState<T> {
    pub fn new(config: ReasonerConfig) -> Self {
        Self {
            caches: vec![
                LayerCache {
                    keys: Vec::new(),
                    values: Vec::new()
                };
                config.layers
            ],
            prefix: Vec::new(),
            position: 0,
            config,
        }
    }

    /// Index the next token will occupy.
    pub fn position(&self) -> usize {
        self.position
    }

    pub fn config(&self) -> &ReasonerConfig {
        &self.config
    }

    /// Cached key rows in `layer`, prefix rows included.
    pub fn cache_len(&self, layer: usize) -> usize {
        self.caches[layer].keys.len() / self.config.hidden + self.prefix.get(layer).map_or(0, |p| p.count)
    }

    pub fn prefix_len(&self) -> usize {
        self.prefix.first().map_or(0, |p| p.count)
    }

    /// Forgets all tokens, keeping any installed prefix.
    pub fn clear(&mut self) {
        for c in &mut self.caches {
            c.keys.clear();
            c.values.clear();
        }
        self.position = 0;
    }

    pub(crate) fn install_prefix(&mut self, prefix: Vec<PrefixCache<T>>) -> Result<()> {
        if self.position > 0 || !self.prefix.is_empty() {
            return Err(Error::Contract("prefix injection requires an empty session".into()));
        }
        if prefix.len() != self.config.layers {
            return Err(shape_err("prefix_inject", format!("{} layers for {}", prefix.len(), self.config.layers)));
        }
        self.prefix = prefix;
        Ok(())
    }
}

fn project_row<T: Real>(store: &ParamStore<T>, h: &[T], w: ParamId, b: ParamId, low_rank: Option<(ParamId, ParamId, f64)>) -> Vec<T> {
    let wv = store.value(w);
    let (p, q) = (wv.rows(), wv.cols());
    let mut y = linear_rows(h, 1, wv.data(), p, q, Some(store.value(b).data()));
    if let Some((a, up, s)) = low_rank {
        let (av, uv) = (store.value(a), store.value(up));
        let mut t = vec![T::zero(); av.rows()];
        matmul_nt_acc(h, 1, p, av.data(), av.rows(), &mut t);
        let mut delta = vec![T::zero(); uv.rows()];
        matmul_nt_acc(&t, 1, av.rows(), uv.data(), uv.rows(), &mut delta);
        let s = r::<T>(s);
        for (o, dv) in y.iter_mut().zip(delta) {
            *o += dv * s;
        }
    }
    y
}

fn norm_row<T: Real>(store: &ParamStore<T>, x: &[T], gain: ParamId, shift: ParamId) -> Vec<T> {
    let mut out = vec![T::zero(); x.len()];
    layer_norm_row(x, store.value(gain).data(), store.value(shift).data(), r(LN_EPS), &mut out);
    out
}

/// Feeds one token through the causal reasoner and returns its final hidden
/// state.
pub fn step<T: Real>(
    state: &mut SessionState<T>,
    token: &[T],
    store: &ParamStore<T>,
    weights: &ReasonerWeights,
    lora: Option<&LoraFactors>,
) -> Result<(Vec<T>, StepStats)> {
    let cfg = &weights.config;
    if state.config.mode != Mode::Causal || cfg.mode != Mode::Causal {
        return Err(Error::Contract("incremental step requires causal mode".into()));
    }
    if state.config.layers != cfg.layers || state.config.hidden != cfg.hidden {
        return Err(shape_err("step", "session built for a different reasoner shape".into()));
    }
    let d = cfg.hidden;
    if token.len() != d {
        return Err(shape_err("step", format!("token of width {}, hidden {d}", token.len())));
    }
    let t = state.position;
    if t >= cfg.max_positions {
        return Err(Error::Capacity {
            needed: t + 1,
            capacity: cfg.max_positions,
        });
    }
    let pos = store.value(weights.positions).row(t);
    let mut x: Vec<T> = token.iter().zip(pos).map(|(&a, &b)| a + b).collect();
    let mut stats = StepStats::default();
    let mut attn = vec![T::zero(); d];
    for (l, ids) in weights.blocks.iter().enumerate() {
        let h = norm_row(store, &x, ids.ln1_gain, ids.ln1_shift);
        let lr = lora.map(|f| (&f.layers[l], f.scale));
        let q = project_row(store, &h, ids.wq, ids.bq, lr.map(|(a, s)| (a.aq, a.bq, s)));
        // Without a prefix the key bias shifts every logit of a row equally
        // and cancels in the softmax, so it is left out.
        let k = if state.prefix.is_empty() {
            let wk = store.value(ids.wk);
            linear_rows(&h, 1, wk.data(), wk.rows(), wk.cols(), None)
        } else {
            project_row(store, &h, ids.wk, ids.bk, None)
        };
        let v = project_row(store, &h, ids.wv, ids.bv, lr.map(|(a, s)| (a.av, a.bv, s)));
        let cache = &mut state.caches[l];
        cache.keys.extend_from_slice(&k);
        cache.values.extend_from_slice(&v);
        let pre = state.prefix.get(l).map(|p| PrefixRows {
            keys: &p.keys,
            values: &p.values,
            count: p.count,
            logit_bias: p.logit_bias,
        });
        let width = pre.map_or(0, |p| p.count) + t + 1;
        let mut probs = vec![T::zero(); cfg.heads * width];
        stats.attention_macs += attend_row(&q, pre, &cache.keys, &cache.values, t + 1, cfg.heads, &mut attn, &mut probs);
        let o = project_row(store, &attn, ids.wo, ids.bo, None);
        x.iter_mut().zip(&o).for_each(|(a, &b)| *a += b);
        let h = norm_row(store, &x, ids.ln2_gain, ids.ln2_shift);
        let mut f = project_row(store, &h, ids.w1, ids.b1, None);
        f.iter_mut().for_each(|v| *v = gelu(*v));
        let f = project_row(store, &f, ids.w2, ids.b2, None);
        x.iter_mut().zip(&f).for_each(|(a, &b)| *a += b);
    }
    state.position += 1;
    Ok((norm_row(store, &x, weights.final_gain, weights.final_shift), stats))
}

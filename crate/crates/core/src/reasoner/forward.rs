//! Whole-sequence reasoner pass on the tape.

use alloc::vec::Vec;

use super::{BlockIds, Mode, ReasonerWeights, LN_EPS};
use crate::adapters::{LoraFactors, PrefixBank, GATE_SCALE};
use crate::error::{shape_err, Error, Result};
use crate::numerics::{r, AttentionSpec, Graph, ParamId, ParamStore, PrefixInput, Real, Tensor, Var};
use crate::translator::TranslatedSequence;

/// Final hidden states, one row per input token.
#[derive(Debug, Clone, PartialEq)]
pub struct HiddenSequence<T> {
    pub states: Tensor<T>,
}

impl<T: Real> HiddenSequence<T> {
    pub fn len(&self) -> usize {
        self.states.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.states.rows() == 0
    }

    pub fn row(&self, i: usize) -> &[T] {
        self.states.row(i)
    }
}

/// Adapters that change the reasoner's computation.
#[derive(Debug, Clone, Copy, Default)]
pub struct AdapterView<'a> {
    pub lora: Option<&'a LoraFactors>,
    pub prefix: Option<&'a PrefixBank>,
}

/// `h · W + b`, plus `s · (h · Aᵀ) · Bᵀ` when a low-rank pair is given.
pub(crate) fn project<T: Real>(
    g: &mut Graph<'_, T>,
    h: Var,
    w: ParamId,
    b: ParamId,
    low_rank: Option<(ParamId, ParamId, f64)>,
) -> Result<Var> {
    let (wv, bv) = (g.param(w), g.param(b));
    let y = g.linear(h, wv, Some(bv))?;
    let Some((a, up, s)) = low_rank else {
        return Ok(y);
    };
    let (av, uv) = (g.param(a), g.param(up));
    let t = g.matmul_t(h, av)?;
    let delta = g.matmul_t(t, uv)?;
    let delta = g.scale(delta, r(s));
    g.add(y, delta)
}

fn block<T: Real>(
    g: &mut Graph<'_, T>,
    x: Var,
    ids: &BlockIds,
    layer: usize,
    weights: &ReasonerWeights,
    adapters: AdapterView<'_>,
) -> Result<Var> {
    let cfg = &weights.config;
    let eps = r::<T>(LN_EPS);
    let (g1, s1) = (g.param(ids.ln1_gain), g.param(ids.ln1_shift));
    let h = g.layer_norm(x, g1, s1, eps)?;
    let lora = adapters.lora.map(|f| (&f.layers[layer], f.scale));
    let q = project(g, h, ids.wq, ids.bq, lora.map(|(l, s)| (l.aq, l.bq, s)))?;
    // Without a prefix the key bias shifts every logit of a row equally and
    // cancels in the softmax, so it is left out.
    let k = if adapters.prefix.is_some() {
        project(g, h, ids.wk, ids.bk, None)?
    } else {
        let wk = g.param(ids.wk);
        g.linear(h, wk, None)?
    };
    let v = project(g, h, ids.wv, ids.bv, lora.map(|(l, s)| (l.av, l.bv, s)))?;
    let prefix = match adapters.prefix {
        Some(bank) => {
            let p = &bank.layers[layer];
            Some(PrefixInput {
                keys: g.param(p.keys),
                values: g.param(p.values),
                gate: g.param(p.gate),
                gate_scale: r(GATE_SCALE),
            })
        }
        None => None,
    };
    let spec = AttentionSpec {
        heads: cfg.heads,
        causal: cfg.mode == Mode::Causal,
    };
    let a = g.attention(q, k, v, prefix, spec)?;
    let o = project(g, a, ids.wo, ids.bo, None)?;
    let o = g.dropout(o, cfg.dropout);
    let x = g.add(x, o)?;
    let (g2, s2) = (g.param(ids.ln2_gain), g.param(ids.ln2_shift));
    let h = g.layer_norm(x, g2, s2, eps)?;
    let f = project(g, h, ids.w1, ids.b1, None)?;
    let f = g.gelu(f);
    let f = project(g, f, ids.w2, ids.b2, None)?;
    let f = g.dropout(f, cfg.dropout);
    g.add(x, f)
}

/// Records the reasoner over an `N × d` input node and returns the final
/// hidden states. Position `i` of the input receives position embedding `i`.
pub fn forward_graph<T: Real>(g: &mut Graph<'_, T>, weights: &ReasonerWeights, adapters: AdapterView<'_>, x: Var) -> Result<Var> {
    let cfg = &weights.config;
    let (n, d) = (g.value(x).rows(), g.value(x).cols());
    if n > cfg.max_positions {
        return Err(Error::Capacity {
            needed: n,
            capacity: cfg.max_positions,
        });
    }
    if d != cfg.hidden {
        return Err(shape_err("reasoner", alloc::format!("tokens of width {d}, hidden {}", cfg.hidden)));
    }
    if let Some(l) = adapters.lora {
        if l.layers.len() != cfg.layers {
            return Err(shape_err("reasoner", alloc::format!("{} lora layers for {}", l.layers.len(), cfg.layers)));
        }
    }
    if let Some(p) = adapters.prefix {
        if p.layers.len() != cfg.layers {
            return Err(shape_err("reasoner", alloc::format!("{} prefix layers for {}", p.layers.len(), cfg.layers)));
        }
    }
    let table = g.param(weights.positions);
    let idx: Vec<usize> = (0..n).collect();
    let pos = g.gather_rows(table, &idx)?;
    let mut h = g.add(x, pos)?;
    h = g.dropout(h, cfg.dropout);
    for (l, ids) in weights.blocks.iter().enumerate() {
        h = block(g, h, ids, l, weights, adapters)?;
    }
    let (fg, fs) = (g.param(weights.final_gain), g.param(weights.final_shift));
    g.layer_norm(h, fg, fs, r(LN_EPS))
}

/// Evaluation-mode pass over a translated sequence.
pub fn forward_full<T: Real>(
    tokens: &TranslatedSequence<T>,
    store: &ParamStore<T>,
    weights: &ReasonerWeights,
    adapters: AdapterView<'_>,
) -> Result<HiddenSequence<T>> {
    let mut g = Graph::new(store);
    let x = g.input(tokens.tokens.clone());
    let out = forward_graph(&mut g, weights, adapters, x)?;
    Ok(HiddenSequence {
        states: g.value(out).clone(),
    })
}

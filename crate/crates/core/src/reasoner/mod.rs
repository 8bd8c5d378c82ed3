//! The decoder-only sequence reasoner.
//!
//! A pre-norm GPT-2 style stack: learned absolute positions, multi-head
//! attention with an optional causal mask, GELU feed-forward, and a final
//! layer norm. [`forward_full`] runs a whole sequence on the tape;
//! [`SessionState`] and [`step`] run the causal mode one token at a time from
//! cached keys and values.

mod forward;
mod session;

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{config_err, Result};
use crate::numerics::{ParamId, ParamStore, Real, Tensor};
use crate::translator::{Modality, TranslatedSequence};

pub use forward::{forward_full, forward_graph, AdapterView, HiddenSequence};
pub(crate) use session::PrefixCache;
pub use session::{step, SessionState, StepStats};

/// Standard deviation of the normal initializer for matrices and tables.
pub const INIT_STD: f64 = 0.02;
/// Layer-norm epsilon.
pub const LN_EPS: f64 = 1e-5;

/// Attention masking.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(rename_all = "snake_case"))]
pub enum Mode {
    #[default]
    Causal,
    Bidirectional,
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(deny_unknown_fields))]
pub struct ReasonerConfig {
    pub layers: usize,
    pub heads: usize,
    pub hidden: usize,
    pub ff: usize,
    pub max_positions: usize,
    #[cfg_attr(feature = "serde", serde(default))]
    pub mode: Mode,
    /// Training-only dropout rate.
    #[cfg_attr(feature = "serde", serde(default))]
    pub dropout: f64,
}

impl ReasonerConfig {
    /// A GPT-2 style shape with `ff = 4·hidden`.
    pub fn gpt2_like(layers: usize, heads: usize, hidden: usize, max_positions: usize) -> Self {
        Self {
            layers,
            heads,
            hidden,
            ff: 4 * hidden,
            max_positions,
            mode: Mode::Causal,
            dropout: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 {
            return Err(config_err("layers", "must be ≥ 1"));
        }
        if self.hidden == 0 || self.heads == 0 || self.hidden % self.heads != 0 {
            return Err(config_err("heads", format!("hidden {} must be divisible by heads {}", self.hidden, self.heads)));
        }
        if self.ff == 0 {
            return Err(config_err("ff", "must be ≥ 1"));
        }
        if self.max_positions == 0 {
            return Err(config_err("max_positions", "must be ≥ 1"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(config_err("dropout", "must be in [0, 1)"));
        }
        Ok(())
    }
}

/// What a reasoner parameter is, for initialization and tuning partitions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    Matrix,
    Bias,
    NormGain,
    NormShift,
    Positions,
    QueryToken,
}

/// Name, shape and role of one reasoner parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub kind: ParamKind,
    /// Transformer block the parameter belongs to, if any.
    pub block: Option<usize>,
}

impl ParamSpec {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

/// Parameter ids of one transformer block.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockIds {
    pub ln1_gain: ParamId,
    pub ln1_shift: ParamId,
    pub wq: ParamId,
    pub bq: ParamId,
    pub wk: ParamId,
    pub bk: ParamId,
    pub wv: ParamId,
    pub bv: ParamId,
    pub wo: ParamId,
    pub bo: ParamId,
    pub ln2_gain: ParamId,
    pub ln2_shift: ParamId,
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
}

impl BlockIds {
    pub fn all(&self) -> [ParamId; 16] {
        [
            self.ln1_gain, self.ln1_shift, self.wq, self.bq, self.wk, self.bk, self.wv, self.bv, self.wo, self.bo,
            self.ln2_gain, self.ln2_shift, self.w1, self.b1, self.w2, self.b2,
        ]
    }
}

/// Parameter ids of a reasoner registered in a [`ParamStore`].
#[derive(Debug, Clone, PartialEq)]
pub struct ReasonerWeights {
    pub config: ReasonerConfig,
    pub positions: ParamId,
    pub blocks: Vec<BlockIds>,
    pub final_gain: ParamId,
    pub final_shift: ParamId,
    /// The learnable summary/query token.
    pub query_token: ParamId,
    /// Every id above with its spec, in registration order.
    pub specs: Vec<(ParamId, ParamSpec)>,
}

/// Every reasoner parameter in canonical order.
pub fn param_specs(config: &ReasonerConfig) -> Vec<ParamSpec> {
    let d = config.hidden;
    let spec = |name: String, shape: Vec<usize>, kind, block| ParamSpec { name, shape, kind, block };
    let mut out = vec![spec("positions".into(), vec![config.max_positions, d], ParamKind::Positions, None)];
    for l in 0..config.layers {
        let b = Some(l);
        let n = |s: &str| format!("block{l}.{s}");
        out.push(spec(n("ln1.gain"), vec![d], ParamKind::NormGain, b));
        out.push(spec(n("ln1.shift"), vec![d], ParamKind::NormShift, b));
        for m in ["q", "k", "v", "o"] {
            out.push(spec(n(&format!("attn.w{m}")), vec![d, d], ParamKind::Matrix, b));
            out.push(spec(n(&format!("attn.b{m}")), vec![d], ParamKind::Bias, b));
        }
        out.push(spec(n("ln2.gain"), vec![d], ParamKind::NormGain, b));
        out.push(spec(n("ln2.shift"), vec![d], ParamKind::NormShift, b));
        out.push(spec(n("ff.w1"), vec![d, config.ff], ParamKind::Matrix, b));
        out.push(spec(n("ff.b1"), vec![config.ff], ParamKind::Bias, b));
        out.push(spec(n("ff.w2"), vec![config.ff, d], ParamKind::Matrix, b));
        out.push(spec(n("ff.b2"), vec![d], ParamKind::Bias, b));
    }
    out.push(spec("final.gain".into(), vec![d], ParamKind::NormGain, None));
    out.push(spec("final.shift".into(), vec![d], ParamKind::NormShift, None));
    out.push(spec("query_token".into(), vec![d], ParamKind::QueryToken, None));
    out
}

pub(crate) fn init_value<T: Real>(kind: ParamKind, shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<T> {
    match kind {
        ParamKind::Matrix | ParamKind::Positions | ParamKind::QueryToken => normal_tensor(shape, INIT_STD, rng),
        ParamKind::Bias | ParamKind::NormShift => Tensor::zeros(shape),
        ParamKind::NormGain => Tensor::full(shape, T::one()),
    }
}

pub(crate) fn normal_tensor<T: Real>(shape: &[usize], std: f64, rng: &mut ChaCha8Rng) -> Tensor<T> {
    let normal = Normal::new(0.0, std).expect("finite std");
    let n = shape.iter().product();
    let data = (0..n).map(|_| T::from_f64(normal.sample(rng))).collect();
    Tensor::from_vec(shape, data).expect("shape product")
}

impl ReasonerWeights {
    /// Registers a freshly initialized reasoner under `prefix`.
    pub fn register<T: Real>(store: &mut ParamStore<T>, prefix: &str, config: ReasonerConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        config.validate()?;
        let specs: Vec<(ParamId, ParamSpec)> = param_specs(&config)
            .into_iter()
            .map(|s| {
                let value = init_value::<T>(s.kind, &s.shape, rng);
                (store.add(format!("{prefix}{}", s.name), value, true), s)
            })
            .collect();
        let id = |name: &str| specs.iter().find(|(_, s)| s.name == name).map(|(i, _)| *i).expect("spec exists");
        let blocks = (0..config.layers)
            .map(|l| {
                let b = |s: &str| id(&format!("block{l}.{s}"));
                BlockIds {
                    ln1_gain: b("ln1.gain"),
                    ln1_shift: b("ln1.shift"),
                    wq: b("attn.wq"),
                    bq: b("attn.bq"),
                    wk: b("attn.wk"),
                    bk: b("attn.bk"),
                    wv: b("attn.wv"),
                    bv: b("attn.bv"),
                    wo: b("attn.wo"),
                    bo: b("attn.bo"),
                    ln2_gain: b("ln2.gain"),
                    ln2_shift: b("ln2.shift"),
                    w1: b("ff.w1"),
                    b1: b("ff.b1"),
                    w2: b("ff.w2"),
                    b2: b("ff.b2"),
                }
            })
            .collect();
        Ok(Self {
            config,
            positions: id("positions"),
            blocks,
            final_gain: id("final.gain"),
            final_shift: id("final.shift"),
            query_token: id("query_token"),
            specs,
        })
    }

    pub fn param_ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.specs.iter().map(|(id, _)| *id)
    }
}

/// A standalone reasoner in its own store, deterministic in `seed`.
pub fn init<T: Real>(config: ReasonerConfig, seed: u64) -> Result<(ParamStore<T>, ReasonerWeights)> {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = ReasonerWeights::register(&mut store, "", config, &mut rng)?;
    Ok((store, w))
}

/// Appends the learnable query token, tagged as a query.
pub fn append_summary<T: Real>(
    tokens: &TranslatedSequence<T>,
    store: &ParamStore<T>,
    weights: &ReasonerWeights,
) -> Result<TranslatedSequence<T>> {
    let n = tokens.len();
    if n + 1 > weights.config.max_positions {
        return Err(crate::Error::Capacity {
            needed: n + 1,
            capacity: weights.config.max_positions,
        });
    }
    let q = store.value(weights.query_token);
    let mut out = tokens.clone();
    out.push_rows(&Tensor::matrix(1, q.len(), q.data().to_vec()), Modality::Query)?;
    Ok(out)
}

//! Tuning methods: which reasoner parameters train, and the extra
//! low-rank factors, prefix rows or prompt tokens some methods add.

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{config_err, shape_err, Error, Result};
use crate::numerics::{kernels, ParamId, ParamStore, Real, Tensor};
use crate::reasoner::{normal_tensor, AdapterView, ParamKind, ReasonerConfig, ReasonerWeights, SessionState, INIT_STD};
use crate::translator::{Modality, TranslatedSequence};

/// Multiplier from a prefix gate value to its attention logit bias.
pub const GATE_SCALE: f64 = 16.0;
/// Initial prefix gate value; the prefix logit bias starts at `-GATE_SCALE`.
pub const GATE_INIT: f64 = -1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(rename_all = "snake_case"))]
pub enum Method {
    /// Frozen reasoner.
    #[default]
    Basic,
    Partial,
    Lora,
    Prompt,
    Prefix,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(rename_all = "snake_case"))]
pub enum PartialTarget {
    /// Every bias and layer-norm shift.
    Bias,
    First,
    Last,
    FirstLast,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(deny_unknown_fields))]
pub struct TuningConfig {
    pub method: Method,
    #[cfg_attr(feature = "serde", serde(default))]
    pub partial_target: Option<PartialTarget>,
    #[cfg_attr(feature = "serde", serde(default))]
    pub r: usize,
}

impl TuningConfig {
    pub fn basic() -> Self {
        Self::default()
    }

    pub fn partial(target: PartialTarget) -> Self {
        Self {
            method: Method::Partial,
            partial_target: Some(target),
            r: 0,
        }
    }

    pub fn lora(r: usize) -> Self {
        Self { method: Method::Lora, partial_target: None, r }
    }

    pub fn prompt(r: usize) -> Self {
        Self { method: Method::Prompt, partial_target: None, r }
    }

    pub fn prefix(r: usize) -> Self {
        Self { method: Method::Prefix, partial_target: None, r }
    }

    pub fn validate(&self) -> Result<()> {
        match self.method {
            Method::Partial if self.partial_target.is_none() => Err(config_err("partial_target", "required for partial tuning")),
            Method::Lora | Method::Prefix if self.r == 0 => Err(config_err("r", "must be ≥ 1")),
            _ => Ok(()),
        }
    }

    /// Whether any reasoner block or adapter parameter receives gradients.
    pub fn touches_reasoner(&self) -> bool {
        self.method != Method::Basic
    }
}

/// Low-rank pairs on the query and value projections of one layer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LoraLayer {
    pub aq: ParamId,
    pub bq: ParamId,
    pub av: ParamId,
    pub bv: ParamId,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoraFactors {
    pub rank: usize,
    /// `α / r` with `α = r`.
    pub scale: f64,
    pub layers: Vec<LoraLayer>,
}

/// Learned key/value rows and a gate for one layer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PrefixLayer {
    pub keys: ParamId,
    pub values: ParamId,
    pub gate: ParamId,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrefixBank {
    pub rank: usize,
    pub layers: Vec<PrefixLayer>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptBank {
    pub rank: usize,
    /// `r × d` virtual tokens.
    pub tokens: ParamId,
}

/// The extra parameters of the active tuning method.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum Adapters {
    #[default]
    None,
    Lora(LoraFactors),
    Prompt(PromptBank),
    Prefix(PrefixBank),
}

fn uniform<T: Real>(shape: &[usize], bound: f64, rng: &mut ChaCha8Rng) -> Tensor<T> {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| T::from_f64(rng.random_range(-bound..=bound))).collect()).expect("shape product")
}

impl Adapters {
    /// Registers the parameters `tuning` needs. Prompt tokens start as copies
    /// of `prompt_init` (the translator bias).
    pub fn register<T: Real>(
        store: &mut ParamStore<T>,
        prefix: &str,
        config: &ReasonerConfig,
        tuning: &TuningConfig,
        prompt_init: ParamId,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        tuning.validate()?;
        let (d, rank) = (config.hidden, tuning.r);
        Ok(match tuning.method {
            Method::Basic | Method::Partial => Adapters::None,
            Method::Lora => {
                let bound = 1.0 / num_traits::Float::sqrt(d as f64);
                let layers = (0..config.layers)
                    .map(|l| {
                        let mut pair = |m: &str| {
                            let a = store.add(format!("{prefix}lora{l}.a{m}"), uniform::<T>(&[rank, d], bound, rng), true);
                            let b = store.add(format!("{prefix}lora{l}.b{m}"), Tensor::zeros(&[d, rank]), true);
                            (a, b)
                        };
                        let (aq, bq) = pair("q");
                        let (av, bv) = pair("v");
                        LoraLayer { aq, bq, av, bv }
                    })
                    .collect();
                Adapters::Lora(LoraFactors { rank, scale: 1.0, layers })
            }
            Method::Prefix => {
                let layers = (0..config.layers)
                    .map(|l| PrefixLayer {
                        keys: store.add(format!("{prefix}prefix{l}.keys"), normal_tensor::<T>(&[rank, d], INIT_STD, rng), true),
                        values: store.add(format!("{prefix}prefix{l}.values"), Tensor::zeros(&[rank, d]), true),
                        gate: store.add(format!("{prefix}prefix{l}.gate"), Tensor::full(&[1], T::from_f64(GATE_INIT)), true),
                    })
                    .collect();
                Adapters::Prefix(PrefixBank { rank, layers })
            }
            Method::Prompt => {
                let b = store.value(prompt_init).clone();
                if b.len() != d {
                    return Err(shape_err("prompt bank", format!("init of {} for hidden {d}", b.len())));
                }
                let data = b.data().iter().copied().cycle().take(rank * d).collect();
                let tokens = store.add(format!("{prefix}prompt.tokens"), Tensor::matrix(rank, d, data), true);
                Adapters::Prompt(PromptBank { rank, tokens })
            }
        })
    }

    pub fn view(&self) -> AdapterView<'_> {
        match self {
            Adapters::Lora(f) => AdapterView { lora: Some(f), prefix: None },
            Adapters::Prefix(p) => AdapterView { lora: None, prefix: Some(p) },
            _ => AdapterView::default(),
        }
    }

    pub fn prompt(&self) -> Option<&PromptBank> {
        match self {
            Adapters::Prompt(p) => Some(p),
            _ => None,
        }
    }

    pub fn lora(&self) -> Option<&LoraFactors> {
        match self {
            Adapters::Lora(f) => Some(f),
            _ => None,
        }
    }

    pub fn prefix(&self) -> Option<&PrefixBank> {
        match self {
            Adapters::Prefix(p) => Some(p),
            _ => None,
        }
    }

    /// Number of virtual tokens prepended to every sequence.
    pub fn prompt_len(&self) -> usize {
        self.prompt().map_or(0, |p| p.rank)
    }

    pub fn params(&self) -> Vec<ParamId> {
        match self {
            Adapters::None => Vec::new(),
            Adapters::Lora(f) => f.layers.iter().flat_map(|l| [l.aq, l.bq, l.av, l.bv]).collect(),
            Adapters::Prompt(p) => alloc::vec![p.tokens],
            Adapters::Prefix(p) => p.layers.iter().flat_map(|l| [l.keys, l.values, l.gate]).collect(),
        }
    }
}

/// Reasoner parameters the method trains directly.
pub fn reasoner_trainable(weights: &ReasonerWeights, tuning: &TuningConfig) -> Result<Vec<ParamId>> {
    tuning.validate()?;
    if tuning.method != Method::Partial {
        return Ok(Vec::new());
    }
    let last = weights.config.layers - 1;
    let target = tuning.partial_target.expect("validated");
    Ok(weights
        .specs
        .iter()
        .filter(|(_, s)| match target {
            PartialTarget::Bias => matches!(s.kind, ParamKind::Bias | ParamKind::NormShift),
            PartialTarget::First => s.block == Some(0),
            PartialTarget::Last => s.block == Some(last),
            PartialTarget::FirstLast => s.block == Some(0) || s.block == Some(last),
        })
        .map(|(id, _)| *id)
        .collect())
}

/// Freezes everything in `store`, then marks `always` (translator, heads and
/// other task parameters), the method's reasoner parameters and the adapter
/// parameters trainable. Returns the trainable ids in store order.
pub fn partition_parameters<T: Real>(
    store: &mut ParamStore<T>,
    weights: &ReasonerWeights,
    always: &[ParamId],
    tuning: &TuningConfig,
    adapters: &Adapters,
) -> Result<Vec<ParamId>> {
    let expected = match (tuning.method, adapters) {
        (Method::Basic | Method::Partial, Adapters::None) => true,
        (Method::Lora, Adapters::Lora(f)) => f.rank == tuning.r,
        (Method::Prompt, Adapters::Prompt(p)) => p.rank == tuning.r,
        (Method::Prefix, Adapters::Prefix(p)) => p.rank == tuning.r,
        _ => false,
    };
    if !expected {
        return Err(Error::Contract(format!("adapters do not match tuning method {:?}", tuning.method)));
    }
    store.freeze_all();
    for &id in always.iter().chain(&reasoner_trainable(weights, tuning)?).chain(&adapters.params()) {
        store.set_trainable(id, true);
    }
    Ok(store.trainable_ids())
}

/// Closed-form count of parameters a method trains beyond the translator and
/// heads.
pub fn count_trainable(config: &ReasonerConfig, tuning: &TuningConfig) -> Result<usize> {
    tuning.validate()?;
    let (l, d, ff, r) = (config.layers, config.hidden, config.ff, tuning.r);
    let block = 4 * d * d + 2 * d * ff + ff + 9 * d;
    Ok(match tuning.method {
        Method::Basic => 0,
        Method::Partial => match tuning.partial_target.expect("validated") {
            PartialTarget::Bias => l * (7 * d + ff) + d,
            PartialTarget::First | PartialTarget::Last => block,
            PartialTarget::FirstLast if l == 1 => block,
            PartialTarget::FirstLast => 2 * block,
        },
        Method::Lora => l * 2 * (r * d + d * r),
        Method::Prompt => r * d,
        Method::Prefix => l * (2 * r * d + 1),
    })
}

/// `x · W + b + s · (x · Aᵀ) · Bᵀ`.
pub fn lora_forward<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: Option<&Tensor<T>>,
    a: &Tensor<T>,
    up: &Tensor<T>,
    scale: T,
) -> Result<Tensor<T>> {
    let mut y = kernels::linear(x, w, b)?;
    let (n, d, rank) = (x.rows(), x.cols(), a.rows());
    if a.cols() != d || up.cols() != rank || up.rows() != y.cols() {
        return Err(shape_err("lora_forward", format!("x {:?}, A {:?}, B {:?}", x.shape(), a.shape(), up.shape())));
    }
    let mut t = alloc::vec![T::zero(); n * rank];
    kernels::matmul_nt_acc(x.data(), n, d, a.data(), rank, &mut t);
    let mut delta = alloc::vec![T::zero(); n * up.rows()];
    kernels::matmul_nt_acc(&t, n, rank, up.data(), up.rows(), &mut delta);
    y.data_mut().iter_mut().zip(delta).for_each(|(o, dv)| *o += dv * scale);
    Ok(y)
}

/// Prepends the prompt tokens; everything after shifts by `r` positions.
pub fn prompt_prepend<T: Real>(
    sequence: &TranslatedSequence<T>,
    store: &ParamStore<T>,
    bank: &PromptBank,
    max_positions: usize,
) -> Result<TranslatedSequence<T>> {
    let needed = sequence.len() + bank.rank;
    if needed > max_positions {
        return Err(Error::Capacity {
            needed,
            capacity: max_positions,
        });
    }
    let prompts = store.value(bank.tokens);
    let mut out = TranslatedSequence {
        tokens: Tensor::zeros(&[0, prompts.cols()]),
        tags: Vec::new(),
        timestamps: sequence.timestamps.clone(),
    };
    out.push_rows(prompts, Modality::Prompt)?;
    let mut data = out.tokens.into_data();
    data.extend_from_slice(sequence.tokens.data());
    out.tokens = Tensor::matrix(needed, prompts.cols(), data);
    out.tags.extend_from_slice(&sequence.tags);
    Ok(out)
}

/// Seeds every layer's cache with the bank's prefix rows.
pub fn prefix_inject<T: Real>(state: &mut SessionState<T>, store: &ParamStore<T>, bank: &PrefixBank) -> Result<()> {
    let gate_scale = T::from_f64(GATE_SCALE);
    let caches = bank
        .layers
        .iter()
        .map(|l| crate::reasoner::PrefixCache {
            keys: store.value(l.keys).data().to_vec(),
            values: store.value(l.values).data().to_vec(),
            count: bank.rank,
            logit_bias: gate_scale * store.value(l.gate).item(),
        })
        .collect();
    state.install_prefix(caches)
}

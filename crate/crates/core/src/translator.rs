//! Linear projection of pooled visual tokens into the reasoner's hidden space.

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{shape_err, Result};
use crate::ingest::VisualTokens;
use crate::numerics::{kernels, Graph, ParamId, ParamStore, Real, Tensor, Var};

/// Origin of a token in the reasoner input.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Modality {
    /// Virtual prompt-tuning token.
    Prompt,
    Visual,
    Text,
    /// The learnable summary token.
    Query,
}

/// Reasoner-space tokens with one modality tag each.
#[derive(Debug, Clone, PartialEq)]
pub struct TranslatedSequence<T> {
    pub tokens: Tensor<T>,
    pub tags: Vec<Modality>,
    /// End time of each visual token, in order.
    pub timestamps: Vec<f32>,
}

impl<T: Real> TranslatedSequence<T> {
    pub fn len(&self) -> usize {
        self.tags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tags.is_empty()
    }

    pub fn hidden(&self) -> usize {
        self.tokens.cols()
    }

    /// Appends rows under one tag. Visual rows may not follow text or query rows.
    pub fn push_rows(&mut self, rows: &Tensor<T>, tag: Modality) -> Result<()> {
        if rows.rows() == 0 {
            return Ok(());
        }
        if !self.tags.is_empty() && rows.cols() != self.hidden() {
            return Err(shape_err("push_rows", format!("width {} into {}", rows.cols(), self.hidden())));
        }
        if tag == Modality::Visual && self.tags.iter().any(|t| matches!(t, Modality::Text | Modality::Query)) {
            return Err(crate::Error::Contract("visual tokens must precede text and query tokens".into()));
        }
        let mut data = self.tokens.data().to_vec();
        data.extend_from_slice(rows.data());
        self.tokens = Tensor::matrix(self.tags.len() + rows.rows(), rows.cols(), data);
        self.tags.extend(core::iter::repeat(tag).take(rows.rows()));
        Ok(())
    }

    /// Positions carrying `tag`.
    pub fn positions_of(&self, tag: Modality) -> Vec<usize> {
        self.tags.iter().enumerate().filter(|(_, t)| **t == tag).map(|(i, _)| i).collect()
    }
}

/// `s_v = x_t · W + b` with `W: d_v × d`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Translator {
    pub weight: ParamId,
    pub bias: ParamId,
    pub input_dim: usize,
    pub hidden: usize,
}

impl Translator {
    /// `W ~ U(±1/sqrt(d_v))`, `b = 0`.
    pub fn register<T: Real>(store: &mut ParamStore<T>, prefix: &str, input_dim: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = 1.0 / num_traits::Float::sqrt(input_dim as f64);
        let w: Vec<T> = (0..input_dim * hidden).map(|_| T::from_f64(rng.random_range(-bound..bound))).collect();
        let weight = store.add(format!("{prefix}weight"), Tensor::matrix(input_dim, hidden, w), true);
        let bias = store.add(format!("{prefix}bias"), Tensor::zeros(&[hidden]), true);
        Self {
            weight,
            bias,
            input_dim,
            hidden,
        }
    }

    pub fn params(&self) -> [ParamId; 2] {
        [self.weight, self.bias]
    }

    pub fn translate<T: Real>(&self, store: &ParamStore<T>, x: &VisualTokens) -> Result<TranslatedSequence<T>> {
        if x.tokens.cols() != self.input_dim {
            return Err(shape_err("translate", format!("features of width {} into translator for {}", x.tokens.cols(), self.input_dim)));
        }
        let tokens = kernels::linear(&x.tokens.cast::<T>(), store.value(self.weight), Some(store.value(self.bias)))?;
        let n = tokens.rows();
        Ok(TranslatedSequence {
            tokens,
            tags: alloc::vec![Modality::Visual; n],
            timestamps: x.timestamps.clone(),
        })
    }

    /// Taped translation of an `N × d_v` input.
    pub fn translate_graph<T: Real>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let w = g.param(self.weight);
        let b = g.param(self.bias);
        g.linear(x, w, Some(b))
    }
}

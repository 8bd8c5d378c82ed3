//! Frame streams to unit tokens, and text to token ids.
//!
//! Frames arrive as precomputed feature rows. A stream of `F` frames is cut
//! into `ceil(F / F_s)` units of `F_s` frames each; a trailing partial unit is
//! completed by repeating its last frame so the newest frames are never
//! dropped. Each unit is mean-pooled to one token.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::error::{shape_err, Error, Result};
use crate::numerics::{Real, Tensor};

/// Padding id.
pub const PAD_ID: usize = 0;
/// Out-of-vocabulary id.
pub const UNK_ID: usize = 1;
/// End-of-text id.
pub const EOT_ID: usize = 2;
/// First id assigned to a vocabulary word.
pub const FIRST_WORD_ID: usize = 3;

/// A `F × d_v` frame-feature matrix with its sampling rate.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameFeatures {
    features: Tensor<f32>,
    fps: f32,
}

impl FrameFeatures {
    pub fn new(features: Tensor<f32>, fps: f32) -> Result<Self> {
        if features.shape().len() != 2 || features.rows() == 0 || features.cols() == 0 {
            return Err(shape_err("frame features", format!("need F×d_v with F,d_v ≥ 1, got {:?}", features.shape())));
        }
        if !(fps.is_finite() && fps > 0.0) {
            return Err(Error::Argument(format!("fps must be positive, got {fps}")));
        }
        if !features.is_finite() {
            return Err(Error::NonFinite("frame features".into()));
        }
        Ok(Self { features, fps })
    }

    pub fn frames(&self) -> usize {
        self.features.rows()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn fps(&self) -> f32 {
        self.fps
    }

    pub fn features(&self) -> &Tensor<f32> {
        &self.features
    }
}

/// Frames grouped into fixed-size temporal units.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitSequence {
    units: Vec<Tensor<f32>>,
    frames_per_unit: usize,
    fps: f32,
}

impl UnitSequence {
    pub fn len(&self) -> usize {
        self.units.len()
    }

    pub fn is_empty(&self) -> bool {
        self.units.is_empty()
    }

    pub fn units(&self) -> &[Tensor<f32>] {
        &self.units
    }

    pub fn frames_per_unit(&self) -> usize {
        self.frames_per_unit
    }

    pub fn unit_span_seconds(&self) -> f32 {
        self.frames_per_unit as f32 / self.fps
    }
}

/// Splits a stream into `ceil(F / frames_per_unit)` units.
pub fn unitize(stream: &FrameFeatures, frames_per_unit: usize) -> Result<UnitSequence> {
    if frames_per_unit == 0 {
        return Err(Error::Argument("frames per unit must be ≥ 1".into()));
    }
    let f = stream.frames();
    let d = stream.dim();
    let n_units = f.div_ceil(frames_per_unit);
    let units = (0..n_units)
        .map(|u| {
            let mut data = Vec::with_capacity(frames_per_unit * d);
            for k in 0..frames_per_unit {
                let frame = (u * frames_per_unit + k).min(f - 1);
                data.extend_from_slice(stream.features.row(frame));
            }
            Tensor::matrix(frames_per_unit, d, data)
        })
        .collect();
    Ok(UnitSequence {
        units,
        frames_per_unit,
        fps: stream.fps,
    })
}

/// Pooled unit tokens with the end time of each unit.
#[derive(Debug, Clone, PartialEq)]
pub struct VisualTokens {
    pub tokens: Tensor<f32>,
    pub timestamps: Vec<f32>,
}

impl VisualTokens {
    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }
}

/// Mean-pools every unit to one token.
pub fn pool_units(units: &UnitSequence) -> Result<VisualTokens> {
    let first = units.units.first().ok_or_else(|| Error::Argument("no units to pool".into()))?;
    let d = first.cols();
    let mut data = Vec::with_capacity(units.len() * d);
    let mut timestamps = Vec::with_capacity(units.len());
    for (i, u) in units.units.iter().enumerate() {
        // Accumulating in f64 keeps the mean of identical rows exact.
        let n = u.rows() as f64;
        for j in 0..d {
            let mut s = 0.0f64;
            for k in 0..u.rows() {
                s += u.at(k, j) as f64;
            }
            data.push((s / n) as f32);
        }
        timestamps.push(((i + 1) * units.frames_per_unit) as f32 / units.fps);
    }
    Ok(VisualTokens {
        tokens: Tensor::matrix(units.len(), d, data),
        timestamps,
    })
}

/// Word list with ids starting after the reserved ones.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Vocabulary {
    words: Vec<String>,
    index: BTreeMap<String, usize>,
}

impl Vocabulary {
    pub fn from_words<I, S>(words: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut v = Self::default();
        for w in words {
            let w = w.as_ref().to_lowercase();
            if w.is_empty() || w.chars().any(char::is_whitespace) {
                return Err(Error::Argument(format!("invalid vocabulary word {w:?}")));
            }
            if v.index.contains_key(&w) {
                return Err(Error::Argument(format!("duplicate vocabulary word {w:?}")));
            }
            v.index.insert(w.clone(), FIRST_WORD_ID + v.words.len());
            v.words.push(w);
        }
        Ok(v)
    }

    /// Vocabulary size including reserved ids.
    pub fn size(&self) -> usize {
        self.words.len() + FIRST_WORD_ID
    }

    pub fn id(&self, word: &str) -> Option<usize> {
        self.index.get(word).copied()
    }

    pub fn word(&self, id: usize) -> Option<&str> {
        match id {
            PAD_ID => Some("<pad>"),
            UNK_ID => Some("<unk>"),
            EOT_ID => Some("<eot>"),
            _ => self.words.get(id - FIRST_WORD_ID).map(String::as_str),
        }
    }

    /// Words in id order, without the reserved entries.
    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn decode(&self, ids: &[usize]) -> String {
        let words: Vec<&str> = ids
            .iter()
            .take_while(|&&i| i != EOT_ID)
            .map(|&i| self.word(i).unwrap_or("<unk>"))
            .collect();
        words.join(" ")
    }
}

/// Token ids of one text, always terminated by [`EOT_ID`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TextTokens {
    pub ids: Vec<usize>,
    pub raw: String,
}

/// Whitespace split, lower-cased lookup, unknown words to [`UNK_ID`].
pub fn tokenize(text: &str, vocab: &Vocabulary) -> TextTokens {
    let mut ids: Vec<usize> = text
        .split_whitespace()
        .map(|w| vocab.id(&w.to_lowercase()).unwrap_or(UNK_ID))
        .collect();
    ids.push(EOT_ID);
    TextTokens {
        ids,
        raw: text.to_string(),
    }
}

/// Looks up one embedding row per token id.
pub fn embed_text<T: Real>(tokens: &TextTokens, table: &Tensor<T>) -> Result<Tensor<T>> {
    let d = table.cols();
    let mut data = Vec::with_capacity(tokens.ids.len() * d);
    for &id in &tokens.ids {
        if id >= table.rows() {
            return Err(Error::Index {
                what: "embedding row",
                index: id,
                len: table.rows(),
            });
        }
        data.extend_from_slice(table.row(id));
    }
    Ok(Tensor::matrix(tokens.ids.len(), d, data))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use proptest::prelude::*;

    fn stream(f: usize, d: usize) -> FrameFeatures {
        let data = (0..f * d).map(|i| i as f32).collect();
        FrameFeatures::new(Tensor::matrix(f, d, data), 30.0).unwrap()
    }

    #[test]
    fn unit_counts() {
        assert_eq!(unitize(&stream(16, 2), 4).unwrap().len(), 4);
        let u = unitize(&stream(10, 1), 4).unwrap();
        assert_eq!(u.len(), 3);
        assert_eq!(u.units()[2].data(), &[8.0, 9.0, 9.0, 9.0]);
        let u = unitize(&stream(5, 3), 1).unwrap();
        assert_eq!(u.len(), 5);
        assert_eq!(u.units()[3].data(), stream(5, 3).features().row(3));
        assert!(matches!(unitize(&stream(5, 3), 0), Err(Error::Argument(_))));
    }

    #[test]
    fn pooling_is_the_mean() {
        let f = FrameFeatures::new(Tensor::matrix(2, 1, vec![1.0, 3.0]), 2.0).unwrap();
        let t = pool_units(&unitize(&f, 2).unwrap()).unwrap();
        assert_eq!(t.tokens.data(), &[2.0]);
        assert_eq!(t.timestamps, vec![1.0]);

        let f = FrameFeatures::new(Tensor::matrix(3, 2, vec![0.5, -1.0, 0.5, -1.0, 0.5, -1.0]), 1.0).unwrap();
        let t = pool_units(&unitize(&f, 3).unwrap()).unwrap();
        assert_eq!(t.tokens.data(), &[0.5, -1.0]);
    }

    #[test]
    fn timestamps_follow_unit_span() {
        let t = pool_units(&unitize(&stream(12, 2), 4).unwrap()).unwrap();
        assert_eq!(t.timestamps, vec![4.0 / 30.0, 8.0 / 30.0, 12.0 / 30.0]);
    }

    #[test]
    fn tokenize_cases() {
        let vocab = Vocabulary::from_words(["find", "pour"]).unwrap();
        assert_eq!(tokenize("", &vocab).ids, vec![EOT_ID]);
        assert_eq!(tokenize("find pour", &vocab).ids, vec![3, 4, EOT_ID]);
        assert_eq!(tokenize("zzz-unknown", &vocab).ids, vec![UNK_ID, EOT_ID]);
        assert_eq!(tokenize("  FIND\tPour ", &vocab).ids, vec![3, 4, EOT_ID]);
        assert!(Vocabulary::from_words(["a", "A"]).is_err());
    }

    #[test]
    fn embed_cases() {
        let vocab = Vocabulary::from_words(["x"]).unwrap();
        let table = Tensor::<f32>::zeros(&[vocab.size(), 3]);
        let tokens = TextTokens { ids: vec![0], raw: String::new() };
        assert_eq!(embed_text(&tokens, &table).unwrap().data(), &[0.0; 3]);

        let table = Tensor::matrix(4, 2, (0..8).map(|i| i as f32).collect());
        let tokens = TextTokens { ids: vec![3, 0, 2], raw: String::new() };
        let e = embed_text(&tokens, &table).unwrap();
        assert_eq!(e.rows(), 3);
        for (i, &id) in tokens.ids.iter().enumerate() {
            assert_eq!(e.row(i), table.row(id));
        }
        let bad = TextTokens { ids: vec![4], raw: String::new() };
        assert!(matches!(embed_text(&bad, &table), Err(Error::Index { .. })));
    }

    proptest! {
        #[test]
        fn pooling_matches_column_mean(f in 1usize..20, d in 1usize..6, fs in 1usize..6, seed in 0u32..1000) {
            let data: Vec<f32> = (0..f * d).map(|i| (((i as u32).wrapping_mul(2654435761) ^ seed) % 1000) as f32 / 100.0 - 5.0).collect();
            let stream = FrameFeatures::new(Tensor::matrix(f, d, data), 10.0).unwrap();
            let units = unitize(&stream, fs).unwrap();
            prop_assert_eq!(units.len(), f.div_ceil(fs));
            let tokens = pool_units(&units).unwrap();
            for (u, unit) in units.units().iter().enumerate() {
                for j in 0..d {
                    let col: Vec<f32> = (0..fs).map(|k| unit.at(k, j)).collect();
                    let mean = col.iter().sum::<f32>() / fs as f32;
                    prop_assert!((tokens.tokens.at(u, j) - mean).abs() < 1e-4);
                }
            }
        }

        #[test]
        fn constant_streams_pool_to_constants(f in 1usize..30, fs in 1usize..8, c in -10.0f32..10.0) {
            let stream = FrameFeatures::new(Tensor::full(&[f, 3], c), 5.0).unwrap();
            let tokens = pool_units(&unitize(&stream, fs).unwrap()).unwrap();
            prop_assert!(tokens.tokens.data().iter().all(|&v| v == c));
        }

        #[test]
        fn tokenize_is_idempotent_on_normalized_text(words in proptest::collection::vec("[a-z]{1,5}", 0..6)) {
            let vocab = Vocabulary::from_words(["ab", "cd", "e"]).unwrap();
            let text = words.join(" ");
            let once = tokenize(&text, &vocab);
            let twice = tokenize(&text.to_lowercase(), &vocab);
            prop_assert_eq!(once.ids, twice.ids);
        }
    }
}

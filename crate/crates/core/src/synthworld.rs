//! Synthetic event streams with ground truth for every task family.
//!
//! A world is a bank of unit-norm category prototypes, a transition rule that
//! never repeats a category, and a small vocabulary. A stream is a
//! semi-Markov category sequence whose frames are the active prototype plus
//! isotropic Gaussian noise.
//!
//! Segments, noise and queries draw from separate random streams of one seed,
//! so a longer stream of the same seed extends a shorter one exactly.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{config_err, Error, Result};
use crate::ingest::{tokenize, FrameFeatures, TextTokens, Vocabulary, VisualTokens};
use crate::metrics::Segment;
use crate::numerics::Tensor;

/// Largest pairwise prototype cosine accepted before reseeding.
pub const MAX_PROTOTYPE_COSINE: f64 = 0.9;
const MAX_RESEEDS: u64 = 1000;

const SEGMENT_STREAM: u64 = 1;
const NOISE_STREAM: u64 = 2;
const QUERY_STREAM: u64 = 3;
const PROTOTYPE_STREAM: u64 = 16;

const NOUNS: [&str; 32] = [
    "cup", "knife", "board", "pan", "bowl", "tap", "door", "drawer", "plate", "spoon", "fork", "kettle", "lid", "jar",
    "bottle", "towel", "sponge", "onion", "egg", "bread", "cheese", "milk", "oil", "salt", "pepper", "rice", "pasta",
    "tomato", "carrot", "potato", "fridge", "oven",
];
const VERBS: [&str; 12] = [
    "take", "put", "open", "close", "wash", "cut", "pour", "mix", "stir", "turn", "pick", "move",
];
const FILLERS: [&str; 6] = ["slowly", "again", "here", "now", "carefully", "away"];
const QUERY_WORDS: [&str; 8] = ["where", "did", "i", "last", "see", "the", "find", "every"];

/// Generator settings; durations are in units.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(default, deny_unknown_fields))]
pub struct WorldConfig {
    pub classes: usize,
    pub feature_dim: usize,
    pub noise: f64,
    pub min_duration: usize,
    pub max_duration: usize,
    pub frames_per_unit: usize,
    pub fps: f32,
    pub caption_len: usize,
    /// Units of future labels recorded beyond the stream end.
    pub future_units: usize,
    pub seed: u64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            classes: 10,
            feature_dim: 64,
            noise: 0.25,
            min_duration: 2,
            max_duration: 8,
            frames_per_unit: 4,
            fps: 4.0,
            caption_len: 3,
            future_units: 4,
            seed: 0,
        }
    }
}

impl WorldConfig {
    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(config_err("classes", format!("need at least 2 categories, got {}", self.classes)));
        }
        if self.feature_dim == 0 {
            return Err(config_err("feature_dim", "must be ≥ 1"));
        }
        if !(self.noise.is_finite() && self.noise >= 0.0) {
            return Err(config_err("noise", "must be finite and ≥ 0"));
        }
        if self.min_duration == 0 {
            return Err(config_err("min_duration", "must be ≥ 1"));
        }
        if self.max_duration < self.min_duration {
            return Err(config_err("max_duration", "must be ≥ min_duration"));
        }
        if self.frames_per_unit == 0 {
            return Err(config_err("frames_per_unit", "must be ≥ 1"));
        }
        if !(self.fps.is_finite() && self.fps > 0.0) {
            return Err(config_err("fps", "must be positive"));
        }
        if self.caption_len == 0 {
            return Err(config_err("caption_len", "must be ≥ 1"));
        }
        Ok(())
    }
}

/// Prototype bank, vocabulary and caption templates of one configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct World {
    config: WorldConfig,
    prototypes: Tensor<f32>,
    vocab: Vocabulary,
    nouns: Vec<String>,
    captions: Vec<TextTokens>,
    reseeds: u64,
}

/// A query about one category present in a stream.
#[derive(Debug, Clone, PartialEq)]
pub struct Query {
    pub category: usize,
    /// Asks for the most recent occurrence.
    pub text: TextTokens,
    pub answer: Segment,
    /// Asks for every occurrence.
    pub all_text: TextTokens,
    pub all_answers: Vec<Segment>,
}

/// One generated stream with its ground truth; times are unit indices.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamSample {
    pub seed: u64,
    pub features: FrameFeatures,
    pub labels: Vec<usize>,
    /// Tile `[0, units)`, end exclusive.
    pub segments: Vec<Segment>,
    /// Labels of the units following the stream.
    pub future: Vec<usize>,
    pub query: Query,
    pub captions: Vec<TextTokens>,
}

impl StreamSample {
    pub fn units(&self) -> usize {
        self.labels.len()
    }

    /// Per-unit relevance to the query category.
    pub fn saliency(&self) -> Vec<bool> {
        self.labels.iter().map(|&l| l == self.query.category).collect()
    }
}

fn noun(k: usize) -> String {
    if k < NOUNS.len() {
        NOUNS[k].to_string()
    } else {
        format!("thing{k}")
    }
}

fn sample_prototypes(k: usize, d: usize, seed: u64) -> (Tensor<f32>, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(PROTOTYPE_STREAM);
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(k);
    for _ in 0..k {
        let mut v: Vec<f64> = (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let norm = num_traits::Float::sqrt(v.iter().map(|x| x * x).sum::<f64>());
        v.iter_mut().for_each(|x| *x /= norm);
        rows.push(v);
    }
    let mut worst = f64::NEG_INFINITY;
    for i in 0..k {
        for j in i + 1..k {
            worst = worst.max(rows[i].iter().zip(&rows[j]).map(|(a, b)| a * b).sum());
        }
    }
    let data = rows.into_iter().flatten().map(|x| x as f32).collect();
    (Tensor::matrix(k, d, data), worst)
}

/// Builds the world of a configuration, reseeding the prototypes until every
/// pairwise cosine is below [`MAX_PROTOTYPE_COSINE`].
pub fn build_world(config: &WorldConfig) -> Result<World> {
    config.validate()?;
    let (k, d) = (config.classes, config.feature_dim);
    let mut reseeds = 0;
    let prototypes = loop {
        let (p, worst) = sample_prototypes(k, d, config.seed.wrapping_add(reseeds));
        if worst < MAX_PROTOTYPE_COSINE {
            break p;
        }
        reseeds += 1;
        if reseeds > MAX_RESEEDS {
            return Err(Error::Argument(format!("no prototype bank with cosine < {MAX_PROTOTYPE_COSINE} for K={k}, d_v={d}")));
        }
    };
    let nouns: Vec<String> = (0..k).map(noun).collect();
    let mut words: Vec<String> = QUERY_WORDS.iter().map(|w| w.to_string()).collect();
    words.extend(nouns.iter().cloned());
    words.extend(VERBS.iter().map(|w| w.to_string()));
    words.extend(FILLERS.iter().map(|w| w.to_string()));
    let vocab = Vocabulary::from_words(words)?;
    let captions = (0..k)
        .map(|c| {
            // The noun is unique per category and always included.
            let words: Vec<&str> = match config.caption_len {
                1 => vec![&nouns[c]],
                n => [VERBS[c % VERBS.len()], &nouns[c]]
                    .into_iter()
                    .chain((0..n - 2).map(|j| FILLERS[(c + j) % FILLERS.len()]))
                    .collect(),
            };
            tokenize(&words.join(" "), &vocab)
        })
        .collect();
    Ok(World {
        config: config.clone(),
        prototypes,
        vocab,
        nouns,
        captions,
        reseeds,
    })
}

impl World {
    pub fn config(&self) -> &WorldConfig {
        &self.config
    }

    /// `K × d_v`, unit-norm rows.
    pub fn prototypes(&self) -> &Tensor<f32> {
        &self.prototypes
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn noun(&self, class: usize) -> &str {
        &self.nouns[class]
    }

    /// Caption template of a category.
    pub fn caption(&self, class: usize) -> &TextTokens {
        &self.captions[class]
    }

    /// Number of prototype reseeds needed to meet the cosine bound.
    pub fn reseeds(&self) -> u64 {
        self.reseeds
    }

    /// Probability of moving from `from` to `to` at a segment boundary.
    pub fn transition(&self, from: usize, to: usize) -> f64 {
        if from == to {
            0.0
        } else {
            1.0 / (self.config.classes - 1) as f64
        }
    }

    /// Per-frame labels of the first `frames` frames of a stream.
    fn frame_labels(&self, frames: usize, seed: u64) -> Vec<usize> {
        let c = &self.config;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(SEGMENT_STREAM);
        let mut labels = Vec::with_capacity(frames);
        let mut class = rng.random_range(0..c.classes);
        while labels.len() < frames {
            let units = rng.random_range(c.min_duration..=c.max_duration);
            let n = (units * c.frames_per_unit).min(frames - labels.len());
            labels.extend(core::iter::repeat(class).take(n));
            // Uniform over the other categories.
            let next = rng.random_range(0..c.classes - 1);
            class = if next >= class { next + 1 } else { next };
        }
        labels
    }

    /// Generates a stream of `units` units.
    pub fn sample_stream(&self, units: usize, seed: u64) -> Result<StreamSample> {
        if units == 0 {
            return Err(Error::Argument("a stream needs at least one unit".into()));
        }
        let c = &self.config;
        let fs = c.frames_per_unit;
        let frames = units * fs;
        let all = self.frame_labels((units + c.future_units) * fs, seed);
        let unit_labels: Vec<usize> = all.chunks(fs).map(majority_label).collect();
        let labels = unit_labels[..units].to_vec();
        let future = unit_labels[units..].to_vec();

        let mut noise = ChaCha8Rng::seed_from_u64(seed);
        noise.set_stream(NOISE_STREAM);
        let sigma = c.noise as f32;
        let mut data = Vec::with_capacity(frames * c.feature_dim);
        for &l in &all[..frames] {
            for &p in self.prototypes.row(l) {
                let z: f32 = noise.sample(StandardNormal);
                data.push(if sigma == 0.0 { p } else { p + sigma * z });
            }
        }
        let features = FrameFeatures::new(Tensor::matrix(frames, c.feature_dim, data), c.fps)?;

        let segments = crate::metrics::label_runs(&labels);
        let mut q = ChaCha8Rng::seed_from_u64(seed);
        q.set_stream(QUERY_STREAM);
        let mut present: Vec<usize> = segments.iter().map(|s| s.category).collect();
        present.sort_unstable();
        present.dedup();
        let category = present[q.random_range(0..present.len())];
        let all_answers: Vec<Segment> = segments.iter().filter(|s| s.category == category).copied().collect();
        let answer = *all_answers.last().expect("query category is present");
        let noun = self.noun(category);
        let query = Query {
            category,
            text: tokenize(&format!("where did i last see the {noun}"), &self.vocab),
            answer,
            all_text: tokenize(&format!("find every {noun}"), &self.vocab),
            all_answers,
        };
        let captions = labels.iter().map(|&l| self.captions[l].clone()).collect();
        Ok(StreamSample {
            seed,
            features,
            labels,
            segments,
            future,
            query,
            captions,
        })
    }

    /// Nearest-prototype label (cosine) of every pooled token, ties to the
    /// lowest category.
    pub fn oracle_classify(&self, tokens: &VisualTokens) -> Result<Vec<usize>> {
        let d = self.config.feature_dim;
        if tokens.tokens.cols() != d {
            return Err(crate::error::shape_err("oracle", format!("tokens have width {}, world {d}", tokens.tokens.cols())));
        }
        Ok((0..tokens.len())
            .map(|i| {
                let x = tokens.tokens.row(i);
                let norm = num_traits::Float::sqrt(x.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>()).max(f64::MIN_POSITIVE);
                let mut best = (0, f64::NEG_INFINITY);
                for k in 0..self.config.classes {
                    let cos = x.iter().zip(self.prototypes.row(k)).map(|(&a, &b)| a as f64 * b as f64).sum::<f64>() / norm;
                    if cos > best.1 {
                        best = (k, cos);
                    }
                }
                best.0
            })
            .collect())
    }
}

/// Most frequent label of a unit's frames, ties to the label seen first.
fn majority_label(frames: &[usize]) -> usize {
    let mut best = (frames[0], 0);
    for (i, &l) in frames.iter().enumerate() {
        if frames[..i].contains(&l) {
            continue;
        }
        let n = frames.iter().filter(|&&x| x == l).count();
        if n > best.1 {
            best = (l, n);
        }
    }
    best.0
}

#[cfg(test)]
mod tests;

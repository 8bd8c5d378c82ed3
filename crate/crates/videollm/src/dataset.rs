//! Synthetic datasets on disk.
//!
//! ```text
//! out/manifest.json            world, data config, seeds and file list
//! out/vocab.txt
//! out/{train,eval}/NNNNNN.vlf  frame features of one stream
//! out/{train,eval}/annotations.jsonl
//! ```
//!
//! Annotation lines carry the ground truth of one stream with times in
//! units.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use videollm_core::ingest::{pool_units, unitize};
use videollm_core::metrics::Segment;
use videollm_core::model::{Example, QueryTarget};
use videollm_core::synthworld::{StreamSample, World, WorldConfig};

use crate::config::DataConfig;
use crate::error::{CliError, Result};
use crate::vlf;

/// Candidate seeds tried per requested sample before giving up.
pub const MAX_TRIES_PER_SAMPLE: u64 = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Annotation {
    pub sample_id: u64,
    /// Feature file, relative to the split directory.
    pub features: String,
    pub units: usize,
    pub labels: Vec<usize>,
    pub future: Vec<usize>,
    pub segments: Vec<Segment>,
    pub query: QueryTarget,
    pub captions: Vec<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitInfo {
    pub name: String,
    pub base_seed: u64,
    pub count: usize,
    pub seeds: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub world: WorldConfig,
    pub data: DataConfig,
    pub splits: Vec<SplitInfo>,
    /// Every file of the dataset, relative to its root.
    pub files: Vec<String>,
}

/// `count` streams from seeds `base, base + 1, …`, skipping streams with
/// more than `max_segments` segments.
pub fn generate(world: &World, data: &DataConfig, base: u64, count: usize) -> Result<Vec<StreamSample>> {
    let mut out = Vec::with_capacity(count);
    let limit = base.saturating_add(count as u64 * MAX_TRIES_PER_SAMPLE);
    let mut seed = base;
    while out.len() < count {
        if seed >= limit {
            return Err(CliError::config(
                "data.max_segments",
                format!("only {} of {count} streams found within the segment limit", out.len()),
            ));
        }
        let s = world.sample_stream(data.units, seed)?;
        if data.max_segments.map_or(true, |m| s.segments.len() <= m) {
            out.push(s);
        }
        seed += 1;
    }
    Ok(out)
}

pub fn examples(samples: &[StreamSample], frames_per_unit: usize) -> Result<Vec<Example>> {
    Ok(samples.iter().map(|s| Example::from_stream(s, frames_per_unit)).collect::<Result<Vec<_>, _>>()?)
}

/// Training and evaluation examples of a config, generated in memory.
pub fn generate_splits(world: &World, world_cfg: &WorldConfig, data: &DataConfig) -> Result<(Vec<Example>, Vec<Example>)> {
    let train = generate(world, data, data.train_seed, data.train_samples)?;
    let eval = generate(world, data, data.eval_seed, data.eval_samples)?;
    Ok((examples(&train, world_cfg.frames_per_unit)?, examples(&eval, world_cfg.frames_per_unit)?))
}

fn annotation(s: &StreamSample, file: String) -> Annotation {
    let q = &s.query;
    Annotation {
        sample_id: s.seed,
        features: file,
        units: s.units(),
        labels: s.labels.clone(),
        future: s.future.clone(),
        segments: s.segments.clone(),
        query: QueryTarget {
            category: q.category,
            text: q.text.ids.clone(),
            answer: q.answer,
            all_text: q.all_text.ids.clone(),
            all_answers: q.all_answers.clone(),
        },
        captions: s.captions.iter().map(|c| c.ids.clone()).collect(),
    }
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| CliError::write(path, e))
}

fn write_json_lines<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut buf = Vec::new();
    for item in items {
        serde_json::to_writer(&mut buf, item).expect("serializable");
        buf.push(b'\n');
    }
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(&buf))
        .map_err(|e| CliError::write(path, e))
}

/// Writes both splits, the vocabulary and the manifest under `root`.
pub fn write(root: &Path, world: &World, world_cfg: &WorldConfig, data: &DataConfig) -> Result<DatasetManifest> {
    create_dir(root)?;
    let mut files = vec!["manifest.json".to_string(), "vocab.txt".to_string()];
    crate::vocab::store_vocab(&root.join("vocab.txt"), world.vocab())?;
    let mut splits = Vec::new();
    for (name, base, count) in [("train", data.train_seed, data.train_samples), ("eval", data.eval_seed, data.eval_samples)] {
        let dir = root.join(name);
        create_dir(&dir)?;
        let samples = generate(world, data, base, count)?;
        let mut notes = Vec::with_capacity(samples.len());
        for s in &samples {
            let file = format!("{:06}.vlf", s.seed);
            vlf::store_features(&dir.join(&file), &s.features)?;
            files.push(format!("{name}/{file}"));
            notes.push(annotation(s, file));
        }
        write_json_lines(&dir.join("annotations.jsonl"), &notes)?;
        files.push(format!("{name}/annotations.jsonl"));
        splits.push(SplitInfo {
            name: name.into(),
            base_seed: base,
            count: samples.len(),
            seeds: samples.iter().map(|s| s.seed).collect(),
        });
    }
    let manifest = DatasetManifest {
        world: world_cfg.clone(),
        data: data.clone(),
        splits,
        files,
    };
    let path = root.join("manifest.json");
    std::fs::write(&path, serde_json::to_vec_pretty(&manifest).expect("serializable")).map_err(|e| CliError::write(&path, e))?;
    Ok(manifest)
}

pub fn read_manifest(root: &Path) -> Result<DatasetManifest> {
    let path = root.join("manifest.json");
    let bytes = std::fs::read(&path).map_err(|e| CliError::read(&path, e))?;
    serde_json::from_slice(&bytes).map_err(|e| CliError::format(&path, e.to_string()))
}

/// Loads one split as examples.
pub fn load_split(root: &Path, split: &str) -> Result<Vec<Example>> {
    let manifest = read_manifest(root)?;
    let dir: PathBuf = root.join(split);
    let path = dir.join("annotations.jsonl");
    let text = std::fs::read_to_string(&path).map_err(|e| CliError::read(&path, e))?;
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let a: Annotation = serde_json::from_str(line).map_err(|e| CliError::format(&path, format!("line {}: {e}", n + 1)))?;
        let ff = vlf::load_features(&dir.join(&a.features))?;
        if ff.dim() != manifest.world.feature_dim {
            return Err(CliError::Shape(format!("{} has width {}, world {}", a.features, ff.dim(), manifest.world.feature_dim)));
        }
        let tokens = pool_units(&unitize(&ff, manifest.world.frames_per_unit)?)?;
        if tokens.len() != a.units || a.labels.len() != a.units {
            return Err(CliError::Shape(format!("{}: {} units, {} labels, annotation says {}", a.features, tokens.len(), a.labels.len(), a.units)));
        }
        out.push(Example {
            id: a.sample_id,
            tokens: tokens.tokens,
            labels: a.labels,
            future: a.future,
            segments: a.segments,
            query: Some(a.query),
            captions: a.captions,
        });
    }
    Ok(out)
}

//! The operator commands. Each is a function of its config and input files
//! to its output files and standard-output text; every written file is
//! listed in `run_manifest.json` inside the output directory.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use videollm_core::adapters::{PartialTarget, TuningConfig};
use videollm_core::heads::top_k;
use videollm_core::ingest::{pool_units, unitize, VisualTokens};
use videollm_core::metrics::MetricReport;
use videollm_core::model::{check_gradients, Example, ModelConfig, StreamSession, Task, VideoLlm, TOP_K};
use videollm_core::numerics::{GradCheckOptions, ParamStore};
use videollm_core::reasoner::forward_full;
use videollm_core::synthworld::{build_world, WorldConfig};
use videollm_core::trainer::{train, EvalMode, StepLog};
use videollm_core::Tensor;

use crate::checkpoint;
use crate::config::RunConfig;
use crate::dataset;
use crate::error::{CliError, Result};
use crate::parallel::{self, Parallel};
use crate::vlf;

pub const CHECKPOINT_FILE: &str = "checkpoint.vlck";
pub const METRICS_FILE: &str = "metrics.json";
pub const PREDICTIONS_FILE: &str = "predictions.jsonl";
pub const TRAIN_LOG_FILE: &str = "train_log.jsonl";
pub const RUN_MANIFEST_FILE: &str = "run_manifest.json";

/// Largest relative error `gradcheck` accepts.
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub command: String,
    pub config: RunConfig,
    /// Written files, relative to the output directory.
    pub files: Vec<String>,
}

struct OutDir {
    root: PathBuf,
    files: Vec<String>,
}

impl OutDir {
    fn create(root: &Path) -> Result<Self> {
        std::fs::create_dir_all(root).map_err(|e| CliError::write(root, e))?;
        Ok(Self {
            root: root.to_path_buf(),
            files: Vec::new(),
        })
    }

    fn path(&mut self, name: &str) -> PathBuf {
        self.files.push(name.to_string());
        self.root.join(name)
    }

    fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        let path = self.path(name);
        std::fs::write(&path, bytes).map_err(|e| CliError::write(&path, e))
    }

    fn finish(mut self, command: &str, config: &RunConfig) -> Result<()> {
        self.files.push(RUN_MANIFEST_FILE.into());
        let m = RunManifest {
            command: command.into(),
            config: config.clone(),
            files: self.files.clone(),
        };
        let path = self.root.join(RUN_MANIFEST_FILE);
        std::fs::write(&path, serde_json::to_vec_pretty(&m).expect("serializable")).map_err(|e| CliError::write(&path, e))
    }
}

fn json_lines<T: Serialize>(items: &[T]) -> Vec<u8> {
    let mut buf = Vec::new();
    for item in items {
        serde_json::to_writer(&mut buf, item).expect("serializable");
        buf.push(b'\n');
    }
    buf
}

fn emit(stdout: &mut dyn Write, text: &str) -> Result<()> {
    writeln!(stdout, "{text}").map_err(|e| CliError::write(Path::new("<stdout>"), e))
}

/// Writes the dataset of `cfg` under `out`.
pub fn cmd_synth(cfg: &RunConfig, out: &Path, stdout: &mut dyn Write) -> Result<dataset::DatasetManifest> {
    cfg.validate()?;
    let world = cfg.world()?;
    let mut dir = OutDir::create(out)?;
    let manifest = dataset::write(out, &world, &cfg.world, &cfg.data)?;
    dir.files.extend(manifest.files.iter().cloned());
    dir.finish("synth", cfg)?;
    let summary = serde_json::json!({
        "samples": manifest.splits.iter().map(|s| (s.name.clone(), s.count)).collect::<std::collections::BTreeMap<_, _>>(),
        "files": manifest.files.len(),
    });
    emit(stdout, &summary.to_string())?;
    Ok(manifest)
}

fn splits(cfg: &RunConfig) -> Result<(Vec<Example>, Vec<Example>)> {
    match &cfg.paths.dataset {
        Some(root) => {
            let m = dataset::read_manifest(root)?;
            if m.world.feature_dim != cfg.world.feature_dim || m.world.frames_per_unit != cfg.world.frames_per_unit {
                return Err(CliError::Shape(format!(
                    "dataset has d_v {} and {} frames per unit, config {} and {}",
                    m.world.feature_dim, m.world.frames_per_unit, cfg.world.feature_dim, cfg.world.frames_per_unit
                )));
            }
            Ok((dataset::load_split(root, "train")?, dataset::load_split(root, "eval")?))
        }
        None => {
            let world = cfg.world()?;
            dataset::generate_splits(&world, &cfg.world, &cfg.data)
        }
    }
}

fn write_eval(dir: &mut OutDir, report: &MetricReport, outputs: &[videollm_core::model::SampleOutput]) -> Result<()> {
    dir.write(PREDICTIONS_FILE, &json_lines(outputs))?;
    dir.write(METRICS_FILE, &serde_json::to_vec_pretty(report).expect("serializable"))
}

/// Result of `train`: the evaluation report and the step log.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub report: MetricReport,
    pub log: Vec<StepLog>,
}

/// Trains on the training split, writes the checkpoint and step log, then
/// evaluates on the evaluation split.
pub fn cmd_train(cfg: &RunConfig, out: &Path, stdout: &mut dyn Write) -> Result<TrainOutcome> {
    cfg.validate()?;
    let world = cfg.world()?;
    let (train_set, eval_set) = splits(cfg)?;
    let (model, mut store) = VideoLlm::build::<f32>(cfg.model_config(&world))?;
    if let Some(p) = &cfg.paths.pretrained {
        let (pre, _) = checkpoint::load(p)?;
        if pre.model.reasoner != model.config.reasoner {
            return Err(CliError::Shape(format!("pretrained reasoner {:?} differs from {:?}", pre.model.reasoner, model.config.reasoner)));
        }
        model.load_reasoner(&mut store, &pre.store)?;
    }
    let mut dir = OutDir::create(out)?;
    let (ckpt, log) = train(&model, store, &train_set, cfg.train.clone(), &Parallel)?;
    let path = dir.path(CHECKPOINT_FILE);
    checkpoint::save(&path, &ckpt)?;
    dir.write(TRAIN_LOG_FILE, &json_lines(&log))?;
    let (report, outputs) = parallel::evaluate(&model, &ckpt.store, &eval_set, cfg.train.task, EvalMode::Auto)?;
    write_eval(&mut dir, &report, &outputs)?;
    dir.finish("train", cfg)?;
    emit(stdout, &serde_json::to_string(&report).expect("serializable"))?;
    Ok(TrainOutcome { report, log })
}

/// Evaluates a checkpoint on the evaluation split.
pub fn cmd_eval(cfg: &RunConfig, ckpt_path: &Path, out: &Path, stdout: &mut dyn Write) -> Result<MetricReport> {
    cfg.validate()?;
    let (ckpt, model) = checkpoint::load(ckpt_path)?;
    ckpt.check_task(cfg.train.task).map_err(|e| CliError::config("train.task", e.to_string()))?;
    if model.config.feature_dim != cfg.world.feature_dim {
        return Err(CliError::Shape(format!(
            "checkpoint expects d_v {}, config world has {}",
            model.config.feature_dim, cfg.world.feature_dim
        )));
    }
    let (_, eval_set) = splits(cfg)?;
    let mut dir = OutDir::create(out)?;
    let (report, outputs) = parallel::evaluate(&model, &ckpt.store, &eval_set, cfg.train.task, EvalMode::Auto)?;
    write_eval(&mut dir, &report, &outputs)?;
    dir.finish("eval", cfg)?;
    emit(stdout, &serde_json::to_string(&report).expect("serializable"))?;
    Ok(report)
}

/// One line of `stream` output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StreamLine {
    pub unit_index: usize,
    /// End time of the unit in seconds.
    pub timestamp: f32,
    pub top5: Vec<usize>,
    pub next_top5: Vec<usize>,
    pub latency_ns: u64,
}

fn pooled(model: &ModelConfig, features: &videollm_core::ingest::FrameFeatures) -> Result<VisualTokens> {
    if features.dim() != model.feature_dim {
        return Err(CliError::Shape(format!("features have width {}, checkpoint expects {}", features.dim(), model.feature_dim)));
    }
    Ok(pool_units(&unitize(features, model.frames_per_unit)?)?)
}

/// Online predictions unit by unit through the incremental session.
pub fn stream_lines(model: &VideoLlm, store: &ParamStore<f32>, tokens: &VisualTokens, mut sink: impl FnMut(StreamLine) -> Result<()>) -> Result<usize> {
    let mut session = StreamSession::new(model, store)?;
    for i in 0..tokens.len() {
        let t0 = Instant::now();
        let h = session.push(tokens.tokens.row(i))?;
        let (cur, next) = model.online_row(store, &Tensor::matrix(1, h.len(), h))?;
        let line = StreamLine {
            unit_index: i,
            timestamp: tokens.timestamps[i],
            top5: top_k(cur.row(0), TOP_K),
            next_top5: top_k(next.row(0), TOP_K),
            latency_ns: t0.elapsed().as_nanos() as u64,
        };
        sink(line)?;
    }
    Ok(tokens.len())
}

/// Streams a feature file through a checkpoint, one JSON line per unit.
pub fn cmd_stream(ckpt_path: &Path, features: &Path, stdout: &mut dyn Write) -> Result<usize> {
    let (ckpt, model) = checkpoint::load(ckpt_path)?;
    let ff = vlf::load_features(features)?;
    let tokens = pooled(&model.config, &ff)?;
    stream_lines(&model, &ckpt.store, &tokens, |line| emit(stdout, &serde_json::to_string(&line).expect("serializable")))
}

/// Worst relative error per checked configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GradCheckSummary {
    pub tolerance: f64,
    pub checks: std::collections::BTreeMap<String, f64>,
    pub max_rel_error: f64,
    pub passed: bool,
}

/// Small model used by `gradcheck`.
pub fn gradcheck_setup(tuning: TuningConfig) -> Result<(ModelConfig, Example)> {
    let wc = WorldConfig {
        classes: 4,
        feature_dim: 6,
        min_duration: 2,
        max_duration: 4,
        frames_per_unit: 2,
        caption_len: 2,
        future_units: 3,
        ..WorldConfig::default()
    };
    let world = build_world(&wc)?;
    let cfg = ModelConfig {
        feature_dim: 6,
        frames_per_unit: 2,
        classes: 4,
        vocab_size: world.vocab().size(),
        reasoner: videollm_core::reasoner::ReasonerConfig::gpt2_like(2, 2, 8, 32),
        tuning,
        horizons: 2,
        gap: 0,
        proposals: 6,
        summary: videollm_core::heads::SummarySource::QueryToken,
        caption_len: 3,
        seed: 5,
    };
    let ex = Example::from_stream(&world.sample_stream(8, 3)?, 2)?;
    Ok((cfg, ex))
}

pub fn tuning_methods() -> Vec<(&'static str, TuningConfig)> {
    vec![
        ("basic", TuningConfig::basic()),
        ("partial_bias", TuningConfig::partial(PartialTarget::Bias)),
        ("partial_first", TuningConfig::partial(PartialTarget::First)),
        ("partial_last", TuningConfig::partial(PartialTarget::Last)),
        ("lora4", TuningConfig::lora(4)),
        ("prompt4", TuningConfig::prompt(4)),
        ("prefix4", TuningConfig::prefix(4)),
    ]
}

/// 64-bit gradient checks of every task head (basic tuning) and every tuning
/// method (online and highlight tasks).
pub fn run_gradcheck() -> Result<GradCheckSummary> {
    let opts = GradCheckOptions {
        eps: 3e-5,
        max_elements_per_param: Some(24),
    };
    let mut checks = std::collections::BTreeMap::new();
    let (cfg, ex) = gradcheck_setup(TuningConfig::basic())?;
    for task in Task::ALL {
        let r = check_gradients(cfg.clone(), &ex, task, opts)?;
        checks.insert(format!("task.{}", task.name()), r.max_rel_error);
    }
    for (name, tuning) in tuning_methods() {
        let (cfg, ex) = gradcheck_setup(tuning)?;
        let mut worst: f64 = 0.0;
        for task in [Task::Online, Task::Hd] {
            worst = worst.max(check_gradients(cfg.clone(), &ex, task, opts)?.max_rel_error);
        }
        checks.insert(format!("method.{name}"), worst);
    }
    let max = checks.values().copied().fold(0.0, f64::max);
    Ok(GradCheckSummary {
        tolerance: GRADCHECK_TOLERANCE,
        checks,
        max_rel_error: max,
        passed: max <= GRADCHECK_TOLERANCE,
    })
}

pub fn cmd_gradcheck(stdout: &mut dyn Write) -> Result<GradCheckSummary> {
    let s = run_gradcheck()?;
    emit(stdout, &serde_json::to_string(&s).expect("serializable"))?;
    if !s.passed {
        return Err(CliError::Verification(format!("max relative error {:.3e} above {:.0e}", s.max_rel_error, s.tolerance)));
    }
    Ok(s)
}

/// Throughput and final-unit latency of incremental and full inference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchReport {
    pub units: usize,
    /// Tokens processed by each mode (deterministic).
    pub step_tokens: usize,
    pub full_tokens: usize,
    pub step_tokens_per_sec: f64,
    pub full_tokens_per_sec: f64,
    /// Median latency of the last unit's update.
    pub step_final_unit_ns: u64,
    /// Median latency of recomputing the whole stream for the last unit.
    pub full_final_unit_ns: u64,
    pub speedup: f64,
}

fn median(mut v: Vec<u64>) -> u64 {
    v.sort_unstable();
    v[v.len() / 2]
}

/// Streams `tokens` through the session, then times the last unit against a
/// full recompute of the whole prefix; `repeats` samples per latency.
pub fn bench(model: &VideoLlm, store: &ParamStore<f32>, tokens: &VisualTokens, repeats: usize) -> Result<BenchReport> {
    let n = tokens.len();
    if n == 0 {
        return Err(CliError::config("units", "bench needs at least one unit"));
    }
    if n + model.adapters.prompt_len() > model.config.reasoner.max_positions {
        return Err(CliError::config(
            "reasoner.max_positions",
            format!("{n} units do not fit {} positions", model.config.reasoner.max_positions),
        ));
    }
    let repeats = repeats.max(1);
    let mut session = StreamSession::new(model, store)?;
    let t0 = Instant::now();
    for i in 0..n - 1 {
        session.push(tokens.tokens.row(i))?;
    }
    let prefix_time = t0.elapsed();
    let last = tokens.tokens.row(n - 1);
    let mut step_samples = Vec::with_capacity(repeats);
    for _ in 0..repeats {
        let mut s = session.clone();
        let t = Instant::now();
        let h = s.push(last)?;
        model.online_row(store, &Tensor::matrix(1, h.len(), h))?;
        step_samples.push(t.elapsed().as_nanos() as u64);
    }
    let step_final = median(step_samples);
    let mut full_samples = Vec::with_capacity(repeats);
    for _ in 0..repeats {
        let t = Instant::now();
        let seq = model.translator.translate(store, tokens)?;
        let h = forward_full(&seq, store, &model.reasoner, model.adapters.view())?;
        let row = h.row(h.len() - 1).to_vec();
        model.online_row(store, &Tensor::matrix(1, row.len(), row))?;
        full_samples.push(t.elapsed().as_nanos() as u64);
    }
    let full_final = median(full_samples);
    let step_secs = prefix_time.as_secs_f64() + step_final as f64 * 1e-9;
    Ok(BenchReport {
        units: n,
        step_tokens: n,
        full_tokens: n,
        step_tokens_per_sec: n as f64 / step_secs.max(1e-12),
        full_tokens_per_sec: n as f64 / (full_final as f64 * 1e-9).max(1e-12),
        step_final_unit_ns: step_final,
        full_final_unit_ns: full_final,
        speedup: full_final as f64 / step_final.max(1) as f64,
    })
}

/// Benchmarks an untrained model of `cfg` on a generated stream of `units`.
pub fn cmd_bench(cfg: &RunConfig, units: usize, stdout: &mut dyn Write) -> Result<BenchReport> {
    cfg.validate()?;
    let world = cfg.world()?;
    let (model, store) = VideoLlm::build::<f32>(cfg.model_config(&world))?;
    let sample = world.sample_stream(units, cfg.data.eval_seed)?;
    let tokens = pooled(&model.config, &sample.features)?;
    let report = bench(&model, &store, &tokens, 5)?;
    emit(stdout, &serde_json::to_string(&report).expect("serializable"))?;
    Ok(report)
}

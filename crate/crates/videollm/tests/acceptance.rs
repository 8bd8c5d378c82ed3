//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs as a plain binary so the verdict lines reach the console. Exits
//! non-zero when a criterion fails that is not listed in [`KNOWN_UNMET`].

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use videollm::checkpoint;
use videollm::commands::{bench, run_gradcheck, GRADCHECK_TOLERANCE};
use videollm::config::{DataConfig, RunConfig};
use videollm::dataset;
use videollm::parallel::{self, with_threads, Parallel};
use videollm_core::adapters::{count_trainable, partition_parameters, prefix_inject, prompt_prepend, Adapters, PartialTarget, TuningConfig};
use videollm_core::ingest::{pool_units, unitize, VisualTokens};
use videollm_core::matching::hungarian;
use videollm_core::metrics::{
    class_mean_recall_at_k, detection_map, edit_score, framewise_accuracy, rank_at_k, rouge_l, run_labels, segmental_f1, t_iou, DetectionSample,
    MetricReport, Segment,
};
use videollm_core::model::{Example, Task, VideoLlm};
use videollm_core::numerics::ParamStore;
use videollm_core::reasoner::{forward_full, init, step, AdapterView, Mode, ReasonerConfig, SessionState};
use videollm_core::trainer::{train, Checkpoint, EvalMode, MAP_THRESHOLDS};
use videollm_core::translator::{Modality, TranslatedSequence};
use videollm_core::Tensor;

/// Criteria that are known not to hold; their FAIL lines do not fail the run.
const KNOWN_UNMET: &[u32] = &[5];

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict { pass, detail: detail.into() }
}

fn within(elapsed: Duration, budget_secs: u64) -> bool {
    elapsed <= Duration::from_secs(budget_secs)
}

// ---------------------------------------------------------------- 1

fn random_sequence(n: usize, d: usize, rng: &mut ChaCha8Rng) -> TranslatedSequence<f32> {
    TranslatedSequence {
        tokens: Tensor::matrix(n, d, (0..n * d).map(|_| rng.random_range(-1.0f32..1.0)).collect()),
        tags: vec![Modality::Visual; n],
        timestamps: (0..n).map(|i| i as f32).collect(),
    }
}

/// Random reasoner with live adapters of kind 0 none, 1 LoRA, 2 prefix, 3 prompt.
fn random_reasoner(rng: &mut ChaCha8Rng, kind: u8, mode: Mode) -> (ReasonerConfig, ParamStore<f32>, videollm_core::reasoner::ReasonerWeights, Adapters) {
    let heads = 1 << rng.random_range(0..3);
    // Width ≥ 4: layer norm over two features is constant up to sign.
    let hidden = heads * 2 * rng.random_range(2..6);
    let mut cfg = ReasonerConfig::gpt2_like(rng.random_range(1..4), heads, hidden, 160);
    cfg.mode = mode;
    let (mut store, w) = init::<f32>(cfg, rng.random()).unwrap();
    let tuning = match kind {
        0 => TuningConfig::basic(),
        1 => TuningConfig::lora(rng.random_range(1..5)),
        2 => TuningConfig::prefix(rng.random_range(1..5)),
        _ => TuningConfig::prompt(rng.random_range(1..5)),
    };
    let bias = store.add("bias", Tensor::zeros(&[hidden]), true);
    let before = store.len();
    let ad = Adapters::register(&mut store, "", &cfg, &tuning, bias, rng).unwrap();
    for id in store.ids().collect::<Vec<_>>() {
        // Open gates and nonzero factors so every path is exercised.
        let shift = if id.0 >= before { 0.3 } else { 0.05 };
        for x in store.value_mut(id).data_mut() {
            *x += rng.random_range(-shift..shift);
        }
    }
    (cfg, store, w, ad)
}

fn criterion_1() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst = 0.0f32;
    let mut finite = true;
    let cases = 120;
    for case in 0..cases {
        let kind = (case % 4) as u8;
        let (cfg, store, w, ad) = random_reasoner(&mut rng, kind, Mode::Causal);
        let len = rng.random_range(1..=128);
        let mut seq = random_sequence(len, cfg.hidden, &mut rng);
        if let Some(bank) = ad.prompt() {
            seq = prompt_prepend(&seq, &store, bank, cfg.max_positions).unwrap();
        }
        let full = forward_full(&seq, &store, &w, ad.view()).unwrap();
        let mut session = SessionState::new(cfg);
        if let Some(bank) = ad.prefix() {
            prefix_inject(&mut session, &store, bank).unwrap();
        }
        for i in 0..seq.len() {
            let (h, _) = step(&mut session, seq.tokens.row(i), &store, &w, ad.lora()).unwrap();
            for (a, b) in h.iter().zip(full.row(i)) {
                finite &= a.is_finite() && b.is_finite();
                worst = worst.max((a - b).abs());
            }
        }
    }
    verdict(finite && worst <= 1e-5, format!("{cases} cases, max L∞ {worst:.2e} (≤ 1e-5), all finite: {finite}"))
}

// ---------------------------------------------------------------- 2

/// Cases where perturbing token j left every output i < j bit-identical.
fn prefix_untouched_cases(mode: Mode, cases: usize) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut untouched = 0;
    for _ in 0..cases {
        let (cfg, store, w, _) = random_reasoner(&mut rng, 0, mode);
        let len = rng.random_range(2..=48);
        let seq = random_sequence(len, cfg.hidden, &mut rng);
        let j = rng.random_range(1..len);
        let mut pert = seq.clone();
        for x in pert.tokens.row_mut(j) {
            *x = rng.random_range(-1.0..1.0);
        }
        let a = forward_full(&seq, &store, &w, AdapterView::default()).unwrap();
        let b = forward_full(&pert, &store, &w, AdapterView::default()).unwrap();
        if (0..j).all(|i| a.row(i) == b.row(i)) {
            untouched += 1;
        }
    }
    untouched
}

fn criterion_2() -> Verdict {
    let causal = prefix_untouched_cases(Mode::Causal, 100);
    let bidirectional = prefix_untouched_cases(Mode::Bidirectional, 100);
    verdict(
        causal == 100 && bidirectional == 0,
        format!("causal prefix unchanged {causal}/100; bidirectional unchanged {bidirectional}/100"),
    )
}

// ---------------------------------------------------------------- 3

fn criterion_3() -> Verdict {
    let s = run_gradcheck().unwrap();
    let worst = s.checks.iter().max_by(|a, b| a.1.total_cmp(b.1)).unwrap();
    verdict(
        s.max_rel_error <= GRADCHECK_TOLERANCE,
        format!("{} checks, max rel error {:.2e} at {} (≤ 1e-4)", s.checks.len(), s.max_rel_error, worst.0),
    )
}

// ---------------------------------------------------------------- 4

/// Minimum total over every injective map of the smaller side, by recursion.
fn brute_min(cost: &[f64], n: usize, m: usize) -> f64 {
    fn go(cost: &[f64], n: usize, m: usize, row: usize, used: &mut Vec<bool>, acc: f64, best: &mut f64) {
        let assigned = used.iter().filter(|&&u| u).count();
        if assigned == n.min(m) {
            *best = best.min(acc);
            return;
        }
        if row == n {
            return;
        }
        // Rows may stay unmatched only when there are more rows than columns.
        if n - row > n.min(m) - assigned {
            go(cost, n, m, row + 1, used, acc, best);
        }
        for j in 0..m {
            if !used[j] {
                used[j] = true;
                go(cost, n, m, row + 1, used, acc + cost[row * m + j], best);
                used[j] = false;
            }
        }
    }
    let mut best = f64::INFINITY;
    go(cost, n, m, 0, &mut vec![false; m], 0.0, &mut best);
    best
}

fn criterion_4() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let mut mismatches = 0;
    for case in 0..1000 {
        let (n, m) = (rng.random_range(1..=7), rng.random_range(1..=7));
        let cost: Vec<f64> = (0..n * m)
            .map(|_| if case % 2 == 0 { rng.random_range(0..4) as f64 } else { rng.random_range(0.0..10.0) })
            .collect();
        let a = hungarian(&cost, n, m).unwrap();
        let pairs_cost: f64 = a.pairs.iter().map(|&(i, j)| cost[i * m + j]).sum();
        let want = brute_min(&cost, n, m);
        if a.pairs.len() != n.min(m) || a.cost != want || pairs_cost != want {
            mismatches += 1;
        }
    }
    verdict(mismatches == 0, format!("1000 instances, {mismatches} mismatches"))
}

// ---------------------------------------------------------------- 5

/// Trainable elements beyond the base after partitioning a real store.
fn enumerate(config: ReasonerConfig, tuning: TuningConfig) -> usize {
    let (mut store, w) = init::<f32>(config, 0).unwrap();
    let bias = store.add("bias", Tensor::zeros(&[config.hidden]), false);
    let ad = Adapters::register(&mut store, "", &config, &tuning, bias, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let ids = partition_parameters(&mut store, &w, &[], &tuning, &ad).unwrap();
    ids.iter().map(|&id| store.value(id).len()).sum()
}

fn criterion_5() -> Verdict {
    let base = ReasonerConfig::gpt2_like(12, 12, 768, 1024);
    let (l, d, r_ff) = (12usize, 768usize, 3072usize);
    let round = |n: usize, places: i32| (n as f64 / 1e6 * 10f64.powi(places)).round() / 10f64.powi(places);
    // (name, tuning, hand count, expected millions, decimals)
    let cases: Vec<(String, TuningConfig, usize, f64, i32)> = [(1, 0.04), (2, 0.07), (4, 0.15), (8, 0.30)]
        .into_iter()
        .map(|(r, m)| (format!("lora r={r}"), TuningConfig::lora(r), l * 2 * 2 * d * r, m, 2))
        .chain(
            [(1, 0.02), (2, 0.04), (4, 0.07), (8, 0.15)]
                .into_iter()
                .map(|(r, m)| (format!("prefix r={r}"), TuningConfig::prefix(r), l * (2 * r * d + 1), m, 2)),
        )
        .chain([("prompt r=8".to_string(), TuningConfig::prompt(8), 8 * d, 0.0, 1)])
        .chain([(
            "bias".to_string(),
            TuningConfig::partial(PartialTarget::Bias),
            // qkv 3d, out d, ff r_ff + d, two norm shifts; final norm shift
            l * (3 * d + d + r_ff + d + 2 * d) + d,
            0.1,
            1,
        )])
        .collect();
    let mut pass = true;
    let mut notes = Vec::new();
    for (name, tuning, hand, expected, places) in cases {
        let closed = count_trainable(&base, &tuning).unwrap();
        let counted = enumerate(base, tuning);
        let rounded = round(counted, places);
        let ok = closed == hand && counted == hand && rounded == expected;
        pass &= ok;
        if !ok {
            notes.push(format!("{name}: {counted} → {rounded} M vs {expected} M"));
        } else {
            notes.push(format!("{name} {counted}"));
        }
    }
    verdict(pass, notes.join("; "))
}

// ---------------------------------------------------------------- 6

/// AP by trying every labeling of ranked predictions consistent with the
/// greedy highest-IoU rule and integrating precision over recall.
fn oracle_ap(preds: &[Segment], gt: &[Segment], threshold: f64) -> f64 {
    let mut order: Vec<usize> = (0..preds.len()).collect();
    order.sort_by(|&a, &b| {
        preds[b]
            .score
            .total_cmp(&preds[a].score)
            .then(preds[a].start.total_cmp(&preds[b].start))
            .then(preds[a].end.total_cmp(&preds[b].end))
            .then(a.cmp(&b))
    });
    let choices = gt.len() + 1;
    let mut found = None;
    for code in 0..choices.pow(preds.len() as u32) {
        let mut c = code;
        let pick: Vec<usize> = (0..preds.len())
            .map(|_| {
                let v = c % choices;
                c /= choices;
                v
            })
            .collect();
        let mut used = vec![false; gt.len()];
        let consistent = order.iter().all(|&i| {
            let iou = |j: usize| t_iou(preds[i].interval(), gt[j].interval());
            let best = (0..gt.len())
                .filter(|&j| !used[j] && iou(j) >= threshold)
                .fold(None::<usize>, |b, j| match b {
                    Some(k) if iou(k) >= iou(j) => Some(k),
                    _ => Some(j),
                });
            let ok = pick[i] == best.unwrap_or(gt.len());
            if ok && pick[i] < gt.len() {
                used[pick[i]] = true;
            }
            ok
        });
        if consistent {
            found = Some(order.iter().map(|&i| pick[i] < gt.len()).collect::<Vec<bool>>());
            break;
        }
    }
    let tp = found.expect("a consistent labeling exists");
    if gt.is_empty() {
        return 0.0;
    }
    (1..=gt.len())
        .map(|step| {
            let mut hits = 0;
            let mut best: f64 = 0.0;
            for (rank, &t) in tp.iter().enumerate() {
                hits += usize::from(t);
                if hits >= step {
                    best = best.max(hits as f64 / (rank + 1) as f64);
                }
            }
            best / gt.len() as f64
        })
        .sum()
}

fn criterion_6() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(606);
    let mut bad_map = 0;
    let instances = 2000;
    let seg = |rng: &mut ChaCha8Rng, scored: bool| {
        let s = rng.random_range(0..20) as f64;
        let l = rng.random_range(1..10) as f64;
        Segment::scored(s, s + l, rng.random_range(0..2), if scored { rng.random_range(0..5) as f64 / 4.0 } else { 1.0 })
    };
    for _ in 0..instances {
        let preds: Vec<Segment> = (0..rng.random_range(0..=5)).map(|_| seg(&mut rng, true)).collect();
        let gts: Vec<Segment> = (0..rng.random_range(0..=3)).map(|_| seg(&mut rng, false)).collect();
        let (m, _) = detection_map(
            &[DetectionSample {
                predictions: preds.clone(),
                ground_truth: gts.clone(),
            }],
            &MAP_THRESHOLDS,
        );
        let mut classes: Vec<usize> = gts.iter().map(|g| g.category).collect();
        classes.sort_unstable();
        classes.dedup();
        let want = if classes.is_empty() {
            0.0
        } else {
            MAP_THRESHOLDS
                .iter()
                .map(|&t| {
                    classes
                        .iter()
                        .map(|&c| {
                            let p: Vec<Segment> = preds.iter().filter(|s| s.category == c).copied().collect();
                            let g: Vec<Segment> = gts.iter().filter(|s| s.category == c).copied().collect();
                            oracle_ap(&p, &g, t)
                        })
                        .sum::<f64>()
                        / classes.len() as f64
                })
                .sum::<f64>()
                / MAP_THRESHOLDS.len() as f64
        };
        if (m - want).abs() > 1e-9 {
            bad_map += 1;
        }
    }
    let close = |a: f64, b: f64| (a - b).abs() < 1e-9;
    let seg_ = |s: f64, e: f64, c: usize| Segment::new(s, e, c);
    let one_map = |p: Segment, g: Segment| detection_map(&[DetectionSample { predictions: vec![p], ground_truth: vec![g] }], &MAP_THRESHOLDS).0;
    let hand: Vec<(&str, bool)> = vec![
        ("recall all hit", close(class_mean_recall_at_k(&[vec![0], vec![1]], &[0, 1], 5).unwrap(), 100.0)),
        ("recall 1/1 + 0/1", close(class_mean_recall_at_k(&[vec![0], vec![0]], &[0, 1], 1).unwrap(), 50.0)),
        ("accuracy 3 of 4", close(framewise_accuracy(&[0, 1, 2, 0], &[0, 1, 2, 3]).unwrap(), 75.0)),
        ("f1 exact", close(segmental_f1(&[seg_(0.0, 5.0, 0)], &[seg_(0.0, 5.0, 0)], 0.25), 100.0)),
        ("f1 disjoint", close(segmental_f1(&[seg_(0.0, 5.0, 0)], &[seg_(10.0, 15.0, 0)], 0.25), 0.0)),
        (
            "f1 one of two",
            close(segmental_f1(&[seg_(0.0, 5.0, 0)], &[seg_(0.0, 5.0, 0), seg_(5.0, 9.0, 1)], 0.25), 200.0 / 3.0),
        ),
        ("edit equal", close(edit_score(&run_labels(&[0, 0, 1]), &run_labels(&[0, 1, 1])), 100.0)),
        ("edit A vs ABC", close(edit_score(&[0], &[0, 1, 2]), 100.0 / 3.0)),
        ("edit empty", close(edit_score(&[], &[0]), 0.0)),
        ("map exact", close(one_map(Segment::scored(0.0, 10.0, 0, 1.0), seg_(0.0, 10.0, 0)), 1.0)),
        ("map third overlap", close(one_map(Segment::scored(0.0, 10.0, 0, 1.0), seg_(5.0, 15.0, 0)), 0.6)),
        (
            "map no predictions",
            close(detection_map(&[DetectionSample { predictions: vec![], ground_truth: vec![seg_(0.0, 1.0, 0)] }], &MAP_THRESHOLDS).0, 0.0),
        ),
        ("rank top-1 exact", rank_at_k(&[vec![(0.0, 10.0)]], &[(0.0, 10.0)], 1, 0.5).unwrap() == 1.0),
        (
            "rank iou 0.4",
            rank_at_k(&[vec![(0.0, 4.0)]], &[(0.0, 10.0)], 1, 0.3).unwrap() == 1.0 && rank_at_k(&[vec![(0.0, 4.0)]], &[(0.0, 10.0)], 1, 0.5).unwrap() == 0.0,
        ),
        ("rank disjoint", rank_at_k(&[vec![(20.0, 30.0)]], &[(0.0, 10.0)], 1, 0.3).unwrap() == 0.0),
        ("rouge identical", rouge_l(&["a", "b"], &["a", "b"]) == 1.0),
        ("rouge disjoint", rouge_l(&["a"], &["b"]) == 0.0),
        ("rouge abc/ac", close(rouge_l(&["a", "b", "c"], &["a", "c"]), 0.8)),
    ];
    let failed: Vec<&str> = hand.iter().filter(|(_, ok)| !ok).map(|(n, _)| *n).collect();
    verdict(
        bad_map == 0 && failed.is_empty(),
        format!("{instances} mAP instances, {bad_map} mismatches; {} hand examples, failed {failed:?}", hand.len()),
    )
}

// ---------------------------------------------------------------- 7, 8

/// The online setup: K=10, d_v=64, σ=0.25, F_s=4, L=2, h=4, d=64.
fn online_config() -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.data = DataConfig {
        train_samples: 400,
        eval_samples: 100,
        units: 32,
        ..DataConfig::default()
    };
    cfg.train.task = Task::Online;
    cfg.train.steps = 2000;
    cfg.train.batch_size = 8;
    cfg.train.learning_rate = 1e-3;
    cfg.validate().unwrap();
    cfg
}

fn accuracy_of(cfg: &RunConfig, pretrained: Option<&ParamStore<f32>>) -> (f64, Vec<Example>) {
    let world = cfg.world().unwrap();
    let (train_set, eval_set) = dataset::generate_splits(&world, &cfg.world, &cfg.data).unwrap();
    let (model, mut store) = VideoLlm::build::<f32>(cfg.model_config(&world)).unwrap();
    if let Some(p) = pretrained {
        model.load_reasoner(&mut store, p).unwrap();
    }
    let (ckpt, _) = train(&model, store, &train_set, cfg.train.clone(), &Parallel).unwrap();
    let (report, _) = parallel::evaluate(&model, &ckpt.store, &eval_set, Task::Online, EvalMode::Auto).unwrap();
    (report.metrics["accuracy"], eval_set)
}

fn criterion_7() -> Verdict {
    let cfg = online_config();
    let t = Instant::now();
    let (acc, eval_set) = accuracy_of(&cfg, None);
    let elapsed = t.elapsed();
    let world = cfg.world().unwrap();
    let (mut hit, mut total) = (0usize, 0usize);
    for ex in &eval_set {
        let vt = VisualTokens {
            tokens: ex.tokens.clone(),
            timestamps: vec![0.0; ex.units()],
        };
        let pred = world.oracle_classify(&vt).unwrap();
        hit += pred.iter().zip(&ex.labels).filter(|(a, b)| a == b).count();
        total += ex.units();
    }
    let oracle = 100.0 * hit as f64 / total as f64;
    verdict(
        acc >= 90.0 && acc >= oracle - 3.0 && within(elapsed, 300),
        format!("accuracy {acc:.2}%, oracle {oracle:.2}% (≥ 90, within 3), {:.0} s (≤ 300)", elapsed.as_secs_f64()),
    )
}

fn criterion_8() -> Verdict {
    let t = Instant::now();
    // Pre-train the whole reasoner on a world with different prototypes.
    let mut pre = online_config();
    pre.world.seed = 7_777;
    pre.data.train_seed = 50_000;
    pre.train.full_reasoner = true;
    pre.train.reasoner_learning_rate = 1e-3;
    pre.train.steps = 1000;
    let world = pre.world().unwrap();
    let (train_set, _) = dataset::generate_splits(&world, &pre.world, &pre.data).unwrap();
    let (model, store) = VideoLlm::build::<f32>(pre.model_config(&world)).unwrap();
    let (pretrained, _) = train(&model, store, &train_set, pre.train.clone(), &Parallel).unwrap();

    let mut results = Vec::new();
    for (name, tuning) in [("basic", TuningConfig::basic()), ("prefix4", TuningConfig::prefix(4)), ("prompt4", TuningConfig::prompt(4))] {
        let mut cfg = online_config();
        cfg.tuning = tuning;
        results.push((name, accuracy_of(&cfg, Some(&pretrained.store)).0));
    }
    let elapsed = t.elapsed();
    let basic = results[0].1;
    let pass = results[1..].iter().all(|(_, a)| *a >= basic - 1.0) && within(elapsed, 900);
    let text: Vec<String> = results.iter().map(|(n, a)| format!("{n} {a:.2}%")).collect();
    verdict(pass, format!("{} (PEFT ≥ basic − 1), {:.0} s (≤ 900)", text.join(", "), elapsed.as_secs_f64()))
}

// ---------------------------------------------------------------- 9

/// Streams of 16 units with at most 6 segments, N_m = 10, whole reasoner trained.
fn retrieval_config(task: Task) -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.data = DataConfig {
        train_samples: 3000,
        eval_samples: 100,
        units: 16,
        max_segments: Some(6),
        train_seed: 1_000,
        eval_seed: 1_000_000,
    };
    cfg.heads.proposals = 10;
    cfg.train.task = task;
    cfg.train.steps = 3000;
    cfg.train.batch_size = 32;
    cfg.train.learning_rate = 3e-3;
    cfg.train.full_reasoner = true;
    cfg.train.reasoner_learning_rate = 3e-3;
    cfg.train.set_loss.no_object = 1.0;
    cfg.train.set_loss.class = 3.0;
    cfg.validate().unwrap();
    cfg
}

/// Memory retrieval from scratch, then text-conditioned retrieval continuing from the memory model.
fn criterion_9() -> Verdict {
    let t = Instant::now();
    let cfg = retrieval_config(Task::Memory);
    let world = cfg.world().unwrap();
    let (train_set, eval_set) = dataset::generate_splits(&world, &cfg.world, &cfg.data).unwrap();
    let (model, store) = VideoLlm::build::<f32>(cfg.model_config(&world)).unwrap();
    let (ckpt, _) = train(&model, store, &train_set, cfg.train.clone(), &Parallel).unwrap();
    let memory = parallel::evaluate(&model, &ckpt.store, &eval_set, Task::Memory, EvalMode::Auto).unwrap().0.metrics["mAP"];
    let nlq_cfg = retrieval_config(Task::Nlq);
    let (ckpt, _) = train(&model, ckpt.store, &train_set, nlq_cfg.train.clone(), &Parallel).unwrap();
    let nlq = parallel::evaluate(&model, &ckpt.store, &eval_set, Task::Nlq, EvalMode::Auto).unwrap().0.metrics["rank1@0.3"];
    let elapsed = t.elapsed();
    verdict(
        memory >= 0.5 && nlq >= 0.6 && within(elapsed, 900),
        format!("mAP {memory:.3} (≥ 0.5), NLQ rank1@0.3 {nlq:.3} (≥ 0.6), {:.0} s (≤ 900)", elapsed.as_secs_f64()),
    )
}

// ---------------------------------------------------------------- 10

fn criterion_10() -> Verdict {
    let cfg = online_config();
    let world = cfg.world().unwrap();
    let (model, store) = VideoLlm::build::<f32>(cfg.model_config(&world)).unwrap();
    let sample = world.sample_stream(512, 77).unwrap();
    let tokens = pool_units(&unitize(&sample.features, cfg.world.frames_per_unit).unwrap()).unwrap();
    let r = bench(&model, &store, &tokens, 7).unwrap();
    verdict(
        r.units == 512 && r.speedup >= 5.0,
        format!(
            "final unit {:.0} µs streamed vs {:.0} µs recomputed, speedup {:.1}× (≥ 5)",
            r.step_final_unit_ns as f64 / 1e3,
            r.full_final_unit_ns as f64 / 1e3,
            r.speedup
        ),
    )
}

// ---------------------------------------------------------------- 11

fn small_run(task: Task, threads: usize) -> (Vec<u8>, MetricReport) {
    let mut cfg = RunConfig::default();
    cfg.world.classes = 5;
    cfg.world.feature_dim = 16;
    cfg.reasoner = ReasonerConfig {
        dropout: 0.1,
        ..ReasonerConfig::gpt2_like(2, 2, 16, 64)
    };
    cfg.tuning = TuningConfig::prefix(2);
    cfg.data = DataConfig {
        train_samples: 24,
        eval_samples: 8,
        units: 12,
        ..DataConfig::default()
    };
    cfg.train.task = task;
    cfg.train.steps = 20;
    cfg.train.batch_size = 4;
    cfg.override_seed(31);
    let world = cfg.world().unwrap();
    let (train_set, eval_set) = dataset::generate_splits(&world, &cfg.world, &cfg.data).unwrap();
    with_threads(Some(threads), || {
        let (model, store) = VideoLlm::build::<f32>(cfg.model_config(&world)).unwrap();
        let (ckpt, _): (Checkpoint, _) = train(&model, store, &train_set, cfg.train.clone(), &Parallel).unwrap();
        let (report, _) = parallel::evaluate(&model, &ckpt.store, &eval_set, task, EvalMode::Auto).unwrap();
        (checkpoint::encode(&ckpt), report)
    })
}

fn criterion_11() -> Verdict {
    let mut same = 0;
    for task in Task::ALL {
        let a = small_run(task, 1);
        let b = small_run(task, 3);
        same += usize::from(a == b);
    }
    verdict(same == Task::ALL.len(), format!("{same}/{} tasks bit-identical across two runs", Task::ALL.len()))
}

fn main() {
    let criteria: [(u32, &str, fn() -> Verdict); 11] = [
        (1, "incremental equivalence", criterion_1),
        (2, "causality", criterion_2),
        (3, "gradient correctness", criterion_3),
        (4, "hungarian oracle", criterion_4),
        (5, "parameter arithmetic", criterion_5),
        (6, "metric oracles", criterion_6),
        (7, "online reasoning", criterion_7),
        (8, "tuning-method sanity", criterion_8),
        (9, "memory retrieval", criterion_9),
        (10, "streaming performance", criterion_10),
        (11, "determinism", criterion_11),
    ];
    let only: Vec<u32> = std::env::var("ACCEPTANCE_ONLY")
        .map(|v| v.split(',').filter_map(|s| s.trim().parse().ok()).collect())
        .unwrap_or_default();
    let mut unexpected = Vec::new();
    for (n, name, run) in criteria {
        if !only.is_empty() && !only.contains(&n) {
            continue;
        }
        let t = Instant::now();
        let v = run();
        let mark = if v.pass { "PASS" } else { "FAIL" };
        println!("criterion {n:>2} {name:<24} {mark}  {} [{:.1} s]", v.detail, t.elapsed().as_secs_f64());
        if !v.pass && !KNOWN_UNMET.contains(&n) {
            unexpected.push(n);
        }
    }
    if !unexpected.is_empty() {
        eprintln!("unexpected failures: {unexpected:?}");
        std::process::exit(1);
    }
}

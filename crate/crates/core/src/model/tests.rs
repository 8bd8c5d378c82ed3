use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::adapters::{Method, PartialTarget};
use crate::numerics::GradCheckOptions;
use crate::reasoner::{forward_full, Mode};
use crate::synthworld::{build_world, World, WorldConfig};
use crate::translator::TranslatedSequence;

fn world() -> World {
    build_world(&WorldConfig {
        classes: 4,
        feature_dim: 6,
        min_duration: 2,
        max_duration: 4,
        frames_per_unit: 2,
        caption_len: 2,
        future_units: 3,
        ..WorldConfig::default()
    })
    .unwrap()
}

fn config(w: &World, tuning: TuningConfig) -> ModelConfig {
    ModelConfig {
        feature_dim: 6,
        frames_per_unit: 2,
        classes: 4,
        vocab_size: w.vocab().size(),
        reasoner: ReasonerConfig::gpt2_like(2, 2, 8, 32),
        tuning,
        horizons: 2,
        gap: 0,
        proposals: 6,
        summary: SummarySource::QueryToken,
        caption_len: 3,
        seed: 5,
    }
}

fn example(w: &World, units: usize, seed: u64) -> Example {
    Example::from_stream(&w.sample_stream(units, seed).unwrap(), 2).unwrap()
}

fn methods() -> Vec<TuningConfig> {
    vec![
        TuningConfig::basic(),
        TuningConfig::partial(PartialTarget::Bias),
        TuningConfig::partial(PartialTarget::First),
        TuningConfig::partial(PartialTarget::Last),
        TuningConfig::lora(4),
        TuningConfig::prompt(4),
        TuningConfig::prefix(4),
    ]
}

/// Moves adapter parameters off their output-neutral initialization.
fn perturb_adapters<T: Real>(model: &VideoLlm, store: &mut ParamStore<T>, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for id in model.adapters.params() {
        let v = store.value_mut(id);
        let gate = v.len() == 1;
        for x in v.data_mut() {
            *x = if gate { T::zero() } else { T::from_f64(rng.random_range(-0.5..0.5)) };
        }
    }
}

#[test]
fn invalid_configs_are_rejected() {
    let w = world();
    let mut c = config(&w, TuningConfig::basic());
    c.classes = 1;
    assert!(matches!(VideoLlm::build::<f32>(c), Err(Error::Config { .. })));
    let mut c = config(&w, TuningConfig::basic());
    c.proposals = 0;
    assert!(VideoLlm::build::<f32>(c).is_err());
    let c = config(&w, TuningConfig::prompt(32));
    assert!(VideoLlm::build::<f32>(c).is_err());
}

#[test]
fn build_is_deterministic_and_names_are_canonical() {
    let w = world();
    let (m1, s1) = VideoLlm::build::<f32>(config(&w, TuningConfig::lora(2))).unwrap();
    let (m2, s2) = VideoLlm::build::<f32>(config(&w, TuningConfig::lora(2))).unwrap();
    assert_eq!(m1, m2);
    assert_eq!(s1, s2);
    let prefixes = ["reasoner.", "translator.", "adapters.", "text.", "online.", "future.", "memory.", "dense.", "caption."];
    let mut last = 0;
    for (_, p) in s1.iter() {
        let k = prefixes.iter().position(|x| p.name.starts_with(x)).unwrap();
        assert!(k >= last, "{} out of order", p.name);
        last = k;
    }
}

#[test]
fn uniform_online_logits_give_twice_log_k() {
    let w = world();
    let (m, mut store) = VideoLlm::build::<f64>(config(&w, TuningConfig::basic())).unwrap();
    for id in m.online.params() {
        store.value_mut(id).fill(0.0);
    }
    let ex = example(&w, 10, 1);
    let mut g = Graph::new(&store);
    let loss = m.loss(&mut g, &ex, Task::Online, &SetLossWeights::default()).unwrap();
    assert!((g.value(loss).item() - 2.0 * 4f64.ln()).abs() < 1e-12);
}

#[test]
fn confident_correct_predictions_have_near_zero_loss() {
    let w = world();
    let (m, mut store) = VideoLlm::build::<f64>(config(&w, TuningConfig::basic())).unwrap();
    let mut ex = example(&w, 10, 1);
    ex.labels = vec![2; 10];
    store.value_mut(m.dense.class.weight).fill(0.0);
    store.value_mut(m.dense.class.bias).data_mut().copy_from_slice(&[0.0, 0.0, 50.0, 0.0]);
    let mut g = Graph::new(&store);
    let loss = m.loss(&mut g, &ex, Task::Dense, &SetLossWeights::default()).unwrap();
    assert!(g.value(loss).item() < 1e-3);
}

#[test]
fn every_task_loss_is_finite_and_non_negative() {
    let w = world();
    for tuning in methods() {
        let (m, mut store) = VideoLlm::build::<f32>(config(&w, tuning)).unwrap();
        perturb_adapters(&m, &mut store, 3);
        for seed in 0..4 {
            let ex = example(&w, 12, seed);
            for task in Task::ALL {
                let mut g = Graph::new(&store);
                let loss = m.loss(&mut g, &ex, task, &SetLossWeights::default()).unwrap();
                let v = g.value(loss).item();
                assert!(v.is_finite() && v >= 0.0, "{task:?} {v}");
            }
        }
    }
}

#[test]
fn task_and_ground_truth_mismatch_is_an_error() {
    let w = world();
    let (m, store) = VideoLlm::build::<f32>(config(&w, TuningConfig::basic())).unwrap();
    let mut ex = example(&w, 10, 0);
    ex.query = None;
    let mut g = Graph::new(&store);
    assert!(matches!(m.loss(&mut g, &ex, Task::Nlq, &SetLossWeights::default()), Err(Error::Contract(_))));
    assert!(m.infer_streaming(&store, &ex, Task::Memory).is_err());
    let mut wide = example(&w, 10, 0);
    wide.tokens = Tensor::zeros(&[10, 7]);
    assert!(matches!(m.infer(&store, &wide, Task::Online), Err(Error::Shape { .. })));
}

#[test]
fn layout_places_prompt_text_and_query() {
    let w = world();
    let ex = example(&w, 10, 2);
    let (m, store) = VideoLlm::build::<f32>(config(&w, TuningConfig::prompt(3))).unwrap();
    let mut g = Graph::new(&store);
    let enc = m.encode(&mut g, &ex, Task::Nlq).unwrap();
    let q = ex.query.as_ref().unwrap();
    assert_eq!(
        enc.layout,
        Layout {
            prompt: 3,
            visual: 10,
            text: q.text.len(),
            query: 1
        }
    );
    assert_eq!(g.value(enc.visual).shape(), &[10, 8]);
    let enc = m.encode(&mut g, &ex, Task::Online).unwrap();
    assert_eq!(enc.layout.len(), 13);
    assert!(enc.summary.is_none());
}

#[test]
fn visual_states_ignore_appended_text_in_causal_mode() {
    let w = world();
    let ex = example(&w, 10, 2);
    let (m, store) = VideoLlm::build::<f32>(config(&w, TuningConfig::basic())).unwrap();
    let visual = |task| {
        let mut g = Graph::new(&store);
        let enc = m.encode(&mut g, &ex, task).unwrap();
        g.value(enc.visual).clone()
    };
    assert_eq!(visual(Task::Online), visual(Task::Nlq));
    assert_eq!(visual(Task::Online), visual(Task::Hd));

    let mut c = config(&w, TuningConfig::basic());
    c.reasoner.mode = Mode::Bidirectional;
    let (m, store) = VideoLlm::build::<f32>(c).unwrap();
    let visual = |task| {
        let mut g = Graph::new(&store);
        let enc = m.encode(&mut g, &ex, task).unwrap();
        g.value(enc.visual).clone()
    };
    assert_ne!(visual(Task::Online), visual(Task::Nlq));
}

#[test]
fn streaming_and_full_inference_agree() {
    let w = world();
    for tuning in methods() {
        let (m, mut store) = VideoLlm::build::<f32>(config(&w, tuning)).unwrap();
        perturb_adapters(&m, &mut store, 9);
        for seed in 0..3 {
            let ex = example(&w, 20, seed);
            for task in [Task::Online, Task::Future] {
                let full = m.infer(&store, &ex, task).unwrap();
                let stream = m.infer_streaming(&store, &ex, task).unwrap();
                assert_eq!(full, stream, "{tuning:?} {task:?}");
            }
        }
    }
}

#[test]
fn stream_session_evicts_the_oldest_unit_at_capacity() {
    let w = world();
    let mut c = config(&w, TuningConfig::prompt(2));
    c.reasoner.max_positions = 8;
    let (m, mut store) = VideoLlm::build::<f32>(c).unwrap();
    perturb_adapters(&m, &mut store, 1);
    let ex = example(&w, 20, 4);
    let mut session = StreamSession::new(&m, &store).unwrap();
    let mut last = Vec::new();
    for i in 0..20 {
        last = session.push(ex.tokens.row(i)).unwrap();
        assert!(session.window_len() <= 6);
    }
    assert_eq!(session.evictions(), 14);
    // The final state equals a full pass over the prompt and the last six units.
    let store_ref = &store;
    let tokens = m.translator.translate(store_ref, &crate::ingest::VisualTokens {
        tokens: Tensor::matrix(6, 6, ex.tokens.data()[14 * 6..].to_vec()),
        timestamps: vec![0.0; 6],
    });
    let seq: TranslatedSequence<f32> = tokens.unwrap();
    let seq = crate::adapters::prompt_prepend(&seq, store_ref, m.adapters.prompt().unwrap(), 8).unwrap();
    let full = forward_full(&seq, store_ref, &m.reasoner, m.adapters.view()).unwrap();
    let diff = full.row(7).iter().zip(&last).map(|(a, b)| (a - b).abs()).fold(0.0f32, f32::max);
    assert!(diff < 1e-5, "{diff}");
}

#[test]
fn inference_is_repeatable_and_shaped() {
    let w = world();
    let (m, store) = VideoLlm::build::<f32>(config(&w, TuningConfig::basic())).unwrap();
    let ex = example(&w, 12, 6);
    for task in Task::ALL {
        let a = m.infer(&store, &ex, task).unwrap();
        assert_eq!(a, m.infer(&store, &ex, task).unwrap());
        match task {
            Task::Online => {
                assert_eq!(a.labels.len(), 12);
                assert_eq!(a.topk.len(), 12);
                assert_eq!(a.next_topk.len(), 12);
            }
            Task::Future => assert_eq!(a.topk.len(), 12 * 2),
            Task::Dense => assert_eq!(a.labels.len(), 12),
            Task::Memory | Task::Nlq => {
                assert_eq!(a.predictions.len(), 6);
                assert!(a.predictions.windows(2).all(|p| p[0].score >= p[1].score));
                assert!(a.predictions.iter().all(|s| 0.0 <= s.start && s.start <= s.end && s.end <= 12.0));
            }
            Task::Hd => assert_eq!(a.saliency.len(), 12),
            Task::Caption => {
                assert_eq!(a.captions.len(), ex.caption_units().len());
                assert!(a.captions.iter().all(|c| !c.is_empty() && c.len() <= 3));
            }
        }
    }
}

#[test]
fn partition_trains_task_parameters_and_method_parameters() {
    let w = world();
    let (m, mut store) = VideoLlm::build::<f32>(config(&w, TuningConfig::prefix(2))).unwrap();
    let ids = m.partition(&mut store, Task::Nlq, false).unwrap();
    assert!(ids.contains(&m.text) && ids.contains(&m.reasoner.query_token));
    assert!(m.adapters.params().iter().all(|p| ids.contains(p)));
    assert!(!ids.contains(&m.reasoner.positions));
    assert!(m.online.params().iter().all(|p| !ids.contains(p)));
    let full = m.partition(&mut store, Task::Online, true).unwrap();
    assert!(m.reasoner.param_ids().all(|p| full.contains(&p)));
}

#[test]
fn load_reasoner_copies_by_name() {
    let w = world();
    let (a, sa) = VideoLlm::build::<f32>(config(&w, TuningConfig::basic())).unwrap();
    let mut c = config(&w, TuningConfig::prompt(2));
    c.seed = 99;
    let (b, mut sb) = VideoLlm::build::<f32>(c).unwrap();
    assert_eq!(b.load_reasoner(&mut sb, &sa).unwrap(), a.reasoner.param_ids().count());
    for (ia, ib) in a.reasoner.param_ids().zip(b.reasoner.param_ids()) {
        assert_eq!(sa.value(ia), sb.value(ib));
    }
}

fn model_grad_check(tuning: TuningConfig, task: Task) -> f64 {
    let w = world();
    let ex = example(&w, 8, 3);
    let opts = GradCheckOptions {
        eps: 3e-5,
        max_elements_per_param: Some(24),
    };
    check_gradients(config(&w, tuning), &ex, task, opts).unwrap().max_rel_error
}

#[test]
fn full_model_gradients_check_for_every_method() {
    for tuning in methods() {
        for task in [Task::Online, Task::Hd] {
            let err = model_grad_check(tuning, task);
            assert!(err < 1e-4, "{tuning:?} {task:?}: {err}");
        }
    }
}

#[test]
fn method_enum_is_covered() {
    assert_eq!(methods().iter().filter(|t| t.method == Method::Partial).count(), 3);
}

use super::*;
use crate::ingest::{pool_units, unitize};

fn world(noise: f64) -> World {
    build_world(&WorldConfig {
        noise,
        ..WorldConfig::default()
    })
    .unwrap()
}

fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum();
    let na: f64 = a.iter().map(|&x| (x as f64).powi(2)).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|&x| (x as f64).powi(2)).sum::<f64>().sqrt();
    dot / (na * nb)
}

fn pooled(w: &World, s: &StreamSample) -> VisualTokens {
    pool_units(&unitize(&s.features, w.config().frames_per_unit).unwrap()).unwrap()
}

#[test]
fn invalid_configs_name_the_field() {
    let bad = |c: WorldConfig, field: &str| match build_world(&c) {
        Err(Error::Config { field: f, .. }) => assert_eq!(f, field),
        other => panic!("{other:?}"),
    };
    bad(WorldConfig { classes: 1, ..WorldConfig::default() }, "classes");
    bad(WorldConfig { min_duration: 0, ..WorldConfig::default() }, "min_duration");
    bad(WorldConfig { min_duration: 5, max_duration: 4, ..WorldConfig::default() }, "max_duration");
    bad(WorldConfig { noise: -1.0, ..WorldConfig::default() }, "noise");
    assert!(world(0.0).sample_stream(0, 1).is_err());
}

#[test]
fn prototypes_are_unit_norm_distinct_and_deterministic() {
    let a = world(0.25);
    let b = world(0.25);
    assert_eq!(a.prototypes(), b.prototypes());
    let p = a.prototypes();
    assert_eq!(p.shape(), &[10, 64]);
    for i in 0..10 {
        let n: f64 = p.row(i).iter().map(|&x| (x as f64).powi(2)).sum::<f64>().sqrt();
        assert!((n - 1.0).abs() < 1e-6);
        for j in i + 1..10 {
            assert!(cosine(p.row(i), p.row(j)) < MAX_PROTOTYPE_COSINE);
        }
    }
    let other = build_world(&WorldConfig { seed: 7, ..WorldConfig::default() }).unwrap();
    assert_ne!(other.prototypes(), p);
}

#[test]
fn reseeding_enforces_the_cosine_bound() {
    // Two-dimensional prototypes often land close together.
    for seed in 0..50 {
        let w = build_world(&WorldConfig { classes: 3, feature_dim: 2, seed, ..WorldConfig::default() }).unwrap();
        let p = w.prototypes();
        for i in 0..3 {
            for j in i + 1..3 {
                assert!(cosine(p.row(i), p.row(j)) < MAX_PROTOTYPE_COSINE);
            }
        }
    }
}

#[test]
fn transitions_exclude_self_and_sum_to_one() {
    let w = world(0.25);
    for i in 0..10 {
        assert_eq!(w.transition(i, i), 0.0);
        let total: f64 = (0..10).map(|j| w.transition(i, j)).sum();
        assert!((total - 1.0).abs() < 1e-12);
    }
}

#[test]
fn noiseless_frames_equal_prototypes_and_oracle_is_perfect() {
    let w = world(0.0);
    let s = w.sample_stream(60, 3).unwrap();
    let fs = w.config().frames_per_unit;
    for (f, row) in (0..s.features.frames()).map(|f| (f, s.features.features().row(f))) {
        assert_eq!(row, w.prototypes().row(s.labels[f / fs]));
    }
    let tokens = pooled(&w, &s);
    for (i, &l) in s.labels.iter().enumerate() {
        assert_eq!(tokens.tokens.row(i), w.prototypes().row(l));
    }
    assert_eq!(w.oracle_classify(&tokens).unwrap(), s.labels);
}

#[test]
fn generation_is_bit_identical_per_seed() {
    let w = world(0.25);
    assert_eq!(w.sample_stream(40, 11).unwrap(), w.sample_stream(40, 11).unwrap());
    assert_ne!(w.sample_stream(40, 11).unwrap().features, w.sample_stream(40, 12).unwrap().features);
}

#[test]
fn segments_tile_the_stream_with_valid_durations() {
    let w = world(0.25);
    let c = w.config().clone();
    for seed in 0..100 {
        let s = w.sample_stream(50, seed).unwrap();
        assert_eq!(s.segments.first().unwrap().start, 0.0);
        assert_eq!(s.segments.last().unwrap().end, 50.0);
        for pair in s.segments.windows(2) {
            assert_eq!(pair[0].end, pair[1].start);
            assert_ne!(pair[0].category, pair[1].category);
        }
        for (i, seg) in s.segments.iter().enumerate() {
            let len = (seg.end - seg.start) as usize;
            assert!(len <= c.max_duration);
            if i + 1 < s.segments.len() {
                assert!(len >= c.min_duration, "seed {seed}: {seg:?}");
            }
            for u in seg.start as usize..seg.end as usize {
                assert_eq!(s.labels[u], seg.category);
            }
        }
        assert_eq!(s.captions.len(), 50);
        assert_eq!(s.captions[7], *w.caption(s.labels[7]));
    }
}

#[test]
fn future_labels_extend_the_same_seed() {
    let w = world(0.25);
    let n_f = w.config().future_units;
    for seed in 0..20 {
        let short = w.sample_stream(30, seed).unwrap();
        let long = w.sample_stream(30 + n_f, seed).unwrap();
        assert_eq!(short.future, long.labels[30..]);
        assert_eq!(short.labels, long.labels[..30]);
        let frames = short.features.frames();
        assert_eq!(short.features.features().data(), &long.features.features().data()[..frames * 64]);
    }
}

#[test]
fn queries_reference_present_categories() {
    let w = world(0.25);
    for seed in 0..100 {
        let s = w.sample_stream(40, seed).unwrap();
        let q = &s.query;
        assert!(s.labels.contains(&q.category));
        let last = s.segments.iter().rev().find(|g| g.category == q.category).unwrap();
        assert_eq!(q.answer, *last);
        assert_eq!(q.all_answers.iter().filter(|g| g.category == q.category).count(), q.all_answers.len());
        assert_eq!(q.all_answers.len(), s.segments.iter().filter(|g| g.category == q.category).count());
        assert_eq!(w.vocab().decode(&q.text.ids), alloc::format!("where did i last see the {}", w.noun(q.category)));
        let sal = s.saliency();
        assert_eq!(sal.iter().filter(|&&b| b).count(), q.all_answers.iter().map(|g| (g.end - g.start) as usize).sum::<usize>());
    }
}

#[test]
fn captions_differ_between_categories() {
    for len in 1..5 {
        let w = build_world(&WorldConfig { caption_len: len, ..WorldConfig::default() }).unwrap();
        for a in 0..10 {
            assert_eq!(w.caption(a).ids.len(), len + 1);
            assert!(!w.caption(a).ids.contains(&crate::ingest::UNK_ID));
            for b in a + 1..10 {
                assert_ne!(w.caption(a), w.caption(b));
            }
        }
    }
}

#[test]
fn oracle_is_scale_invariant() {
    let w = world(0.5);
    let s = w.sample_stream(80, 5).unwrap();
    let tokens = pooled(&w, &s);
    let labels = w.oracle_classify(&tokens).unwrap();
    let scaled = VisualTokens {
        tokens: tokens.tokens.map(|x| x * 3.5),
        timestamps: tokens.timestamps.clone(),
    };
    assert_eq!(w.oracle_classify(&scaled).unwrap(), labels);
}

#[test]
fn majority_label_prefers_earlier_on_ties() {
    assert_eq!(majority_label(&[1, 1, 2, 2]), 1);
    assert_eq!(majority_label(&[1, 2, 2, 2]), 2);
    assert_eq!(majority_label(&[3]), 3);
}

#[test]
fn noisy_oracle_skyline_is_recorded() {
    let w = build_world(&WorldConfig { noise: 0.5, ..WorldConfig::default() }).unwrap();
    let (mut hits, mut total) = (0usize, 0usize);
    for seed in 0..100 {
        let s = w.sample_stream(100, seed).unwrap();
        let pred = w.oracle_classify(&pooled(&w, &s)).unwrap();
        hits += pred.iter().zip(&s.labels).filter(|(a, b)| a == b).count();
        total += pred.len();
    }
    assert_eq!(total, 10_000);
    let acc = hits as f64 / total as f64;
    // Pooling four frames halves the noise; the skyline sits near 1.
    assert!(acc > 0.95, "skyline {acc}");
}

use std::sync::OnceLock;

use ssl_forge::data::{split, synth_generate, Example, SplitDataset, SplitSpec, SynthConfig, PIXELS};
use ssl_forge::model::{Classifier, Mode, Model, ModelConfig};
use ssl_forge::ssl::stack_images;
use ssl_forge::trainer::{evaluate, metrics_log, train, Method, TrainConfig};
use ssl_forge::Error;

fn tiny(method: Method, steps: usize, seed: u64) -> TrainConfig {
    TrainConfig {
        method,
        batch_size: 4,
        total_steps: steps,
        seed,
        ema_decay: 0.9,
        model: ModelConfig { block_filters: vec![2, 4, 4, 4], input_downsample: 8, seed, ..ModelConfig::default() },
        ssl: ssl_forge::ssl::SslConfig { mu: 1, ..Default::default() },
        ..TrainConfig::default()
    }
}

fn synth_split() -> &'static SplitDataset {
    static DATA: OnceLock<SplitDataset> = OnceLock::new();
    DATA.get_or_init(|| {
        let ex = synth_generate(&SynthConfig { n_examples: 120, ..SynthConfig::default() });
        split(&ex, &SplitSpec::balanced(10, 0)).unwrap()
    })
}

/// Class 1 images are uniformly brighter than class 0 images.
fn separable(n: usize, seed: u64) -> Vec<Example> {
    (0..n)
        .map(|i| {
            let label = (i % 2) as u8;
            let base = if label == 1 { 0.7 } else { 0.3 };
            let jitter = (((i as u64 * 2654435761 + seed) % 100) as f32 / 100.0 - 0.5) * 0.2;
            Example::new(vec![base + jitter; PIXELS], Some(label))
        })
        .collect()
}

#[test]
fn repeated_runs_are_bit_identical() {
    for method in Method::ALL {
        let cfg = tiny(method, 6, 3);
        let a = train(&cfg, synth_split()).unwrap();
        let b = train(&cfg, synth_split()).unwrap();
        assert_eq!(metrics_log(&a.metrics), metrics_log(&b.metrics), "{method}");
        assert_eq!(a.test_accuracy.to_bits(), b.test_accuracy.to_bits());
        assert_eq!(a.ema_model.params(), b.ema_model.params());
        let c = train(&tiny(method, 6, 4), synth_split()).unwrap();
        assert_ne!(metrics_log(&a.metrics), metrics_log(&c.metrics), "{method}: seed must matter");
    }
}

#[test]
fn supervised_ignores_unlabeled_data() {
    let cfg = tiny(Method::Supervised, 8, 1);
    let with = train(&cfg, synth_split()).unwrap();
    let without = train(&cfg, &synth_split().without_unlabeled()).unwrap();
    assert_eq!(metrics_log(&with.metrics), metrics_log(&without.metrics));
    assert_eq!(with.test_accuracy, without.test_accuracy);
}

#[test]
fn ssl_methods_need_unlabeled_data_and_all_need_labels() {
    let bare = synth_split().without_unlabeled();
    assert!(matches!(train(&tiny(Method::FixMatch, 2, 0), &bare), Err(Error::Config(_))));
    assert!(matches!(train(&tiny(Method::MixMatch, 2, 0), &bare), Err(Error::Config(_))));
    let mut none = synth_split().clone();
    none.labeled.clear();
    assert!(matches!(train(&tiny(Method::Supervised, 2, 0), &none), Err(Error::Config(_))));
}

#[test]
fn zero_steps_scores_the_initial_weights() {
    let cfg = tiny(Method::FixMatch, 0, 5);
    let out = train(&cfg, synth_split()).unwrap();
    assert!(out.metrics.is_empty());
    assert_eq!(metrics_log(&out.metrics), "");
    let init = Model::<f32>::build(&cfg.model).unwrap();
    assert_eq!(out.test_accuracy, evaluate(&init, &synth_split().test, 256).unwrap());
}

#[test]
fn metrics_log_has_one_line_per_step() {
    let out = train(&tiny(Method::FixMatch, 5, 2), synth_split()).unwrap();
    let log = metrics_log(&out.metrics);
    let lines: Vec<&str> = log.lines().collect();
    assert_eq!(lines.len(), 5);
    for (i, line) in lines.iter().enumerate() {
        let fields: Vec<&str> = line.split(',').collect();
        assert_eq!(fields.len(), 5);
        assert_eq!(fields[0], i.to_string());
        let mask: f64 = fields[3].parse().unwrap();
        assert!((0.0..=1.0).contains(&mask));
    }
    assert!(out.metrics.windows(2).all(|w| w[1].lr <= w[0].lr));
}

#[test]
fn labeled_loss_decreases_on_separable_data_and_ema_tracks_raw() {
    let ex = separable(200, 0);
    let data = split(&ex, &SplitSpec::balanced(20, 1)).unwrap();
    let cfg = TrainConfig { lr: Some(0.05), report_raw_accuracy: true, ..tiny(Method::Supervised, 500, 0) };
    let out = train(&cfg, &data).unwrap();
    let head: f64 = out.metrics[..20].iter().map(|m| m.ls).sum::<f64>() / 20.0;
    let tail: f64 = out.metrics[480..].iter().map(|m| m.ls).sum::<f64>() / 20.0;
    assert!(tail < head, "Ls {head} -> {tail}");
    let raw = out.raw_test_accuracy.unwrap();
    assert!(out.test_accuracy >= raw - 0.05, "ema {} raw {raw}", out.test_accuracy);
    assert!(raw > 0.9, "raw accuracy {raw}");
}

#[test]
fn eval_mode_is_batch_invariant() {
    let model = Model::<f32>::build(&ModelConfig { block_filters: vec![2, 4, 4, 4], input_downsample: 4, ..ModelConfig::default() }).unwrap();
    let images: Vec<_> = synth_split().test.iter().take(5).map(|e| e.image.clone()).collect();
    let all = model.predict(&stack_images(&images).unwrap(), Mode::Eval).unwrap();
    for (i, img) in images.iter().enumerate() {
        let one = model.predict(&stack_images(std::slice::from_ref(img)).unwrap(), Mode::Eval).unwrap();
        assert!((one[0].as_slice()[0] - all[i].as_slice()[0]).abs() < 1e-5);
    }
}

#[test]
fn null_signal_data_is_not_learnable() {
    let cfg = SynthConfig { n_examples: 400, noise_sigma: 0.0, damage_intensity: 0.0, positive_fraction: 0.5, ..SynthConfig::default() };
    let data = split(&synth_generate(&cfg), &SplitSpec::balanced(40, 0)).unwrap();
    let out = train(&tiny(Method::Supervised, 60, 0), &data).unwrap();
    assert!((out.test_accuracy - 0.5).abs() <= 0.2, "accuracy {}", out.test_accuracy);
}

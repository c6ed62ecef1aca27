use dfast_core::data::{make_splits, synth_generate, Cues, Dataset, Strategy, SynthSpec};
use dfast_core::model::{DFast, ModelConfig};
use dfast_core::nn::Named;
use dfast_core::train::{
    binary_auroc, compute_metrics, cosine_schedule, derive_seed, ovo_auroc, train, train_fold, train_step, Adam, Flow,
    MeanStd, TrainConfig,
};
use dfast_core::Tensor;
use proptest::prelude::*;

fn tiny_data(seed: u64) -> Dataset {
    let spec = SynthSpec {
        channels: 4,
        timepoints: 32,
        rate: 16.0,
        base_freq: 2.0,
        freq_step: 2.0,
        burst_freq: 5.0,
        trials_per_class: 12,
        subjects: 2,
        amplitude: 2.0,
        seed,
        ..SynthSpec::default()
    };
    synth_generate(&spec).unwrap()
}

fn tiny_train(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: 8,
        lr_start: 1e-2,
        lr_end: 1e-3,
        seed: 3,
        ..TrainConfig::default()
    }
}

#[test]
fn cosine_schedule_values() {
    assert_eq!(cosine_schedule(0, 200, 1e-4, 1e-5), 1e-4);
    assert!((cosine_schedule(200, 200, 1e-4, 1e-5) - 1e-5).abs() < 1e-18);
    assert!((cosine_schedule(100, 200, 1e-4, 1e-5) - 5.5e-5).abs() < 1e-15);
    let quarter = 1e-5 + 0.5 * 9e-5 * (1.0 + std::f64::consts::FRAC_1_SQRT_2);
    assert!((cosine_schedule(50, 200, 1e-4, 1e-5) - quarter).abs() < 1e-15);
    assert_eq!(cosine_schedule(500, 200, 1e-4, 1e-5), cosine_schedule(200, 200, 1e-4, 1e-5));
    let mut prev = f64::INFINITY;
    for s in 0..=200 {
        let lr = cosine_schedule(s, 200, 1e-4, 1e-5);
        assert!(lr <= prev);
        prev = lr;
    }
}

fn named(v: Vec<f64>) -> Vec<Named<f64>> {
    vec![Named {
        name: "theta".into(),
        value: Tensor::new(&[v.len()], v).unwrap(),
    }]
}

#[test]
fn adam_first_steps_match_hand_computation() {
    let mut p = named(vec![1.0, -2.0]);
    let mut adam = Adam::new(0.1);
    let g = Tensor::new(&[2], vec![0.5, -4.0]).unwrap();
    adam.step(&mut p, std::slice::from_ref(&g), 0.01);
    // bias-corrected moments equal g and g^2 after one step
    let want = [1.0 * (1.0 - 0.001) - 0.01 * 0.5 / (0.5 + 1e-8), -2.0 * (1.0 - 0.001) + 0.01 * 4.0 / (4.0 + 1e-8)];
    for (a, b) in p[0].value.data().iter().zip(want) {
        assert!((a - b).abs() < 1e-15, "{a} vs {b}");
    }
    let before = p[0].value.data().to_vec();
    adam.step(&mut p, &[g], 0.01);
    let (m, v) = (0.9 * 0.05 + 0.05, 0.999 * 0.00025 + 0.00025);
    let upd = 0.01 * (m / 0.19) / ((v / (1.0 - 0.999f64.powi(2))).sqrt() + 1e-8);
    assert!((p[0].value.data()[0] - (before[0] * 0.999 - upd)).abs() < 1e-15);
    assert_eq!(adam.steps_taken(), 2);
}

#[test]
fn adam_minimizes_a_quadratic() {
    let mut p = named(vec![3.0, -1.5, 0.25]);
    let mut adam = Adam::new(0.0);
    for step in 0..3000 {
        let g = p[0].value.map(|t| 2.0 * t);
        adam.step(&mut p, &[g], cosine_schedule(step, 3000, 0.05, 1e-4));
    }
    assert!(p[0].value.data().iter().all(|t| t.abs() < 1e-3), "{:?}", p[0].value.data());
}

#[test]
fn training_steps_reduce_the_batch_loss() {
    let ds = tiny_data(1);
    let batch: Vec<usize> = (0..ds.len()).step_by(2).collect();
    for seed in 0..20 {
        let mut model = DFast::<f32>::new(ModelConfig::tiny(), seed).unwrap();
        let mut adam = Adam::new(1e-4);
        let first = train_step(&mut model, &mut adam, &ds, &batch, 3e-3, seed).unwrap();
        let mut last = first;
        for _ in 0..9 {
            last = train_step(&mut model, &mut adam, &ds, &batch, 3e-3, seed).unwrap();
        }
        assert!(last < first, "seed {seed}: {first} -> {last}");
    }
}

#[test]
fn fold_training_is_deterministic() {
    let ds = tiny_data(2);
    let plan = make_splits(&ds, Strategy::StratifiedKFold(3), 4).unwrap();
    let cfg = ModelConfig { dropout: 0.2, ..ModelConfig::tiny() };
    let run = || train_fold(&cfg, &ds, &plan.folds[1], 1, &tiny_train(3), &mut |_| Flow::Continue).unwrap();
    let (a, b) = (run(), run());
    assert_eq!(a.history, b.history);
    assert_eq!(a.report, b.report);
    let (mut sa, mut sb) = (Vec::new(), Vec::new());
    a.model.save_state(&mut sa, a.init_seed).unwrap();
    b.model.save_state(&mut sb, b.init_seed).unwrap();
    assert_eq!(sa, sb);
    assert_eq!(a.init_seed, derive_seed(derive_seed(3, 1), 1));
}

#[test]
fn best_epoch_and_early_stop() {
    let ds = tiny_data(3);
    let plan = make_splits(&ds, Strategy::Loso, 0).unwrap();
    let mut seen = Vec::new();
    let out = train_fold(&ModelConfig::tiny(), &ds, &plan.folds[0], 0, &tiny_train(10), &mut |p| {
        seen.push(p.record.epoch);
        if p.record.epoch == 4 {
            Flow::Stop
        } else {
            Flow::Continue
        }
    })
    .unwrap();
    assert_eq!(seen, vec![1, 2, 3, 4]);
    assert_eq!(out.history.len(), 4);
    let best = out
        .history
        .iter()
        .filter_map(|r| r.eval.as_ref().map(|e| (r.epoch, e.accuracy)))
        .fold((0, -1.0), |b, (e, a)| if a > b.1 { (e, a) } else { b });
    assert_eq!(out.best_epoch, best.0);
    assert_eq!(out.report.accuracy, best.1);
}

#[test]
fn zero_epochs_evaluates_the_initial_model() {
    let ds = tiny_data(4);
    let plan = make_splits(&ds, Strategy::Loso, 0).unwrap();
    let out = train_fold(&ModelConfig::tiny(), &ds, &plan.folds[0], 0, &tiny_train(0), &mut |_| Flow::Continue).unwrap();
    assert_eq!(out.best_epoch, 0);
    assert_eq!(out.report.samples, plan.folds[0].eval.len());
    let fresh = DFast::<f32>::new(ModelConfig::tiny(), out.init_seed).unwrap();
    assert_eq!(fresh.store(), out.model.store());
}

#[test]
fn geometry_mismatch_is_a_config_error() {
    let ds = tiny_data(5);
    let plan = make_splits(&ds, Strategy::Loso, 0).unwrap();
    let cfg = ModelConfig { channels: 5, ..ModelConfig::tiny() };
    let err = train(&cfg, &ds, &plan, &tiny_train(1), &mut |_| Flow::Continue).err().unwrap();
    assert!(matches!(err, dfast_core::Error::Config(_)), "{err}");
}

#[test]
fn cross_validation_summary() {
    let ds = tiny_data(6);
    let plan = make_splits(&ds, Strategy::Loso, 0).unwrap();
    let out = train(&ModelConfig::tiny(), &ds, &plan, &tiny_train(2), &mut |_| Flow::Continue).unwrap();
    assert_eq!(out.folds.len(), 2);
    let accs: Vec<f64> = out.folds.iter().map(|f| f.report.accuracy).collect();
    assert_eq!(out.summary.accuracy, MeanStd::of(&accs).unwrap());
    assert_eq!(out.summary.best_epochs.len(), 2);
    let text = out.summary.to_text();
    assert!(text.starts_with("folds=2\n") && text.contains("accuracy="));
}

#[test]
fn mean_and_sample_std() {
    let m = MeanStd::of(&[0.5, 0.7, 0.9]).unwrap();
    assert!((m.mean - 0.7).abs() < 1e-15 && (m.std - 0.2).abs() < 1e-15);
    assert_eq!(MeanStd::of(&[0.4]).unwrap().std, 0.0);
    assert!(MeanStd::of(&[]).is_none());
}

#[test]
fn metric_hand_example() {
    // probabilities of class 1 for labels [1, 1, 0, 0]
    let p1 = [0.9, 0.4, 0.6, 0.1];
    let scores: Vec<f64> = p1.iter().flat_map(|&p| [1.0 - p, p]).collect();
    let r = compute_metrics(&scores, 2, &[1, 1, 0, 0], 1).unwrap();
    assert_eq!((r.tp, r.fn_, r.tn, r.fp), (1, 1, 1, 1));
    assert_eq!(r.accuracy, 0.5);
    assert_eq!(r.auroc, Some(0.75));
    assert_eq!(r.sensitivity, Some(0.5));
    assert_eq!(r.specificity, Some(0.5));
    assert_eq!(r.confusion, vec![vec![1, 1], vec![1, 1]]);
}

#[test]
fn metric_edge_cases() {
    let scores = [0.5, 0.5, 0.2, 0.8];
    let r = compute_metrics(&scores, 2, &[0, 0], 1).unwrap();
    assert_eq!(r.auroc, None);
    assert_eq!(r.sensitivity, None);
    // an exact tie predicts the lower class
    assert_eq!(r.confusion[0][0], 1);
    assert!(compute_metrics(&[], 2, &[], 1).is_err());
    assert!(compute_metrics(&scores, 2, &[0, 5], 1).is_err());
    assert!(compute_metrics(&scores, 2, &[0, 1], 2).is_err());
    assert!(r.to_text().contains("auroc=null"));
}

proptest! {
    #[test]
    fn two_class_ovo_equals_binary(p in prop::collection::vec(0.0f64..1.0, 2..40), flip in prop::collection::vec(prop::bool::ANY, 2..40)) {
        let n = p.len().min(flip.len());
        let mut labels: Vec<usize> = flip[..n].iter().map(|&f| usize::from(f)).collect();
        labels[0] = 0;
        labels[1] = 1;
        let scores: Vec<f64> = p[..n].iter().flat_map(|&q| [1.0 - q, q]).collect();
        let pos: Vec<f64> = (0..n).filter(|&i| labels[i] == 1).map(|i| p[i]).collect();
        let neg: Vec<f64> = (0..n).filter(|&i| labels[i] == 0).map(|i| p[i]).collect();
        let b = binary_auroc(&pos, &neg).unwrap();
        let o = ovo_auroc(&scores, 2, &labels).unwrap();
        prop_assert!((b - o).abs() < 1e-12);
    }

    #[test]
    fn swapping_the_positive_class_swaps_rates(p in prop::collection::vec(0.0f64..1.0, 4..30), seed in 0usize..1000) {
        let n = p.len();
        let labels: Vec<usize> = (0..n).map(|i| (i + seed) % 2).collect();
        let scores: Vec<f64> = p.iter().flat_map(|&q| [1.0 - q, q]).collect();
        let a = compute_metrics(&scores, 2, &labels, 1).unwrap();
        let b = compute_metrics(&scores, 2, &labels, 0).unwrap();
        prop_assert_eq!(a.sensitivity, b.specificity);
        prop_assert_eq!(a.specificity, b.sensitivity);
        prop_assert_eq!((a.tp, a.fp, a.tn, a.fn_), (b.tn, b.fn_, b.tp, b.fp));
        prop_assert_eq!(a.tp + a.fp + a.tn + a.fn_, n);
        let diag: usize = (0..2).map(|c| a.confusion[c][c]).sum();
        prop_assert!((a.accuracy - diag as f64 / n as f64).abs() < 1e-15);
    }
}

#[test]
fn balanced_cue_free_training_runs() {
    let spec = SynthSpec {
        cues: Cues::parse("none").unwrap(),
        channels: 4,
        timepoints: 32,
        rate: 16.0,
        trials_per_class: 6,
        ..SynthSpec::default()
    };
    let ds = synth_generate(&spec).unwrap();
    let plan = make_splits(&ds, Strategy::StratifiedKFold(2), 0).unwrap();
    let out = train(&ModelConfig::tiny(), &ds, &plan, &tiny_train(1), &mut |_| Flow::Continue).unwrap();
    assert!(out.folds.iter().all(|f| f.history.len() == 1));
}

//! Results must not depend on the number of worker threads.
#![cfg(feature = "parallel")]

use dfast_core::data::{make_splits, synth_generate, Strategy, SynthSpec};
use dfast_core::gradcheck::gradcheck;
use dfast_core::model::{DFast, ModelConfig};
use dfast_core::train::{train_fold, Flow, TrainConfig};
use dfast_core::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn with_threads<R: Send>(n: usize, f: impl FnOnce() -> R + Send) -> R {
    rayon::ThreadPoolBuilder::new().num_threads(n).build().unwrap().install(f)
}

#[test]
fn forward_is_thread_count_invariant() {
    let cfg = ModelConfig::mnred();
    let model = DFast::<f32>::new(cfg.clone(), 4).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = Tensor::randn(&[3, 1, cfg.channels, cfg.timepoints], &mut rng);
    let one = with_threads(1, || model.predict_proba(&x).unwrap());
    let four = with_threads(4, || model.predict_proba(&x).unwrap());
    assert_eq!(one, four);
}

#[test]
fn gradients_are_thread_count_invariant() {
    let a = with_threads(1, || gradcheck(&ModelConfig::tiny(), 2).unwrap());
    let b = with_threads(3, || gradcheck(&ModelConfig::tiny(), 2).unwrap());
    assert_eq!(a, b);
}

#[test]
fn training_and_synthesis_are_thread_count_invariant() {
    let spec = SynthSpec {
        channels: 4,
        timepoints: 32,
        rate: 16.0,
        base_freq: 2.0,
        freq_step: 2.0,
        burst_freq: 5.0,
        trials_per_class: 8,
        ..SynthSpec::default()
    };
    let cfg = TrainConfig { epochs: 2, batch_size: 4, ..TrainConfig::default() };
    let run = || {
        let ds = synth_generate(&spec).unwrap();
        let plan = make_splits(&ds, Strategy::StratifiedKFold(2), 0).unwrap();
        let out = train_fold(&ModelConfig::tiny(), &ds, &plan.folds[0], 0, &cfg, &mut |_| Flow::Continue).unwrap();
        let mut bytes = Vec::new();
        out.model.save_state(&mut bytes, out.init_seed).unwrap();
        (ds, out.history, bytes)
    };
    let a = with_threads(1, run);
    let b = with_threads(4, run);
    assert!(a == b);
}

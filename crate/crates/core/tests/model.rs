use dfast_core::model::{Aggregate, DFast, Framework, Fusion, ModelConfig, ModuleMask};
use dfast_core::{Error, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn input<T: dfast_core::Real>(cfg: &ModelConfig, b: usize, seed: u64) -> Tensor<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::randn(&[b, 1, cfg.channels, cfg.timepoints], &mut rng)
}

#[test]
fn mnred_shape_contract() {
    let cfg = ModelConfig::mnred();
    assert_eq!((cfg.channels, cfg.timepoints, cfg.rate, cfg.k), (30, 440, 128.0, 64));
    assert_eq!((cfg.windows, cfg.nodes, cfg.band, cfg.tau), (4, 30, 16, 0.6));
    assert_eq!((cfg.pool1, cfg.pool2), (4, 8));
    let plan = cfg.plan().unwrap();
    assert_eq!(plan.features, 24960);

    let model = DFast::<f32>::new(cfg.clone(), 0).unwrap();
    let mut s = model.session(false, 0);
    let xv = s.input(input(&cfg, 2, 0));
    let trace = model.forward(&mut s, xv).unwrap();
    assert_eq!(s.tape.shape(trace.z_f.unwrap()), [2, 64, 30, 110]);
    assert_eq!(s.tape.shape(trace.z_s.unwrap()), [2, 64, 30, 110]);
    assert_eq!(s.tape.shape(trace.z_fs), [2, 64, 110, 30]);
    assert_eq!(s.tape.shape(trace.z_t), [2, 64, 13, 30]);
    assert_eq!(s.tape.shape(trace.features), [2, 24960]);
    assert_eq!(s.tape.shape(trace.logits), [2, 2]);
    assert_eq!(s.tape.shape(trace.freq_attention.unwrap()), [2, 64]);
    assert_eq!(trace.connectogram.len(), 4);
    for a in &trace.connectogram {
        assert_eq!(s.tape.shape(*a), [2, 64, 30, 30]);
    }
    assert_eq!(s.tape.shape(trace.temporal_attention.unwrap()), [2, 64, 110, 110]);
}

#[test]
fn concat_fusion_doubles_width() {
    let cfg = ModelConfig {
        fusion: Fusion::Concat,
        ..ModelConfig::mnred()
    };
    let plan = cfg.plan().unwrap();
    assert_eq!((plan.width, plan.t2, plan.features), (60, 13, 64 * 13 * 60));
}

#[test]
fn parameter_count_matches_allocation() {
    let variants = [
        ModelConfig::tiny(),
        ModelConfig::mnred(),
        ModelConfig { framework: Framework::Serial, ..ModelConfig::tiny() },
        ModelConfig { fusion: Fusion::Concat, ..ModelConfig::tiny() },
        ModelConfig { aggregate: Aggregate::Attention, ..ModelConfig::tiny() },
        ModelConfig { modules: ModuleMask::only_ltsa(), ..ModelConfig::tiny() },
        ModelConfig { modules: ModuleMask::only_dca(), ..ModelConfig::mnred() },
    ];
    for cfg in variants {
        let model = DFast::<f32>::new(cfg.clone(), 1).unwrap();
        assert_eq!(cfg.parameter_count().unwrap(), model.store().scalar_count(), "{cfg:?}");
    }
}

#[test]
fn invalid_configs_are_rejected() {
    let bad = [
        ModelConfig { modules: ModuleMask { mva: false, dca: false, ltsa: false }, ..ModelConfig::tiny() },
        ModelConfig { k: 6, ..ModelConfig::tiny() },
        ModelConfig { tau: 0.0, ..ModelConfig::tiny() },
        ModelConfig { tau: 1.5, ..ModelConfig::tiny() },
        ModelConfig { qkv_kernel: 2, ..ModelConfig::tiny() },
        ModelConfig { pool2: 1000, ..ModelConfig::tiny() },
        ModelConfig { classes: 1, ..ModelConfig::tiny() },
        ModelConfig { dropout: 1.0, ..ModelConfig::tiny() },
    ];
    for cfg in bad {
        assert!(cfg.plan().is_err(), "{cfg:?}");
        assert!(DFast::<f32>::new(cfg, 0).is_err());
    }
}

#[test]
fn wrong_input_shape_is_an_error() {
    let cfg = ModelConfig::tiny();
    let model = DFast::<f32>::new(cfg.clone(), 0).unwrap();
    let x = Tensor::<f32>::zeros(&[1, 1, cfg.channels + 1, cfg.timepoints]);
    assert!(model.predict_proba(&x).is_err());
}

#[test]
fn probabilities_are_distributions() {
    let cfg = ModelConfig { classes: 3, ..ModelConfig::tiny() };
    let model = DFast::<f64>::new(cfg.clone(), 2).unwrap();
    let p = model.predict_proba(&input(&cfg, 5, 2)).unwrap();
    assert_eq!(p.shape(), [5, 3]);
    for row in p.data().chunks(3) {
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn same_seed_same_model() {
    let cfg = ModelConfig::tiny();
    let a = DFast::<f32>::new(cfg.clone(), 9).unwrap();
    let b = DFast::<f32>::new(cfg.clone(), 9).unwrap();
    let c = DFast::<f32>::new(cfg, 10).unwrap();
    let data = |m: &DFast<f32>| -> Vec<f32> { m.store().params().iter().flat_map(|p| p.value.data().to_vec()).collect() };
    assert_eq!(data(&a), data(&b));
    assert_ne!(data(&a), data(&c));
}

#[test]
fn single_module_models_ignore_the_framework() {
    for mask in [ModuleMask::only_mva(), ModuleMask::only_dca(), ModuleMask::only_ltsa()] {
        let d = ModelConfig { modules: mask, ..ModelConfig::tiny() };
        let s = ModelConfig { framework: Framework::Serial, ..d.clone() };
        let x = input::<f64>(&d, 3, 4);
        let pd = DFast::<f64>::new(d, 4).unwrap().predict_proba(&x).unwrap();
        let ps = DFast::<f64>::new(s, 4).unwrap().predict_proba(&x).unwrap();
        assert_eq!(pd.data(), ps.data(), "{mask:?}");
    }
}

#[test]
fn precision_cast_agrees() {
    let cfg = ModelConfig::tiny();
    let m64 = DFast::<f64>::new(cfg.clone(), 6).unwrap();
    let m32: DFast<f32> = m64.cast();
    let x = input::<f64>(&cfg, 2, 6);
    let p64 = m64.predict_proba(&x).unwrap();
    let p32 = m32.predict_proba(&x.cast()).unwrap();
    assert!(p64.max_abs_diff(&p32.cast()) < 1e-5);
}

#[test]
fn state_round_trip_is_exact() {
    let cfg = ModelConfig { aggregate: Aggregate::Attention, ..ModelConfig::tiny() };
    let model = DFast::<f32>::new(cfg.clone(), 21).unwrap();
    let mut bytes = Vec::new();
    model.save_state(&mut bytes, 21).unwrap();
    assert_eq!(&bytes[..4], b"DFST");
    let (loaded, seed) = DFast::<f32>::load_state(&mut bytes.as_slice()).unwrap();
    assert_eq!(seed, 21);
    assert_eq!(loaded.config(), &cfg);
    let mut again = Vec::new();
    loaded.save_state(&mut again, 21).unwrap();
    assert_eq!(bytes, again);
    let x = input(&cfg, 2, 21);
    assert_eq!(model.predict_proba(&x).unwrap(), loaded.predict_proba(&x).unwrap());
}

#[test]
fn damaged_state_files_are_rejected() {
    let model = DFast::<f32>::new(ModelConfig::tiny(), 1).unwrap();
    let mut bytes = Vec::new();
    model.save_state(&mut bytes, 1).unwrap();

    let mut wrong_magic = bytes.clone();
    wrong_magic[0] = b'X';
    assert!(matches!(DFast::<f32>::load_state(&mut wrong_magic.as_slice()), Err(Error::State(_))));

    let mut wrong_version = bytes.clone();
    wrong_version[4] = 99;
    assert!(matches!(DFast::<f32>::load_state(&mut wrong_version.as_slice()), Err(Error::State(_))));

    for cut in [2, 10, bytes.len() / 2, bytes.len() - 1] {
        let r = DFast::<f32>::load_state(&mut &bytes[..cut]);
        assert!(matches!(r, Err(Error::State(_))), "cut at {cut}");
    }

    let other = DFast::<f32>::new(ModelConfig { k: 4, ..ModelConfig::tiny() }, 1).unwrap();
    let mut target = DFast::<f32>::new(ModelConfig::tiny(), 1).unwrap();
    let mut other_bytes = Vec::new();
    other.save_state(&mut other_bytes, 1).unwrap();
    assert!(target.load_params(&mut other_bytes.as_slice()).is_err());
}

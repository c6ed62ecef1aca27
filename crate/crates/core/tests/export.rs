use dfast_core::export::{export_attention, rethreshold, window_energy, AttentionDump};
use dfast_core::model::{DFast, ModelConfig, ModuleMask};
use dfast_core::Tensor;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn signal(cfg: &ModelConfig, seed: u64) -> Tensor<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::randn(&[cfg.channels, cfg.timepoints], &mut rng)
}

#[test]
fn mnred_export_keeps_three_per_row_at_tau_view_point_one() {
    let cfg = ModelConfig::mnred();
    let model = DFast::<f32>::new(cfg.clone(), 8).unwrap();
    let dump = export_attention(&model, &signal(&cfg, 8), 0.1, "random", None).unwrap();
    assert_eq!(dump.windows.len(), 4);
    assert_eq!(dump.freq_attention.as_ref().unwrap().len(), 64);
    let fa = dump.freq_attention.as_ref().unwrap();
    assert!(fa.iter().all(|&w| w <= fa[dump.view_channel]));
    for w in &dump.windows {
        let (rows, cols, m) = w.connectogram.as_ref().unwrap();
        assert_eq!((*rows, *cols), (30, 30));
        for row in m.chunks(*cols) {
            let nz = row.iter().filter(|&&v| v != 0.0).count();
            assert!((1..=3).contains(&nz), "{nz} nonzeros");
            assert!((row.iter().sum::<f32>() - 1.0).abs() < 1e-5);
        }
        assert_eq!(w.energy.len(), 30);
    }
    let p: f32 = dump.probabilities.iter().sum();
    assert!((p - 1.0).abs() < 1e-5);
}

#[test]
fn text_round_trip() {
    let cfg = ModelConfig::tiny();
    let model = DFast::<f32>::new(cfg.clone(), 2).unwrap();
    let dump = export_attention(&model, &signal(&cfg, 2), 0.5, "trial 3 subject 1", Some(1)).unwrap();
    let text = dump.to_text();
    assert!(text.starts_with("dfast-attention 1\n"));
    assert_eq!(AttentionDump::parse(&text).unwrap(), dump);
    assert!(AttentionDump::parse("dfast-attention 2\n").is_err());
    assert!(AttentionDump::parse(&text[..text.len() / 2]).is_err());
}

#[test]
fn export_without_spatial_branch() {
    let cfg = ModelConfig { modules: ModuleMask::only_mva(), ..ModelConfig::tiny() };
    let model = DFast::<f32>::new(cfg.clone(), 1).unwrap();
    let dump = export_attention(&model, &signal(&cfg, 1), 0.1, "x", None).unwrap();
    assert!(dump.windows.iter().all(|w| w.connectogram.is_none()));
    assert_eq!(AttentionDump::parse(&dump.to_text()).unwrap(), dump);

    let cfg = ModelConfig { modules: ModuleMask::only_dca(), ..ModelConfig::tiny() };
    let model = DFast::<f32>::new(cfg.clone(), 1).unwrap();
    let dump = export_attention(&model, &signal(&cfg, 1), 0.1, "x", None).unwrap();
    assert_eq!((dump.view_channel, dump.freq_attention.is_none()), (0, true));
}

#[test]
fn export_rejects_bad_arguments() {
    let cfg = ModelConfig::tiny();
    let model = DFast::<f32>::new(cfg.clone(), 1).unwrap();
    assert!(export_attention(&model, &signal(&cfg, 1), 0.0, "x", None).is_err());
    assert!(export_attention(&model, &signal(&cfg, 1), 1.2, "x", None).is_err());
    let wrong = Tensor::<f32>::zeros(&[cfg.channels, cfg.timepoints + 1]);
    assert!(export_attention(&model, &wrong, 0.5, "x", None).is_err());
}

#[test]
fn window_energy_is_mean_square() {
    let x = Tensor::new(&[2, 6], vec![1.0, -1.0, 2.0, 0.0, 3.0, 3.0, 0.0, 0.0, 1.0, 1.0, -2.0, 2.0]).unwrap();
    assert_eq!(window_energy(&x, 3), vec![vec![1.0, 0.0], vec![2.0, 1.0], vec![9.0, 4.0]]);
}

proptest! {
    #[test]
    fn rethreshold_keeps_top_entries(n in 1usize..32, tau10 in 1usize..=10, seed in 0u64..500) {
        let tau = tau10 as f64 / 10.0;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let raw: Vec<f32> = Tensor::<f32>::uniform(&[3, n], 1.0, &mut rng).data().iter().map(|v| v.abs() + 1e-3).collect();
        let out = rethreshold(&raw, n, tau);
        if tau10 == 10 {
            prop_assert_eq!(&out, &raw);
        }
        let keep = ((tau * n as f64) - 1e-9).ceil().max(1.0) as usize;
        for (r, o) in raw.chunks(n).zip(out.chunks(n)) {
            let kept = o.iter().filter(|&&v| v != 0.0).count();
            prop_assert!(kept <= keep);
            if keep < n {
                prop_assert!((o.iter().sum::<f32>() - 1.0).abs() < 1e-5);
                let floor = r.iter().zip(o).filter(|(_, &v)| v != 0.0).map(|(&v, _)| v).fold(f32::INFINITY, f32::min);
                prop_assert!(r.iter().zip(o).filter(|(_, &v)| v == 0.0).all(|(&v, _)| v <= floor));
            }
        }
    }
}

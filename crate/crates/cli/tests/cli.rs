use std::path::Path;

use dfast_cli::{run, RunConfig};
use dfast_core::data::{load_dataset, save_dataset, synth_generate, Format, SynthSpec};
use dfast_core::export::AttentionDump;
use dfast_core::model::{Fusion, ModelConfig};

fn dfast(args: &[&str]) -> i32 {
    run(std::iter::once("dfast").chain(args.iter().copied()))
}

fn p(path: &Path) -> String {
    path.to_string_lossy().into_owned()
}

const TINY: &str = "[model]\nk = 8\nnodes = 4\nwindows = 2\nband = 4\npool1 = 2\npool2 = 4\n\n[train]\nepochs = 2\nbatch_size = 8\n";

/// A tiny dataset plus a config that fits it.
fn fixture(dir: &Path) -> (String, String) {
    let spec = SynthSpec {
        channels: 4,
        timepoints: 32,
        rate: 16.0,
        base_freq: 2.0,
        freq_step: 2.0,
        burst_freq: 5.0,
        trials_per_class: 8,
        subjects: 2,
        ..SynthSpec::default()
    };
    let data = dir.join("tiny.bin");
    save_dataset(&synth_generate(&spec).unwrap(), &data, Format::Bin).unwrap();
    let cfg = dir.join("tiny.toml");
    std::fs::write(&cfg, TINY).unwrap();
    (p(&data), p(&cfg))
}

#[test]
fn synth_writes_both_formats() {
    let dir = tempfile::tempdir().unwrap();
    let bin = dir.path().join("s.bin");
    let csv = dir.path().join("s.csv");
    let common = ["--channels", "6", "--timepoints", "64", "--trials-per-class", "5", "--subjects", "2", "--seed", "3"];
    let mut a = vec!["synth", "--out"];
    let bs = p(&bin);
    a.push(&bs);
    a.extend(common);
    assert_eq!(dfast(&a), 0);
    let cs = p(&csv);
    let mut b = vec!["synth", "--format", "csv", "--out", &cs];
    b.extend(common);
    assert_eq!(dfast(&b), 0);
    let (x, y) = (load_dataset(&bin, None).unwrap(), load_dataset(&csv, None).unwrap());
    assert_eq!(x.trials(), y.trials());
    assert_eq!(x.class_counts(), vec![5, 5]);
}

#[test]
fn usage_and_config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let (data, cfg) = fixture(dir.path());
    let out = p(&dir.path().join("o"));
    assert_eq!(dfast(&[]), 2);
    assert_eq!(dfast(&["frobnicate"]), 2);
    assert_eq!(dfast(&["train", "--out", &out]), 2, "missing dataset");
    assert_eq!(dfast(&["synth", "--out", &out, "--cues", "xyz"]), 2);
    assert_eq!(dfast(&["synth", "--out", &out, "--rate", "20"]), 2, "Nyquist");
    let base = ["train", "--config", &cfg, "--data", &data, "--out", &out];
    for extra in [
        &["--set", "model.nonsense=1"][..],
        &["--set", "model.k=abc"],
        &["--set", "model.k"],
        &["--fusion", "multiply"],
        &["--tau", "0"],
        &["--split", "kfold:1"],
        &["--split", "thirds"],
        &["--set", "model.channels=9"],
        &["--set", "model.k=6"],
        &["--batch-size", "0"],
    ] {
        let mut args = base.to_vec();
        args.extend_from_slice(extra);
        assert_eq!(dfast(&args), 2, "{extra:?}");
    }
    let bad_toml = dir.path().join("bad.toml");
    std::fs::write(&bad_toml, "[model]\nk = = 3\n").unwrap();
    assert_eq!(dfast(&["train", "--config", &p(&bad_toml), "--data", &data, "--out", &out]), 2);
    std::fs::write(&bad_toml, "[optimizer]\nlr = 1\n").unwrap();
    assert_eq!(dfast(&["train", "--config", &p(&bad_toml), "--data", &data, "--out", &out]), 2);
}

#[test]
fn io_and_data_errors_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let (_, cfg) = fixture(dir.path());
    let out = p(&dir.path().join("o"));
    let missing = p(&dir.path().join("missing.bin"));
    assert_eq!(dfast(&["train", "--config", &cfg, "--data", &missing, "--out", &out]), 3);
    let junk = dir.path().join("junk.bin");
    std::fs::write(&junk, b"DFSB\x01\x00\x00\x00\x04").unwrap();
    assert_eq!(dfast(&["train", "--config", &cfg, "--data", &p(&junk), "--out", &out]), 3);
    assert_eq!(dfast(&["train", "--config", &p(&dir.path().join("none.toml")), "--data", &missing, "--out", &out]), 3);
    assert_eq!(dfast(&["export-attention", "--model", &missing, "--data", &missing, "--trial-index", "0", "--out", &out]), 3);
}

fn read(path: &Path) -> Vec<u8> {
    std::fs::read(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

#[test]
fn train_outputs_are_complete_and_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let (data, cfg) = fixture(dir.path());
    let runs: Vec<_> = ["a", "b"].iter().map(|r| dir.path().join(r)).collect();
    for out in &runs {
        assert_eq!(dfast(&["train", "--config", &cfg, "--data", &data, "--split", "loso", "--out", &p(out)]), 0);
    }
    for f in 0..2 {
        for file in ["model.dfst", "report.txt", "report.json"] {
            let rel = format!("fold_{f}/{file}");
            assert_eq!(read(&runs[0].join(&rel)), read(&runs[1].join(&rel)), "{rel}");
        }
    }
    for file in ["summary.txt", "summary.json", "config.toml"] {
        assert_eq!(read(&runs[0].join(file)), read(&runs[1].join(file)), "{file}");
    }
    let summary = String::from_utf8(read(&runs[0].join("summary.txt"))).unwrap();
    assert!(summary.starts_with("split=loso\nfolds=2\n"), "{summary}");
    let report: serde_json::Value = serde_json::from_slice(&read(&runs[0].join("fold_0/report.json"))).unwrap();
    assert_eq!(report["history"].as_array().unwrap().len(), 2);
    assert!(report["report"]["accuracy"].is_number());

    let other = dir.path().join("c");
    assert_eq!(dfast(&["train", "--config", &cfg, "--data", &data, "--split", "loso", "--seed", "9", "--out", &p(&other)]), 0);
    assert_ne!(read(&runs[0].join("fold_0/model.dfst")), read(&other.join("fold_0/model.dfst")));
}

#[test]
fn effective_config_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let (data, cfg) = fixture(dir.path());
    let out = dir.path().join("run");
    let args = ["train", "--config", &cfg, "--data", &data, "--fusion", "concat", "--set", "model.tau=0.5", "--epochs", "1", "--split", "kfold:2", "--out"];
    let mut a = args.to_vec();
    let os = p(&out);
    a.push(&os);
    assert_eq!(dfast(&a), 0);
    let echoed = out.join("config.toml");
    let mut back = RunConfig::default();
    back.apply_file(&echoed).unwrap();
    assert_eq!(back.model.fusion, Fusion::Concat);
    assert_eq!((back.model.tau, back.model.k, back.train.epochs), (0.5, 8, 1));
    assert_eq!((back.model.channels, back.model.timepoints, back.model.rate), (4, 32, 16.0));
    assert_eq!(back.to_toml(), std::fs::read_to_string(&echoed).unwrap());
}

#[test]
fn run_config_set_and_modules() {
    let mut rc = RunConfig::default();
    rc.set("model.modules", "mva, ltsa").unwrap();
    assert!(rc.model.modules.mva && !rc.model.modules.dca && rc.model.modules.ltsa);
    rc.set("train.lr_start", "3e-4").unwrap();
    assert_eq!(rc.train.lr_start, 3e-4);
    rc.set("model.gate", "ECA").unwrap();
    rc.set_pair("split=loso").unwrap();
    assert!(rc.to_toml().contains("model.modules = \"mva,ltsa\""));
    assert!(rc.set("model.modules", "attention").is_err());
    assert!(rc.set("train.epochs", "-1").is_err());
    assert!(rc.set("train.epochs", "2.5").is_err());
    assert!(rc.set_pair("novalue").is_err());
    assert_eq!(rc.model, ModelConfig { gate: rc.model.gate, modules: rc.model.modules, ..ModelConfig::mnred() });
}

#[test]
fn export_attention_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let (data, cfg) = fixture(dir.path());
    let out = dir.path().join("run");
    assert_eq!(dfast(&["train", "--config", &cfg, "--data", &data, "--split", "kfold:2", "--epochs", "1", "--out", &p(&out)]), 0);
    let model = p(&out.join("fold_0/model.dfst"));
    let dump_path = dir.path().join("att.txt");
    assert_eq!(dfast(&["export-attention", "--model", &model, "--data", &data, "--trial-index", "3", "--tau-view", "0.5", "--out", &p(&dump_path)]), 0);
    let dump = AttentionDump::parse(&std::fs::read_to_string(&dump_path).unwrap()).unwrap();
    assert_eq!((dump.channels, dump.k, dump.windows.len()), (4, 8, 2));
    for w in &dump.windows {
        let (_, cols, m) = w.connectogram.as_ref().unwrap();
        assert!(m.iter().any(|&v| v != 0.0));
        for row in m.chunks(*cols) {
            assert!(row.iter().filter(|&&v| v != 0.0).count() <= 2);
        }
        assert!(w.energy.iter().all(|&e| e > 0.0));
    }
    let avg = dir.path().join("avg.txt");
    assert_eq!(dfast(&["export-attention", "--model", &model, "--data", &data, "--class-average", "1", "--out", &p(&avg)]), 0);
    assert!(std::fs::read_to_string(&avg).unwrap().contains("source class-average 1 over 8 trials"));

    let o = p(&avg);
    assert_eq!(dfast(&["export-attention", "--model", &model, "--data", &data, "--trial-index", "99", "--out", &o]), 2);
    assert_eq!(dfast(&["export-attention", "--model", &model, "--data", &data, "--class-average", "5", "--out", &o]), 2);
    assert_eq!(dfast(&["export-attention", "--model", &model, "--data", &data, "--out", &o]), 2);
    assert_eq!(dfast(&["export-attention", "--model", &model, "--data", &data, "--trial-index", "0", "--tau-view", "2", "--out", &o]), 2);

    let other = dir.path().join("other.bin");
    let spec = SynthSpec { channels: 6, timepoints: 32, rate: 16.0, base_freq: 2.0, freq_step: 2.0, burst_freq: 5.0, trials_per_class: 2, ..SynthSpec::default() };
    save_dataset(&synth_generate(&spec).unwrap(), &other, Format::Bin).unwrap();
    assert_eq!(dfast(&["export-attention", "--model", &model, "--data", &p(&other), "--trial-index", "0", "--out", &o]), 3);
}

#[test]
fn gradcheck_honours_mode_keys() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("g.toml");
    std::fs::write(&cfg, "[model]\nframework = \"serial\"\ngate = \"eca\"\naggregate = \"attention\"\nk = 64\n").unwrap();
    assert_eq!(dfast(&["gradcheck", "--config", &p(&cfg)]), 0);
    let rc = {
        let mut rc = RunConfig { model: ModelConfig::tiny(), ..RunConfig::default() };
        rc.apply_file(&cfg).unwrap();
        rc
    };
    let model = dfast_cli::gradcheck_model(&rc);
    assert_eq!(model.k, ModelConfig::tiny().k, "sizes stay tiny");
    std::fs::write(&cfg, "[model]\ngate = \"softmax\"\n").unwrap();
    assert_eq!(dfast(&["gradcheck", "--config", &p(&cfg)]), 2);
}

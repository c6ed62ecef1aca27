//! The `dfast` command line: dataset synthesis, cross-validated training,
//! gradient checking and attention export.
//!
//! Exit codes: 0 success, 1 failed check or runtime failure, 2 usage or
//! configuration error, 3 I/O or data error.

pub mod config;

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use dfast_core::data::{load_dataset, make_splits, save_dataset, synth_generate, Cues, Format, Strategy, SynthSpec};
use dfast_core::export::export_attention;
use dfast_core::gradcheck::gradcheck;
use dfast_core::model::{DFast, ModelConfig};
use dfast_core::train::{train_fold, Flow, FoldOutcome, Summary};
use serde_json::json;

pub use config::RunConfig;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("configuration: {0}")]
    Config(String),
    #[error("{0}")]
    Io(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Check(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Check(_) | CliError::Runtime(_) => 1,
            CliError::Usage(_) | CliError::Config(_) => 2,
            CliError::Io(_) | CliError::Data(_) => 3,
        }
    }
}

impl From<dfast_core::Error> for CliError {
    fn from(e: dfast_core::Error) -> Self {
        use dfast_core::Error as E;
        match e {
            E::Config(c) => CliError::Config(c.to_string()),
            E::Io(io) => CliError::Io(io.to_string()),
            E::Data(d) => CliError::Data(d.to_string()),
            E::State(s) => CliError::Data(format!("model state: {s}")),
            E::Tensor(t) => CliError::Runtime(t.to_string()),
        }
    }
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

#[derive(Parser, Debug)]
#[command(name = "dfast", version, about = "Frequency-spatial-temporal attention decoder for multichannel signals")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic dataset.
    Synth(SynthArgs),
    /// Cross-validated training and evaluation.
    Train(TrainArgs),
    /// Compare every parameter gradient of a tiny model with finite differences.
    Gradcheck(GradcheckArgs),
    /// Dump frequency weights, connectograms and window energy for one trial.
    ExportAttention(ExportArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum FileFormat {
    Bin,
    Csv,
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 2)]
    classes: usize,
    #[arg(long, default_value_t = 2)]
    subjects: usize,
    #[arg(long, default_value_t = 200)]
    trials_per_class: usize,
    #[arg(long, default_value_t = 30)]
    channels: usize,
    #[arg(long, default_value_t = 440)]
    timepoints: usize,
    #[arg(long, default_value_t = 128.0)]
    rate: f64,
    /// Subset of `abc`: a frequency, b spatial, c temporal; or `none`.
    #[arg(long, default_value = "abc")]
    cues: String,
    /// Share of all trials assigned to class 0.
    #[arg(long)]
    imbalance: Option<f64>,
    /// Cue amplitude relative to the unit-variance background.
    #[arg(long, default_value_t = 1.0)]
    amplitude: f64,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long, value_enum, default_value = "bin")]
    format: FileFormat,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset file (dfst-bin or csv manifest); overrides `data.path`.
    #[arg(long)]
    data: Option<PathBuf>,
    /// `loso` or `kfold:<k>`; overrides `split`.
    #[arg(long)]
    split: Option<String>,
    #[arg(long)]
    out: PathBuf,
    /// Any configuration key, e.g. `--set model.k=32`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
    #[arg(long)]
    framework: Option<String>,
    #[arg(long)]
    fusion: Option<String>,
    #[arg(long)]
    aggregate: Option<String>,
    #[arg(long)]
    modules: Option<String>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct GradcheckArgs {
    /// Mode keys (tau, gate, merge, fusion, aggregate, framework, modules,
    /// qkv_kernel, dropout) are taken from here; sizes stay tiny.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct ExportArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, conflicts_with = "class_average", required_unless_present = "class_average")]
    trial_index: Option<usize>,
    /// Average every trial of this class instead of a single trial.
    #[arg(long)]
    class_average: Option<usize>,
    #[arg(long, default_value_t = 0.1)]
    tau_view: f64,
    #[arg(long)]
    out: PathBuf,
}

/// Parses `args` (including the program name) and runs the command,
/// returning the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let result = match cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Train(a) => cmd_train(a),
        Command::Gradcheck(a) => cmd_gradcheck(a),
        Command::ExportAttention(a) => cmd_export(a),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn cmd_synth(a: SynthArgs) -> Result<(), CliError> {
    let cues = Cues::parse(&a.cues).map_err(|e| CliError::Usage(e.to_string()))?;
    let spec = SynthSpec {
        classes: a.classes,
        subjects: a.subjects,
        trials_per_class: a.trials_per_class,
        channels: a.channels,
        timepoints: a.timepoints,
        rate: a.rate,
        cues,
        imbalance: a.imbalance,
        amplitude: a.amplitude,
        seed: a.seed,
        ..SynthSpec::default()
    };
    let ds = synth_generate(&spec).map_err(|e| CliError::Usage(e.to_string()))?;
    let format = match a.format {
        FileFormat::Bin => Format::Bin,
        FileFormat::Csv => Format::Csv,
    };
    save_dataset(&ds, &a.out, format)?;
    let hist: Vec<String> = ds
        .class_counts()
        .iter()
        .enumerate()
        .map(|(c, n)| format!("{c}:{n}"))
        .collect();
    println!(
        "wrote {} trials ({} x {} at {} Hz, cues {}) to {}",
        ds.len(),
        ds.channels,
        ds.timepoints,
        ds.rate,
        cues.label(),
        a.out.display()
    );
    println!("class histogram {}", hist.join(" "));
    Ok(())
}

fn resolve_train_config(a: &TrainArgs) -> Result<RunConfig, CliError> {
    let mut rc = RunConfig::default();
    if let Some(p) = &a.config {
        rc.apply_file(p)?;
    }
    let named = [
        ("model.framework", a.framework.clone()),
        ("model.fusion", a.fusion.clone()),
        ("model.aggregate", a.aggregate.clone()),
        ("model.modules", a.modules.clone()),
        ("model.tau", a.tau.map(|v| v.to_string())),
        ("train.epochs", a.epochs.map(|v| v.to_string())),
        ("train.batch_size", a.batch_size.map(|v| v.to_string())),
        ("train.seed", a.seed.map(|v| v.to_string())),
    ];
    for (k, v) in named {
        if let Some(v) = v {
            rc.set(k, &v)?;
        }
    }
    for s in &a.sets {
        rc.set_pair(s)?;
    }
    if let Some(d) = &a.data {
        rc.data = Some(d.clone());
    }
    if let Some(s) = &a.split {
        rc.set("split", s)?;
    }
    Ok(rc)
}

fn write_file(path: &Path, contents: &[u8]) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|e| io_err(path, e))
}

fn fold_json(out: &FoldOutcome) -> serde_json::Value {
    json!({
        "fold": out.index,
        "best_epoch": out.best_epoch,
        "init_seed": out.init_seed,
        "report": out.report,
        "history": out.history,
    })
}

fn cmd_train(a: TrainArgs) -> Result<(), CliError> {
    let mut rc = resolve_train_config(&a)?;
    let data = rc
        .data
        .clone()
        .ok_or_else(|| CliError::Usage("no dataset: pass --data or set data.path".into()))?;
    let ds = load_dataset(&data, None)?;
    rc.bind_geometry(ds.channels, ds.timepoints, ds.classes, ds.rate)?;
    rc.model.plan().map_err(|e| CliError::Config(e.to_string()))?;
    rc.train.validate().map_err(|e| CliError::Config(e.to_string()))?;
    let plan = make_splits(&ds, rc.split, rc.train.seed).map_err(|e| CliError::Config(e.to_string()))?;

    fs::create_dir_all(&a.out).map_err(|e| io_err(&a.out, e))?;
    let echoed = rc.to_toml();
    eprint!("{echoed}");
    write_file(&a.out.join("config.toml"), echoed.as_bytes())?;

    let started = Instant::now();
    let mut folds = Vec::with_capacity(plan.folds.len());
    for (i, fold) in plan.folds.iter().enumerate() {
        let mut observer = |p: &dfast_core::train::Progress<'_>| {
            let acc = p.record.eval.as_ref().map_or("-".into(), |r| format!("{:.4}", r.accuracy));
            let loss = p.record.train_loss.map_or("-".into(), |l| format!("{l:.4}"));
            log::info!(
                "fold {} epoch {}/{} loss {loss} eval_acc {acc} ({:.0}s)",
                p.fold,
                p.record.epoch,
                p.epochs,
                started.elapsed().as_secs_f64()
            );
            Flow::Continue
        };
        let outcome = train_fold(&rc.model, &ds, fold, i, &rc.train, &mut observer)?;
        let dir = a.out.join(format!("fold_{i}"));
        fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
        let mut state = Vec::new();
        outcome.model.save_state(&mut state, outcome.init_seed)?;
        write_file(&dir.join("model.dfst"), &state)?;
        let text = format!("fold={i}\nbest_epoch={}\n{}", outcome.best_epoch, outcome.report.to_text());
        write_file(&dir.join("report.txt"), text.as_bytes())?;
        let js = serde_json::to_vec_pretty(&fold_json(&outcome)).expect("serializable");
        write_file(&dir.join("report.json"), &js)?;
        println!(
            "fold {i}: best epoch {} accuracy {:.4} auroc {}",
            outcome.best_epoch,
            outcome.report.accuracy,
            outcome.report.auroc.map_or("null".into(), |v| format!("{v:.4}"))
        );
        folds.push(outcome);
    }
    let summary = Summary::from_folds(&folds).ok_or_else(|| CliError::Config("split plan has no folds".into()))?;
    let text = format!("split={}\n{}", plan.strategy, summary.to_text());
    write_file(&a.out.join("summary.txt"), text.as_bytes())?;
    let js = serde_json::to_vec_pretty(&json!({ "split": plan.strategy.to_string(), "summary": summary })).expect("serializable");
    write_file(&a.out.join("summary.json"), &js)?;
    print!("{text}");
    let _ = std::io::stdout().flush();
    Ok(())
}

/// The tiny gradient-check model with mode keys from `rc`.
pub fn gradcheck_model(rc: &RunConfig) -> ModelConfig {
    let m = &rc.model;
    ModelConfig {
        tau: m.tau,
        gate: m.gate,
        merge: m.merge,
        fusion: m.fusion,
        aggregate: m.aggregate,
        framework: m.framework,
        modules: m.modules,
        qkv_kernel: m.qkv_kernel,
        dropout: m.dropout,
        ..ModelConfig::tiny()
    }
}

fn cmd_gradcheck(a: GradcheckArgs) -> Result<(), CliError> {
    let mut rc = RunConfig {
        model: ModelConfig::tiny(),
        ..RunConfig::default()
    };
    if let Some(p) = &a.config {
        rc.apply_file(p)?;
    }
    let cfg = gradcheck_model(&rc);
    let started = Instant::now();
    let report = gradcheck(&cfg, a.seed)?;
    for (module, err) in report.modules() {
        println!("{module:<12} max relative error {err:.3e}");
    }
    let failures = report.failures();
    for f in &failures {
        println!(
            "FAIL {} [{}]: analytic {:.6e} numeric {:.6e} relative error {:.3e}",
            f.name, f.worst_index, f.analytic, f.numeric, f.max_rel_err
        );
    }
    println!(
        "{} parameters, max relative error {:.3e} (tolerance {:.0e}), {:.1}s",
        report.params.len(),
        report.max_error(),
        report.tolerance,
        started.elapsed().as_secs_f64()
    );
    if failures.is_empty() {
        println!("gradcheck passed");
        Ok(())
    } else {
        let names: Vec<&str> = failures.iter().map(|f| f.name.as_str()).collect();
        Err(CliError::Check(format!("gradient mismatch in {}", names.join(", "))))
    }
}

fn cmd_export(a: ExportArgs) -> Result<(), CliError> {
    let mut file = fs::File::open(&a.model).map_err(|e| io_err(&a.model, e))?;
    let (model, _) = DFast::<f32>::load_state(&mut std::io::BufReader::new(&mut file))?;
    let ds = load_dataset(&a.data, None)?;
    let cfg = model.config();
    if cfg.channels != ds.channels || cfg.timepoints != ds.timepoints {
        return Err(CliError::Data(format!(
            "model expects {} x {} signals, the dataset holds {} x {}",
            cfg.channels, cfg.timepoints, ds.channels, ds.timepoints
        )));
    }
    let (x, source, label) = match (a.trial_index, a.class_average) {
        (Some(i), _) => {
            let t = ds.trials().get(i).ok_or_else(|| {
                CliError::Usage(format!("trial index {i} out of range for {} trials", ds.len()))
            })?;
            (t.x.clone(), format!("trial {i} subject {}", t.subject), Some(t.label))
        }
        (None, Some(c)) => {
            let members: Vec<usize> = (0..ds.len()).filter(|&i| ds.trials()[i].label == c).collect();
            let x = ds
                .average(&members)
                .ok_or_else(|| CliError::Usage(format!("class {c} has no trials")))?;
            (x, format!("class-average {c} over {} trials", members.len()), Some(c))
        }
        (None, None) => return Err(CliError::Usage("pass --trial-index or --class-average".into())),
    };
    if !(a.tau_view > 0.0 && a.tau_view <= 1.0) {
        return Err(CliError::Usage(format!("--tau-view {} must lie in (0, 1]", a.tau_view)));
    }
    let dump = export_attention(&model, &x, a.tau_view, source, label)?;
    write_file(&a.out, dump.to_text().as_bytes())?;
    println!(
        "wrote attention for {} ({} windows, view channel {}) to {}",
        dump.source,
        dump.windows.len(),
        dump.view_channel,
        a.out.display()
    );
    Ok(())
}

/// Kept for callers that build splits outside `train`.
pub fn parse_split(s: &str) -> Result<Strategy, CliError> {
    s.parse().map_err(|e: dfast_core::DataError| CliError::Usage(e.to_string()))
}

//! The full decoder: frequency and spatial branches, fusion, temporal
//! attention, aggregation and the linear classifier head.

mod state;

pub use state::{STATE_MAGIC, STATE_VERSION};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::Var;
use crate::dca::{trimmed_length, Dca, DcaConfig, WindowMerge};
use crate::error::{ConfigError, TensorError};
use crate::ltsa::{Ltsa, LtsaConfig};
use crate::mva::{GateKind, Mva, MvaConfig};
use crate::nn::{Conv, Init, Linear, ParamStore, Session, SpatialProjection};
use crate::ops::softmax_rows;
use crate::real::Real;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Fusion {
    #[default]
    Add,
    /// Join along the spatial axis, doubling the node count.
    Concat,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Aggregate {
    #[default]
    Flatten,
    Mean,
    Attention,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Framework {
    /// Frequency and spatial branches both read the raw input.
    #[default]
    Disentangled,
    /// Frequency, spatial and temporal stages chained one after another.
    Serial,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModuleMask {
    pub mva: bool,
    pub dca: bool,
    pub ltsa: bool,
}

impl Default for ModuleMask {
    fn default() -> Self {
        ModuleMask {
            mva: true,
            dca: true,
            ltsa: true,
        }
    }
}

impl ModuleMask {
    pub fn only_mva() -> Self {
        ModuleMask {
            mva: true,
            dca: false,
            ltsa: false,
        }
    }

    pub fn only_dca() -> Self {
        ModuleMask {
            mva: false,
            dca: true,
            ltsa: false,
        }
    }

    pub fn only_ltsa() -> Self {
        ModuleMask {
            mva: false,
            dca: false,
            ltsa: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Signal channels `N`.
    pub channels: usize,
    /// Samples per trial `T`.
    pub timepoints: usize,
    pub classes: usize,
    /// Sampling rate in Hz.
    pub rate: f64,
    pub k: usize,
    /// Virtual node count `N'`.
    pub nodes: usize,
    /// Connectogram windows `h`.
    pub windows: usize,
    pub tau: f64,
    /// Temporal band width `w`.
    pub band: usize,
    pub pool1: usize,
    pub pool2: usize,
    pub qkv_kernel: usize,
    pub dropout: f64,
    pub gate: GateKind,
    pub merge: WindowMerge,
    pub fusion: Fusion,
    pub aggregate: Aggregate,
    pub framework: Framework,
    pub modules: ModuleMask,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig::mnred()
    }
}

/// Derived tensor extents for one configuration.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Plan {
    /// Input length after trimming to whole windows.
    pub timepoints: usize,
    /// Spatial width entering the temporal stage.
    pub width: usize,
    /// Temporal length entering the temporal stage.
    pub t1: usize,
    /// Temporal length after the temporal stage.
    pub t2: usize,
    /// Feature length fed to the classifier.
    pub features: usize,
}

impl ModelConfig {
    /// 30 channels, 440 samples at 128 Hz, two classes.
    pub fn mnred() -> Self {
        ModelConfig {
            channels: 30,
            timepoints: 440,
            classes: 2,
            rate: 128.0,
            k: 64,
            nodes: 30,
            windows: 4,
            tau: 0.6,
            band: 16,
            pool1: 4,
            pool2: 8,
            qkv_kernel: 3,
            dropout: 0.1,
            gate: GateKind::Se,
            merge: WindowMerge::Concat,
            fusion: Fusion::Add,
            aggregate: Aggregate::Flatten,
            framework: Framework::Disentangled,
            modules: ModuleMask::default(),
        }
    }

    /// The smallest configuration that still exercises every module.
    pub fn tiny() -> Self {
        ModelConfig {
            channels: 4,
            timepoints: 32,
            classes: 2,
            rate: 16.0,
            k: 8,
            nodes: 4,
            windows: 2,
            tau: 0.6,
            band: 4,
            pool1: 2,
            pool2: 4,
            qkv_kernel: 3,
            dropout: 0.0,
            ..ModelConfig::mnred()
        }
    }

    fn trims_to_windows(&self) -> bool {
        self.modules.dca && (self.framework == Framework::Disentangled || !self.modules.mva)
    }

    fn mva_config(&self, timepoints: usize) -> MvaConfig {
        MvaConfig {
            k: self.k,
            rate: self.rate,
            channels: self.channels,
            nodes: self.nodes,
            timepoints,
            pool1: self.pool1,
            gate: self.gate,
            dropout: self.dropout,
        }
    }

    fn dca_config(&self, timepoints: usize) -> DcaConfig {
        let lifted = !(self.framework == Framework::Serial && self.modules.mva);
        let timepoints = if lifted {
            timepoints
        } else {
            trimmed_length(timepoints / self.pool1, self.windows)
        };
        DcaConfig {
            k: self.k,
            windows: self.windows,
            tau: self.tau,
            channels: if lifted { self.channels } else { self.nodes },
            nodes: self.nodes,
            timepoints,
            scale_length: timepoints,
            pool1: if lifted { self.pool1 } else { 1 },
            merge: self.merge,
            dropout: self.dropout,
            lift: lifted,
        }
    }

    fn ltsa_config(&self, plan: &Plan) -> LtsaConfig {
        LtsaConfig {
            k: self.k,
            nodes: plan.width,
            t1: plan.t1,
            band: self.band,
            pool2: self.pool2,
            qkv_kernel: self.qkv_kernel,
            dropout: self.dropout,
        }
    }

    /// Validates the configuration and derives every stage's extents.
    pub fn plan(&self) -> Result<Plan, ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        let m = self.modules;
        if !(m.mva || m.dca || m.ltsa) {
            return bad("at least one module must be enabled".into());
        }
        if self.classes < 2 {
            return bad(format!("need at least 2 classes, got {}", self.classes));
        }
        if self.channels == 0 || self.timepoints == 0 || self.k == 0 || self.nodes == 0 {
            return bad("N, T, k and N' must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout = {} must lie in [0, 1)", self.dropout));
        }
        if self.windows == 0 || self.windows > self.timepoints {
            return bad(format!("window count h = {} out of range", self.windows));
        }
        if self.pool1 == 0 || self.pool1 > self.timepoints {
            return bad(format!("pool1 = {} out of range", self.pool1));
        }
        let timepoints = if self.trims_to_windows() {
            trimmed_length(self.timepoints, self.windows)
        } else {
            self.timepoints
        };
        if m.mva {
            self.mva_config(timepoints).validate()?;
        }
        let mut t1 = timepoints / self.pool1;
        if m.dca {
            let dc = self.dca_config(timepoints);
            dc.validate()?;
            if !dc.lift {
                t1 = dc.timepoints;
            }
        }
        if t1 == 0 {
            return bad("temporal length collapses to zero after pooling".into());
        }
        let both = m.mva && m.dca && self.framework == Framework::Disentangled;
        let width = if both && self.fusion == Fusion::Concat {
            2 * self.nodes
        } else {
            self.nodes
        };
        let mut plan = Plan {
            timepoints,
            width,
            t1,
            t2: t1,
            features: 0,
        };
        if m.ltsa {
            let lc = self.ltsa_config(&plan);
            lc.validate()?;
            plan.t2 = lc.t2();
        }
        plan.features = match self.aggregate {
            Aggregate::Flatten => self.k * plan.t2 * width,
            Aggregate::Mean | Aggregate::Attention => self.k * width,
        };
        Ok(plan)
    }

    /// Number of learnable scalars, derived from the configuration alone.
    pub fn parameter_count(&self) -> Result<usize, ConfigError> {
        let plan = self.plan()?;
        let (k, n, np) = (self.k, self.channels, self.nodes);
        let proj = |nin: usize| k * np * nin;
        let bn = 2 * k;
        let mut total = 0;
        if self.modules.mva {
            let mc = self.mva_config(plan.timepoints);
            let b1: usize = mc.block1_lengths().iter().map(|l| 2 * l + 2).sum();
            let b2: usize = mc.block2_lengths().iter().map(|l| 4 * 2 * l + 4).sum();
            let gate = match self.gate {
                GateKind::Se => k * k + k,
                GateKind::Eca => 3 + 1,
            };
            total += b1 + b2 + bn + gate + proj(n);
        }
        if self.modules.dca {
            let dc = self.dca_config(plan.timepoints);
            let lift = if dc.lift { 3 * k + k } else { 0 };
            let small = (1 + 2 + 3) * k + 3 * k;
            total += lift + proj(dc.channels) + 2 * small + bn;
        }
        if !self.modules.mva && !self.modules.dca {
            total += k + k + proj(n);
        }
        if self.modules.ltsa {
            let e = k * plan.width;
            total += 3 * (e * self.qkv_kernel + e) + bn;
        }
        if self.aggregate == Aggregate::Attention {
            total += k * plan.width;
        }
        total += plan.features * self.classes + self.classes;
        Ok(total)
    }
}

/// Every intermediate of one forward pass that callers may inspect.
pub struct Trace {
    pub logits: Var,
    /// Aggregated features `[B, D]`.
    pub features: Var,
    /// Frequency branch output `[B, k, N', T1]`.
    pub z_f: Option<Var>,
    /// Spatial branch output `[B, k, N', T1]`.
    pub z_s: Option<Var>,
    /// Fused, transposed input of the temporal stage `[B, k, T1, N'']`.
    pub z_fs: Var,
    /// Temporal stage output `[B, k, T2, N'']`.
    pub z_t: Var,
    /// View gate weights `[B, k]`.
    pub freq_attention: Option<Var>,
    /// Per-window connectograms `[B, k, N', N]`.
    pub connectogram: Vec<Var>,
    /// Banded temporal attention `[B, k, T1, T1]`.
    pub temporal_attention: Option<Var>,
}

/// Stand-in for both feature branches when both are disabled.
struct Adapter {
    lift: Conv,
    proj: SpatialProjection,
    pool: usize,
}

enum Head {
    Flatten,
    Mean,
    Attention(Linear),
}

pub struct DFast<T> {
    cfg: ModelConfig,
    plan: Plan,
    store: ParamStore<T>,
    mva: Option<Mva>,
    dca: Option<Dca>,
    ltsa: Option<Ltsa>,
    adapter: Option<Adapter>,
    head: Head,
    classifier: Linear,
}

impl<T: Real> DFast<T> {
    /// Builds and initializes a model; `seed` drives the initial weights.
    pub fn new(cfg: ModelConfig, seed: u64) -> Result<Self, ConfigError> {
        let plan = cfg.plan()?;
        if plan.timepoints != cfg.timepoints {
            log::warn!(
                "trimming {} timepoints to {} so they split into {} windows",
                cfg.timepoints,
                plan.timepoints,
                cfg.windows
            );
        }
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut init = Init::new(&mut store, &mut rng);
        let m = cfg.modules;
        let mva = if m.mva {
            Some(init.scoped("mva", |i| Mva::new(i, cfg.mva_config(plan.timepoints)))?)
        } else {
            None
        };
        let dca = if m.dca {
            Some(init.scoped("dca", |i| Dca::new(i, cfg.dca_config(plan.timepoints)))?)
        } else {
            None
        };
        let ltsa = if m.ltsa {
            Some(init.scoped("ltsa", |i| Ltsa::new(i, cfg.ltsa_config(&plan)))?)
        } else {
            None
        };
        let adapter = (!m.mva && !m.dca).then(|| {
            init.scoped("adapter", |i| Adapter {
                lift: Conv::same(i, "lift", 1, cfg.k, 1, (1, 1)),
                proj: SpatialProjection::new(i, "proj", cfg.k, cfg.channels, cfg.nodes),
                pool: cfg.pool1,
            })
        });
        let head = match cfg.aggregate {
            Aggregate::Flatten => Head::Flatten,
            Aggregate::Mean => Head::Mean,
            Aggregate::Attention => Head::Attention(Linear::zeros(&mut init, "aggregate", cfg.k * plan.width, 1, false)),
        };
        let classifier = Linear::new(&mut init, "classifier", plan.features, cfg.classes, true);
        Ok(DFast {
            cfg,
            plan,
            store,
            mva,
            dca,
            ltsa,
            adapter,
            head,
            classifier,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn plan(&self) -> &Plan {
        &self.plan
    }

    pub fn store(&self) -> &ParamStore<T> {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.store
    }

    pub fn mva(&self) -> Option<&Mva> {
        self.mva.as_ref()
    }

    pub fn dca(&self) -> Option<&Dca> {
        self.dca.as_ref()
    }

    pub fn ltsa(&self) -> Option<&Ltsa> {
        self.ltsa.as_ref()
    }

    /// The same model with every parameter and buffer converted to `U`.
    pub fn cast<U: Real>(&self) -> DFast<U> {
        let mut m = DFast::<U>::new(self.cfg.clone(), 0).expect("configuration already validated");
        m.store = self.store.cast();
        m
    }

    pub fn session(&self, train: bool, seed: u64) -> Session<'_, T> {
        Session::new(&self.store, train, seed)
    }

    /// Joins the two branch outputs and moves time ahead of space.
    pub fn fuse(&self, s: &mut Session<'_, T>, z_f: Var, z_s: Var) -> Result<Var, TensorError> {
        fuse(s, z_f, z_s, self.cfg.fusion)
    }

    fn adapt(&self, s: &mut Session<'_, T>, x: Var) -> Result<Var, TensorError> {
        let a = self.adapter.as_ref().expect("adapter exists when both branches are off");
        let z = a.lift.forward(s, x)?;
        let z = a.proj.forward(s, z)?;
        s.tape.avg_pool(z, (1, a.pool), (1, a.pool))
    }

    /// `[B, k, T2, N''] -> [B, D]`.
    pub fn aggregate(&self, s: &mut Session<'_, T>, z_t: Var) -> Result<Var, TensorError> {
        let shape = s.tape.shape(z_t).to_vec();
        let (b, k, t, n) = (shape[0], shape[1], shape[2], shape[3]);
        match &self.head {
            Head::Flatten => s.tape.reshape(z_t, &[b, k * t * n]),
            Head::Mean => {
                let m = s.tape.mean_axis(z_t, 2)?;
                s.tape.reshape(m, &[b, k * n])
            }
            Head::Attention(score) => {
                let steps = s.tape.permute(z_t, &[0, 2, 1, 3])?;
                let steps = s.tape.reshape(steps, &[b, t, k * n])?;
                let logits = score.forward(s, steps)?;
                let logits = s.tape.reshape(logits, &[b, t])?;
                let w = s.tape.softmax(logits)?;
                let w = s.tape.reshape(w, &[b, 1, t, 1])?;
                let weighted = s.tape.mul(z_t, w)?;
                let pooled = s.tape.sum_axis(weighted, 2)?;
                s.tape.reshape(pooled, &[b, k * n])
            }
        }
    }

    pub fn classify(&self, s: &mut Session<'_, T>, features: Var) -> Result<Var, TensorError> {
        self.classifier.forward(s, features)
    }

    /// Runs the network on `x` of shape `[B, 1, N, T]`.
    pub fn forward(&self, s: &mut Session<'_, T>, x: Var) -> Result<Trace, TensorError> {
        let shape = s.tape.shape(x).to_vec();
        let expect = [1, self.cfg.channels, self.cfg.timepoints];
        if shape.len() != 4 || shape[1..] != expect {
            return Err(TensorError::shape(
                "forward",
                "input",
                format!("expected [B, {}, {}, {}], got {shape:?}", expect[0], expect[1], expect[2]),
            ));
        }
        let x = s.tape.narrow(x, 3, 0, self.plan.timepoints)?;
        let mut trace = Trace {
            logits: x,
            features: x,
            z_f: None,
            z_s: None,
            z_fs: x,
            z_t: x,
            freq_attention: None,
            connectogram: Vec::new(),
            temporal_attention: None,
        };
        let spatial = match self.cfg.framework {
            Framework::Disentangled => {
                if let Some(mva) = &self.mva {
                    let out = mva.forward(s, x)?;
                    trace.z_f = Some(out.z);
                    trace.freq_attention = Some(out.attention);
                }
                if let Some(dca) = &self.dca {
                    let out = dca.forward(s, x)?;
                    trace.z_s = Some(out.z);
                    trace.connectogram = out.connectogram;
                }
                match (trace.z_f, trace.z_s) {
                    (Some(f), Some(sp)) => {
                        let z_fs = fuse(s, f, sp, self.cfg.fusion)?;
                        return self.finish(s, z_fs, trace);
                    }
                    (Some(z), None) | (None, Some(z)) => z,
                    (None, None) => self.adapt(s, x)?,
                }
            }
            Framework::Serial => {
                let mut z = x;
                if let Some(mva) = &self.mva {
                    let out = mva.forward(s, z)?;
                    trace.z_f = Some(out.z);
                    trace.freq_attention = Some(out.attention);
                    z = out.z;
                }
                if let Some(dca) = &self.dca {
                    if self.mva.is_some() {
                        z = s.tape.narrow(z, 3, 0, dca.config().timepoints)?;
                    }
                    let out = dca.forward(s, z)?;
                    trace.z_s = Some(out.z);
                    trace.connectogram = out.connectogram;
                    z = out.z;
                }
                if self.mva.is_none() && self.dca.is_none() {
                    z = self.adapt(s, x)?;
                }
                z
            }
        };
        let z_fs = s.tape.transpose_last(spatial)?;
        self.finish(s, z_fs, trace)
    }

    fn finish(&self, s: &mut Session<'_, T>, z_fs: Var, mut trace: Trace) -> Result<Trace, TensorError> {
        trace.z_fs = z_fs;
        trace.z_t = match &self.ltsa {
            Some(ltsa) => {
                let out = ltsa.forward(s, z_fs)?;
                trace.temporal_attention = Some(out.attention);
                out.z
            }
            None => z_fs,
        };
        trace.features = self.aggregate(s, trace.z_t)?;
        trace.logits = self.classify(s, trace.features)?;
        Ok(trace)
    }

    /// Class probabilities in eval mode, `[B, C]`.
    pub fn predict_proba(&self, x: &Tensor<T>) -> Result<Tensor<T>, TensorError> {
        let mut s = self.session(false, 0);
        let xv = s.input(x.clone());
        let trace = self.forward(&mut s, xv)?;
        Ok(softmax_rows(s.tape.value(trace.logits)))
    }
}

/// Elementwise sum or spatial concatenation of `[B, k, N', T1]` maps,
/// followed by swapping the last two axes.
pub fn fuse<T: Real>(s: &mut Session<'_, T>, z_f: Var, z_s: Var, mode: Fusion) -> Result<Var, TensorError> {
    let (a, b) = (s.tape.shape(z_f).to_vec(), s.tape.shape(z_s).to_vec());
    let joined = match mode {
        Fusion::Add => {
            if a != b {
                return Err(TensorError::shape("fuse", "add operands", format!("{a:?} vs {b:?}")));
            }
            s.tape.add(z_f, z_s)?
        }
        Fusion::Concat => {
            let compatible = a.len() == 4 && b.len() == 4 && a[..2] == b[..2] && a[3] == b[3];
            if !compatible {
                return Err(TensorError::shape("fuse", "concat operands", format!("{a:?} vs {b:?}")));
            }
            s.tape.concat(&[z_f, z_s], 2)?
        }
    };
    s.tape.transpose_last(joined)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mnred_plan() {
        let plan = ModelConfig::mnred().plan().unwrap();
        assert_eq!(plan.t1, 110);
        assert_eq!(plan.t2, 13);
        assert_eq!(plan.width, 30);
        assert_eq!(plan.features, 24960);
        let mean = ModelConfig {
            aggregate: Aggregate::Mean,
            ..ModelConfig::mnred()
        };
        assert_eq!(mean.plan().unwrap().features, 64 * 30);
    }

    #[test]
    fn rejects_empty_mask() {
        let cfg = ModelConfig {
            modules: ModuleMask {
                mva: false,
                dca: false,
                ltsa: false,
            },
            ..ModelConfig::tiny()
        };
        assert!(cfg.plan().is_err());
    }

    #[test]
    fn tiny_counts_match_store() {
        for framework in [Framework::Disentangled, Framework::Serial] {
            for fusion in [Fusion::Add, Fusion::Concat] {
                for aggregate in [Aggregate::Flatten, Aggregate::Mean, Aggregate::Attention] {
                    let cfg = ModelConfig {
                        framework,
                        fusion,
                        aggregate,
                        ..ModelConfig::tiny()
                    };
                    let m = DFast::<f32>::new(cfg.clone(), 1).unwrap();
                    assert_eq!(m.store().scalar_count(), cfg.parameter_count().unwrap());
                }
            }
        }
    }
}

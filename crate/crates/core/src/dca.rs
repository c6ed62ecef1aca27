//! Spatial feature extraction through per-window sparse attention between
//! signal channels. Each window yields a row-stochastic connectivity matrix
//! from virtual target nodes to source channels.

use serde::{Deserialize, Serialize};

use crate::autograd::Var;
use crate::error::{ConfigError, TensorError};
use crate::nn::{BatchNorm, Conv, Init, Session, SpatialProjection};
use crate::real::Real;
use crate::tensor::{keep_count, topk_mask};

/// How the per-window outputs are merged back into one tensor.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum WindowMerge {
    /// Windows are joined along time, preserving the full length.
    #[default]
    Concat,
    /// Window outputs are summed, then tiled back to the full length.
    Sum,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DcaConfig {
    pub k: usize,
    /// Number of windows `h`.
    pub windows: usize,
    /// Fraction of source channels kept per row.
    pub tau: f64,
    /// Source channel count at the module input.
    pub channels: usize,
    pub nodes: usize,
    /// Input length; must already be a multiple of `windows`.
    pub timepoints: usize,
    /// Length used in the `1/sqrt(T)` score scale.
    pub scale_length: usize,
    pub pool1: usize,
    pub merge: WindowMerge,
    pub dropout: f64,
    /// Lift the single input channel to `k` channels. Off when the module
    /// consumes `k`-channel features (serial framework).
    pub lift: bool,
}

impl DcaConfig {
    pub fn window_len(&self) -> usize {
        self.timepoints / self.windows
    }

    /// Entries kept per connectogram row.
    pub fn keep(&self) -> usize {
        keep_count(self.tau, self.channels)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if self.windows == 0 || self.windows > self.timepoints {
            return bad(format!("window count {} must lie in 1..={}", self.windows, self.timepoints));
        }
        if !self.timepoints.is_multiple_of(self.windows) {
            return bad(format!(
                "length {} is not a multiple of the window count {}",
                self.timepoints, self.windows
            ));
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return bad(format!("tau = {} must lie in (0, 1]", self.tau));
        }
        if self.nodes == 0 || self.channels == 0 || self.k == 0 {
            return bad("k, N and N' must be positive".into());
        }
        if self.pool1 == 0 || self.pool1 > self.timepoints {
            return bad(format!("pool1 = {} out of range", self.pool1));
        }
        Ok(())
    }
}

/// Largest length not exceeding `t` that splits evenly into `h` windows.
pub fn trimmed_length(t: usize, h: usize) -> usize {
    if h == 0 {
        t
    } else {
        h * (t / h)
    }
}

pub struct DcaOutput {
    /// `[B, k, N', T1]`.
    pub z: Var,
    /// One `[B, k, N', N]` matrix stack per window, in temporal order.
    pub connectogram: Vec<Var>,
}

/// Three depthwise temporal filters of length 1, 2 and 3, summed.
struct SmallInception {
    branches: Vec<Conv>,
}

impl SmallInception {
    fn new<T: Real>(init: &mut Init<'_, T>, name: &str, k: usize) -> Self {
        let branches = (1..=3)
            .map(|l| Conv::same(init, &format!("{name}.l{l}"), k, k, k, (1, l)))
            .collect();
        SmallInception { branches }
    }

    fn forward<T: Real>(&self, s: &mut Session<'_, T>, x: Var) -> Result<Var, TensorError> {
        let mut acc = self.branches[0].forward(s, x)?;
        for b in &self.branches[1..] {
            let y = b.forward(s, x)?;
            acc = s.tape.add(acc, y)?;
        }
        Ok(acc)
    }
}

pub struct Dca {
    cfg: DcaConfig,
    lift: Option<Conv>,
    query: SpatialProjection,
    key: SmallInception,
    value: SmallInception,
    bn: BatchNorm,
}

impl Dca {
    pub fn new<T: Real>(init: &mut Init<'_, T>, cfg: DcaConfig) -> Result<Self, ConfigError> {
        cfg.validate()?;
        let k = cfg.k;
        let lift = cfg.lift.then(|| Conv::same(init, "lift", 1, k, 1, (1, 3)));
        let query = SpatialProjection::new(init, "query", k, cfg.channels, cfg.nodes);
        let key = SmallInception::new(init, "key", k);
        let value = SmallInception::new(init, "value", k);
        let bn = BatchNorm::new(init, "bn", k);
        Ok(Dca {
            cfg,
            lift,
            query,
            key,
            value,
            bn,
        })
    }

    pub fn config(&self) -> &DcaConfig {
        &self.cfg
    }

    /// `[B, 1, N, T] -> [B, k, N, T]` temporal convolution of width 3.
    pub fn channel_lift<T: Real>(&self, s: &mut Session<'_, T>, x: Var) -> Result<Var, TensorError> {
        match &self.lift {
            Some(c) => c.forward(s, x),
            None => Ok(x),
        }
    }

    /// Contiguous, non-overlapping windows along the last axis.
    pub fn window_split<T: Real>(&self, s: &mut Session<'_, T>, z: Var) -> Result<Vec<Var>, TensorError> {
        window_split(s, z, self.cfg.windows)
    }

    /// Attention for one window: returns `(A [B,k,N',N], A·V [B,k,N',w])`.
    pub fn window_attention<T: Real>(&self, s: &mut Session<'_, T>, zt: Var) -> Result<(Var, Var), TensorError> {
        let q = self.query.forward(s, zt)?;
        let key = self.key.forward(s, zt)?;
        let v = self.value.forward(s, zt)?;
        let kt = s.tape.transpose_last(key)?;
        let scores = s.tape.batched_matmul(q, kt)?;
        let scale = T::one() / T::lit(self.cfg.scale_length as f64).sqrt();
        let scores = s.tape.scale(scores, scale);
        let mask = topk_mask(s.tape.value(scores), self.cfg.tau);
        let a = s.tape.masked_softmax(scores, Some(&mask))?;
        let out = s.tape.batched_matmul(a, v)?;
        Ok((a, out))
    }

    pub fn forward<T: Real>(&self, s: &mut Session<'_, T>, x: Var) -> Result<DcaOutput, TensorError> {
        let t = *s.tape.shape(x).last().unwrap_or(&0);
        if t != self.cfg.timepoints {
            return Err(TensorError::shape(
                "dca",
                "time",
                format!("expected {} timepoints, got {t}", self.cfg.timepoints),
            ));
        }
        let z = self.channel_lift(s, x)?;
        let windows = self.window_split(s, z)?;
        let mut connectogram = Vec::with_capacity(windows.len());
        let mut outs = Vec::with_capacity(windows.len());
        for w in windows {
            let (a, o) = self.window_attention(s, w)?;
            connectogram.push(a);
            outs.push(o);
        }
        let merged = match self.cfg.merge {
            WindowMerge::Concat => s.tape.concat(&outs, 3)?,
            WindowMerge::Sum => {
                let mut acc = outs[0];
                for &o in &outs[1..] {
                    acc = s.tape.add(acc, o)?;
                }
                let tiles = vec![acc; self.cfg.windows];
                s.tape.concat(&tiles, 3)?
            }
        };
        let p = self.cfg.pool1;
        let z = s.tape.avg_pool(merged, (1, p), (1, p))?;
        let z = self.bn.forward(s, z)?;
        let z = s.tape.gelu(z);
        let train = s.train;
        let z = s.tape.dropout(z, self.cfg.dropout, train, &mut s.rng)?;
        Ok(DcaOutput { z, connectogram })
    }
}

/// Splits the last axis into `h` equal windows.
pub fn window_split<T: Real>(s: &mut Session<'_, T>, z: Var, h: usize) -> Result<Vec<Var>, TensorError> {
    let shape = s.tape.shape(z).to_vec();
    let axis = shape.len() - 1;
    let t = shape[axis];
    if h == 0 || h > t {
        return Err(TensorError::invalid("window_split", format!("cannot split {t} points into {h} windows")));
    }
    if !t.is_multiple_of(h) {
        return Err(TensorError::shape(
            "window_split",
            "time",
            format!("{t} points do not divide into {h} windows; trim first"),
        ));
    }
    let w = t / h;
    (0..h).map(|i| s.tape.narrow(z, axis, i * w, w)).collect()
}

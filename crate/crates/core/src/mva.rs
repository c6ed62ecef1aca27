//! Frequency feature extraction: two stacked multi-scale inception blocks
//! with temporal kernels of graded length, followed by a per-channel
//! sigmoid gate (squeeze-excitation style) over the extracted views.

use serde::{Deserialize, Serialize};

use crate::autograd::Var;
use crate::error::{ConfigError, TensorError};
use crate::nn::{BatchNorm, Conv, Init, Linear, Session, SpatialProjection};
use crate::real::Real;

/// How the per-view gate weights are computed from pooled channel means.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum GateKind {
    /// Fully connected `k -> k` map.
    #[default]
    Se,
    /// Width-3 convolution across neighbouring channels.
    Eca,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MvaConfig {
    /// Frequency feature count.
    pub k: usize,
    /// Sampling rate in Hz.
    pub rate: f64,
    pub channels: usize,
    pub nodes: usize,
    pub timepoints: usize,
    pub pool1: usize,
    pub gate: GateKind,
    pub dropout: f64,
}

impl MvaConfig {
    /// Spacing between successive kernel lengths, `floor(2f / k)`.
    pub fn interval(&self) -> usize {
        (2.0 * self.rate / self.k as f64).floor() as usize
    }

    fn half_rate(&self) -> usize {
        (self.rate / 2.0).floor() as usize
    }

    /// Kernel lengths of the first block, rising from 1 toward `f/2`.
    pub fn block1_lengths(&self) -> Vec<usize> {
        let a = self.interval();
        (0..self.k / 4)
            .map(|i| (1 + i * a).min(self.half_rate().max(1)))
            .collect()
    }

    /// Kernel lengths of the second block, falling from `f/2` toward 1.
    pub fn block2_lengths(&self) -> Vec<usize> {
        let a = self.interval();
        (0..self.k / 4)
            .map(|i| self.half_rate().saturating_sub(i * a).max(1))
            .collect()
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if self.k == 0 || !self.k.is_multiple_of(4) {
            return bad(format!("k = {} must be a positive multiple of 4", self.k));
        }
        if self.rate.is_nan() || self.rate <= 0.0 || self.interval() < 1 {
            return bad(format!(
                "kernel interval floor(2f/k) = floor(2*{}/{}) must be at least 1",
                self.rate, self.k
            ));
        }
        let longest = self.half_rate().max(1);
        if longest > self.timepoints {
            return bad(format!(
                "longest frequency kernel ({longest}) exceeds the {} available timepoints",
                self.timepoints
            ));
        }
        if self.nodes == 0 {
            return bad("N' must be at least 1".into());
        }
        if self.pool1 == 0 || self.pool1 > self.timepoints {
            return bad(format!("pool1 = {} out of range", self.pool1));
        }
        Ok(())
    }
}

pub struct MvaOutput {
    /// `[B, k, N', T1]`.
    pub z: Var,
    /// View weights in `(0, 1)`, `[B, k]`.
    pub attention: Var,
}

enum Gate {
    Se(Linear),
    Eca(Conv),
}

pub struct Mva {
    cfg: MvaConfig,
    block1: Vec<Conv>,
    block2: Vec<Conv>,
    bn: BatchNorm,
    gate: Gate,
    proj: SpatialProjection,
}

impl Mva {
    pub fn new<T: Real>(init: &mut Init<'_, T>, cfg: MvaConfig) -> Result<Self, ConfigError> {
        cfg.validate()?;
        let k = cfg.k;
        let block1 = cfg
            .block1_lengths()
            .iter()
            .enumerate()
            .map(|(i, &l)| Conv::same(init, &format!("block1.g{i}"), 1, 2, 1, (1, l)))
            .collect();
        let block2 = cfg
            .block2_lengths()
            .iter()
            .enumerate()
            .map(|(i, &l)| Conv::same(init, &format!("block2.g{i}"), 2, 4, 1, (1, l)))
            .collect();
        let bn = BatchNorm::new(init, "bn", k);
        let gate = match cfg.gate {
            GateKind::Se => Gate::Se(Linear::new(init, "gate", k, k, true)),
            GateKind::Eca => Gate::Eca(Conv::same(init, "gate", 1, 1, 1, (1, 3))),
        };
        let proj = SpatialProjection::new(init, "proj", k, cfg.channels, cfg.nodes);
        Ok(Mva {
            cfg,
            block1,
            block2,
            bn,
            gate,
            proj,
        })
    }

    pub fn config(&self) -> &MvaConfig {
        &self.cfg
    }

    /// `[B, 1, N, T] -> [B, k/2, N, T]`: two kernels per length group,
    /// concatenated channel-wise, then GELU.
    pub fn inception_block1<T: Real>(&self, s: &mut Session<'_, T>, x: Var) -> Result<Var, TensorError> {
        let parts = self
            .block1
            .iter()
            .map(|c| c.forward(s, x))
            .collect::<Result<Vec<_>, _>>()?;
        let z = s.tape.concat(&parts, 1)?;
        Ok(s.tape.gelu(z))
    }

    /// `[B, k/2, N, T] -> [B, k, N, T]`: group `i` reads channels `2i, 2i+1`
    /// and writes four.
    pub fn inception_block2<T: Real>(&self, s: &mut Session<'_, T>, z: Var) -> Result<Var, TensorError> {
        let c = s.tape.shape(z)[1];
        if c != self.cfg.k / 2 {
            return Err(TensorError::shape(
                "inception_block2",
                "channels",
                format!("expected {} input channels, got {c}", self.cfg.k / 2),
            ));
        }
        let mut parts = Vec::with_capacity(self.block2.len());
        for (i, conv) in self.block2.iter().enumerate() {
            let slice = s.tape.narrow(z, 1, 2 * i, 2)?;
            parts.push(conv.forward(s, slice)?);
        }
        s.tape.concat(&parts, 1)
    }

    /// Gate weights from channel means, applied multiplicatively per channel.
    /// Returns `(A_F [B, k], gated input)`.
    pub fn frequency_attention<T: Real>(&self, s: &mut Session<'_, T>, z: Var) -> Result<(Var, Var), TensorError> {
        let shape = s.tape.shape(z).to_vec();
        let (b, k) = (shape[0], shape[1]);
        let pooled = s.tape.avg_pool(z, (shape[2], shape[3]), (shape[2], shape[3]))?;
        let pre = match &self.gate {
            Gate::Se(lin) => {
                let p = s.tape.reshape(pooled, &[b, k])?;
                lin.forward(s, p)?
            }
            Gate::Eca(conv) => {
                let p = s.tape.reshape(pooled, &[b, 1, 1, k])?;
                let y = conv.forward(s, p)?;
                s.tape.reshape(y, &[b, k])?
            }
        };
        let a = s.tape.sigmoid(pre);
        let w = s.tape.reshape(a, &[b, k, 1, 1])?;
        let out = s.tape.mul(z, w)?;
        Ok((a, out))
    }

    pub fn spatial_projection<T: Real>(&self, s: &mut Session<'_, T>, z: Var) -> Result<Var, TensorError> {
        self.proj.forward(s, z)
    }

    pub fn forward<T: Real>(&self, s: &mut Session<'_, T>, x: Var) -> Result<MvaOutput, TensorError> {
        let z = self.inception_block1(s, x)?;
        let z = self.inception_block2(s, z)?;
        let z = self.bn.forward(s, z)?;
        let (attention, z) = self.frequency_attention(s, z)?;
        let z = self.spatial_projection(s, z)?;
        let p = self.cfg.pool1;
        let z = s.tape.avg_pool(z, (1, p), (1, p))?;
        let train = s.train;
        let z = s.tape.dropout(z, self.cfg.dropout, train, &mut s.rng)?;
        Ok(MvaOutput { z, attention })
    }
}

use crate::autograd::Var;
use crate::error::TensorError;
use crate::ops::{Padding2d, RunningStats};
use crate::real::Real;
use crate::tensor::Tensor;

use super::{BufferId, Init, ParamId, Session};

/// Convolution with a learned kernel and bias.
#[derive(Clone, Debug)]
pub struct Conv {
    pub weight: ParamId,
    pub bias: ParamId,
    pub groups: usize,
    pub pad: Padding2d,
}

impl Conv {
    /// Kernel `[cout, cin/groups, kh, kw]`, zero bias, shape-preserving
    /// padding.
    pub fn same<T: Real>(
        init: &mut Init<'_, T>,
        name: &str,
        cin: usize,
        cout: usize,
        groups: usize,
        (kh, kw): (usize, usize),
    ) -> Self {
        let cin_g = cin / groups;
        let weight = init.fan_in(&format!("{name}.weight"), &[cout, cin_g, kh, kw], cin_g * kh * kw);
        let bias = init.constant(&format!("{name}.bias"), Tensor::zeros(&[cout]));
        Conv {
            weight,
            bias,
            groups,
            pad: Padding2d::same(kh, kw),
        }
    }

    pub fn forward<T: Real>(&self, s: &mut Session<'_, T>, x: Var) -> Result<Var, TensorError> {
        let w = s.param(self.weight);
        let b = s.param(self.bias);
        s.tape.conv2d_bias(x, w, Some(b), self.groups, self.pad)
    }
}

#[derive(Clone, Debug)]
pub struct BatchNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: BufferId,
    pub running_var: BufferId,
}

impl BatchNorm {
    pub fn new<T: Real>(init: &mut Init<'_, T>, name: &str, channels: usize) -> Self {
        BatchNorm {
            gamma: init.constant(&format!("{name}.gamma"), Tensor::ones(&[channels])),
            beta: init.constant(&format!("{name}.beta"), Tensor::zeros(&[channels])),
            running_mean: init.buffer(&format!("{name}.running_mean"), Tensor::zeros(&[channels])),
            running_var: init.buffer(&format!("{name}.running_var"), Tensor::ones(&[channels])),
        }
    }

    pub fn forward<T: Real>(&self, s: &mut Session<'_, T>, x: Var) -> Result<Var, TensorError> {
        let gamma = s.param(self.gamma);
        let beta = s.param(self.beta);
        let store = s.store();
        let running = RunningStats {
            mean: store.buffer(self.running_mean).data(),
            var: store.buffer(self.running_var).data(),
        };
        let train = s.train;
        let (y, stats) = s.tape.batch_norm(x, gamma, beta, running, train)?;
        if let Some(stats) = stats {
            s.record_batch_stats(self.running_mean, self.running_var, stats);
        }
        Ok(y)
    }
}

/// `x · W + b` for `x` of shape `[B, in]`, `W` of shape `[in, out]`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
}

impl Linear {
    pub fn new<T: Real>(init: &mut Init<'_, T>, name: &str, inputs: usize, outputs: usize, bias: bool) -> Self {
        let weight = init.fan_in(&format!("{name}.weight"), &[inputs, outputs], inputs);
        let bias = bias.then(|| init.constant(&format!("{name}.bias"), Tensor::zeros(&[outputs])));
        Linear { weight, bias }
    }

    /// Zero weights and bias.
    pub fn zeros<T: Real>(init: &mut Init<'_, T>, name: &str, inputs: usize, outputs: usize, bias: bool) -> Self {
        let weight = init.constant(&format!("{name}.weight"), Tensor::zeros(&[inputs, outputs]));
        let bias = bias.then(|| init.constant(&format!("{name}.bias"), Tensor::zeros(&[outputs])));
        Linear { weight, bias }
    }

    pub fn forward<T: Real>(&self, s: &mut Session<'_, T>, x: Var) -> Result<Var, TensorError> {
        let w = s.param(self.weight);
        let y = s.tape.batched_matmul(x, w)?;
        match self.bias {
            Some(b) => {
                let b = s.param(b);
                s.tape.add(y, b)
            }
            None => Ok(y),
        }
    }
}

/// Per-channel linear map over the spatial axis: `[B, k, N, T] -> [B, k, N', T]`
/// with one `N' x N` matrix per channel, shared over time.
#[derive(Clone, Debug)]
pub struct SpatialProjection {
    pub weight: ParamId,
    pub channels: usize,
    pub nodes_in: usize,
    pub nodes_out: usize,
}

impl SpatialProjection {
    /// Identity when `nodes_in == nodes_out`, fan-in uniform otherwise.
    pub fn new<T: Real>(init: &mut Init<'_, T>, name: &str, channels: usize, nodes_in: usize, nodes_out: usize) -> Self {
        let shape = [channels, nodes_out, nodes_in];
        let weight = if nodes_in == nodes_out {
            init.constant(&format!("{name}.weight"), Tensor::eye_batched(&[channels], nodes_in))
        } else {
            init.fan_in(&format!("{name}.weight"), &shape, nodes_in)
        };
        SpatialProjection {
            weight,
            channels,
            nodes_in,
            nodes_out,
        }
    }

    pub fn forward<T: Real>(&self, s: &mut Session<'_, T>, x: Var) -> Result<Var, TensorError> {
        let w = s.param(self.weight);
        let w = s.tape.reshape(w, &[1, self.channels, self.nodes_out, self.nodes_in])?;
        s.tape.batched_matmul(w, x)
    }
}

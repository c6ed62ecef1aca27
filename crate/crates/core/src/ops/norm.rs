use crate::autograd::{Op, Tape, Var};
use crate::error::TensorError;
use crate::par;
use crate::real::Real;
use crate::tensor::Tensor;

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Per-channel statistics of one training batch.
#[derive(Clone, Debug)]
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    /// Unbiased variance, the quantity folded into the running estimate.
    pub var: Vec<T>,
}

/// Running statistics for a batch-norm layer.
pub struct RunningStats<'a, T> {
    pub mean: &'a [T],
    pub var: &'a [T],
}

/// `new = (1 - momentum) * old + momentum * batch`.
pub fn update_running<T: Real>(running: &mut [T], batch: &[T]) {
    let m = T::lit(BN_MOMENTUM);
    running
        .iter_mut()
        .zip(batch)
        .for_each(|(r, &b)| *r = (T::one() - m) * *r + m * b);
}

pub(crate) fn batch_norm_backward<T: Real>(
    g: &[T],
    shape: &[usize],
    xhat: &[T],
    inv_std: &[T],
    gamma: &[T],
    train: bool,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let (b, c) = (shape[0], shape[1]);
    let inner: usize = shape[2..].iter().product();
    let count = T::lit((b * inner) as f64);
    let sums: Vec<(T, T)> = par::map_collect(c, |ch| {
        let (mut sg, mut sgx) = (T::zero(), T::zero());
        for bi in 0..b {
            let off = (bi * c + ch) * inner;
            for i in off..off + inner {
                sg += g[i];
                sgx += g[i] * xhat[i];
            }
        }
        (sg, sgx)
    });
    let mut gx = vec![T::zero(); g.len()];
    par::for_each_chunk_mut(&mut gx, inner, |idx, out| {
        let ch = idx % c;
        let off = idx * inner;
        let (sg, sgx) = sums[ch];
        let k = gamma[ch] * inv_std[ch];
        if train {
            let kk = k / count;
            for (i, o) in out.iter_mut().enumerate() {
                *o = kk * (count * g[off + i] - sg - xhat[off + i] * sgx);
            }
        } else {
            for (i, o) in out.iter_mut().enumerate() {
                *o = k * g[off + i];
            }
        }
    });
    let gg = sums.iter().map(|s| s.1).collect();
    let gb = sums.iter().map(|s| s.0).collect();
    (gx, gg, gb)
}

impl<T: Real> Tape<T> {
    /// Batch normalization over axis 1 of a `[B, C, ...]` tensor.
    ///
    /// Train mode normalizes with the batch's own statistics and returns them
    /// so the caller can fold them into the running state; eval mode uses
    /// `running`.
    pub fn batch_norm(
        &mut self,
        input: Var,
        gamma: Var,
        beta: Var,
        running: RunningStats<'_, T>,
        train: bool,
    ) -> Result<(Var, Option<BatchStats<T>>), TensorError> {
        let shape = self.shape(input).to_vec();
        if shape.len() < 2 {
            return Err(TensorError::shape("batch_norm", "input rank", format!("{shape:?}")));
        }
        let (b, c) = (shape[0], shape[1]);
        for (name, v) in [("gamma", gamma), ("beta", beta)] {
            if self.shape(v) != [c] {
                return Err(TensorError::shape("batch_norm", name, format!("expected [{c}], got {:?}", self.shape(v))));
            }
        }
        if running.mean.len() != c || running.var.len() != c {
            return Err(TensorError::shape("batch_norm", "running statistics", format!("expected {c} channels")));
        }
        let inner: usize = shape[2..].iter().product();
        let x = self.value(input).data();
        let eps = T::lit(BN_EPS);
        let (mean, var_biased, stats) = if train {
            let count = (b * inner) as f64;
            let per: Vec<(T, T)> = par::map_collect(c, |ch| {
                let mut s = T::zero();
                for bi in 0..b {
                    s += x[(bi * c + ch) * inner..][..inner].iter().copied().sum::<T>();
                }
                let mean = s / T::lit(count);
                let mut ss = T::zero();
                for bi in 0..b {
                    ss += x[(bi * c + ch) * inner..][..inner]
                        .iter()
                        .map(|&v| (v - mean) * (v - mean))
                        .sum::<T>();
                }
                (mean, ss / T::lit(count))
            });
            let mean: Vec<T> = per.iter().map(|p| p.0).collect();
            let var: Vec<T> = per.iter().map(|p| p.1).collect();
            let unbiased = if count > 1.0 {
                var.iter().map(|&v| v * T::lit(count / (count - 1.0))).collect()
            } else {
                var.clone()
            };
            let stats = BatchStats {
                mean: mean.clone(),
                var: unbiased,
            };
            (mean, var, Some(stats))
        } else {
            (running.mean.to_vec(), running.var.to_vec(), None)
        };
        let inv_std: Vec<T> = var_biased.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let (gd, bd) = (self.value(gamma).data(), self.value(beta).data());
        let mut xhat = vec![T::zero(); x.len()];
        par::for_each_chunk_mut(&mut xhat, inner, |idx, o| {
            let ch = idx % c;
            let src = &x[idx * inner..][..inner];
            o.iter_mut()
                .zip(src)
                .for_each(|(o, &v)| *o = (v - mean[ch]) * inv_std[ch]);
        });
        let y: Vec<T> = xhat
            .chunks(inner)
            .enumerate()
            .flat_map(|(idx, row)| {
                let ch = idx % c;
                row.iter().map(move |&v| v * gd[ch] + bd[ch])
            })
            .collect();
        let out = Tensor::from_parts(shape, y);
        Ok((
            self.push(
                out,
                Op::BatchNorm {
                    input,
                    gamma,
                    beta,
                    xhat,
                    inv_std,
                    train,
                },
            ),
            stats,
        ))
    }
}

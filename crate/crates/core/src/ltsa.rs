//! Temporal self-attention restricted to a diagonal band, with queries,
//! keys and values produced by per-(channel, node) temporal convolutions.

use crate::autograd::Var;
use crate::error::{ConfigError, TensorError};
use crate::nn::{BatchNorm, Conv, Init, Session};
use crate::real::Real;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct LtsaConfig {
    pub k: usize,
    /// Spatial width of the input (`N'`, or `2N'` after concat fusion).
    pub nodes: usize,
    /// Input temporal length `T1`.
    pub t1: usize,
    /// Full band width: position `i` attends to `j` when `|i - j| <= w - 1`.
    pub band: usize,
    pub pool2: usize,
    pub qkv_kernel: usize,
    pub dropout: f64,
}

impl LtsaConfig {
    pub fn t2(&self) -> usize {
        self.t1 / self.pool2
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if self.band == 0 {
            return bad("band width w must be at least 1".into());
        }
        if self.qkv_kernel.is_multiple_of(2) {
            return bad(format!("qkv_kernel = {} must be odd", self.qkv_kernel));
        }
        if self.t1 == 0 || self.k == 0 || self.nodes == 0 {
            return bad("LTSA input extents must be positive".into());
        }
        if self.pool2 == 0 || self.pool2 > self.t1 {
            return bad(format!("pool2 = {} exceeds the temporal length {}", self.pool2, self.t1));
        }
        Ok(())
    }
}

/// `[t1, t1]` additive mask: 0 where `|i - j| <= w - 1`, `-inf` elsewhere.
pub fn build_band_mask<T: Real>(t1: usize, w: usize) -> Result<Tensor<T>, TensorError> {
    if w == 0 {
        return Err(TensorError::invalid("build_band_mask", "band width must be at least 1"));
    }
    if t1 == 0 {
        return Err(TensorError::invalid("build_band_mask", "length must be at least 1"));
    }
    let data = (0..t1 * t1)
        .map(|idx| {
            let (i, j) = (idx / t1, idx % t1);
            if i.abs_diff(j) < w {
                T::zero()
            } else {
                T::neg_infinity()
            }
        })
        .collect();
    Tensor::new(&[t1, t1], data)
}

pub struct LtsaOutput {
    /// `[B, k, T2, N'']`.
    pub z: Var,
    /// `[B, k, T1, T1]`.
    pub attention: Var,
}

pub struct Ltsa {
    cfg: LtsaConfig,
    query: Conv,
    key: Conv,
    value: Conv,
    bn: BatchNorm,
}

impl Ltsa {
    pub fn new<T: Real>(init: &mut Init<'_, T>, cfg: LtsaConfig) -> Result<Self, ConfigError> {
        cfg.validate()?;
        let e = cfg.k * cfg.nodes;
        let kernel = (1, cfg.qkv_kernel);
        let query = Conv::same(init, "query", e, e, e, kernel);
        let key = Conv::same(init, "key", e, e, e, kernel);
        let value = Conv::same(init, "value", e, e, e, kernel);
        let bn = BatchNorm::new(init, "bn", cfg.k);
        Ok(Ltsa {
            cfg,
            query,
            key,
            value,
            bn,
        })
    }

    pub fn config(&self) -> &LtsaConfig {
        &self.cfg
    }

    /// `[B, k, T1, N''] -> (Q, K, V)` of the same shape.
    pub fn qkv_projection<T: Real>(&self, s: &mut Session<'_, T>, z: Var) -> Result<(Var, Var, Var), TensorError> {
        let shape = s.tape.shape(z).to_vec();
        let (k, t1, n) = (self.cfg.k, self.cfg.t1, self.cfg.nodes);
        if shape.len() != 4 || shape[1] != k || shape[2] != t1 || shape[3] != n {
            return Err(TensorError::shape(
                "ltsa",
                "input",
                format!("expected [B, {k}, {t1}, {n}], got {shape:?}"),
            ));
        }
        let b = shape[0];
        let lanes = s.tape.permute(z, &[0, 1, 3, 2])?;
        let lanes = s.tape.reshape(lanes, &[b, k * n, 1, t1])?;
        let project = |conv: &Conv, s: &mut Session<'_, T>| -> Result<Var, TensorError> {
            let y = conv.forward(s, lanes)?;
            let y = s.tape.reshape(y, &[b, k, n, t1])?;
            s.tape.permute(y, &[0, 1, 3, 2])
        };
        let q = project(&self.query, s)?;
        let key = project(&self.key, s)?;
        let v = project(&self.value, s)?;
        Ok((q, key, v))
    }

    pub fn forward<T: Real>(&self, s: &mut Session<'_, T>, z: Var) -> Result<LtsaOutput, TensorError> {
        let (q, key, v) = self.qkv_projection(s, z)?;
        let kt = s.tape.transpose_last(key)?;
        let scores = s.tape.batched_matmul(q, kt)?;
        let scale = T::one() / T::lit(self.cfg.nodes as f64).sqrt();
        let scores = s.tape.scale(scores, scale);
        let mask = build_band_mask::<T>(self.cfg.t1, self.cfg.band)?;
        let attention = s.tape.masked_softmax(scores, Some(&mask))?;
        let out = s.tape.batched_matmul(attention, v)?;
        let out = s.tape.add(out, z)?;
        let out = self.bn.forward(s, out)?;
        let out = s.tape.gelu(out);
        let p = self.cfg.pool2;
        let out = s.tape.avg_pool(out, (p, 1), (p, 1))?;
        let train = s.train;
        let out = s.tape.dropout(out, self.cfg.dropout, train, &mut s.rng)?;
        Ok(LtsaOutput { z: out, attention })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pattern(t1: usize, w: usize) -> Vec<bool> {
        build_band_mask::<f64>(t1, w)
            .unwrap()
            .data()
            .iter()
            .map(|&v| v == 0.0)
            .collect()
    }

    #[test]
    fn width_one_is_diagonal() {
        let p = pattern(3, 1);
        assert_eq!(p, vec![true, false, false, false, true, false, false, false, true]);
    }

    #[test]
    fn width_two_is_tridiagonal() {
        let p = pattern(4, 2);
        for i in 0..4 {
            for j in 0..4 {
                assert_eq!(p[i * 4 + j], i.abs_diff(j) <= 1);
            }
        }
    }

    #[test]
    fn wide_band_is_unmasked() {
        assert!(pattern(5, 5).iter().all(|&b| b));
        assert!(pattern(5, 9).iter().all(|&b| b));
        assert!(build_band_mask::<f32>(5, 0).is_err());
    }

    #[test]
    fn interior_rows_have_2w_minus_1_entries() {
        let (t1, w) = (40, 6);
        let p = pattern(t1, w);
        let row = 20;
        let count = p[row * t1..(row + 1) * t1].iter().filter(|&&b| b).count();
        assert_eq!(count, 2 * w - 1);
    }

    #[test]
    fn config_checks() {
        let cfg = LtsaConfig {
            k: 64,
            nodes: 30,
            t1: 110,
            band: 16,
            pool2: 8,
            qkv_kernel: 3,
            dropout: 0.1,
        };
        assert_eq!(cfg.t2(), 13);
        assert!(cfg.validate().is_ok());
        let mut bad = cfg.clone();
        bad.qkv_kernel = 4;
        assert!(bad.validate().is_err());
        bad = cfg;
        bad.band = 0;
        assert!(bad.validate().is_err());
    }
}

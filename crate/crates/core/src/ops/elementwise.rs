use rand::Rng;

use crate::autograd::{fault, Op, Tape, Var};
use crate::error::TensorError;
use crate::real::Real;
use crate::tensor::{broadcast_shape, broadcast_strides, for_each_broadcast, Tensor};

pub fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// GELU, Gaussian-CDF form: `x * Phi(x)`.
pub fn gelu<T: Real>(x: T) -> T {
    T::lit(0.5) * x * (T::one() + (x * T::lit(std::f64::consts::FRAC_1_SQRT_2)).erf())
}

fn gelu_grad<T: Real>(x: T) -> T {
    let cdf = T::lit(0.5) * (T::one() + (x * T::lit(std::f64::consts::FRAC_1_SQRT_2)).erf());
    let pdf = (-(x * x) * T::lit(0.5)).exp() * T::lit(0.398_942_280_401_432_7);
    cdf + x * pdf
}

fn binary<T: Real>(
    op: &'static str,
    a: &Tensor<T>,
    b: &Tensor<T>,
    f: impl Fn(T, T) -> T,
) -> Result<Tensor<T>, TensorError> {
    if a.shape() == b.shape() {
        let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
        return Ok(Tensor::from_parts(a.shape().to_vec(), data));
    }
    let out_shape = broadcast_shape(a.shape(), b.shape()).ok_or_else(|| {
        TensorError::shape(
            op,
            "broadcast",
            format!("{:?} and {:?} are not broadcastable", a.shape(), b.shape()),
        )
    })?;
    let sa = broadcast_strides(a.shape(), &out_shape);
    let sb = broadcast_strides(b.shape(), &out_shape);
    let mut out = vec![T::zero(); out_shape.iter().product()];
    let (da, db) = (a.data(), b.data());
    for_each_broadcast(&out_shape, &sa, &sb, |i, oa, ob| out[i] = f(da[oa], db[ob]));
    Ok(Tensor::from_parts(out_shape, out))
}

/// Sums a gradient of shape `out_shape` down to `in_shape`, scaled by `sign`.
pub(crate) fn reduce_to<T: Real>(g: &[T], out_shape: &[usize], in_shape: &[usize], sign: T) -> Vec<T> {
    if out_shape == in_shape {
        return g.iter().map(|&x| x * sign).collect();
    }
    let mut r = vec![T::zero(); in_shape.iter().product()];
    let si = broadcast_strides(in_shape, out_shape);
    let zero = vec![0; out_shape.len()];
    for_each_broadcast(out_shape, &si, &zero, |i, oi, _| r[oi] += g[i] * sign);
    r
}

/// Gradient of `a * b` with respect to the operand of shape `in_shape`,
/// where `other` is the opposite operand.
pub(crate) fn mul_reduce_to<T: Real>(
    g: &[T],
    out_shape: &[usize],
    other: &Tensor<T>,
    in_shape: &[usize],
) -> Vec<T> {
    if out_shape == in_shape && other.shape() == out_shape {
        return g.iter().zip(other.data()).map(|(&x, &y)| x * y).collect();
    }
    let mut r = vec![T::zero(); in_shape.iter().product()];
    let si = broadcast_strides(in_shape, out_shape);
    let so = broadcast_strides(other.shape(), out_shape);
    let od = other.data();
    for_each_broadcast(out_shape, &si, &so, |i, oi, oo| r[oi] += g[i] * od[oo]);
    r
}

pub(crate) fn sigmoid_backward<T: Real>(g: &[T], y: &[T]) -> Vec<T> {
    g.iter().zip(y).map(|(&g, &y)| g * y * (T::one() - y)).collect()
}

pub(crate) fn gelu_backward<T: Real>(g: &[T], x: &[T]) -> Vec<T> {
    let bump = if fault::is_corrupted(fault::FaultyRule::Gelu) {
        T::lit(1.25)
    } else {
        T::one()
    };
    g.iter().zip(x).map(|(&g, &x)| g * gelu_grad(x) * bump).collect()
}

impl<T: Real> Tape<T> {
    /// Elementwise sum with broadcasting.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let v = binary("add", self.value(a), self.value(b), |x, y| x + y)?;
        Ok(self.push(v, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let v = binary("sub", self.value(a), self.value(b), |x, y| x - y)?;
        Ok(self.push(v, Op::Sub(a, b)))
    }

    /// Elementwise product with broadcasting.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let v = binary("mul", self.value(a), self.value(b), |x, y| x * y)?;
        Ok(self.push(v, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, c: T) -> Var {
        let v = self.value(a).map(|x| x * c);
        self.push(v, Op::Scale(a, c))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).map(sigmoid);
        self.push(v, Op::Sigmoid(a))
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let v = self.value(a).map(gelu);
        self.push(v, Op::Gelu(a))
    }

    /// Inverted dropout. Identity in eval mode or at rate 0.
    pub fn dropout<R: Rng>(
        &mut self,
        a: Var,
        rate: f64,
        train: bool,
        rng: &mut R,
    ) -> Result<Var, TensorError> {
        if !(0.0..1.0).contains(&rate) {
            return Err(TensorError::invalid(
                "dropout",
                format!("rate must lie in [0, 1), got {rate}"),
            ));
        }
        if !train || rate == 0.0 {
            return Ok(a);
        }
        let keep = T::lit(1.0 / (1.0 - rate));
        let mask: Vec<T> = (0..self.value(a).len())
            .map(|_| {
                if rng.gen::<f64>() < rate {
                    T::zero()
                } else {
                    keep
                }
            })
            .collect();
        let v = Tensor::from_parts(
            self.shape(a).to_vec(),
            self.value(a)
                .data()
                .iter()
                .zip(&mask)
                .map(|(&x, &m)| x * m)
                .collect(),
        );
        Ok(self.push(v, Op::Dropout(a, mask)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn pointwise_anchors() {
        assert_eq!(sigmoid(0.0f64), 0.5);
        assert_eq!(gelu(0.0f64), 0.0);
        assert!((gelu(1.0f64) - 0.841_344_746_068_542_9).abs() < 1e-12);
    }

    #[test]
    fn broadcast_add_matches_explicit_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let w = Tensor::<f64>::randn(&[3, 1, 1], &mut rng);
        let z = Tensor::<f64>::randn(&[3, 2, 4], &mut rng);
        let mut tape = Tape::new();
        let (wv, zv) = (tape.constant(w.clone()), tape.constant(z.clone()));
        let out = tape.add(zv, wv).unwrap();
        for c in 0..3 {
            for i in 0..2 {
                for j in 0..4 {
                    let expect = z.get(&[c, i, j]) + w.get(&[c, 0, 0]);
                    assert_eq!(tape.value(out).get(&[c, i, j]), expect);
                }
            }
        }
        let bad = tape.constant(Tensor::zeros(&[2, 2, 4]));
        assert!(tape.add(zv, bad).is_err());
    }

    #[test]
    fn dropout_identity_paths() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut tape = Tape::<f32>::new();
        let x = tape.constant(Tensor::ones(&[10]));
        assert_eq!(tape.dropout(x, 0.0, true, &mut rng).unwrap(), x);
        assert_eq!(tape.dropout(x, 0.9, false, &mut rng).unwrap(), x);
        assert!(tape.dropout(x, 1.0, true, &mut rng).is_err());
        assert!(tape.dropout(x, -0.1, true, &mut rng).is_err());
    }

    #[test]
    fn dropout_survivor_fraction() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut tape = Tape::<f32>::new();
        let x = tape.constant(Tensor::ones(&[1_000_000]));
        let y = tape.dropout(x, 0.5, true, &mut rng).unwrap();
        let d = tape.value(y).data();
        let survivors = d.iter().filter(|&&v| v != 0.0).count() as f64 / d.len() as f64;
        assert!((survivors - 0.5).abs() < 0.01, "{survivors}");
        assert!(d.iter().all(|&v| v == 0.0 || v == 2.0));
    }

    #[test]
    fn dropout_is_seed_deterministic() {
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(42);
            let mut tape = Tape::<f32>::new();
            let x = tape.constant(Tensor::ones(&[256]));
            let y = tape.dropout(x, 0.3, true, &mut rng).unwrap();
            tape.value(y).clone()
        };
        assert_eq!(run(), run());
    }
}

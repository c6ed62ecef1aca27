use rand::Rng;

use crate::error::TensorError;
use crate::real::Real;

/// Dense row-major array.
///
/// Gradients are not stored on the tensor itself: they live on the
/// [`Tape`](crate::autograd::Tape) node that wraps it, so a `Tensor` is a
/// plain value that can be shared between threads.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

pub fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

pub fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

impl<T: Real> Tensor<T> {
    pub fn new(shape: &[usize], data: Vec<T>) -> Result<Self, TensorError> {
        if shape.contains(&0) {
            return Err(TensorError::invalid(
                "tensor",
                format!("extents must be positive, got {shape:?}"),
            ));
        }
        if numel(shape) != data.len() {
            return Err(TensorError::shape(
                "tensor",
                "data length",
                format!("shape {shape:?} needs {} values, got {}", numel(shape), data.len()),
            ));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    /// Builds a tensor whose shape/data agreement is guaranteed by the caller.
    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<T>) -> Self {
        debug_assert_eq!(numel(&shape), data.len(), "shape {shape:?}");
        Tensor { shape, data }
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        Tensor::from_parts(shape.to_vec(), vec![value; numel(shape)])
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, T::one())
    }

    pub fn scalar(v: T) -> Self {
        Tensor::from_parts(vec![1], vec![v])
    }

    pub fn from_f64(shape: &[usize], data: &[f64]) -> Result<Self, TensorError> {
        Self::new(shape, data.iter().map(|&v| T::lit(v)).collect())
    }

    /// Uniform samples in `[-bound, bound)`.
    pub fn uniform<R: Rng>(shape: &[usize], bound: f64, rng: &mut R) -> Self {
        let data = (0..numel(shape))
            .map(|_| T::lit(rng.gen_range(-bound..bound)))
            .collect();
        Tensor::from_parts(shape.to_vec(), data)
    }

    /// Standard normal samples.
    pub fn randn<R: Rng>(shape: &[usize], rng: &mut R) -> Self {
        let data = (0..numel(shape))
            .map(|_| T::lit(rng.sample::<f64, _>(rand_distr::StandardNormal)))
            .collect();
        Tensor::from_parts(shape.to_vec(), data)
    }

    /// Square identity matrix, or a stack of them when `batch` is nonempty.
    pub fn eye_batched(batch: &[usize], n: usize) -> Self {
        let mut shape = batch.to_vec();
        shape.extend([n, n]);
        let mut t = Self::zeros(&shape);
        for (b, plane) in t.data.chunks_mut(n * n).enumerate() {
            let _ = b;
            for i in 0..n {
                plane[i * n + i] = T::one();
            }
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn get(&self, index: &[usize]) -> T {
        assert_eq!(index.len(), self.shape.len(), "index rank");
        let st = strides(&self.shape);
        let off: usize = index.iter().zip(&st).map(|(i, s)| i * s).sum();
        self.data[off]
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Self, TensorError> {
        if numel(shape) != self.len() {
            return Err(TensorError::shape(
                "reshape",
                "element count",
                format!("{:?} -> {shape:?}", self.shape),
            ));
        }
        Ok(Tensor::from_parts(shape.to_vec(), self.data.clone()))
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor::from_parts(self.shape.clone(), self.data.iter().map(|&v| f(v)).collect())
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor::from_parts(
            self.shape.clone(),
            self.data.iter().map(|v| U::lit(v.as_f64())).collect(),
        )
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.data.iter().map(|v| v.as_f64()).collect()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        assert_eq!(self.shape, other.shape);
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a.as_f64() - b.as_f64()).abs())
            .fold(0.0, f64::max)
    }
}

/// Number of entries kept per row by top-`tau` sparsification of a row of
/// length `n`: `ceil(tau * n)`, at least 1.
pub fn keep_count(tau: f64, n: usize) -> usize {
    // tolerance absorbs products like 0.1 * 30 landing a hair above an integer
    let raw = (tau * n as f64 - 1e-9).ceil();
    (raw.max(1.0) as usize).min(n)
}

/// Additive mask (`0` keep, `-inf` drop) retaining the `ceil(tau * n)` largest
/// entries of every row along the last axis. Ties go to the lower index.
pub fn topk_mask<T: Real>(scores: &Tensor<T>, tau: f64) -> Tensor<T> {
    let n = *scores.shape().last().expect("rank >= 1");
    let keep = keep_count(tau, n);
    let mut mask = Tensor::full(scores.shape(), T::neg_infinity());
    let mut order: Vec<usize> = Vec::with_capacity(n);
    for (row, out) in scores.data().chunks(n).zip(mask.data.chunks_mut(n)) {
        if keep == n {
            out.iter_mut().for_each(|m| *m = T::zero());
            continue;
        }
        order.clear();
        order.extend(0..n);
        // NaN scores sort last so they are never preferentially kept.
        order.sort_by(|&a, &b| {
            row[b]
                .partial_cmp(&row[a])
                .unwrap_or_else(|| row[a].is_nan().cmp(&row[b].is_nan()))
                .then(a.cmp(&b))
        });
        for &i in &order[..keep] {
            out[i] = T::zero();
        }
    }
    mask
}

/// Top-`tau` sparsification: entries outside each row's top `ceil(tau * n)`
/// become `-inf`.
pub fn sparse_scores<T: Real>(scores: &Tensor<T>, tau: f64) -> Result<Tensor<T>, TensorError> {
    if !(tau > 0.0 && tau <= 1.0) {
        return Err(TensorError::invalid(
            "sparse_scores",
            format!("tau must lie in (0, 1], got {tau}"),
        ));
    }
    let mask = topk_mask(scores, tau);
    let data = scores
        .data()
        .iter()
        .zip(mask.data())
        .map(|(&s, &m)| if m == T::zero() { s } else { T::neg_infinity() })
        .collect();
    Ok(Tensor::from_parts(scores.shape().to_vec(), data))
}

/// Broadcast shape of two shapes (numpy rules, right-aligned).
pub fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i + a.len() >= rank { a[i + a.len() - rank] } else { 1 };
        let db = if i + b.len() >= rank { b[i + b.len() - rank] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

/// Strides of `shape` viewed at `out_shape`, zero on broadcast axes.
pub(crate) fn broadcast_strides(shape: &[usize], out_shape: &[usize]) -> Vec<usize> {
    let rank = out_shape.len();
    let own = strides(shape);
    (0..rank)
        .map(|i| {
            if i + shape.len() < rank {
                0
            } else {
                let j = i + shape.len() - rank;
                if shape[j] == 1 && out_shape[i] != 1 {
                    0
                } else {
                    own[j]
                }
            }
        })
        .collect()
}

/// Visits every element of `out_shape` in row-major order, passing the
/// flat output index and the matching offsets under two stride sets.
pub(crate) fn for_each_broadcast(
    out_shape: &[usize],
    sa: &[usize],
    sb: &[usize],
    mut f: impl FnMut(usize, usize, usize),
) {
    #[allow(clippy::too_many_arguments)]
    fn rec(
        dim: usize,
        shape: &[usize],
        sa: &[usize],
        sb: &[usize],
        oa: usize,
        ob: usize,
        idx: &mut usize,
        f: &mut dyn FnMut(usize, usize, usize),
    ) {
        if dim + 1 == shape.len() {
            let (ta, tb) = (sa[dim], sb[dim]);
            for k in 0..shape[dim] {
                f(*idx, oa + k * ta, ob + k * tb);
                *idx += 1;
            }
            return;
        }
        for k in 0..shape[dim] {
            rec(dim + 1, shape, sa, sb, oa + k * sa[dim], ob + k * sb[dim], idx, f);
        }
    }
    if out_shape.is_empty() {
        f(0, 0, 0);
        return;
    }
    let mut idx = 0;
    rec(0, out_shape, sa, sb, 0, 0, &mut idx, &mut f);
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_data_agreement_is_enforced() {
        assert!(Tensor::<f32>::new(&[2, 3], vec![0.0; 6]).is_ok());
        assert!(Tensor::<f32>::new(&[2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::<f32>::new(&[0, 3], vec![]).is_err());
    }

    #[test]
    fn sparse_scores_keeps_top_half() {
        let s = Tensor::<f64>::from_f64(&[1, 4], &[3.0, 1.0, 2.0, 0.0]).unwrap();
        let out = sparse_scores(&s, 0.5).unwrap();
        let d = out.data();
        assert_eq!(d[0], 3.0);
        assert_eq!(d[1], f64::NEG_INFINITY);
        assert_eq!(d[2], 2.0);
        assert_eq!(d[3], f64::NEG_INFINITY);
    }

    #[test]
    fn sparse_scores_identity_at_tau_one() {
        let s = Tensor::<f64>::from_f64(&[2, 3], &[1.0, -2.0, 5.0, 0.0, 0.0, 0.0]).unwrap();
        assert_eq!(sparse_scores(&s, 1.0).unwrap(), s);
    }

    #[test]
    fn ties_prefer_lower_index() {
        let s = Tensor::<f32>::full(&[1, 4], 1.0);
        let m = topk_mask(&s, 0.5);
        assert_eq!(m.data()[..2], [0.0, 0.0]);
        assert!(m.data()[2..].iter().all(|v| v.is_infinite()));
    }

    #[test]
    fn keep_count_matches_table_values() {
        assert_eq!(keep_count(0.6, 30), 18);
        assert_eq!(keep_count(0.1, 30), 3);
        assert_eq!(keep_count(0.01, 4), 1);
        assert_eq!(keep_count(1.0, 7), 7);
    }

    #[test]
    fn broadcast_rules() {
        assert_eq!(broadcast_shape(&[4, 1, 3], &[5, 1]), Some(vec![4, 5, 3]));
        assert_eq!(broadcast_shape(&[2, 3], &[3, 2]), None);
    }
}

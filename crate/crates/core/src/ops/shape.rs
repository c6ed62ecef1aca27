use crate::autograd::{Op, Tape, Var};
use crate::error::TensorError;
use crate::real::Real;
use crate::tensor::{numel, strides, Tensor};

/// Gathers `data` (laid out as `shape`) into the axis order `axes`.
fn permute_data<T: Real>(data: &[T], shape: &[usize], axes: &[usize]) -> (Vec<usize>, Vec<T>) {
    let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
    let in_strides = strides(shape);
    let src: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
    let mut out = Vec::with_capacity(data.len());
    fn rec<T: Copy>(dim: usize, shape: &[usize], src: &[usize], off: usize, data: &[T], out: &mut Vec<T>) {
        let s = src[dim];
        if dim + 1 == shape.len() {
            if s == 1 {
                out.extend_from_slice(&data[off..off + shape[dim]]);
            } else {
                out.extend((0..shape[dim]).map(|k| data[off + k * s]));
            }
            return;
        }
        for k in 0..shape[dim] {
            rec(dim + 1, shape, src, off + k * s, data, out);
        }
    }
    rec(0, &out_shape, &src, 0, data, &mut out);
    (out_shape, out)
}

pub(crate) fn permute_backward<T: Real>(g: &[T], out_shape: &[usize], axes: &[usize]) -> Vec<T> {
    let mut inverse = vec![0; axes.len()];
    for (i, &a) in axes.iter().enumerate() {
        inverse[a] = i;
    }
    permute_data(g, out_shape, &inverse).1
}

pub(crate) fn narrow_backward<T: Real>(
    g: &[T],
    out_shape: &[usize],
    in_shape: &[usize],
    axis: usize,
    start: usize,
) -> Vec<T> {
    let outer: usize = in_shape[..axis].iter().product();
    let inner: usize = in_shape[axis + 1..].iter().product();
    let (len, full) = (out_shape[axis], in_shape[axis]);
    let mut r = vec![T::zero(); numel(in_shape)];
    for o in 0..outer {
        let src = &g[o * len * inner..(o + 1) * len * inner];
        let dst = o * full * inner + start * inner;
        r[dst..dst + len * inner].copy_from_slice(src);
    }
    r
}

pub(crate) fn concat_backward<T: Real>(
    g: &[T],
    out_shape: &[usize],
    shapes: &[&[usize]],
    axis: usize,
) -> Vec<Vec<T>> {
    let mut start = 0;
    shapes
        .iter()
        .map(|s| {
            let len = s[axis];
            let piece = narrow_data(g, out_shape, axis, start, len);
            start += len;
            piece
        })
        .collect()
}

fn narrow_data<T: Real>(data: &[T], shape: &[usize], axis: usize, start: usize, len: usize) -> Vec<T> {
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis + 1..].iter().product();
    let full = shape[axis];
    let mut out = Vec::with_capacity(outer * len * inner);
    for o in 0..outer {
        let s = o * full * inner + start * inner;
        out.extend_from_slice(&data[s..s + len * inner]);
    }
    out
}

pub(crate) fn sum_axis_backward<T: Real>(g: &[T], in_shape: &[usize], axis: usize) -> Vec<T> {
    let outer: usize = in_shape[..axis].iter().product();
    let inner: usize = in_shape[axis + 1..].iter().product();
    let n = in_shape[axis];
    let mut r = Vec::with_capacity(numel(in_shape));
    for o in 0..outer {
        let row = &g[o * inner..(o + 1) * inner];
        for _ in 0..n {
            r.extend_from_slice(row);
        }
    }
    r
}

impl<T: Real> Tape<T> {
    pub fn permute(&mut self, a: Var, axes: &[usize]) -> Result<Var, TensorError> {
        let rank = self.value(a).rank();
        let mut seen = vec![false; rank];
        if axes.len() != rank || axes.iter().any(|&x| x >= rank || std::mem::replace(&mut seen[x], true)) {
            return Err(TensorError::invalid(
                "permute",
                format!("{axes:?} is not a permutation of {rank} axes"),
            ));
        }
        if axes.iter().enumerate().all(|(i, &x)| i == x) {
            return Ok(a);
        }
        let (shape, data) = permute_data(self.value(a).data(), self.shape(a), axes);
        Ok(self.push(Tensor::from_parts(shape, data), Op::Permute(a, axes.to_vec())))
    }

    /// Swaps the last two axes.
    pub fn transpose_last(&mut self, a: Var) -> Result<Var, TensorError> {
        let rank = self.value(a).rank();
        if rank < 2 {
            return Err(TensorError::invalid("transpose", "rank must be at least 2"));
        }
        let mut axes: Vec<usize> = (0..rank).collect();
        axes.swap(rank - 2, rank - 1);
        self.permute(a, &axes)
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var, TensorError> {
        if self.shape(a) == shape {
            return Ok(a);
        }
        let v = self.value(a).reshape(shape)?;
        Ok(self.push(v, Op::Reshape(a)))
    }

    /// Slice `start..start + len` along `axis`.
    pub fn narrow(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var, TensorError> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() || len == 0 || start + len > shape[axis] {
            return Err(TensorError::shape(
                "narrow",
                "axis extent",
                format!("{start}..{} along axis {axis} of {shape:?}", start + len),
            ));
        }
        if len == shape[axis] {
            return Ok(a);
        }
        let data = narrow_data(self.value(a).data(), &shape, axis, start, len);
        let mut out_shape = shape;
        out_shape[axis] = len;
        Ok(self.push(
            Tensor::from_parts(out_shape, data),
            Op::Narrow {
                input: a,
                axis,
                start,
            },
        ))
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var, TensorError> {
        let first = parts
            .first()
            .ok_or_else(|| TensorError::invalid("concat", "no inputs"))?;
        if parts.len() == 1 {
            return Ok(*first);
        }
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(TensorError::invalid("concat", format!("axis {axis} out of range")));
        }
        let mut total = 0;
        for p in parts {
            let s = self.shape(*p);
            let compatible = s.len() == base.len()
                && s.iter().zip(&base).enumerate().all(|(i, (x, y))| i == axis || x == y);
            if !compatible {
                return Err(TensorError::shape(
                    "concat",
                    "non-concatenated axis",
                    format!("{base:?} vs {s:?} along axis {axis}"),
                ));
            }
            total += s[axis];
        }
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for p in parts {
                let len = self.shape(*p)[axis] * inner;
                data.extend_from_slice(&self.value(*p).data()[o * len..(o + 1) * len]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        Ok(self.push(
            Tensor::from_parts(shape, data),
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
        ))
    }

    /// Sum over `axis`, dropping it.
    pub fn sum_axis(&mut self, a: Var, axis: usize) -> Result<Var, TensorError> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() {
            return Err(TensorError::invalid("sum_axis", format!("axis {axis} out of range")));
        }
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let n = shape[axis];
        let src = self.value(a).data();
        let mut out = vec![T::zero(); outer * inner];
        for o in 0..outer {
            let dst = &mut out[o * inner..(o + 1) * inner];
            for k in 0..n {
                let row = &src[(o * n + k) * inner..(o * n + k + 1) * inner];
                dst.iter_mut().zip(row).for_each(|(d, &s)| *d += s);
            }
        }
        let mut out_shape = shape;
        out_shape.remove(axis);
        if out_shape.is_empty() {
            out_shape.push(1);
        }
        Ok(self.push(Tensor::from_parts(out_shape, out), Op::SumAxis(a, axis)))
    }

    pub fn mean_axis(&mut self, a: Var, axis: usize) -> Result<Var, TensorError> {
        let n = self.shape(a).get(axis).copied().unwrap_or(1);
        let s = self.sum_axis(a, axis)?;
        Ok(self.scale(s, T::one() / T::lit(n as f64)))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s: T = self.value(a).data().iter().copied().sum();
        self.push(Tensor::scalar(s), Op::SumAll(a))
    }
}

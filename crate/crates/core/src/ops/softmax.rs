use crate::autograd::{Op, Tape, Var};
use crate::error::TensorError;
use crate::par;
use crate::real::Real;
use crate::tensor::Tensor;

fn softmax_row<T: Real>(x: &[T], mask: Option<&[T]>, out: &mut [T]) {
    let shifted = |i: usize| match mask {
        Some(m) => x[i] + m[i],
        None => x[i],
    };
    let mut max = T::neg_infinity();
    for i in 0..x.len() {
        let v = shifted(i);
        if v > max {
            max = v;
        }
    }
    if max == T::neg_infinity() {
        out.iter_mut().for_each(|o| *o = T::zero());
        return;
    }
    let mut sum = T::zero();
    for (i, o) in out.iter_mut().enumerate() {
        let v = shifted(i);
        *o = if v == T::neg_infinity() {
            T::zero()
        } else {
            (v - max).exp()
        };
        sum += *o;
    }
    let inv = T::one() / sum;
    out.iter_mut().for_each(|o| *o *= inv);
}

pub(crate) fn softmax_backward<T: Real>(g: &[T], y: &Tensor<T>) -> Vec<T> {
    let s = *y.shape().last().expect("rank >= 1");
    let mut gx = vec![T::zero(); y.len()];
    let yd = y.data();
    let chunk = s * 64;
    par::for_each_chunk_mut(&mut gx, chunk, |c, out| {
        let base = c * chunk;
        for (r, o) in out.chunks_mut(s).enumerate() {
            let off = base + r * s;
            let (gr, yr) = (&g[off..off + s], &yd[off..off + s]);
            let dotp: T = gr.iter().zip(yr).map(|(&a, &b)| a * b).sum();
            o.iter_mut()
                .zip(gr.iter().zip(yr))
                .for_each(|(o, (&gi, &yi))| *o = yi * (gi - dotp));
        }
    });
    gx
}

pub(crate) fn cross_entropy_backward<T: Real>(g: T, probs: &[T], labels: &[usize]) -> Vec<T> {
    let b = labels.len();
    let c = probs.len() / b;
    let scale = g / T::lit(b as f64);
    let mut out: Vec<T> = probs.iter().map(|&p| p * scale).collect();
    for (i, &l) in labels.iter().enumerate() {
        out[i * c + l] -= scale;
    }
    out
}

/// Row softmax of a `[B, C]` tensor without recording anything.
pub fn softmax_rows<T: Real>(logits: &Tensor<T>) -> Tensor<T> {
    let c = *logits.shape().last().expect("rank >= 1");
    let mut out = vec![T::zero(); logits.len()];
    for (x, o) in logits.data().chunks(c).zip(out.chunks_mut(c)) {
        softmax_row(x, None, o);
    }
    Tensor::from_parts(logits.shape().to_vec(), out)
}

impl<T: Real> Tape<T> {
    /// Softmax over the last axis after adding `mask` (entries `0` or
    /// `-inf`). The mask is either the trailing `[R, S]` matrix, broadcast
    /// over leading axes, or the full score shape. Rows with no finite entry
    /// produce zeros and are counted in [`Tape::degenerate_rows`].
    pub fn masked_softmax(&mut self, scores: Var, mask: Option<&Tensor<T>>) -> Result<Var, TensorError> {
        let shape = self.shape(scores).to_vec();
        let s = *shape.last().ok_or_else(|| TensorError::invalid("masked_softmax", "rank 0"))?;
        let mask_period = match mask {
            None => 0,
            Some(m) if m.shape() == shape.as_slice() => m.len(),
            Some(m) if shape.len() >= 2 && m.shape() == &shape[shape.len() - 2..] => m.len(),
            Some(m) => {
                return Err(TensorError::shape(
                    "masked_softmax",
                    "mask",
                    format!("mask {:?} does not match scores {shape:?}", m.shape()),
                ))
            }
        };
        let x = self.value(scores).data();
        let md = mask.map(|m| m.data());
        let mut out = vec![T::zero(); x.len()];
        let rows_per_chunk = 64;
        par::for_each_chunk_mut(&mut out, s * rows_per_chunk, |c, o| {
            let base = c * s * rows_per_chunk;
            for (r, orow) in o.chunks_mut(s).enumerate() {
                let off = base + r * s;
                let mrow = md.map(|m| {
                    let mo = off % mask_period;
                    &m[mo..mo + s]
                });
                softmax_row(&x[off..off + s], mrow, orow);
            }
        });
        let degenerate = out
            .chunks(s)
            .filter(|r| r.iter().all(|&v| v == T::zero()))
            .count();
        self.note_degenerate(degenerate);
        Ok(self.push(Tensor::from_parts(shape, out), Op::Softmax(scores)))
    }

    pub fn softmax(&mut self, scores: Var) -> Result<Var, TensorError> {
        self.masked_softmax(scores, None)
    }

    /// Mean negative log-likelihood of `labels` under row softmax of
    /// `logits` (`[B, C]`).
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var, TensorError> {
        let shape = self.shape(logits).to_vec();
        if shape.len() != 2 || shape[0] != labels.len() {
            return Err(TensorError::shape(
                "cross_entropy",
                "batch",
                format!("logits {shape:?} with {} labels", labels.len()),
            ));
        }
        let c = shape[1];
        if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
            return Err(TensorError::invalid(
                "cross_entropy",
                format!("label {bad} out of range for {c} classes"),
            ));
        }
        let x = self.value(logits).data();
        let mut probs = vec![T::zero(); x.len()];
        let mut loss = T::zero();
        for (i, (&l, row)) in labels.iter().zip(x.chunks(c)).enumerate() {
            softmax_row(row, None, &mut probs[i * c..(i + 1) * c]);
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<T>().ln();
            loss += lse - row[l];
        }
        loss /= T::lit(labels.len() as f64);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
        ))
    }
}

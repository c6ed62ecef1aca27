use crate::autograd::{Op, Tape, Var};
use crate::error::TensorError;
use crate::par;
use crate::real::Real;
use crate::tensor::Tensor;

fn pooled_extent(input: usize, window: usize, stride: usize) -> usize {
    (input - window) / stride + 1
}

pub(crate) fn avg_pool_backward<T: Real>(
    g: &[T],
    out_shape: &[usize],
    in_shape: &[usize],
    (ph, pw): (usize, usize),
    (sh, sw): (usize, usize),
) -> Vec<T> {
    let r = in_shape.len();
    let (h, w) = (in_shape[r - 2], in_shape[r - 1]);
    let (ho, wo) = (out_shape[r - 2], out_shape[r - 1]);
    let inv = T::one() / T::lit((ph * pw) as f64);
    let mut gin = vec![T::zero(); in_shape.iter().product()];
    par::for_each_chunk_mut(&mut gin, h * w, |p, gi| {
        let go = &g[p * ho * wo..][..ho * wo];
        for oh in 0..ho {
            for ow in 0..wo {
                let v = go[oh * wo + ow] * inv;
                for i in 0..ph {
                    let row = (oh * sh + i) * w + ow * sw;
                    gi[row..row + pw].iter_mut().for_each(|x| *x += v);
                }
            }
        }
    });
    gin
}

impl<T: Real> Tape<T> {
    /// Mean pooling over the last two axes.
    pub fn avg_pool(
        &mut self,
        input: Var,
        window: (usize, usize),
        stride: (usize, usize),
    ) -> Result<Var, TensorError> {
        let shape = self.shape(input).to_vec();
        let r = shape.len();
        if r < 2 {
            return Err(TensorError::shape("avg_pool", "input rank", format!("{shape:?}")));
        }
        let (h, w) = (shape[r - 2], shape[r - 1]);
        let (ph, pw) = window;
        let (sh, sw) = stride;
        if ph == 0 || pw == 0 || sh == 0 || sw == 0 {
            return Err(TensorError::invalid("avg_pool", "window and stride must be positive"));
        }
        if ph > h || pw > w {
            return Err(TensorError::shape(
                "avg_pool",
                "window",
                format!("window {window:?} larger than input {:?}", (h, w)),
            ));
        }
        if window == (1, 1) && stride == (1, 1) {
            return Ok(input);
        }
        let (ho, wo) = (pooled_extent(h, ph, sh), pooled_extent(w, pw, sw));
        let planes: usize = shape[..r - 2].iter().product();
        let inv = T::one() / T::lit((ph * pw) as f64);
        let src = self.value(input).data();
        let mut out = vec![T::zero(); planes * ho * wo];
        par::for_each_chunk_mut(&mut out, ho * wo, |p, o| {
            let x = &src[p * h * w..][..h * w];
            for oh in 0..ho {
                for ow in 0..wo {
                    let mut acc = T::zero();
                    for i in 0..ph {
                        let row = (oh * sh + i) * w + ow * sw;
                        acc += x[row..row + pw].iter().copied().sum::<T>();
                    }
                    o[oh * wo + ow] = acc * inv;
                }
            }
        });
        let mut out_shape = shape;
        out_shape[r - 2] = ho;
        out_shape[r - 1] = wo;
        Ok(self.push(
            Tensor::from_parts(out_shape, out),
            Op::AvgPool2d {
                input,
                window,
                stride,
            },
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn global_and_blockwise_means() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::from_f64(&[1, 4], &[1.0, 2.0, 3.0, 4.0]).unwrap());
        let y = tape.avg_pool(x, (1, 4), (1, 4)).unwrap();
        assert_eq!(tape.value(y).data(), &[2.5]);

        let x = tape.constant(Tensor::from_f64(&[1, 8], &[1., 2., 3., 4., 5., 6., 7., 8.]).unwrap());
        let y = tape.avg_pool(x, (1, 4), (1, 4)).unwrap();
        assert_eq!(tape.value(y).data(), &[2.5, 6.5]);
    }

    #[test]
    fn global_pool_shape_and_errors() {
        let mut tape = Tape::<f32>::new();
        let x = tape.constant(Tensor::zeros(&[1, 64, 30, 440]));
        let y = tape.avg_pool(x, (30, 440), (30, 440)).unwrap();
        assert_eq!(tape.shape(y), &[1, 64, 1, 1]);
        assert!(tape.avg_pool(x, (31, 1), (1, 1)).is_err());
    }

    #[test]
    fn floor_extent_drops_remainder() {
        let mut tape = Tape::<f32>::new();
        let x = tape.constant(Tensor::ones(&[2, 3, 1, 110]));
        let y = tape.avg_pool(x, (1, 8), (1, 8)).unwrap();
        assert_eq!(tape.shape(y), &[2, 3, 1, 13]);
    }
}

//! Grouped 2-D convolution (cross-correlation), stride 1, zero padding.

use crate::autograd::{Op, Tape, Var};
use crate::error::TensorError;
use crate::par;
use crate::real::Real;
use crate::tensor::Tensor;

/// Zero padding on each side of the two spatial axes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub struct Padding2d {
    pub top: usize,
    pub bottom: usize,
    pub left: usize,
    pub right: usize,
}

impl Padding2d {
    pub fn symmetric(ph: usize, pw: usize) -> Self {
        Padding2d {
            top: ph,
            bottom: ph,
            left: pw,
            right: pw,
        }
    }

    /// Padding that keeps the output extent equal to the input extent for a
    /// `kh x kw` kernel. Even kernels put the extra zero on the trailing side.
    pub fn same(kh: usize, kw: usize) -> Self {
        let (t, l) = ((kh - 1) / 2, (kw - 1) / 2);
        Padding2d {
            top: t,
            bottom: kh - 1 - t,
            left: l,
            right: kw - 1 - l,
        }
    }
}

impl From<(usize, usize)> for Padding2d {
    fn from((ph, pw): (usize, usize)) -> Self {
        Padding2d::symmetric(ph, pw)
    }
}

#[derive(Clone, Copy, Debug)]
struct Geometry {
    batch: usize,
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    kh: usize,
    kw: usize,
    groups: usize,
    ho: usize,
    wo: usize,
    pad: Padding2d,
}

impl Geometry {
    fn new(
        input: &[usize],
        kernel: &[usize],
        groups: usize,
        pad: Padding2d,
    ) -> Result<Self, TensorError> {
        if input.len() != 4 {
            return Err(TensorError::shape("conv2d", "input rank", format!("expected B×C×H×W, got {input:?}")));
        }
        if kernel.len() != 4 {
            return Err(TensorError::shape("conv2d", "kernel rank", format!("expected Cout×Cin/G×Kh×Kw, got {kernel:?}")));
        }
        let [batch, cin, h, w] = [input[0], input[1], input[2], input[3]];
        let [cout, cin_g, kh, kw] = [kernel[0], kernel[1], kernel[2], kernel[3]];
        if groups == 0 || cin % groups != 0 {
            return Err(TensorError::shape(
                "conv2d",
                "input channels",
                format!("{cin} channels not divisible into {groups} groups"),
            ));
        }
        if cout % groups != 0 {
            return Err(TensorError::shape(
                "conv2d",
                "output channels",
                format!("{cout} kernels not divisible into {groups} groups"),
            ));
        }
        if cin_g != cin / groups {
            return Err(TensorError::shape(
                "conv2d",
                "kernel input channels",
                format!("kernel expects {cin_g} channels per group, input provides {}", cin / groups),
            ));
        }
        let hp = h + pad.top + pad.bottom;
        let wp = w + pad.left + pad.right;
        if kh > hp {
            return Err(TensorError::shape("conv2d", "height", format!("kernel {kh} exceeds padded height {hp}")));
        }
        if kw > wp {
            return Err(TensorError::shape("conv2d", "width", format!("kernel {kw} exceeds padded width {wp}")));
        }
        Ok(Geometry {
            batch,
            cin,
            h,
            w,
            cout,
            kh,
            kw,
            groups,
            ho: hp - kh + 1,
            wo: wp - kw + 1,
            pad,
        })
    }

    fn cin_g(&self) -> usize {
        self.cin / self.groups
    }

    fn cout_g(&self) -> usize {
        self.cout / self.groups
    }

    /// Output columns `ow` whose input column `ow + kw - left` is in range,
    /// or `None` when the tap only ever sees padding.
    fn ow_range(&self, kw: usize) -> Option<(usize, usize)> {
        let lo = self.pad.left.saturating_sub(kw);
        let hi = (self.w + self.pad.left).saturating_sub(kw).min(self.wo);
        (lo < hi).then_some((lo, hi))
    }

    fn oh_for(&self, ih_plus: usize, kh: usize) -> Option<usize> {
        // ih = oh + kh - top
        let ih = (ih_plus + kh).checked_sub(self.pad.top)?;
        (ih < self.h).then_some(ih)
    }
}

fn forward<T: Real>(x: &Tensor<T>, k: &Tensor<T>, bias: Option<&Tensor<T>>, g: Geometry) -> Tensor<T> {
    let plane = g.ho * g.wo;
    let mut out = vec![T::zero(); g.batch * g.cout * plane];
    let (xd, kd) = (x.data(), k.data());
    let bd = bias.map(|b| b.data());
    par::for_each_chunk_mut(&mut out, plane, |idx, o| {
        let (b, oc) = (idx / g.cout, idx % g.cout);
        if let Some(bd) = bd {
            o.iter_mut().for_each(|v| *v = bd[oc]);
        }
        let grp = oc / g.cout_g();
        // Row-outer order keeps the destination row resident while every
        // tap is accumulated into it.
        for oh in 0..g.ho {
            let dst_row = &mut o[oh * g.wo..(oh + 1) * g.wo];
            for icl in 0..g.cin_g() {
                let ic = grp * g.cin_g() + icl;
                let xin = &xd[(b * g.cin + ic) * g.h * g.w..][..g.h * g.w];
                for kh in 0..g.kh {
                    let Some(ih) = g.oh_for(oh, kh) else { continue };
                    let taps = &kd[((oc * g.cin_g() + icl) * g.kh + kh) * g.kw..][..g.kw];
                    for (kw, &wv) in taps.iter().enumerate() {
                        if wv == T::zero() {
                            continue;
                        }
                        let Some((lo, hi)) = g.ow_range(kw) else { continue };
                        let src = &xin[ih * g.w + lo + kw - g.pad.left..][..hi - lo];
                        dst_row[lo..hi].iter_mut().zip(src).for_each(|(d, &s)| *d += wv * s);
                    }
                }
            }
        }
    });
    Tensor::from_parts(vec![g.batch, g.cout, g.ho, g.wo], out)
}

pub(crate) fn backward_input<T: Real>(
    gout: &[T],
    out_shape: &[usize],
    k: &Tensor<T>,
    in_shape: &[usize],
    groups: usize,
    pad: Padding2d,
) -> Vec<T> {
    let g = Geometry::new(in_shape, k.shape(), groups, pad).expect("validated in forward");
    debug_assert_eq!(out_shape, [g.batch, g.cout, g.ho, g.wo]);
    let kd = k.data();
    let plane = g.h * g.w;
    let mut gin = vec![T::zero(); g.batch * g.cin * plane];
    par::for_each_chunk_mut(&mut gin, plane, |idx, gi| {
        let (b, ic) = (idx / g.cin, idx % g.cin);
        let grp = ic / g.cin_g();
        let icl = ic % g.cin_g();
        for ih in 0..g.h {
            let dst_row = &mut gi[ih * g.w..(ih + 1) * g.w];
            for ocl in 0..g.cout_g() {
                let oc = grp * g.cout_g() + ocl;
                let go = &gout[(b * g.cout + oc) * g.ho * g.wo..][..g.ho * g.wo];
                for kh in 0..g.kh {
                    // oh + kh - top = ih
                    let Some(oh) = (ih + g.pad.top).checked_sub(kh) else { continue };
                    if oh >= g.ho {
                        continue;
                    }
                    let taps = &kd[((oc * g.cin_g() + icl) * g.kh + kh) * g.kw..][..g.kw];
                    for (kw, &wv) in taps.iter().enumerate() {
                        if wv == T::zero() {
                            continue;
                        }
                        let Some((lo, hi)) = g.ow_range(kw) else { continue };
                        let src = &go[oh * g.wo + lo..oh * g.wo + hi];
                        let dst = &mut dst_row[lo + kw - g.pad.left..][..hi - lo];
                        dst.iter_mut().zip(src).for_each(|(d, &s)| *d += wv * s);
                    }
                }
            }
        }
    });
    gin
}

pub(crate) fn backward_kernel<T: Real>(
    gout: &[T],
    out_shape: &[usize],
    x: &Tensor<T>,
    k_shape: &[usize],
    groups: usize,
    pad: Padding2d,
) -> Vec<T> {
    let g = Geometry::new(x.shape(), k_shape, groups, pad).expect("validated in forward");
    debug_assert_eq!(out_shape, [g.batch, g.cout, g.ho, g.wo]);
    let xd = x.data();
    let per_oc = g.cin_g() * g.kh * g.kw;
    let mut gk = vec![T::zero(); g.cout * per_oc];
    par::for_each_chunk_mut(&mut gk, per_oc, |oc, gw| {
        let grp = oc / g.cout_g();
        for b in 0..g.batch {
            let go = &gout[(b * g.cout + oc) * g.ho * g.wo..][..g.ho * g.wo];
            for oh in 0..g.ho {
                let go_row = &go[oh * g.wo..(oh + 1) * g.wo];
                for icl in 0..g.cin_g() {
                    let ic = grp * g.cin_g() + icl;
                    let xin = &xd[(b * g.cin + ic) * g.h * g.w..][..g.h * g.w];
                    for kh in 0..g.kh {
                        let Some(ih) = g.oh_for(oh, kh) else { continue };
                        let acc = &mut gw[(icl * g.kh + kh) * g.kw..][..g.kw];
                        for (kw, a) in acc.iter_mut().enumerate() {
                            let Some((lo, hi)) = g.ow_range(kw) else { continue };
                            let s = &xin[ih * g.w + lo + kw - g.pad.left..][..hi - lo];
                            *a += dot(&go_row[lo..hi], s);
                        }
                    }
                }
            }
        }
    });
    gk
}

pub(crate) fn backward_bias<T: Real>(gout: &[T], out_shape: &[usize]) -> Vec<T> {
    let (batch, cout) = (out_shape[0], out_shape[1]);
    let plane = out_shape[2] * out_shape[3];
    let mut gb = vec![T::zero(); cout];
    for b in 0..batch {
        for (oc, acc) in gb.iter_mut().enumerate() {
            *acc += gout[(b * cout + oc) * plane..][..plane].iter().copied().sum::<T>();
        }
    }
    gb
}

/// Dot product over sixteen independent lanes so the loop vectorizes.
#[inline]
pub(crate) fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    const LANES: usize = 16;
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [T::zero(); LANES];
    let (ca, cb) = (a.chunks_exact(LANES), b.chunks_exact(LANES));
    let tail: T = ca
        .remainder()
        .iter()
        .zip(cb.remainder())
        .map(|(&x, &y)| x * y)
        .sum();
    for (x, y) in ca.zip(cb) {
        for i in 0..LANES {
            acc[i] += x[i] * y[i];
        }
    }
    let mut half = LANES / 2;
    while half > 0 {
        for i in 0..half {
            acc[i] += acc[i + half];
        }
        half /= 2;
    }
    acc[0] + tail
}

impl<T: Real> Tape<T> {
    /// Grouped convolution of `input` (B×Cin×H×W) with `kernel`
    /// (Cout×Cin/G×Kh×Kw), stride 1.
    pub fn conv2d(
        &mut self,
        input: Var,
        kernel: Var,
        groups: usize,
        pad: impl Into<Padding2d>,
    ) -> Result<Var, TensorError> {
        self.conv2d_bias(input, kernel, None, groups, pad)
    }

    /// [`conv2d`](Self::conv2d) plus a per-output-channel bias of shape [Cout].
    pub fn conv2d_bias(
        &mut self,
        input: Var,
        kernel: Var,
        bias: Option<Var>,
        groups: usize,
        pad: impl Into<Padding2d>,
    ) -> Result<Var, TensorError> {
        let pad = pad.into();
        let g = Geometry::new(self.shape(input), self.shape(kernel), groups, pad)?;
        if let Some(b) = bias {
            if self.shape(b) != [g.cout] {
                return Err(TensorError::shape(
                    "conv2d",
                    "bias",
                    format!("expected [{}], got {:?}", g.cout, self.shape(b)),
                ));
            }
        }
        let out = forward(
            self.value(input),
            self.value(kernel),
            bias.map(|b| self.value(b)),
            g,
        );
        Ok(self.push(
            out,
            Op::Conv2d {
                input,
                kernel,
                bias,
                groups,
                pad,
            },
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(shape, v).unwrap()
    }

    #[test]
    fn identity_kernel() {
        let mut tape = Tape::new();
        let x = tape.constant(t(&[1, 1, 1, 5], &[1.0, 2.0, 3.0, 4.0, 5.0]));
        let k = tape.constant(t(&[1, 1, 1, 1], &[1.0]));
        let y = tape.conv2d(x, k, 1, (0, 0)).unwrap();
        assert_eq!(tape.value(y), tape.value(x));
    }

    #[test]
    fn zero_padded_box_filter() {
        let mut tape = Tape::new();
        let x = tape.constant(t(&[1, 1, 1, 4], &[1.0; 4]));
        let k = tape.constant(t(&[1, 1, 1, 3], &[1.0; 3]));
        let y = tape.conv2d(x, k, 1, (0, 1)).unwrap();
        assert_eq!(tape.value(y).data(), &[2.0, 3.0, 3.0, 2.0]);
    }

    #[test]
    fn same_padding_even_kernel_keeps_length() {
        let mut tape = Tape::new();
        let x = tape.constant(t(&[1, 1, 1, 4], &[1.0, 2.0, 3.0, 4.0]));
        let k = tape.constant(t(&[1, 1, 1, 2], &[1.0, 10.0]));
        let y = tape.conv2d(x, k, 1, Padding2d::same(1, 2)).unwrap();
        // trailing zero pad: y[t] = x[t] + 10 x[t+1]
        assert_eq!(tape.value(y).data(), &[21.0, 32.0, 43.0, 4.0]);
    }

    #[test]
    fn depthwise_shape() {
        let mut tape = Tape::<f32>::new();
        let x = tape.constant(Tensor::zeros(&[1, 64, 30, 440]));
        let k = tape.constant(Tensor::zeros(&[64, 1, 1, 3]));
        let y = tape.conv2d(x, k, 64, (0, 1)).unwrap();
        assert_eq!(tape.shape(y), &[1, 64, 30, 440]);
    }

    #[test]
    fn shape_errors_name_the_dimension() {
        let mut tape = Tape::<f32>::new();
        let x = tape.constant(Tensor::zeros(&[1, 3, 4, 4]));
        let k = tape.constant(Tensor::zeros(&[4, 1, 1, 1]));
        let err = tape.conv2d(x, k, 2, (0, 0)).unwrap_err().to_string();
        assert!(err.contains("input channels"), "{err}");
        let k = tape.constant(Tensor::zeros(&[3, 1, 1, 9]));
        let err = tape.conv2d(x, k, 3, (0, 1)).unwrap_err().to_string();
        assert!(err.contains("width"), "{err}");
    }
}

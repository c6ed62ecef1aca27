use crate::autograd::{fault, Op, Tape, Var};
use crate::error::TensorError;
use crate::par;
use crate::real::Real;
use crate::tensor::{broadcast_shape, broadcast_strides, for_each_broadcast, Tensor};

/// Pairing of output matrices with the operand matrices they read.
struct Plan {
    batch_shape: Vec<usize>,
    a_idx: Vec<usize>,
    b_idx: Vec<usize>,
    r: usize,
    k: usize,
    s: usize,
}

fn plan(a: &[usize], b: &[usize]) -> Result<Plan, TensorError> {
    if a.len() < 2 || b.len() < 2 {
        return Err(TensorError::shape("batched_matmul", "rank", format!("{a:?} x {b:?}")));
    }
    let (r, k) = (a[a.len() - 2], a[a.len() - 1]);
    let (k2, s) = (b[b.len() - 2], b[b.len() - 1]);
    if k != k2 {
        return Err(TensorError::shape(
            "batched_matmul",
            "inner extent",
            format!("{a:?} x {b:?}: {k} != {k2}"),
        ));
    }
    let (la, lb) = (&a[..a.len() - 2], &b[..b.len() - 2]);
    let batch_shape = broadcast_shape(la, lb).ok_or_else(|| {
        TensorError::shape("batched_matmul", "leading axes", format!("{a:?} x {b:?}"))
    })?;
    let sa = broadcast_strides(la, &batch_shape);
    let sb = broadcast_strides(lb, &batch_shape);
    let n: usize = batch_shape.iter().product();
    let (mut a_idx, mut b_idx) = (vec![0; n], vec![0; n]);
    for_each_broadcast(&batch_shape, &sa, &sb, |i, oa, ob| {
        a_idx[i] = oa;
        b_idx[i] = ob;
    });
    Ok(Plan {
        batch_shape,
        a_idx,
        b_idx,
        r,
        k,
        s,
    })
}

pub(crate) fn backward<T: Real>(
    g: &[T],
    _out_shape: &[usize],
    a: &Tensor<T>,
    b: &Tensor<T>,
    need_a: bool,
    need_b: bool,
) -> (Option<Vec<T>>, Option<Vec<T>>) {
    let p = plan(a.shape(), b.shape()).expect("validated in forward");
    let (r, k, s) = (p.r, p.k, p.s);
    let (ad, bd) = (a.data(), b.data());
    let na = a.len() / (r * k);
    let nb = b.len() / (k * s);
    let ga = need_a.then(|| {
        let users = group(&p.a_idx, na);
        let mut ga = vec![T::zero(); a.len()];
        // dA = G · Bᵀ, summed over every output that read this matrix.
        par::for_each_chunk_mut(&mut ga, r * k, |ia, gm| {
            for &ob in &users[ia] {
                let gc = &g[ob * r * s..][..r * s];
                let bm = &bd[p.b_idx[ob] * k * s..][..k * s];
                T::gemm(r, s, k, gc, (s, 1), bm, (1, s), T::one(), gm, (k, 1));
            }
        });
        if fault::is_corrupted(fault::FaultyRule::Matmul) {
            ga.iter_mut().for_each(|v| *v *= T::lit(1.25));
        }
        ga
    });
    let gb = need_b.then(|| {
        let users = group(&p.b_idx, nb);
        let mut gb = vec![T::zero(); b.len()];
        // dB = Aᵀ · G.
        par::for_each_chunk_mut(&mut gb, k * s, |ib, gm| {
            for &ob in &users[ib] {
                let gc = &g[ob * r * s..][..r * s];
                let am = &ad[p.a_idx[ob] * r * k..][..r * k];
                T::gemm(k, r, s, am, (1, k), gc, (s, 1), T::one(), gm, (s, 1));
            }
        });
        gb
    });
    (ga, gb)
}

fn group(idx: &[usize], n: usize) -> Vec<Vec<usize>> {
    let mut users = vec![Vec::new(); n];
    for (ob, &i) in idx.iter().enumerate() {
        users[i].push(ob);
    }
    users
}

impl<T: Real> Tape<T> {
    /// `[..., R, K] x [..., K, S] -> [..., R, S]` with broadcast leading axes.
    pub fn batched_matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let p = plan(self.shape(a), self.shape(b))?;
        let (r, k, s) = (p.r, p.k, p.s);
        let (ad, bd) = (self.value(a).data(), self.value(b).data());
        let n = p.a_idx.len();
        let mut out = vec![T::zero(); n * r * s];
        par::for_each_chunk_mut(&mut out, r * s, |ob, c| {
            let am = &ad[p.a_idx[ob] * r * k..][..r * k];
            let bm = &bd[p.b_idx[ob] * k * s..][..k * s];
            T::gemm(r, k, s, am, (k, 1), bm, (s, 1), T::zero(), c, (s, 1));
        });
        let mut shape = p.batch_shape;
        shape.extend([r, s]);
        Ok(self.push(Tensor::from_parts(shape, out), Op::Matmul(a, b)))
    }
}

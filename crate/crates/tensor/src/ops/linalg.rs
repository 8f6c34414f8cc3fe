//! Batched matrix products and layout ops (permute, narrow, concat).

use crate::real::Real;
use crate::tensor::{numel, strides_of, Tensor};

/// Operand layout for [`matmul_forward`]: a transposed operand stores its
/// last two axes swapped.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MatmulSpec {
    pub trans_a: bool,
    pub trans_b: bool,
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct MatmulGeom {
    pub batch: usize,
    pub m: usize,
    pub k: usize,
    pub n: usize,
    pub b_shared: bool,
}

impl MatmulGeom {
    pub fn new(a: &[usize], b: &[usize], spec: MatmulSpec) -> (Self, Vec<usize>) {
        assert!(a.len() >= 2 && b.len() >= 2, "matmul needs rank >= 2, got {a:?} x {b:?}");
        let (ra, rb) = (a.len(), b.len());
        let (m, ka) = if spec.trans_a { (a[ra - 1], a[ra - 2]) } else { (a[ra - 2], a[ra - 1]) };
        let (kb, n) = if spec.trans_b { (b[rb - 1], b[rb - 2]) } else { (b[rb - 2], b[rb - 1]) };
        assert_eq!(ka, kb, "matmul inner dims differ: {a:?} x {b:?} ({spec:?})");
        let batch_a = &a[..ra - 2];
        let b_shared = rb == 2 && ra > 2;
        if !b_shared {
            assert_eq!(batch_a, &b[..rb - 2], "matmul batch dims differ: {a:?} x {b:?}");
        }
        let mut out = batch_a.to_vec();
        out.push(m);
        out.push(n);
        (
            Self {
                batch: numel(batch_a),
                m,
                k: ka,
                n,
                b_shared,
            },
            out,
        )
    }
}

/// Logical `(row, col)` strides of an operand whose stored matrix has
/// `stored_cols` columns.
fn strides(stored_cols: usize, trans: bool) -> (isize, isize) {
    if trans {
        (1, stored_cols as isize)
    } else {
        (stored_cols as isize, 1)
    }
}

pub fn matmul_forward<T: Real>(a: &Tensor<T>, b: &Tensor<T>, spec: MatmulSpec) -> Tensor<T> {
    let (geo, out_shape) = MatmulGeom::new(a.shape(), b.shape(), spec);
    let MatmulGeom { batch, m, k, n, b_shared } = geo;
    let mut out = Tensor::zeros(out_shape);
    let (ad, bd) = (a.data(), b.data());
    let od = out.data_mut();
    // stored shapes: a is m x k (or k x m), b is k x n (or n x k)
    let (rsa, csa) = strides(if spec.trans_a { m } else { k }, spec.trans_a);
    let (rsb, csb) = strides(if spec.trans_b { k } else { n }, spec.trans_b);
    for bi in 0..batch {
        let boff = if b_shared { 0 } else { bi * k * n };
        T::gemm(
            m,
            k,
            n,
            T::one(),
            &ad[bi * m * k..(bi + 1) * m * k],
            rsa,
            csa,
            &bd[boff..boff + k * n],
            rsb,
            csb,
            T::zero(),
            &mut od[bi * m * n..(bi + 1) * m * n],
            n as isize,
            1,
        );
    }
    out
}

pub fn matmul_backward<T: Real>(
    a: &Tensor<T>,
    b: &Tensor<T>,
    g: &Tensor<T>,
    spec: MatmulSpec,
    need_a: bool,
    need_b: bool,
) -> (Option<Tensor<T>>, Option<Tensor<T>>) {
    let (geo, _) = MatmulGeom::new(a.shape(), b.shape(), spec);
    let MatmulGeom { batch, m, k, n, b_shared } = geo;
    let (ad, bd, gd) = (a.data(), b.data(), g.data());
    let (rsa, csa) = strides(if spec.trans_a { m } else { k }, spec.trans_a);
    let (rsb, csb) = strides(if spec.trans_b { k } else { n }, spec.trans_b);
    let mut da = need_a.then(|| Tensor::zeros(a.shape().to_vec()));
    let mut db = need_b.then(|| Tensor::zeros(b.shape().to_vec()));
    for bi in 0..batch {
        let gs = &gd[bi * m * n..(bi + 1) * m * n];
        let boff = if b_shared { 0 } else { bi * k * n };
        if let Some(da) = da.as_mut() {
            // dA (m x k, logical) = G (m x n) * B^T (n x k); write through A's layout
            let das = &mut da.data_mut()[bi * m * k..(bi + 1) * m * k];
            T::gemm(m, n, k, T::one(), gs, n as isize, 1, &bd[boff..boff + k * n], csb, rsb, T::zero(), das, rsa, csa);
        }
        if let Some(db) = db.as_mut() {
            // dB (k x n, logical) = A^T (k x m) * G (m x n)
            let beta = if b_shared && bi > 0 { T::one() } else { T::zero() };
            let dbs = &mut db.data_mut()[boff..boff + k * n];
            T::gemm(k, m, n, T::one(), &ad[bi * m * k..(bi + 1) * m * k], csa, rsa, gs, n as isize, 1, beta, dbs, rsb, csb);
        }
    }
    (da, db)
}

pub fn permute<T: Real>(x: &Tensor<T>, perm: &[usize]) -> Tensor<T> {
    let s = x.shape();
    assert_eq!(perm.len(), s.len(), "permute rank");
    let out_shape: Vec<usize> = perm.iter().map(|&p| s[p]).collect();
    let in_strides = strides_of(s);
    let src_strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let out_strides = strides_of(&out_shape);
    let (dims, sts) = crate::tensor::coalesce(&out_shape, &[out_strides, src_strides]);
    let xd = x.data();
    let mut out = vec![T::zero(); x.numel()];
    crate::tensor::for_each_run(&dims, &sts, |off, len, st| {
        for i in 0..len {
            out[off[0] + i * st[0]] = xd[off[1] + i * st[1]];
        }
    });
    Tensor::from_vec(out_shape, out)
}

pub fn inverse_perm(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (i, &p) in perm.iter().enumerate() {
        inv[p] = i;
    }
    inv
}

pub fn narrow<T: Real>(x: &Tensor<T>, axis: usize, start: usize, len: usize) -> Tensor<T> {
    let s = x.shape();
    assert!(start + len <= s[axis], "narrow {start}+{len} exceeds axis {axis} of {s:?}");
    let (outer, n, inner) = crate::ops::norm::split_axis(s, axis);
    let xd = x.data();
    let mut out = Vec::with_capacity(outer * len * inner);
    for o in 0..outer {
        out.extend_from_slice(&xd[(o * n + start) * inner..(o * n + start + len) * inner]);
    }
    let mut shape = s.to_vec();
    shape[axis] = len;
    Tensor::from_vec(shape, out)
}

/// Adds `g` into the `[start, start+len)` window of `dst` along `axis`.
pub fn narrow_backward_into<T: Real>(dst: &mut Tensor<T>, g: &Tensor<T>, axis: usize, start: usize) {
    let (outer, n, inner) = crate::ops::norm::split_axis(dst.shape(), axis);
    let len = g.shape()[axis];
    let gd = g.data();
    let dd = dst.data_mut();
    for o in 0..outer {
        let d = &mut dd[(o * n + start) * inner..(o * n + start + len) * inner];
        for (dv, &gv) in d.iter_mut().zip(&gd[o * len * inner..(o + 1) * len * inner]) {
            *dv += gv;
        }
    }
}

pub fn concat<T: Real>(parts: &[&Tensor<T>], axis: usize) -> Tensor<T> {
    let first = parts[0].shape();
    let mut shape = first.to_vec();
    shape[axis] = 0;
    for p in parts {
        let ps = p.shape();
        assert_eq!(ps.len(), first.len(), "concat rank");
        for (i, (&a, &b)) in ps.iter().zip(first).enumerate() {
            assert!(i == axis || a == b, "concat shape mismatch {ps:?} vs {first:?} on axis {axis}");
        }
        shape[axis] += ps[axis];
    }
    let outer: usize = first[..axis].iter().product();
    let inner: usize = first[axis + 1..].iter().product();
    let mut out = Vec::with_capacity(numel(&shape));
    for o in 0..outer {
        for p in parts {
            let n = p.shape()[axis];
            out.extend_from_slice(&p.data()[o * n * inner..(o + 1) * n * inner]);
        }
    }
    Tensor::from_vec(shape, out)
}

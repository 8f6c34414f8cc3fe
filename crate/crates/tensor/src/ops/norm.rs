//! Fused normalization kernels: group normalization, softmax and
//! epsilon-guarded L2 normalization along an axis.

use crate::real::Real;
use crate::tensor::Tensor;

/// Views `shape` as `[outer, n, inner]` around `axis`.
pub(crate) fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    assert!(axis < shape.len(), "axis {axis} out of range for {shape:?}");
    (
        shape[..axis].iter().product(),
        shape[axis],
        shape[axis + 1..].iter().product(),
    )
}

/// Saved statistics of a group-norm forward pass, one entry per
/// `(sample, group)`.
#[derive(Clone, Debug)]
pub struct GroupStats<T> {
    pub mean: Vec<T>,
    pub rstd: Vec<T>,
}

/// Group normalization over `[B, C, ...]` with per-channel affine.
/// Statistics never mix samples.
pub fn group_norm_forward<T: Real>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    groups: usize,
    eps: f64,
) -> (Tensor<T>, GroupStats<T>) {
    let s = x.shape();
    assert!(s.len() >= 2, "group_norm needs [B, C, ...]");
    let (b, c) = (s[0], s[1]);
    assert!(groups > 0 && c % groups == 0, "group_norm: {groups} groups do not divide {c} channels");
    assert_eq!(gamma.numel(), c);
    assert_eq!(beta.numel(), c);
    let spatial: usize = s[2..].iter().product();
    let cg = c / groups;
    let len = cg * spatial;
    let eps = T::of(eps);
    let n = T::of(len as f64);
    let mut out = vec![T::zero(); x.numel()];
    let mut stats = GroupStats {
        mean: Vec::with_capacity(b * groups),
        rstd: Vec::with_capacity(b * groups),
    };
    let xd = x.data();
    for bi in 0..b {
        for gi in 0..groups {
            let off = (bi * c + gi * cg) * spatial;
            let xs = &xd[off..off + len];
            let mean = xs.iter().copied().sum::<T>() / n;
            let var = xs.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
            let rstd = T::one() / (var + eps).sqrt();
            stats.mean.push(mean);
            stats.rstd.push(rstd);
            for ci in 0..cg {
                let ch = gi * cg + ci;
                let (ga, be) = (gamma.data()[ch], beta.data()[ch]);
                let o = &mut out[off + ci * spatial..off + (ci + 1) * spatial];
                let xi = &xs[ci * spatial..(ci + 1) * spatial];
                for (ov, &xv) in o.iter_mut().zip(xi) {
                    *ov = (xv - mean) * rstd * ga + be;
                }
            }
        }
    }
    (Tensor::from_vec(s.to_vec(), out), stats)
}

/// Returns `(dx, dgamma, dbeta)`.
pub fn group_norm_backward<T: Real>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    stats: &GroupStats<T>,
    groups: usize,
    g: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let s = x.shape();
    let (b, c) = (s[0], s[1]);
    let spatial: usize = s[2..].iter().product();
    let cg = c / groups;
    let len = cg * spatial;
    let n = T::of(len as f64);
    let mut dx = vec![T::zero(); x.numel()];
    let mut dgamma = vec![T::zero(); c];
    let mut dbeta = vec![T::zero(); c];
    let (xd, gd) = (x.data(), g.data());
    for bi in 0..b {
        for gi in 0..groups {
            let k = bi * groups + gi;
            let (mean, rstd) = (stats.mean[k], stats.rstd[k]);
            let off = (bi * c + gi * cg) * spatial;
            // sums of dxhat and dxhat * xhat over the group
            let mut sum_d = T::zero();
            let mut sum_dx = T::zero();
            for ci in 0..cg {
                let ch = gi * cg + ci;
                let ga = gamma.data()[ch];
                let mut sg = T::zero();
                let mut sgx = T::zero();
                for i in off + ci * spatial..off + (ci + 1) * spatial {
                    let xhat = (xd[i] - mean) * rstd;
                    sg += gd[i];
                    sgx += gd[i] * xhat;
                }
                dbeta[ch] += sg;
                dgamma[ch] += sgx;
                sum_d += sg * ga;
                sum_dx += sgx * ga;
            }
            let md = sum_d / n;
            let mdx = sum_dx / n;
            for ci in 0..cg {
                let ga = gamma.data()[gi * cg + ci];
                for i in off + ci * spatial..off + (ci + 1) * spatial {
                    let xhat = (xd[i] - mean) * rstd;
                    dx[i] = rstd * (gd[i] * ga - md - xhat * mdx);
                }
            }
        }
    }
    (
        Tensor::from_vec(s.to_vec(), dx),
        Tensor::from_vec(gamma.shape().to_vec(), dgamma),
        Tensor::from_vec(gamma.shape().to_vec(), dbeta),
    )
}

pub fn softmax_forward<T: Real>(x: &Tensor<T>, axis: usize) -> Tensor<T> {
    let (outer, n, inner) = split_axis(x.shape(), axis);
    let xd = x.data();
    let mut out = vec![T::zero(); x.numel()];
    let mut mx = vec![T::zero(); inner];
    let mut den = vec![T::zero(); inner];
    for o in 0..outer {
        let base = o * n * inner;
        mx.fill(T::neg_infinity());
        for k in 0..n {
            let row = &xd[base + k * inner..base + (k + 1) * inner];
            for (m, &v) in mx.iter_mut().zip(row) {
                *m = m.max(v);
            }
        }
        den.fill(T::zero());
        for k in 0..n {
            let row = &xd[base + k * inner..base + (k + 1) * inner];
            let orow = &mut out[base + k * inner..base + (k + 1) * inner];
            for ((ov, &v), (&m, d)) in orow.iter_mut().zip(row).zip(mx.iter().zip(den.iter_mut())) {
                let e = (v - m).exp();
                *ov = e;
                *d += e;
            }
        }
        for k in 0..n {
            let orow = &mut out[base + k * inner..base + (k + 1) * inner];
            for (ov, &d) in orow.iter_mut().zip(&den) {
                *ov /= d;
            }
        }
    }
    Tensor::from_vec(x.shape().to_vec(), out)
}

pub fn softmax_backward<T: Real>(y: &Tensor<T>, g: &Tensor<T>, axis: usize) -> Tensor<T> {
    let (outer, n, inner) = split_axis(y.shape(), axis);
    let (yd, gd) = (y.data(), g.data());
    let mut dx = vec![T::zero(); y.numel()];
    let mut dot = vec![T::zero(); inner];
    for o in 0..outer {
        let base = o * n * inner;
        dot.fill(T::zero());
        for k in 0..n {
            for i in 0..inner {
                let j = base + k * inner + i;
                dot[i] += yd[j] * gd[j];
            }
        }
        for k in 0..n {
            for i in 0..inner {
                let j = base + k * inner + i;
                dx[j] = yd[j] * (gd[j] - dot[i]);
            }
        }
    }
    Tensor::from_vec(y.shape().to_vec(), dx)
}

/// `x / (||x||_2 + eps)` along `axis`. Returns the output and the norms.
pub fn l2_normalize_forward<T: Real>(x: &Tensor<T>, axis: usize, eps: f64) -> (Tensor<T>, Vec<T>) {
    let (outer, n, inner) = split_axis(x.shape(), axis);
    let eps = T::of(eps);
    let xd = x.data();
    let mut norms = vec![T::zero(); outer * inner];
    for o in 0..outer {
        for k in 0..n {
            for i in 0..inner {
                let v = xd[(o * n + k) * inner + i];
                norms[o * inner + i] += v * v;
            }
        }
    }
    for v in norms.iter_mut() {
        *v = v.sqrt();
    }
    let mut out = vec![T::zero(); x.numel()];
    for o in 0..outer {
        for k in 0..n {
            for i in 0..inner {
                let j = (o * n + k) * inner + i;
                out[j] = xd[j] / (norms[o * inner + i] + eps);
            }
        }
    }
    (Tensor::from_vec(x.shape().to_vec(), out), norms)
}

pub fn l2_normalize_backward<T: Real>(x: &Tensor<T>, norms: &[T], g: &Tensor<T>, axis: usize, eps: f64) -> Tensor<T> {
    let (outer, n, inner) = split_axis(x.shape(), axis);
    let eps = T::of(eps);
    let (xd, gd) = (x.data(), g.data());
    let mut dot = vec![T::zero(); outer * inner];
    for o in 0..outer {
        for k in 0..n {
            for i in 0..inner {
                let j = (o * n + k) * inner + i;
                dot[o * inner + i] += xd[j] * gd[j];
            }
        }
    }
    let mut dx = vec![T::zero(); x.numel()];
    for o in 0..outer {
        for k in 0..n {
            for i in 0..inner {
                let j = (o * n + k) * inner + i;
                let nv = norms[o * inner + i];
                let d = nv + eps;
                // the rank-one term vanishes as the norm goes to zero
                let corr = if nv > T::zero() { xd[j] * dot[o * inner + i] / (nv * d * d) } else { T::zero() };
                dx[j] = gd[j] / d - corr;
            }
        }
    }
    Tensor::from_vec(x.shape().to_vec(), dx)
}

//! 2-D convolution over `[batch, channels, height, width]` tensors.
//!
//! General and grouped convolutions lower to im2col + GEMM per sample and
//! group. Depthwise convolutions (one filter per channel) use a direct
//! shifted-accumulate kernel, which is much cheaper than im2col for them.

use crate::real::Real;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
}

impl ConvSpec {
    pub fn new(stride: usize, padding: usize, groups: usize) -> Self {
        Self {
            stride,
            padding,
            groups,
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    pub batch: usize,
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub kh: usize,
    pub kw: usize,
    pub ho: usize,
    pub wo: usize,
    pub spec: ConvSpec,
}

impl ConvGeom {
    pub fn new(x: &[usize], w: &[usize], spec: ConvSpec) -> Self {
        assert_eq!(x.len(), 4, "conv2d input must be [B,C,H,W], got {x:?}");
        assert_eq!(w.len(), 4, "conv2d weight must be [O,I/g,kh,kw], got {w:?}");
        let g = spec.groups;
        assert!(g >= 1 && x[1] % g == 0 && w[0] % g == 0, "conv2d: groups {g} must divide channels ({} in, {} out)", x[1], w[0]);
        assert_eq!(w[1], x[1] / g, "conv2d: weight expects {} input channels per group, input has {}", w[1], x[1] / g);
        assert!(spec.stride >= 1);
        let (h, wd) = (x[2], x[3]);
        let (kh, kw) = (w[2], w[3]);
        assert!(h + 2 * spec.padding >= kh && wd + 2 * spec.padding >= kw, "conv2d: kernel larger than padded input");
        Self {
            batch: x[0],
            cin: x[1],
            h,
            w: wd,
            cout: w[0],
            kh,
            kw,
            ho: (h + 2 * spec.padding - kh) / spec.stride + 1,
            wo: (wd + 2 * spec.padding - kw) / spec.stride + 1,
            spec,
        }
    }

    fn is_depthwise(&self) -> bool {
        self.spec.groups == self.cin && self.cout == self.cin && self.spec.groups > 1
    }

    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.spec.stride == 1 && self.spec.padding == 0
    }

    pub fn out_shape(&self) -> Vec<usize> {
        vec![self.batch, self.cout, self.ho, self.wo]
    }

    /// Valid output range `[lo, hi)` along one axis for kernel tap `k`.
    fn valid(out_len: usize, in_len: usize, k: usize, stride: usize, pad: usize) -> (usize, usize) {
        // need 0 <= o*stride + k - pad < in_len
        let lo = if pad > k { (pad - k).div_ceil(stride) } else { 0 };
        let hi = if in_len + pad > k {
            ((in_len + pad - k - 1) / stride + 1).min(out_len)
        } else {
            0
        };
        (lo, hi.max(lo))
    }
}

fn im2col<T: Real>(x: &[T], c: usize, geo: &ConvGeom, cols: &mut [T]) {
    let (h, w, ho, wo) = (geo.h, geo.w, geo.ho, geo.wo);
    let (s, p) = (geo.spec.stride, geo.spec.padding);
    let plane = ho * wo;
    for ci in 0..c {
        let xin = &x[ci * h * w..(ci + 1) * h * w];
        for ki in 0..geo.kh {
            let (ylo, yhi) = ConvGeom::valid(ho, h, ki, s, p);
            for kj in 0..geo.kw {
                let row = (ci * geo.kh + ki) * geo.kw + kj;
                let dst = &mut cols[row * plane..(row + 1) * plane];
                let (xlo, xhi) = ConvGeom::valid(wo, w, kj, s, p);
                for oy in 0..ho {
                    let drow = &mut dst[oy * wo..(oy + 1) * wo];
                    if oy < ylo || oy >= yhi {
                        drow.fill(T::zero());
                        continue;
                    }
                    let iy = oy * s + ki - p;
                    let src = &xin[iy * w..(iy + 1) * w];
                    drow[..xlo].fill(T::zero());
                    drow[xhi..].fill(T::zero());
                    if s == 1 {
                        let start = xlo + kj - p;
                        drow[xlo..xhi].copy_from_slice(&src[start..start + (xhi - xlo)]);
                    } else {
                        for ox in xlo..xhi {
                            drow[ox] = src[ox * s + kj - p];
                        }
                    }
                }
            }
        }
    }
}

fn col2im<T: Real>(cols: &[T], c: usize, geo: &ConvGeom, dx: &mut [T]) {
    let (h, w, ho, wo) = (geo.h, geo.w, geo.ho, geo.wo);
    let (s, p) = (geo.spec.stride, geo.spec.padding);
    let plane = ho * wo;
    for ci in 0..c {
        let dxin = &mut dx[ci * h * w..(ci + 1) * h * w];
        for ki in 0..geo.kh {
            let (ylo, yhi) = ConvGeom::valid(ho, h, ki, s, p);
            for kj in 0..geo.kw {
                let row = (ci * geo.kh + ki) * geo.kw + kj;
                let src = &cols[row * plane..(row + 1) * plane];
                let (xlo, xhi) = ConvGeom::valid(wo, w, kj, s, p);
                for oy in ylo..yhi {
                    let iy = oy * s + ki - p;
                    let dst = &mut dxin[iy * w..(iy + 1) * w];
                    let srow = &src[oy * wo..(oy + 1) * wo];
                    if s == 1 {
                        let start = xlo + kj - p;
                        for (d, &v) in dst[start..start + (xhi - xlo)].iter_mut().zip(&srow[xlo..xhi]) {
                            *d += v;
                        }
                    } else {
                        for ox in xlo..xhi {
                            dst[ox * s + kj - p] += srow[ox];
                        }
                    }
                }
            }
        }
    }
}

pub fn conv2d_forward<T: Real>(x: &Tensor<T>, w: &Tensor<T>, bias: Option<&Tensor<T>>, spec: ConvSpec) -> Tensor<T> {
    let geo = ConvGeom::new(x.shape(), w.shape(), spec);
    if let Some(b) = bias {
        assert_eq!(b.numel(), geo.cout, "conv2d bias length");
    }
    let mut out = Tensor::zeros(geo.out_shape());
    let plane = geo.ho * geo.wo;
    {
        let o = out.data_mut();
        if let Some(b) = bias {
            for n in 0..geo.batch {
                for (c, &bv) in b.data().iter().enumerate() {
                    let start = (n * geo.cout + c) * plane;
                    o[start..start + plane].fill(bv);
                }
            }
        }
    }
    if geo.is_depthwise() {
        depthwise_forward(x.data(), w.data(), &geo, out.data_mut());
        return out;
    }
    let g = geo.spec.groups;
    let (cin_g, cout_g) = (geo.cin / g, geo.cout / g);
    let kk = cin_g * geo.kh * geo.kw;
    let in_plane = geo.h * geo.w;
    let mut cols = if geo.is_pointwise() { Vec::new() } else { vec![T::zero(); kk * plane] };
    let xd = x.data();
    let wd = w.data();
    let od = out.data_mut();
    for n in 0..geo.batch {
        for gi in 0..g {
            let xs = &xd[(n * geo.cin + gi * cin_g) * in_plane..(n * geo.cin + (gi + 1) * cin_g) * in_plane];
            let b: &[T] = if geo.is_pointwise() {
                xs
            } else {
                im2col(xs, cin_g, &geo, &mut cols);
                &cols
            };
            let ws = &wd[gi * cout_g * kk..(gi + 1) * cout_g * kk];
            let os = &mut od[(n * geo.cout + gi * cout_g) * plane..(n * geo.cout + (gi + 1) * cout_g) * plane];
            T::gemm(cout_g, kk, plane, T::one(), ws, kk as isize, 1, b, plane as isize, 1, T::one(), os, plane as isize, 1);
        }
    }
    out
}

/// Gradients of a convolution: `(d_input, d_weight, d_bias)`.
pub fn conv2d_backward<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    grad: &Tensor<T>,
    spec: ConvSpec,
    need_x: bool,
    need_w: bool,
    need_b: bool,
) -> (Option<Tensor<T>>, Option<Tensor<T>>, Option<Tensor<T>>) {
    let geo = ConvGeom::new(x.shape(), w.shape(), spec);
    let plane = geo.ho * geo.wo;
    let gd = grad.data();
    let db = need_b.then(|| {
        let mut db = Tensor::zeros([geo.cout]);
        for n in 0..geo.batch {
            for c in 0..geo.cout {
                let s: T = gd[(n * geo.cout + c) * plane..(n * geo.cout + c + 1) * plane].iter().copied().sum();
                db.data_mut()[c] += s;
            }
        }
        db
    });
    if geo.is_depthwise() {
        let (dx, dw) = depthwise_backward(x.data(), w.data(), gd, &geo, need_x, need_w);
        return (
            dx.map(|d| Tensor::from_vec(x.shape().to_vec(), d)),
            dw.map(|d| Tensor::from_vec(w.shape().to_vec(), d)),
            db,
        );
    }
    let g = geo.spec.groups;
    let (cin_g, cout_g) = (geo.cin / g, geo.cout / g);
    let kk = cin_g * geo.kh * geo.kw;
    let in_plane = geo.h * geo.w;
    let mut dx = need_x.then(|| Tensor::zeros(x.shape().to_vec()));
    let mut dw = need_w.then(|| Tensor::zeros(w.shape().to_vec()));
    let pointwise = geo.is_pointwise();
    let mut cols = if pointwise { Vec::new() } else { vec![T::zero(); kk * plane] };
    let mut dcols = if pointwise || !need_x { Vec::new() } else { vec![T::zero(); kk * plane] };
    let xd = x.data();
    let wd = w.data();
    for n in 0..geo.batch {
        for gi in 0..g {
            let xoff = (n * geo.cin + gi * cin_g) * in_plane;
            let xs = &xd[xoff..xoff + cin_g * in_plane];
            let gs = &gd[(n * geo.cout + gi * cout_g) * plane..(n * geo.cout + (gi + 1) * cout_g) * plane];
            let ws = &wd[gi * cout_g * kk..(gi + 1) * cout_g * kk];
            if let Some(dw) = dw.as_mut() {
                let b: &[T] = if pointwise {
                    xs
                } else {
                    im2col(xs, cin_g, &geo, &mut cols);
                    &cols
                };
                let dws = &mut dw.data_mut()[gi * cout_g * kk..(gi + 1) * cout_g * kk];
                // dW[o, r] += sum_p g[o, p] * cols[r, p]
                T::gemm(cout_g, plane, kk, T::one(), gs, plane as isize, 1, b, 1, plane as isize, T::one(), dws, kk as isize, 1);
            }
            if let Some(dx) = dx.as_mut() {
                let dxs = &mut dx.data_mut()[xoff..xoff + cin_g * in_plane];
                if pointwise {
                    // dX[r, p] = sum_o W[o, r] g[o, p]
                    T::gemm(kk, cout_g, plane, T::one(), ws, 1, kk as isize, gs, plane as isize, 1, T::one(), dxs, plane as isize, 1);
                } else {
                    T::gemm(kk, cout_g, plane, T::one(), ws, 1, kk as isize, gs, plane as isize, 1, T::zero(), &mut dcols, plane as isize, 1);
                    col2im(&dcols, cin_g, &geo, dxs);
                }
            }
        }
    }
    (dx, dw, db)
}

fn depthwise_forward<T: Real>(x: &[T], w: &[T], geo: &ConvGeom, out: &mut [T]) {
    let (h, wd, ho, wo) = (geo.h, geo.w, geo.ho, geo.wo);
    let (s, p) = (geo.spec.stride, geo.spec.padding);
    let kk = geo.kh * geo.kw;
    for n in 0..geo.batch {
        for c in 0..geo.cin {
            let xin = &x[(n * geo.cin + c) * h * wd..(n * geo.cin + c + 1) * h * wd];
            let o = &mut out[(n * geo.cin + c) * ho * wo..(n * geo.cin + c + 1) * ho * wo];
            for ki in 0..geo.kh {
                let (ylo, yhi) = ConvGeom::valid(ho, h, ki, s, p);
                for kj in 0..geo.kw {
                    let wv = w[c * kk + ki * geo.kw + kj];
                    let (xlo, xhi) = ConvGeom::valid(wo, wd, kj, s, p);
                    for oy in ylo..yhi {
                        let iy = oy * s + ki - p;
                        let src = &xin[iy * wd..(iy + 1) * wd];
                        let dst = &mut o[oy * wo..(oy + 1) * wo];
                        if s == 1 {
                            let start = xlo + kj - p;
                            for (d, &v) in dst[xlo..xhi].iter_mut().zip(&src[start..start + (xhi - xlo)]) {
                                *d += wv * v;
                            }
                        } else {
                            for ox in xlo..xhi {
                                dst[ox] += wv * src[ox * s + kj - p];
                            }
                        }
                    }
                }
            }
        }
    }
}

fn depthwise_backward<T: Real>(
    x: &[T],
    w: &[T],
    g: &[T],
    geo: &ConvGeom,
    need_x: bool,
    need_w: bool,
) -> (Option<Vec<T>>, Option<Vec<T>>) {
    let (h, wd, ho, wo) = (geo.h, geo.w, geo.ho, geo.wo);
    let (s, p) = (geo.spec.stride, geo.spec.padding);
    let kk = geo.kh * geo.kw;
    let mut dx = need_x.then(|| vec![T::zero(); x.len()]);
    let mut dw = need_w.then(|| vec![T::zero(); w.len()]);
    for n in 0..geo.batch {
        for c in 0..geo.cin {
            let base_in = (n * geo.cin + c) * h * wd;
            let base_out = (n * geo.cin + c) * ho * wo;
            for ki in 0..geo.kh {
                let (ylo, yhi) = ConvGeom::valid(ho, h, ki, s, p);
                for kj in 0..geo.kw {
                    let widx = c * kk + ki * geo.kw + kj;
                    let wv = w[widx];
                    let (xlo, xhi) = ConvGeom::valid(wo, wd, kj, s, p);
                    let mut acc = T::zero();
                    for oy in ylo..yhi {
                        let iy = oy * s + ki - p;
                        let grow = &g[base_out + oy * wo..base_out + (oy + 1) * wo];
                        if need_w {
                            let xrow = &x[base_in + iy * wd..base_in + (iy + 1) * wd];
                            for ox in xlo..xhi {
                                acc += grow[ox] * xrow[ox * s + kj - p];
                            }
                        }
                        if let Some(dx) = dx.as_mut() {
                            let drow = &mut dx[base_in + iy * wd..base_in + (iy + 1) * wd];
                            for ox in xlo..xhi {
                                drow[ox * s + kj - p] += wv * grow[ox];
                            }
                        }
                    }
                    if let Some(dw) = dw.as_mut() {
                        dw[widx] += acc;
                    }
                }
            }
        }
    }
    (dx, dw)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct-definition convolution used as the reference.
    fn naive(x: &Tensor<f64>, w: &Tensor<f64>, b: Option<&Tensor<f64>>, spec: ConvSpec) -> Tensor<f64> {
        let geo = ConvGeom::new(x.shape(), w.shape(), spec);
        let (cin_g, cout_g) = (geo.cin / spec.groups, geo.cout / spec.groups);
        let mut out = Tensor::zeros(geo.out_shape());
        for n in 0..geo.batch {
            for o in 0..geo.cout {
                let gi = o / cout_g;
                for oy in 0..geo.ho {
                    for ox in 0..geo.wo {
                        let mut acc = b.map_or(0.0, |b| b.data()[o]);
                        for ci in 0..cin_g {
                            for ki in 0..geo.kh {
                                for kj in 0..geo.kw {
                                    let iy = (oy * spec.stride + ki) as isize - spec.padding as isize;
                                    let ix = (ox * spec.stride + kj) as isize - spec.padding as isize;
                                    if iy < 0 || ix < 0 || iy >= geo.h as isize || ix >= geo.w as isize {
                                        continue;
                                    }
                                    acc += w.at(&[o, ci, ki, kj]) * x.at(&[n, gi * cin_g + ci, iy as usize, ix as usize]);
                                }
                            }
                        }
                        out.set(&[n, o, oy, ox], acc);
                    }
                }
            }
        }
        out
    }

    fn pseudo(shape: &[usize], seed: u64) -> Tensor<f64> {
        let mut s = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        Tensor::from_fn(shape.to_vec(), |_| {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
        })
    }

    #[test]
    fn matches_direct_definition() {
        let cases = [
            ([2, 4, 5, 6], [6, 4, 3, 3], ConvSpec::new(1, 1, 1)),
            ([1, 4, 7, 7], [4, 2, 3, 3], ConvSpec::new(2, 1, 2)),
            ([2, 3, 5, 4], [3, 1, 3, 3], ConvSpec::new(1, 1, 3)),
            ([1, 4, 6, 6], [4, 1, 3, 3], ConvSpec::new(2, 0, 4)),
            ([2, 8, 3, 3], [4, 2, 1, 1], ConvSpec::new(1, 0, 4)),
            ([1, 2, 4, 4], [3, 2, 1, 1], ConvSpec::new(1, 0, 1)),
        ];
        for (i, (xs, ws, spec)) in cases.iter().enumerate() {
            let x = pseudo(xs, i as u64);
            let w = pseudo(ws, 100 + i as u64);
            let b = pseudo(&[ws[0]], 200 + i as u64);
            let fast = conv2d_forward(&x, &w, Some(&b), *spec);
            let slow = naive(&x, &w, Some(&b), *spec);
            assert!(fast.max_abs_diff(&slow) < 1e-12, "case {i}");
        }
    }

    #[test]
    fn backward_is_adjoint_of_forward() {
        // <conv(x), g> is bilinear in (x, w); check both gradients against
        // the directional derivative of the naive definition.
        let cases = [
            ([2, 4, 5, 6], [6, 4, 3, 3], ConvSpec::new(1, 1, 1)),
            ([1, 4, 7, 7], [4, 2, 3, 3], ConvSpec::new(2, 1, 2)),
            ([2, 3, 5, 4], [3, 1, 3, 3], ConvSpec::new(1, 1, 3)),
            ([1, 4, 6, 6], [4, 1, 3, 3], ConvSpec::new(2, 0, 4)),
            ([2, 8, 3, 3], [4, 2, 1, 1], ConvSpec::new(1, 0, 4)),
        ];
        for (i, (xs, ws, spec)) in cases.iter().enumerate() {
            let x = pseudo(xs, i as u64);
            let w = pseudo(ws, 10 + i as u64);
            let out_shape = ConvGeom::new(xs, ws, *spec).out_shape();
            let g = pseudo(&out_shape, 20 + i as u64);
            let dxdir = pseudo(xs, 30 + i as u64);
            let dwdir = pseudo(ws, 40 + i as u64);
            let (dx, dw, db) = conv2d_backward(&x, &w, &g, *spec, true, true, true);
            let inner = |a: &Tensor<f64>, b: &Tensor<f64>| a.data().iter().zip(b.data()).map(|(p, q)| p * q).sum::<f64>();
            // linear in x: <conv(dxdir, w), g> == <dx, dxdir>
            let lhs = inner(&naive(&dxdir, &w, None, *spec), &g);
            assert!((lhs - inner(&dx.unwrap(), &dxdir)).abs() < 1e-10, "dx case {i}");
            let lhs = inner(&naive(&x, &dwdir, None, *spec), &g);
            assert!((lhs - inner(&dw.unwrap(), &dwdir)).abs() < 1e-10, "dw case {i}");
            let total: f64 = g.data().iter().sum();
            assert!((db.unwrap().sum() - total).abs() < 1e-10);
        }
    }
}

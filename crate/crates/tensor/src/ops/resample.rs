//! Spatial resampling of `[..., H, W]` tensors: 2x2 average pooling and
//! bilinear resizing with half-pixel centers (`align_corners = false`).

use crate::real::Real;
use crate::tensor::Tensor;

fn planes(shape: &[usize]) -> (usize, usize, usize) {
    assert!(shape.len() >= 2, "spatial op needs [..., H, W], got {shape:?}");
    let r = shape.len();
    (shape[..r - 2].iter().product(), shape[r - 2], shape[r - 1])
}

fn with_hw(shape: &[usize], h: usize, w: usize) -> Vec<usize> {
    let mut s = shape.to_vec();
    let r = s.len();
    s[r - 2] = h;
    s[r - 1] = w;
    s
}

pub fn avg_pool2_forward<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    let (p, h, w) = planes(x.shape());
    let (ho, wo) = (h / 2, w / 2);
    let quarter = T::of(0.25);
    let xd = x.data();
    let mut out = vec![T::zero(); p * ho * wo];
    for pi in 0..p {
        let src = &xd[pi * h * w..];
        let dst = &mut out[pi * ho * wo..(pi + 1) * ho * wo];
        for oy in 0..ho {
            let r0 = &src[2 * oy * w..];
            let r1 = &src[(2 * oy + 1) * w..];
            for ox in 0..wo {
                dst[oy * wo + ox] = (r0[2 * ox] + r0[2 * ox + 1] + r1[2 * ox] + r1[2 * ox + 1]) * quarter;
            }
        }
    }
    Tensor::from_vec(with_hw(x.shape(), ho, wo), out)
}

pub fn avg_pool2_backward<T: Real>(in_shape: &[usize], g: &Tensor<T>) -> Tensor<T> {
    let (p, h, w) = planes(in_shape);
    let (ho, wo) = (h / 2, w / 2);
    let quarter = T::of(0.25);
    let gd = g.data();
    let mut dx = vec![T::zero(); p * h * w];
    for pi in 0..p {
        let gs = &gd[pi * ho * wo..(pi + 1) * ho * wo];
        let dst = &mut dx[pi * h * w..(pi + 1) * h * w];
        for oy in 0..ho {
            for ox in 0..wo {
                let v = gs[oy * wo + ox] * quarter;
                dst[2 * oy * w + 2 * ox] = v;
                dst[2 * oy * w + 2 * ox + 1] = v;
                dst[(2 * oy + 1) * w + 2 * ox] = v;
                dst[(2 * oy + 1) * w + 2 * ox + 1] = v;
            }
        }
    }
    Tensor::from_vec(in_shape.to_vec(), dx)
}

/// Per-output-index source pair and interpolation weight along one axis.
#[derive(Clone, Copy, Debug)]
pub struct Tap<T> {
    pub i0: usize,
    pub i1: usize,
    pub frac: T,
}

/// Bilinear taps for resizing an axis of length `n_in` to `n_out`
/// (half-pixel centers, edge clamped).
pub fn bilinear_taps<T: Real>(n_in: usize, n_out: usize) -> Vec<Tap<T>> {
    let scale = n_in as f64 / n_out as f64;
    (0..n_out)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(n_in - 1);
            let i1 = (i0 + 1).min(n_in - 1);
            let frac = if i0 == i1 { 0.0 } else { src - i0 as f64 };
            Tap { i0, i1, frac: T::of(frac) }
        })
        .collect()
}

pub fn resize_bilinear_forward<T: Real>(x: &Tensor<T>, oh: usize, ow: usize) -> Tensor<T> {
    let (p, h, w) = planes(x.shape());
    if (h, w) == (oh, ow) {
        return x.clone();
    }
    let ty = bilinear_taps::<T>(h, oh);
    let tx = bilinear_taps::<T>(w, ow);
    let xd = x.data();
    let mut rows = vec![T::zero(); h * ow];
    let mut out = vec![T::zero(); p * oh * ow];
    for pi in 0..p {
        let src = &xd[pi * h * w..(pi + 1) * h * w];
        for y in 0..h {
            let s = &src[y * w..(y + 1) * w];
            let d = &mut rows[y * ow..(y + 1) * ow];
            for (dv, t) in d.iter_mut().zip(&tx) {
                *dv = s[t.i0] + (s[t.i1] - s[t.i0]) * t.frac;
            }
        }
        let dst = &mut out[pi * oh * ow..(pi + 1) * oh * ow];
        for (oy, t) in ty.iter().enumerate() {
            let r0 = &rows[t.i0 * ow..(t.i0 + 1) * ow];
            let r1 = &rows[t.i1 * ow..(t.i1 + 1) * ow];
            let d = &mut dst[oy * ow..(oy + 1) * ow];
            let a = T::one() - t.frac;
            for ((dv, &u), &v) in d.iter_mut().zip(r0).zip(r1) {
                *dv = u * a + v * t.frac;
            }
        }
    }
    Tensor::from_vec(with_hw(x.shape(), oh, ow), out)
}

pub fn resize_bilinear_backward<T: Real>(in_shape: &[usize], g: &Tensor<T>) -> Tensor<T> {
    let (p, h, w) = planes(in_shape);
    let (_, oh, ow) = planes(g.shape());
    if (h, w) == (oh, ow) {
        return g.clone();
    }
    let ty = bilinear_taps::<T>(h, oh);
    let tx = bilinear_taps::<T>(w, ow);
    let gd = g.data();
    let mut rows = vec![T::zero(); h * ow];
    let mut dx = vec![T::zero(); p * h * w];
    for pi in 0..p {
        rows.fill(T::zero());
        let gs = &gd[pi * oh * ow..(pi + 1) * oh * ow];
        for (oy, t) in ty.iter().enumerate() {
            let a = T::one() - t.frac;
            let gr = &gs[oy * ow..(oy + 1) * ow];
            for (x, &v) in gr.iter().enumerate() {
                rows[t.i0 * ow + x] += v * a;
                rows[t.i1 * ow + x] += v * t.frac;
            }
        }
        let dst = &mut dx[pi * h * w..(pi + 1) * h * w];
        for y in 0..h {
            let r = &rows[y * ow..(y + 1) * ow];
            let d = &mut dst[y * w..(y + 1) * w];
            for (t, &v) in tx.iter().zip(r) {
                d[t.i0] += v * (T::one() - t.frac);
                d[t.i1] += v * t.frac;
            }
        }
    }
    Tensor::from_vec(in_shape.to_vec(), dx)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn upsample_2x_matches_quarter_weights() {
        // 1-D signal [0, 4] upsampled to 4: centers at -0.25, 0.25, 0.75, 1.25
        let x = Tensor::from_vec([1, 2], vec![0.0f64, 4.0]);
        let y = resize_bilinear_forward(&x, 1, 4);
        assert_eq!(y.data(), &[0.0, 1.0, 3.0, 4.0]);
    }

    #[test]
    fn constant_is_preserved_both_ways() {
        let x = Tensor::full([2, 5, 7], 3.5f64);
        let up = resize_bilinear_forward(&x, 13, 9);
        assert!(up.data().iter().all(|&v| (v - 3.5).abs() < 1e-12));
        let down = resize_bilinear_forward(&x, 2, 3);
        assert!(down.data().iter().all(|&v| (v - 3.5).abs() < 1e-12));
    }

    #[test]
    fn same_size_is_identity() {
        let x = Tensor::from_fn([3, 4, 4], |i| i as f32 * 0.37);
        assert_eq!(resize_bilinear_forward(&x, 4, 4), x);
    }

    #[test]
    fn resize_backward_is_adjoint() {
        let x = Tensor::from_fn([2, 3, 5], |i| ((i * 7) % 11) as f64 - 5.0);
        let g = Tensor::from_fn([2, 7, 4], |i| ((i * 5) % 13) as f64 * 0.1);
        let y = resize_bilinear_forward(&x, 7, 4);
        let dx = resize_bilinear_backward(x.shape(), &g);
        let lhs: f64 = y.data().iter().zip(g.data()).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.data().iter().zip(dx.data()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }

    #[test]
    fn avg_pool_backward_is_adjoint() {
        let x = Tensor::from_fn([2, 4, 6], |i| (i % 5) as f64);
        let g = Tensor::from_fn([2, 2, 3], |i| i as f64);
        let y = avg_pool2_forward(&x);
        let dx = avg_pool2_backward(x.shape(), &g);
        let lhs: f64 = y.data().iter().zip(g.data()).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.data().iter().zip(dx.data()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }
}

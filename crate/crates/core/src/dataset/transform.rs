use tsonet_tensor::ops::resample::resize_bilinear_forward;
use tsonet_tensor::Tensor;

use super::bands::BandSet;
use super::patch::Patch;
use crate::error::{Error, Result};

/// Overlap weights for averaging `n_in` cells into `n_out` equal spans.
fn area_weights(n_in: usize, n_out: usize) -> Vec<Vec<(usize, f64)>> {
    let span = n_in as f64 / n_out as f64;
    (0..n_out)
        .map(|j| {
            let (lo, hi) = (j as f64 * span, (j + 1) as f64 * span);
            let first = lo.floor() as usize;
            let last = (hi.ceil() as usize).min(n_in);
            (first..last)
                .filter_map(|i| {
                    let overlap = hi.min(i as f64 + 1.0) - lo.max(i as f64);
                    (overlap > 0.0).then_some((i, overlap / span))
                })
                .collect()
        })
        .collect()
}

/// Exact fractional-area average of each `[.., H, W]` plane down to
/// `[.., oh, ow]`.
pub fn area_downsample(x: &Tensor<f64>, oh: usize, ow: usize) -> Tensor<f64> {
    let r = x.rank();
    let (h, w) = (x.dim(r - 2), x.dim(r - 1));
    let planes = x.numel() / (h * w);
    let wy = area_weights(h, oh);
    let wx = area_weights(w, ow);
    let mut out = vec![0.0; planes * oh * ow];
    let mut rows = vec![0.0; h * ow];
    for p in 0..planes {
        let src = &x.data()[p * h * w..(p + 1) * h * w];
        for y in 0..h {
            for (ox, taps) in wx.iter().enumerate() {
                rows[y * ow + ox] = taps.iter().map(|&(i, a)| a * src[y * w + i]).sum();
            }
        }
        let dst = &mut out[p * oh * ow..(p + 1) * oh * ow];
        for (oy, taps) in wy.iter().enumerate() {
            for ox in 0..ow {
                dst[oy * ow + ox] = taps.iter().map(|&(i, a)| a * rows[i * ow + ox]).sum();
            }
        }
    }
    let mut shape = x.shape().to_vec();
    shape[r - 2] = oh;
    shape[r - 1] = ow;
    Tensor::from_vec(shape, out)
}

/// Simulates a coarser sensor: area-average to the target sampling, then
/// bilinear resampling back to the original grid. Labels are untouched.
pub fn degrade_resolution(patch: &Patch, target_gsd_m: f64) -> Result<Patch> {
    let native = patch.meta.gsd_m;
    if !(target_gsd_m.is_finite() && target_gsd_m >= native - 1e-9) {
        return Err(Error::config(format!(
            "target gsd {target_gsd_m} m is finer than the native {native} m"
        )));
    }
    let mut out = patch.clone();
    out.meta.gsd_m = target_gsd_m;
    let factor = target_gsd_m / native;
    if (factor - 1.0).abs() < 1e-12 {
        return Ok(out);
    }
    let (h, w) = (patch.height(), patch.width());
    let oh = ((h as f64 / factor).round() as usize).max(1);
    let ow = ((w as f64 / factor).round() as usize).max(1);
    let low = area_downsample(&patch.image.cast::<f64>(), oh, ow);
    out.image = resize_bilinear_forward(&low, h, w).cast();
    Ok(out)
}

/// Keeps the bands of `set`, in its order. Pixels are copied verbatim.
pub fn select_bands(patch: &Patch, set: BandSet) -> Result<Patch> {
    let plane = patch.height() * patch.width();
    let mut image = Vec::with_capacity(set.len() * plane);
    for name in set.names() {
        let k = patch
            .meta
            .band_order
            .iter()
            .position(|b| b == name)
            .ok_or_else(|| Error::config(format!("band {name} not present in {:?}", patch.meta.band_order)))?;
        image.extend_from_slice(&patch.image.data()[k * plane..(k + 1) * plane]);
    }
    let mut out = patch.clone();
    out.image = Tensor::from_vec([set.len(), patch.height(), patch.width()], image);
    out.meta.band_order = set.names().iter().map(|s| s.to_string()).collect();
    Ok(out)
}

/// Per-band mean and standard deviation over valid pixels of all patches.
pub fn band_statistics(patches: &[Patch]) -> Result<(Vec<f64>, Vec<f64>)> {
    let bands = patches.first().map(Patch::bands).ok_or_else(|| Error::data("no patches for band statistics"))?;
    let mut sum = vec![0.0f64; bands];
    let mut sq = vec![0.0f64; bands];
    let mut n = 0u64;
    for p in patches {
        if p.bands() != bands {
            return Err(Error::Shape(format!("band count {} differs from {bands}", p.bands())));
        }
        let hw = p.height() * p.width();
        let img = p.image.data();
        for (i, &v) in p.valid.data().iter().enumerate() {
            if v == 0 {
                continue;
            }
            n += 1;
            for b in 0..bands {
                let x = img[b * hw + i] as f64;
                sum[b] += x;
                sq[b] += x * x;
            }
        }
    }
    if n == 0 {
        return Err(Error::data("no valid pixels for band statistics"));
    }
    let mean: Vec<f64> = sum.iter().map(|s| s / n as f64).collect();
    let std = sq
        .iter()
        .zip(&mean)
        .map(|(s, m)| (s / n as f64 - m * m).max(0.0).sqrt().max(1e-6))
        .collect();
    Ok((mean, std))
}

//! Footprint, interior and weight maps derived from a height label.

use tsonet_tensor::Tensor;

use crate::error::{Error, Result};

pub const DEFAULT_TAU_FP: f32 = 2.0;
pub const DEFAULT_ALPHA_OUTER: f32 = 0.1;

#[derive(Clone, Debug, PartialEq)]
pub struct SupervisionPack {
    pub footprint: Tensor<u8>,
    pub interior: Tensor<u8>,
    pub weights: Tensor<f32>,
    pub tau_fp: f32,
    pub alpha_outer: f32,
}

impl SupervisionPack {
    pub fn derive(heights: &Tensor<f32>, tau_fp: f32, alpha_outer: f32) -> Result<Self> {
        let footprint = derive_footprint_mask(heights, tau_fp);
        let interior = erode_footprint(&footprint);
        let weights = build_weight_map(&interior, alpha_outer)?;
        Ok(Self {
            footprint,
            interior,
            weights,
            tau_fp,
            alpha_outer,
        })
    }
}

/// `1(h > tau)`, strict.
pub fn derive_footprint_mask(heights: &Tensor<f32>, tau_fp: f32) -> Tensor<u8> {
    heights.map(|h| (h > tau_fp) as u8)
}

/// `1 - maxpool3x3(1 - fp)` with zero padding of the complement, so the
/// frame edge never erodes a building.
pub fn erode_footprint(fp: &Tensor<u8>) -> Tensor<u8> {
    assert_eq!(fp.rank(), 2, "footprint must be [H, W]");
    let (h, w) = (fp.dim(0), fp.dim(1));
    let d = fp.data();
    Tensor::from_fn([h, w], |i| {
        let (y, x) = (i / w, i % w);
        let ys = y.saturating_sub(1)..(y + 2).min(h);
        let all_inside = ys.into_iter().all(|yy| (x.saturating_sub(1)..(x + 2).min(w)).all(|xx| d[yy * w + xx] == 1));
        all_inside as u8
    })
}

/// `I + alpha * (1 - I)`.
pub fn build_weight_map(interior: &Tensor<u8>, alpha_outer: f32) -> Result<Tensor<f32>> {
    if !(alpha_outer > 0.0 && alpha_outer <= 1.0) {
        return Err(Error::config(format!("alpha_outer {alpha_outer} must lie in (0, 1]")));
    }
    Ok(interior.map(|i| if i == 1 { 1.0 } else { alpha_outer }))
}

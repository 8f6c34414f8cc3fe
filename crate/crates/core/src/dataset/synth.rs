use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, Normal};
use serde::{Deserialize, Serialize};
use tsonet_tensor::Tensor;

use super::bands::default_band_order;
use super::patch::{Patch, PatchMeta, NATIVE_GSD_M};
use crate::error::{Error, Result};

/// Parameters of the synthetic rectangle-city generator.
///
/// Ranges are inclusive `[min, max]`. Band `k` is rendered as
/// `offset[k] + footprint[k] * fp + height[k] * h / height_max + noise`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSceneSpec {
    pub size: usize,
    pub n_buildings: [usize; 2],
    pub footprint_px: [usize; 2],
    pub height_log_mean: f64,
    pub height_log_std: f64,
    pub height_min: f64,
    pub height_max: f64,
    pub band_offset: [f64; 7],
    pub band_footprint: [f64; 7],
    pub band_height: [f64; 7],
    pub noise_std: f64,
    pub gsd_m: f64,
}

impl Default for SyntheticSceneSpec {
    fn default() -> Self {
        Self {
            size: 256,
            n_buildings: [4, 16],
            footprint_px: [8, 40],
            // median about 12 m with a long upper tail
            height_log_mean: 2.5,
            height_log_std: 0.6,
            height_min: 3.0,
            height_max: 80.0,
            band_offset: [0.08, 0.10, 0.12, 0.15, 0.18, 0.20, 0.22],
            band_footprint: [0.10, 0.09, 0.08, 0.05, 0.02, 0.0, -0.05],
            band_height: [0.05, 0.06, 0.07, 0.08, 0.10, 0.12, 0.15],
            noise_std: 0.005,
            gsd_m: NATIVE_GSD_M,
        }
    }
}

impl SyntheticSceneSpec {
    /// Default rendering at a smaller patch size, with footprints scaled
    /// to match.
    pub fn with_size(size: usize) -> Self {
        let d = Self::default();
        let linear = |v: usize| v * size / d.size;
        let area = |v: usize| v * size * size / (d.size * d.size);
        Self {
            size,
            n_buildings: [area(d.n_buildings[0]).max(1), area(d.n_buildings[1]).max(3)],
            footprint_px: [linear(d.footprint_px[0]).max(4), linear(d.footprint_px[1]).clamp(6, size)],
            ..d
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::config(format!("synthetic spec: {msg}")));
        if self.size == 0 {
            return bad("size must be positive");
        }
        if self.n_buildings[0] > self.n_buildings[1] {
            return bad("n_buildings min exceeds max");
        }
        let [f0, f1] = self.footprint_px;
        if f0 == 0 || f0 > f1 || f1 > self.size {
            return bad("footprint_px must satisfy 1 <= min <= max <= size");
        }
        if !(self.height_min > 0.0 && self.height_min <= self.height_max) {
            return bad("heights must satisfy 0 < height_min <= height_max");
        }
        if !(self.height_log_std >= 0.0 && self.height_log_mean.is_finite()) {
            return bad("invalid log-normal parameters");
        }
        if !(self.noise_std >= 0.0 && self.gsd_m > 0.0) {
            return bad("noise_std and gsd_m must be non-negative and positive");
        }
        let coeffs = self.band_offset.iter().chain(&self.band_footprint).chain(&self.band_height);
        if coeffs.into_iter().any(|c| !c.is_finite()) {
            return bad("band coefficients must be finite");
        }
        Ok(())
    }
}

#[derive(Clone, Copy)]
struct Rect {
    y: usize,
    x: usize,
    h: usize,
    w: usize,
}

impl Rect {
    /// Overlap test with a one-pixel gap so neighbouring buildings stay
    /// separable after thresholding.
    fn touches(&self, o: &Rect) -> bool {
        self.y < o.y + o.h + 1 && o.y < self.y + self.h + 1 && self.x < o.x + o.w + 1 && o.x < self.x + self.w + 1
    }
}

/// Renders a seeded scene of non-overlapping rectangular buildings.
pub fn generate_synthetic_scene(spec: &SyntheticSceneSpec, seed: u64) -> Result<Patch> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = spec.size;
    let heights_dist = LogNormal::new(spec.height_log_mean, spec.height_log_std)
        .map_err(|e| Error::config(format!("synthetic spec: {e}")))?;

    let count = rng.gen_range(spec.n_buildings[0]..=spec.n_buildings[1]);
    let mut placed: Vec<Rect> = Vec::with_capacity(count);
    let mut heights = vec![0.0f32; n * n];
    for _ in 0..count {
        let h = rng.gen_range(spec.footprint_px[0]..=spec.footprint_px[1]);
        let w = rng.gen_range(spec.footprint_px[0]..=spec.footprint_px[1]);
        let value = heights_dist.sample(&mut rng).clamp(spec.height_min, spec.height_max) as f32;
        for _attempt in 0..50 {
            let r = Rect {
                y: rng.gen_range(0..=n - h),
                x: rng.gen_range(0..=n - w),
                h,
                w,
            };
            if placed.iter().any(|p| p.touches(&r)) {
                continue;
            }
            for yy in r.y..r.y + r.h {
                heights[yy * n + r.x..yy * n + r.x + r.w].fill(value);
            }
            placed.push(r);
            break;
        }
    }

    let noise = Normal::new(0.0, spec.noise_std).expect("validated noise_std");
    let plane = n * n;
    let mut image = vec![0.0f32; 7 * plane];
    for k in 0..7 {
        for i in 0..plane {
            let h = heights[i] as f64;
            let fp = if h > 0.0 { 1.0 } else { 0.0 };
            let mut v = spec.band_offset[k] + spec.band_footprint[k] * fp + spec.band_height[k] * h / spec.height_max;
            if spec.noise_std > 0.0 {
                v += noise.sample(&mut rng);
            }
            image[k * plane + i] = v as f32;
        }
    }
    // a pixel that happens to render as exactly 0.0 in every band would read as NoData
    for i in 0..plane {
        if (0..7).all(|k| image[k * plane + i] == 0.0) {
            image[i] = f32::MIN_POSITIVE;
        }
    }

    let meta = PatchMeta {
        scene_id: format!("synth-{seed:08}"),
        gsd_m: spec.gsd_m,
        band_order: default_band_order(),
    };
    Patch::new(Tensor::from_vec([7, n, n], image), Tensor::from_vec([n, n], heights), meta)
}

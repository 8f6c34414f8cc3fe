use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tsonet_tensor::Tensor;

use super::bands::default_band_order;
use crate::error::{Error, Result};

/// Native ground sampling distance of the imagery in metres.
pub const NATIVE_GSD_M: f64 = 4.75;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatchMeta {
    pub scene_id: String,
    pub gsd_m: f64,
    pub band_order: Vec<String>,
}

impl PatchMeta {
    pub fn new(scene_id: impl Into<String>) -> Self {
        Self {
            scene_id: scene_id.into(),
            gsd_m: NATIVE_GSD_M,
            band_order: default_band_order(),
        }
    }
}

/// A co-registered image, height label and valid mask.
///
/// `image` is `[bands, H, W]`, `heights` and `valid` are `[H, W]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Patch {
    pub image: Tensor<f32>,
    pub heights: Tensor<f32>,
    pub valid: Tensor<u8>,
    pub meta: PatchMeta,
}

/// 1 where at least one band differs from the NoData value 0.0.
pub fn nodata_mask(image: &Tensor<f32>) -> Tensor<u8> {
    let (b, h, w) = (image.dim(0), image.dim(1), image.dim(2));
    let plane = h * w;
    let d = image.data();
    Tensor::from_fn([h, w], |i| (0..b).any(|k| d[k * plane + i] != 0.0) as u8)
}

impl Patch {
    /// Validates the arrays and derives the valid mask. Heights under
    /// NoData pixels are forced to 0.
    pub fn new(image: Tensor<f32>, mut heights: Tensor<f32>, meta: PatchMeta) -> Result<Self> {
        if image.rank() != 3 || heights.rank() != 2 || image.shape()[1..] != *heights.shape() {
            return Err(Error::Shape(format!(
                "image {:?} and heights {:?} are not co-registered",
                image.shape(),
                heights.shape()
            )));
        }
        if meta.band_order.len() != image.dim(0) {
            return Err(Error::Shape(format!(
                "{} bands but band_order lists {}",
                image.dim(0),
                meta.band_order.len()
            )));
        }
        if !image.is_finite() || !heights.is_finite() {
            return Err(Error::data(format!("{}: non-finite values", meta.scene_id)));
        }
        if heights.data().iter().any(|&h| h < 0.0) {
            return Err(Error::data(format!("{}: negative heights", meta.scene_id)));
        }
        let valid = nodata_mask(&image);
        for (h, &v) in heights.data_mut().iter_mut().zip(valid.data()) {
            if v == 0 {
                *h = 0.0;
            }
        }
        Ok(Self {
            image,
            heights,
            valid,
            meta,
        })
    }

    pub fn bands(&self) -> usize {
        self.image.dim(0)
    }

    pub fn height(&self) -> usize {
        self.image.dim(1)
    }

    pub fn width(&self) -> usize {
        self.image.dim(2)
    }

    /// Number of pixels above `tau` metres.
    pub fn building_pixels(&self, tau: f32) -> usize {
        self.heights.data().iter().filter(|&&h| h > tau).count()
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    shape: Vec<usize>,
    label_shape: Vec<usize>,
    dtype: String,
    band_order: Vec<String>,
    gsd_m: f64,
    scene_id: String,
}

fn sibling(stem: &Path, suffix: &str) -> PathBuf {
    let mut s = stem.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

/// `samples/abc.json` and `samples/abc` both map to `samples/abc`.
fn stem_of(path: &Path) -> PathBuf {
    let s = path.to_string_lossy();
    for suffix in [".json", ".img.f32", ".hgt.f32"] {
        if let Some(stem) = s.strip_suffix(suffix) {
            return PathBuf::from(stem);
        }
    }
    path.to_path_buf()
}

fn write_f32(path: &Path, data: &[f32]) -> Result<()> {
    let bytes: Vec<u8> = data.iter().flat_map(|v| v.to_le_bytes()).collect();
    fs::write(path, bytes).map_err(Error::io(path))
}

fn read_f32(path: &Path, expected: usize) -> Result<Vec<f32>> {
    let bytes = fs::read(path).map_err(Error::io(path))?;
    if bytes.len() != expected * 4 {
        return Err(Error::Format {
            path: path.to_path_buf(),
            msg: format!("expected {expected} float32 values, found {} bytes", bytes.len()),
        });
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

/// Writes `<dir>/<id>.json`, `<id>.img.f32` and `<id>.hgt.f32`; returns the
/// header path.
pub fn save_patch(patch: &Patch, dir: &Path, id: &str) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(Error::io(dir))?;
    let stem = dir.join(id);
    let header = Header {
        shape: patch.image.shape().to_vec(),
        label_shape: patch.heights.shape().to_vec(),
        dtype: "float32".into(),
        band_order: patch.meta.band_order.clone(),
        gsd_m: patch.meta.gsd_m,
        scene_id: patch.meta.scene_id.clone(),
    };
    let header_path = sibling(&stem, ".json");
    let text = serde_json::to_string_pretty(&header).map_err(Error::json(&header_path))?;
    fs::write(&header_path, text).map_err(Error::io(&header_path))?;
    write_f32(&sibling(&stem, ".img.f32"), patch.image.data())?;
    write_f32(&sibling(&stem, ".hgt.f32"), patch.heights.data())?;
    Ok(header_path)
}

/// Loads a sample given its header, image or label path (or the bare stem).
pub fn load_patch(path: &Path) -> Result<Patch> {
    let stem = stem_of(path);
    let header_path = sibling(&stem, ".json");
    let img_path = sibling(&stem, ".img.f32");
    let hgt_path = sibling(&stem, ".hgt.f32");
    for p in [&header_path, &img_path, &hgt_path] {
        if !p.exists() {
            return Err(Error::Pairing(p.clone()));
        }
    }
    let text = fs::read_to_string(&header_path).map_err(Error::io(&header_path))?;
    let header: Header = serde_json::from_str(&text).map_err(Error::json(&header_path))?;
    let format_err = |msg: String| Error::Format {
        path: header_path.clone(),
        msg,
    };
    if header.dtype != "float32" {
        return Err(format_err(format!("unsupported dtype `{}`", header.dtype)));
    }
    if header.shape.len() != 3 || header.label_shape.len() != 2 || header.shape[1..] != header.label_shape[..] {
        return Err(format_err(format!(
            "image shape {:?} does not match label shape {:?}",
            header.shape, header.label_shape
        )));
    }
    if header.band_order.len() != header.shape[0] {
        return Err(format_err(format!(
            "band_order has {} names for {} bands",
            header.band_order.len(),
            header.shape[0]
        )));
    }
    let image = read_f32(&img_path, header.shape.iter().product())?;
    let heights = read_f32(&hgt_path, header.label_shape.iter().product())?;
    let meta = PatchMeta {
        scene_id: header.scene_id,
        gsd_m: header.gsd_m,
        band_order: header.band_order,
    };
    Patch::new(
        Tensor::from_vec(header.shape, image),
        Tensor::from_vec(header.label_shape, heights),
        meta,
    )
}

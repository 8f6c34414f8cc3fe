use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::patch::{load_patch, save_patch, Patch};
use super::split::{split_dataset, Split, SplitManifest};
use crate::error::{Error, Result};

/// Contents of `manifest.json` at the dataset root.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub patch_size: usize,
    pub bands: usize,
    pub gsd_m: f64,
    pub split: SplitManifest,
}

/// A dataset directory: `manifest.json` plus `samples/<id>.{json,img.f32,hgt.f32}`.
#[derive(Clone, Debug)]
pub struct Dataset {
    root: PathBuf,
    manifest: DatasetManifest,
}

impl Dataset {
    pub fn open(root: impl AsRef<Path>) -> Result<Self> {
        let root = root.as_ref().to_path_buf();
        let path = root.join("manifest.json");
        let text = fs::read_to_string(&path).map_err(Error::io(&path))?;
        let manifest = serde_json::from_str(&text).map_err(Error::json(&path))?;
        Ok(Self { root, manifest })
    }

    /// Writes every patch and a fresh seeded split.
    pub fn create(root: impl AsRef<Path>, patches: &[Patch], ratios: (f64, f64, f64), seed: u64) -> Result<Self> {
        let root = root.as_ref().to_path_buf();
        let first = patches.first().ok_or_else(|| Error::config("no patches to write"))?;
        let samples = root.join("samples");
        let mut paths = Vec::with_capacity(patches.len());
        for p in patches {
            if p.image.shape() != first.image.shape() {
                return Err(Error::Shape(format!(
                    "{}: image {:?} differs from {:?}",
                    p.meta.scene_id,
                    p.image.shape(),
                    first.image.shape()
                )));
            }
            save_patch(p, &samples, &p.meta.scene_id)?;
            paths.push(format!("samples/{}.json", p.meta.scene_id));
        }
        let manifest = DatasetManifest {
            patch_size: first.height(),
            bands: first.bands(),
            gsd_m: first.meta.gsd_m,
            split: split_dataset(&paths, ratios, seed)?,
        };
        let path = root.join("manifest.json");
        let text = serde_json::to_string_pretty(&manifest).map_err(Error::json(&path))?;
        fs::write(&path, text).map_err(Error::io(&path))?;
        Ok(Self { root, manifest })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn manifest(&self) -> &DatasetManifest {
        &self.manifest
    }

    pub fn paths(&self, split: Split) -> Vec<PathBuf> {
        self.manifest.split.paths(split).map(|p| self.root.join(p)).collect()
    }

    pub fn load(&self, split: Split) -> Result<Vec<Patch>> {
        self.paths(split).iter().map(|p| load_patch(p)).collect()
    }
}

//! Patch samples, on-disk layout, splitting, synthetic scenes, and the
//! resolution and band utilities.

mod bands;
mod patch;
mod split;
mod store;
mod synth;
mod transform;

pub use bands::{band, Band, BandSet, PHISAT2_BANDS};
pub use patch::{load_patch, nodata_mask, save_patch, Patch, PatchMeta, NATIVE_GSD_M};
pub use split::{split_counts, split_dataset, Split, SplitEntry, SplitManifest, DEFAULT_RATIOS};
pub use store::{Dataset, DatasetManifest};
pub use synth::{generate_synthetic_scene, SyntheticSceneSpec};
pub use transform::{area_downsample, band_statistics, degrade_resolution, select_bands};

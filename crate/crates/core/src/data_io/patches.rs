use std::collections::VecDeque;

use conncrack_nn::Tensor;
use serde::{Deserialize, Serialize};

use super::image::{image_to_tensor, load_image, load_mask, Image};
use super::manifest::{DatasetManifest, ManifestEntry, Split};
use crate::connmap::{encode, ConnectivityMaps};
use crate::error::{config, dimension, Result};
use crate::mask::BinaryMask;

/// One training pair: a `3×p×p` image patch in `[-1, 1]` and the
/// connectivity maps of its cropped mask.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub image: Tensor<f32>,
    pub maps: ConnectivityMaps,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KeepRule {
    #[default]
    All,
    /// Drop patches whose mask holds no crack pixel.
    CrackOnly,
}

/// Top-left corners of every full `patch×patch` window on a stride grid,
/// row-major. Partial windows at the right and bottom are skipped.
pub fn patch_origins(height: usize, width: usize, patch: usize, stride: usize) -> Vec<(usize, usize)> {
    if patch > height || patch > width {
        return Vec::new();
    }
    let ys = (0..=height - patch).step_by(stride);
    ys.flat_map(|y| (0..=width - patch).step_by(stride).map(move |x| (y, x))).collect()
}

fn check_geometry(patch: usize, stride: usize) -> Result<()> {
    if patch == 0 || stride == 0 {
        return config(format!("patch size and stride must be positive, got {patch} and {stride}"));
    }
    Ok(())
}

/// Crop each window from the image and mask, then encode the cropped mask.
pub fn patches_from_pair(
    image: &Image,
    mask: &BinaryMask,
    patch: usize,
    stride: usize,
    keep: KeepRule,
) -> Result<Vec<Sample>> {
    check_geometry(patch, stride)?;
    if (image.height(), image.width()) != (mask.height(), mask.width()) {
        return dimension(format!(
            "image {}×{} and mask {}×{} are not aligned",
            image.height(),
            image.width(),
            mask.height(),
            mask.width()
        ));
    }
    let mut out = Vec::new();
    for (y, x) in patch_origins(image.height(), image.width(), patch, stride) {
        let m = mask.crop(y, x, patch, patch)?;
        if keep == KeepRule::CrackOnly && m.is_empty() {
            continue;
        }
        out.push(Sample { image: image_to_tensor(&image.crop(y, x, patch, patch)?), maps: encode(&m) });
    }
    Ok(out)
}

/// Lazily loads manifest entries in order and yields their patches.
pub struct PatchIter {
    entries: Vec<ManifestEntry>,
    next_entry: usize,
    buffer: VecDeque<Sample>,
    patch: usize,
    stride: usize,
    keep: KeepRule,
}

impl Iterator for PatchIter {
    type Item = Result<Sample>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            if let Some(s) = self.buffer.pop_front() {
                return Some(Ok(s));
            }
            let entry = self.entries.get(self.next_entry)?;
            self.next_entry += 1;
            let loaded = load_image(&entry.image)
                .and_then(|img| Ok((img, load_mask(&entry.mask)?)))
                .and_then(|(img, mask)| patches_from_pair(&img, &mask, self.patch, self.stride, self.keep));
            match loaded {
                Ok(samples) => self.buffer.extend(samples),
                Err(e) => {
                    self.next_entry = self.entries.len();
                    return Some(Err(e));
                }
            }
        }
    }
}

/// Patches of the entries tagged `split` (all entries when `None`), in
/// manifest order.
pub fn patch_dataset(
    manifest: &DatasetManifest,
    split: Option<Split>,
    patch: usize,
    stride: usize,
    keep: KeepRule,
) -> Result<PatchIter> {
    check_geometry(patch, stride)?;
    let entries = manifest.entries.iter().filter(|e| split.is_none_or(|s| e.split == s)).cloned().collect();
    Ok(PatchIter { entries, next_entry: 0, buffer: VecDeque::new(), patch, stride, keep })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn origin_grid() {
        assert_eq!(patch_origins(256, 256, 128, 128), vec![(0, 0), (0, 128), (128, 0), (128, 128)]);
        assert_eq!(patch_origins(100, 300, 128, 64), vec![]);
        assert_eq!(patch_origins(130, 128, 128, 64).len(), 1);
    }

    #[test]
    fn crack_only_drops_empty_patches() {
        let img = Image::new(8, 8, 3).unwrap();
        let mut mask = BinaryMask::new(8, 8);
        mask.set(1, 1, true);
        assert_eq!(patches_from_pair(&img, &mask, 4, 4, KeepRule::All).unwrap().len(), 4);
        assert_eq!(patches_from_pair(&img, &mask, 4, 4, KeepRule::CrackOnly).unwrap().len(), 1);
        assert!(patches_from_pair(&img, &BinaryMask::new(8, 7), 4, 4, KeepRule::All).is_err());
        assert!(patches_from_pair(&img, &mask, 4, 0, KeepRule::All).is_err());
    }

    #[test]
    fn empty_manifest_yields_nothing() {
        let it = patch_dataset(&DatasetManifest::default(), None, 64, 64, KeepRule::All).unwrap();
        assert_eq!(it.count(), 0);
    }
}

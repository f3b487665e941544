//! Image and mask codecs, dataset manifests, the synthetic crack generator
//! and patch extraction.

mod image;
mod manifest;
mod patches;
mod synth;

pub use image::{
    decode_png, decode_pnm, encode_png, encode_pnm, image_to_mask, image_to_tensor, load_image, load_mask, save_image,
    Image,
};
pub use manifest::{split_manifest, DatasetManifest, ManifestEntry, Split};
pub use patches::{patch_dataset, patch_origins, patches_from_pair, KeepRule, PatchIter, Sample};
pub use synth::{synth_sample, SynthSpec};

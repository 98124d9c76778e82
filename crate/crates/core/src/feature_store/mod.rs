//! On-disk contracts: feature pyramids, dataset manifests and PGM masks.

mod manifest;
mod pgm;
mod pyramid;

pub use manifest::{
    load_manifest, write_manifest, Dataset, DatasetManifest, Label, ManifestEntry, Split,
    FEATURES_DIR, MANIFEST_FILE,
};
pub use pgm::{decode_pgm, encode_pgm, read_pgm, write_mask, write_pgm, GrayImage};
pub use pyramid::{
    read_pyramid, write_pyramid, FeatureMap, FeaturePyramid, PYRAMID_MAGIC, PYRAMID_VERSION,
};

pub(crate) use pyramid::ByteReader;

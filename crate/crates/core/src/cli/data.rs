use crate::error::{Error, Result};
use crate::feature_store::{
    read_pgm, read_pyramid, Dataset, FeaturePyramid, Label, ManifestEntry, Split,
};
use crate::scoring::par_map;

pub(crate) fn entries(ds: &Dataset, split: Split) -> Vec<ManifestEntry> {
    ds.manifest
        .entries
        .iter()
        .filter(|e| e.split == split)
        .cloned()
        .collect()
}

pub(crate) fn load_pyramids(
    ds: &Dataset,
    entries: &[ManifestEntry],
    threads: usize,
) -> Result<Vec<FeaturePyramid>> {
    par_map(entries, threads, |e| {
        let p = read_pyramid(ds.feature_path(&e.image_id))?;
        if p.image_id != e.image_id {
            return Err(Error::Data {
                path: ds.feature_path(&e.image_id).display().to_string(),
                msg: format!(
                    "file holds image {:?}, manifest expects {:?}",
                    p.image_id, e.image_id
                ),
            });
        }
        Ok(p)
    })
}

/// Pixel masks for the given entries; good images get an empty mask.
/// `None` when the dataset has no masks.
pub(crate) fn load_masks(
    ds: &Dataset,
    entries: &[ManifestEntry],
    threads: usize,
) -> Result<Option<Vec<Vec<bool>>>> {
    if !ds.manifest.masks_available {
        return Ok(None);
    }
    let (h, w) = ds.manifest.image_size;
    par_map(entries, threads, |e| match ds.mask_path(e) {
        None if e.label == Label::Good => Ok(vec![false; h * w]),
        None => Err(Error::Data {
            path: ds.root.display().to_string(),
            msg: format!("anomalous image {} has no mask", e.image_id),
        }),
        Some(path) => {
            let img = read_pgm(&path)?;
            if (img.height, img.width) != (h, w) {
                return Err(Error::Data {
                    path: path.display().to_string(),
                    msg: format!(
                        "mask is {}x{}, dataset images are {h}x{w}",
                        img.height, img.width
                    ),
                });
            }
            Ok(img.to_mask())
        }
    })
    .map(Some)
}

//! Dataset ingestion, the synthetic blob benchmark and training-time
//! augmentation.
//!
//! On-disk layout: `root/images/*.ppm` (P6 color) and `root/masks/*.pgm`
//! (P5, binarized at 128), paired by file stem.

pub mod augment;
pub mod netpbm;
pub mod synth;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// One image/mask pair in memory. The mask is strictly binary and matches
/// the image's spatial extent.
pub struct Sample {
    /// `[3,H,W]` in `[0,1]`.
    pub image: Tensor<f32>,
    /// `[1,H,W]` in `{0,1}`.
    pub mask: Tensor<f32>,
    /// Source path stem, or a synthetic identifier.
    pub id: String,
}

impl Sample {
    pub fn size(&self) -> (usize, usize) {
        let s = self.image.shape();
        (s[1], s[2])
    }

    fn validate(self) -> Result<Self> {
        let im = self.image.shape().to_vec();
        let ms = self.mask.shape().to_vec();
        if im.len() != 3 || ms.len() != 3 || im[0] != 3 || ms[0] != 1 || im[1..] != ms[1..] {
            return Err(Error::Dataset(format!(
                "sample '{}': image {im:?} and mask {ms:?} disagree",
                self.id
            )));
        }
        debug_assert!(self.mask.data().iter().all(|&v| v == 0.0 || v == 1.0));
        Ok(self)
    }
}

/// An image/mask path pair found by [`load_dataset`].
#[derive(Clone, Debug)]
pub struct DatasetEntry {
    pub stem: String,
    pub image_path: PathBuf,
    pub mask_path: PathBuf,
}

impl DatasetEntry {
    /// Reads and validates the pair.
    pub fn read(&self) -> Result<Sample> {
        Sample {
            image: netpbm::read_ppm(&self.image_path)?,
            mask: netpbm::read_pgm_mask(&self.mask_path)?,
            id: self.stem.clone(),
        }
        .validate()
    }
}

fn stems_of(dir: &Path, ext: &str) -> Result<BTreeMap<String, PathBuf>> {
    let mut out = BTreeMap::new();
    for entry in std::fs::read_dir(dir)
        .map_err(|e| Error::Dataset(format!("cannot read {}: {e}", dir.display())))?
    {
        let path = entry?.path();
        if path.extension().and_then(|s| s.to_str()) == Some(ext) {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                out.insert(stem.to_string(), path.clone());
            }
        }
    }
    Ok(out)
}

/// Indexes `root/images/*.ppm` against `root/masks/*.pgm` by stem, sorted
/// lexicographically. Stems present on only one side are logged and skipped;
/// an empty intersection is an error.
pub fn load_dataset(root: &Path) -> Result<Vec<DatasetEntry>> {
    let images = stems_of(&root.join("images"), "ppm")?;
    let masks = stems_of(&root.join("masks"), "pgm")?;
    let mut entries = Vec::new();
    for (stem, image_path) in &images {
        match masks.get(stem) {
            Some(mask_path) => entries.push(DatasetEntry {
                stem: stem.clone(),
                image_path: image_path.clone(),
                mask_path: mask_path.clone(),
            }),
            None => log::warn!("image '{stem}' has no mask; skipped"),
        }
    }
    for stem in masks.keys() {
        if !images.contains_key(stem) {
            log::warn!("mask '{stem}' has no image; skipped");
        }
    }
    if entries.is_empty() {
        return Err(Error::Dataset(format!(
            "{}: no matching image/mask pairs",
            root.display()
        )));
    }
    Ok(entries)
}

/// Reads every pair eagerly; any unreadable sample is a hard error.
pub fn load_samples(root: &Path) -> Result<Vec<Sample>> {
    load_dataset(root)?.iter().map(DatasetEntry::read).collect()
}

/// Materializes samples to the standard on-disk layout.
pub fn write_dataset(root: &Path, samples: &[Sample]) -> Result<()> {
    let images = root.join("images");
    let masks = root.join("masks");
    std::fs::create_dir_all(&images)?;
    std::fs::create_dir_all(&masks)?;
    for s in samples {
        netpbm::write_ppm(&images.join(format!("{}.ppm", s.id)), &s.image)?;
        netpbm::write_pgm(&masks.join(format!("{}.pgm", s.id)), &s.mask)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn blank_sample(id: &str) -> Sample {
        Sample {
            image: Tensor::full(&[3, 4, 4], 0.5),
            mask: Tensor::from_vec(
                (0..16).map(|i| if i % 3 == 0 { 1.0 } else { 0.0 }).collect(),
                &[1, 4, 4],
            )
            .unwrap(),
            id: id.to_string(),
        }
    }

    #[test]
    fn matching_pairs_load_in_lexicographic_order() {
        let dir = tempfile::tempdir().unwrap();
        write_dataset(dir.path(), &[blank_sample("b"), blank_sample("a"), blank_sample("c")])
            .unwrap();
        let entries = load_dataset(dir.path()).unwrap();
        let stems: Vec<&str> = entries.iter().map(|e| e.stem.as_str()).collect();
        assert_eq!(stems, ["a", "b", "c"]);
    }

    #[test]
    fn unpaired_image_is_excluded() {
        let dir = tempfile::tempdir().unwrap();
        write_dataset(dir.path(), &[blank_sample("a"), blank_sample("b")]).unwrap();
        std::fs::remove_file(dir.path().join("masks/b.pgm")).unwrap();
        let entries = load_dataset(dir.path()).unwrap();
        assert_eq!(entries.len(), 1);
        assert_eq!(entries[0].stem, "a");
    }

    #[test]
    fn empty_intersection_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::create_dir_all(dir.path().join("images")).unwrap();
        std::fs::create_dir_all(dir.path().join("masks")).unwrap();
        assert!(load_dataset(dir.path()).is_err());
    }

    #[test]
    fn count_equals_stem_intersection() {
        let dir = tempfile::tempdir().unwrap();
        write_dataset(
            dir.path(),
            &[blank_sample("a"), blank_sample("b"), blank_sample("c")],
        )
        .unwrap();
        std::fs::remove_file(dir.path().join("images/c.ppm")).unwrap();
        std::fs::remove_file(dir.path().join("masks/a.pgm")).unwrap();
        assert_eq!(load_dataset(dir.path()).unwrap().len(), 1);
    }
}

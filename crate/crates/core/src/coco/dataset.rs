use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::labels::Category;
use crate::synth::SynthSample;

use super::RleMask;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CocoInfo {
    pub description: String,
    pub version: String,
    pub seed: u64,
}

impl CocoInfo {
    /// Stamps the crate version and the generating seed.
    pub fn generated(seed: u64) -> Self {
        Self {
            description: "synthetic knee fluoroscopy".into(),
            version: concat!("fluoroseg ", env!("CARGO_PKG_VERSION")).into(),
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CocoImage {
    pub id: u64,
    pub file_name: String,
    pub width: usize,
    pub height: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CocoAnnotation {
    pub id: u64,
    pub image_id: u64,
    pub category_id: u64,
    pub segmentation: RleMask,
    pub bbox: BBox,
    pub area: u64,
    #[serde(default)]
    pub iscrowd: u8,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CocoCategory {
    pub id: u64,
    pub name: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CocoDataset {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub info: Option<CocoInfo>,
    pub images: Vec<CocoImage>,
    pub annotations: Vec<CocoAnnotation>,
    pub categories: Vec<CocoCategory>,
}

impl Default for CocoDataset {
    fn default() -> Self {
        Self::empty()
    }
}

impl CocoDataset {
    /// No images, the standard femur/tibia category list.
    pub fn empty() -> Self {
        Self {
            info: None,
            images: Vec::new(),
            annotations: Vec::new(),
            categories: Category::ANNOTATED
                .iter()
                .map(|c| CocoCategory { id: c.coco_id(), name: c.name().into() })
                .collect(),
        }
    }

    /// Images are numbered from 1 in sample order and named `NNNNN.pgm`.
    pub fn from_samples(samples: &[SynthSample], info: Option<CocoInfo>) -> Self {
        let mut ds = Self { info, ..Self::empty() };
        for (i, s) in samples.iter().enumerate() {
            let image_id = i as u64 + 1;
            ds.images.push(CocoImage {
                id: image_id,
                file_name: format!("{i:05}.pgm"),
                width: s.image.width(),
                height: s.image.height(),
            });
            for p in &s.parts {
                ds.annotations.push(CocoAnnotation {
                    id: ds.annotations.len() as u64 + 1,
                    image_id,
                    category_id: p.category.coco_id(),
                    segmentation: RleMask::encode(&p.mask),
                    bbox: p.bbox,
                    area: p.mask.count() as u64,
                    iscrowd: 0,
                });
            }
        }
        ds
    }

    pub fn image(&self, id: u64) -> Option<&CocoImage> {
        self.images.iter().find(|i| i.id == id)
    }

    pub fn annotations_for(&self, image_id: u64) -> impl Iterator<Item = &CocoAnnotation> {
        self.annotations.iter().filter(move |a| a.image_id == image_id)
    }

    /// Checks id uniqueness and references, and recomputes every
    /// annotation's area and box from its decoded mask.
    pub fn validate(&self) -> Result<()> {
        unique(self.categories.iter().map(|c| c.id), "category")?;
        unique(self.images.iter().map(|i| i.id), "image")?;
        unique(self.annotations.iter().map(|a| a.id), "annotation")?;
        let images: HashMap<u64, &CocoImage> = self.images.iter().map(|i| (i.id, i)).collect();
        let categories: HashSet<u64> = self.categories.iter().map(|c| c.id).collect();
        for a in &self.annotations {
            let img = images
                .get(&a.image_id)
                .ok_or_else(|| Error::Validation(format!("annotation {} refers to missing image {}", a.id, a.image_id)))?;
            if !categories.contains(&a.category_id) {
                return Err(Error::Validation(format!(
                    "annotation {} refers to missing category {}",
                    a.id, a.category_id
                )));
            }
            if a.iscrowd != 0 {
                return Err(Error::Validation(format!("annotation {} is a crowd region", a.id)));
            }
            if a.segmentation.size != [img.height, img.width] {
                return Err(Error::Validation(format!(
                    "annotation {} mask is {:?}, image {} is {}x{}",
                    a.id, a.segmentation.size, img.id, img.height, img.width
                )));
            }
            let mask = a
                .segmentation
                .decode()
                .map_err(|e| Error::Validation(format!("annotation {}: {e}", a.id)))?;
            if mask.count() as u64 != a.area {
                return Err(Error::Validation(format!(
                    "annotation {} area {} but mask has {} pixels",
                    a.id,
                    a.area,
                    mask.count()
                )));
            }
            if mask.bbox() != Some(a.bbox) {
                return Err(Error::Validation(format!("annotation {} bbox disagrees with its mask", a.id)));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        self.validate()?;
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ds: Self = serde_json::from_str(text)?;
        ds.validate()?;
        Ok(ds)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    /// Keeps only the listed images (in dataset order) and their annotations.
    pub fn subset(&self, keep: &HashSet<u64>) -> Self {
        Self {
            info: self.info.clone(),
            images: self.images.iter().filter(|i| keep.contains(&i.id)).cloned().collect(),
            annotations: self.annotations.iter().filter(|a| keep.contains(&a.image_id)).cloned().collect(),
            categories: self.categories.clone(),
        }
    }
}

fn unique(ids: impl Iterator<Item = u64>, what: &str) -> Result<()> {
    let mut seen = HashSet::new();
    for id in ids {
        if !seen.insert(id) {
            return Err(Error::Validation(format!("duplicate {what} id {id}")));
        }
    }
    Ok(())
}

/// Splits by image after a seeded shuffle. The train side receives
/// `round(train_fraction · n)` images; both sides keep dataset order.
pub fn split_train_test(ds: &CocoDataset, train_fraction: f64, seed: u64) -> Result<(CocoDataset, CocoDataset)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::Config(format!("train fraction {train_fraction} is outside (0, 1)")));
    }
    let mut ids: Vec<u64> = ds.images.iter().map(|i| i.id).collect();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = (train_fraction * ids.len() as f64).round() as usize;
    let train: HashSet<u64> = ids[..n_train].iter().copied().collect();
    let test: HashSet<u64> = ids[n_train..].iter().copied().collect();
    Ok((ds.subset(&train), ds.subset(&test)))
}

/// Writes the frames as `images/NNNNN.pgm` next to `annotations.json`.
pub fn export_samples(dir: impl AsRef<Path>, samples: &[SynthSample], info: Option<CocoInfo>) -> Result<CocoDataset> {
    let dir = dir.as_ref();
    let images = dir.join("images");
    fs::create_dir_all(&images)?;
    let ds = CocoDataset::from_samples(samples, info);
    for (img, s) in ds.images.iter().zip(samples) {
        s.image.write_pgm(images.join(&img.file_name))?;
    }
    ds.write(dir.join("annotations.json"))?;
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::BinaryMask;

    fn one_image() -> CocoDataset {
        let mask = BinaryMask::from_fn(6, 4, |x, y| (1..4).contains(&x) && y == 2);
        let mut ds = CocoDataset::empty();
        ds.images.push(CocoImage { id: 7, file_name: "a.pgm".into(), width: 6, height: 4 });
        ds.annotations.push(CocoAnnotation {
            id: 1,
            image_id: 7,
            category_id: 2,
            segmentation: RleMask::encode(&mask),
            bbox: mask.bbox().unwrap(),
            area: 3,
            iscrowd: 0,
        });
        ds
    }

    #[test]
    fn empty_round_trip() {
        let ds = CocoDataset::empty();
        assert_eq!(CocoDataset::from_json(&ds.to_json().unwrap()).unwrap(), ds);
    }

    #[test]
    fn single_annotation_round_trip() {
        let ds = one_image();
        let text = ds.to_json().unwrap();
        assert!(text.contains(r#""segmentation":{"size":[4,6],"counts":"#));
        assert_eq!(CocoDataset::from_json(&text).unwrap(), ds);
    }

    #[test]
    fn corrupted_area_is_rejected() {
        let text = one_image().to_json().unwrap().replace(r#""area":3"#, r#""area":4"#);
        assert!(matches!(CocoDataset::from_json(&text), Err(Error::Validation(_))));
    }

    #[test]
    fn dangling_image_is_rejected() {
        let mut ds = one_image();
        ds.annotations[0].image_id = 8;
        assert!(matches!(ds.validate(), Err(Error::Validation(_))));
    }

    #[test]
    fn malformed_json_is_parse_error() {
        assert!(matches!(CocoDataset::from_json("{\"images\": ["), Err(Error::Parse(_))));
    }

    #[test]
    fn split_edges() {
        let mut ds = CocoDataset::empty();
        ds.images.push(CocoImage { id: 1, file_name: "x".into(), width: 1, height: 1 });
        let (train, test) = split_train_test(&ds, 0.9, 0).unwrap();
        assert_eq!((train.images.len(), test.images.len()), (1, 0));
        assert!(split_train_test(&ds, 1.0, 0).is_err());
    }
}

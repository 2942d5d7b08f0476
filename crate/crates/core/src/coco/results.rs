use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::geometry::BBox;

use super::RleMask;

/// One prediction in the COCO results format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CocoResult {
    pub image_id: u64,
    pub category_id: u64,
    pub score: f64,
    pub bbox: BBox,
    pub segmentation: RleMask,
}

pub fn write_results(path: impl AsRef<Path>, results: &[CocoResult]) -> Result<()> {
    for r in results {
        r.segmentation.validate()?;
    }
    fs::write(path, serde_json::to_string(results)?)?;
    Ok(())
}

pub fn read_results(path: impl AsRef<Path>) -> Result<Vec<CocoResult>> {
    let results: Vec<CocoResult> = serde_json::from_str(&fs::read_to_string(path)?)?;
    for r in &results {
        r.segmentation.validate()?;
    }
    Ok(results)
}

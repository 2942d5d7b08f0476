//! Instance segmenters behind one contract: a grey-level thresholding
//! baseline and a small prototype-mask network.

mod proto;
mod threshold;
mod train;

use serde::{Deserialize, Serialize};

use crate::coco::{CocoResult, RleMask};
use crate::error::{Error, Result};
use crate::geometry::{BBox, BinaryMask};
use crate::labels::Category;
use crate::netpbm::GrayImage;

pub use proto::{assemble_detections, ProtoConfig, ProtoModel, RawHeads, ANCHOR_SIDE, CLASSES, PROTOTYPES, PROTO_STRIDE, STRIDE};
pub use threshold::{otsu_threshold, threshold_segment, ThresholdConfig, ThresholdMode};
pub use train::{train, TrainConfig, TrainingSet};

/// One predicted instance.
#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub category: Category,
    pub score: f64,
    pub bbox: BBox,
    pub mask: BinaryMask,
}

impl Detection {
    /// Mask size, box bounds, score range and mask-in-box containment.
    pub fn validate(&self, width: usize, height: usize) -> Result<()> {
        if self.mask.dims() != (width, height) {
            return Err(Error::Validation(format!(
                "mask is {:?}, image is {width}x{height}",
                self.mask.dims()
            )));
        }
        if !(0.0..=1.0).contains(&self.score) {
            return Err(Error::Validation(format!("score {} outside [0, 1]", self.score)));
        }
        let frame = BBox::new(0.0, 0.0, width as f64, height as f64);
        if !frame.contains(&self.bbox) {
            return Err(Error::Validation(format!("box {:?} leaves the image", self.bbox)));
        }
        if let Some(b) = self.mask.bbox() {
            if !self.bbox.expanded(1.0).contains(&b) {
                return Err(Error::Validation(format!("mask extent {b:?} exceeds box {:?}", self.bbox)));
            }
        }
        Ok(())
    }

    pub fn to_result(&self, image_id: u64) -> CocoResult {
        CocoResult {
            image_id,
            category_id: self.category.coco_id(),
            score: self.score,
            bbox: self.bbox,
            segmentation: RleMask::encode(&self.mask),
        }
    }

    pub fn from_result(r: &CocoResult) -> Result<Self> {
        let category = Category::from_coco_id(r.category_id)
            .ok_or_else(|| Error::Validation(format!("unknown category id {}", r.category_id)))?;
        Ok(Self {
            category,
            score: r.score,
            bbox: r.bbox,
            mask: r.segmentation.decode()?,
        })
    }
}

/// Greedy per-category suppression on box IoU. Input order is the priority
/// order (callers sort by score first); survivors keep that order.
pub fn nms(candidates: Vec<Detection>, iou_threshold: f64) -> Vec<Detection> {
    let boxes: Vec<(Category, BBox)> = candidates.iter().map(|d| (d.category, d.bbox)).collect();
    let keep = nms_order(&boxes, iou_threshold);
    candidates
        .into_iter()
        .enumerate()
        .filter(|(i, _)| keep.binary_search(i).is_ok())
        .map(|(_, d)| d)
        .collect()
}

/// Indices (ascending) of the boxes that survive greedy suppression.
pub(crate) fn nms_order(boxes: &[(Category, BBox)], iou_threshold: f64) -> Vec<usize> {
    let mut kept: Vec<usize> = Vec::new();
    for (i, (cat, b)) in boxes.iter().enumerate() {
        let suppressed = kept
            .iter()
            .any(|&k| boxes[k].0 == *cat && boxes[k].1.iou(b) > iou_threshold);
        if !suppressed {
            kept.push(i);
        }
    }
    kept
}

/// Stable sort by descending score.
pub fn sort_by_score(dets: &mut [Detection]) {
    dets.sort_by(|a, b| b.score.total_cmp(&a.score));
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Threshold,
    Proto,
}

impl std::str::FromStr for BackendKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "threshold" => Ok(Self::Threshold),
            "proto" => Ok(Self::Proto),
            other => Err(Error::Config(format!("unknown backend {other:?} (threshold|proto)"))),
        }
    }
}

/// A frozen segmenter. Safe to share across threads.
#[derive(Debug, Clone)]
pub enum Backend {
    Threshold(ThresholdConfig),
    Proto(ProtoModel, ProtoConfig),
}

impl Backend {
    pub fn kind(&self) -> BackendKind {
        match self {
            Backend::Threshold(_) => BackendKind::Threshold,
            Backend::Proto(..) => BackendKind::Proto,
        }
    }

    /// The thresholding backend labels everything [`Category::Implant`].
    pub fn is_class_agnostic(&self) -> bool {
        matches!(self, Backend::Threshold(_))
    }
}

/// Runs `backend` on one frame; detections come back in descending score order.
pub fn segment(backend: &Backend, image: &GrayImage) -> Result<Vec<Detection>> {
    let mut dets = match backend {
        Backend::Threshold(cfg) => threshold_segment(image, cfg),
        Backend::Proto(model, cfg) => {
            let heads = model.forward(image)?;
            assemble_detections(&heads, cfg.conf_thresh, cfg.nms_iou)
        }
    };
    sort_by_score(&mut dets);
    Ok(dets)
}

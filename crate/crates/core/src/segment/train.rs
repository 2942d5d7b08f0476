use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::coco::CocoDataset;
use crate::error::{Error, Result};
use crate::geometry::{BBox, BinaryMask};
use crate::netpbm::GrayImage;
use crate::tensor::{Graph, Sgd, Tensor};

use super::proto::{normalize, ProtoModel, ANCHOR_SIDE, CLASSES, HEAD_OUT, STRIDE};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub iterations: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    pub seed: u64,
    pub class_weight: f64,
    pub box_weight: f64,
    pub mask_weight: f64,
    /// Weight of an owning cell in the class loss relative to a background cell.
    pub positive_weight: f64,
    /// Linear learning-rate ramp length at the start of training.
    pub warmup: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 2000,
            batch_size: 4,
            lr: 0.01,
            momentum: 0.9,
            seed: 0,
            class_weight: 1.0,
            box_weight: 1.0,
            mask_weight: 1.0,
            positive_weight: 10.0,
            warmup: 100,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        for (name, v) in [
            ("lr", self.lr),
            ("class weight", self.class_weight),
            ("box weight", self.box_weight),
            ("mask weight", self.mask_weight),
            ("positive weight", self.positive_weight),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!("momentum {} outside [0, 1)", self.momentum)));
        }
        Ok(())
    }

    fn lr_at(&self, iter: usize) -> f64 {
        if iter < self.warmup {
            self.lr * (iter + 1) as f64 / self.warmup as f64
        } else {
            self.lr
        }
    }
}

#[derive(Debug, Clone)]
struct Instance {
    cell: usize,
    class: usize,
    box_target: [f64; 4],
    mask: BinaryMask,
    bbox: BBox,
}

#[derive(Debug, Clone)]
struct Example {
    input: Vec<f64>,
    instances: Vec<Instance>,
}

/// Images with their per-cell training targets, ready for batching.
#[derive(Debug, Clone)]
pub struct TrainingSet {
    width: usize,
    height: usize,
    examples: Vec<Example>,
}

impl TrainingSet {
    /// `images` must follow `ds.images` order.
    pub fn new(ds: &CocoDataset, images: &[GrayImage]) -> Result<Self> {
        if ds.images.is_empty() || ds.annotations.is_empty() {
            return Err(Error::Config("training needs at least one annotated image".into()));
        }
        if images.len() != ds.images.len() {
            return Err(Error::Shape(format!("{} frames for {} images", images.len(), ds.images.len())));
        }
        let (width, height) = (images[0].width(), images[0].height());
        if width % STRIDE != 0 || height % STRIDE != 0 {
            return Err(Error::Shape(format!("frames are {width}x{height}, not multiples of {STRIDE}")));
        }
        let (gw, gh) = (width / STRIDE, height / STRIDE);
        let mut examples = Vec::with_capacity(images.len());
        for (info, img) in ds.images.iter().zip(images) {
            if (img.width(), img.height()) != (width, height) || (info.width, info.height) != (width, height) {
                return Err(Error::Shape(format!(
                    "image {} is {}x{}, expected {width}x{height}",
                    info.id,
                    img.width(),
                    img.height()
                )));
            }
            let mut instances: Vec<Instance> = Vec::new();
            for a in ds.annotations_for(info.id) {
                let b = a.bbox;
                let (cx, cy) = b.center();
                let gx = ((cx / STRIDE as f64) as usize).min(gw - 1);
                let gy = ((cy / STRIDE as f64) as usize).min(gh - 1);
                let cell = gy * gw + gx;
                // one instance per cell; the first annotation keeps it
                if instances.iter().any(|i| i.cell == cell) {
                    continue;
                }
                let (ax, ay) = ((gx as f64 + 0.5) * STRIDE as f64, (gy as f64 + 0.5) * STRIDE as f64);
                instances.push(Instance {
                    cell,
                    class: a.category_id as usize,
                    box_target: [
                        (cx - ax) / ANCHOR_SIDE,
                        (cy - ay) / ANCHOR_SIDE,
                        (b.w / ANCHOR_SIDE).ln(),
                        (b.h / ANCHOR_SIDE).ln(),
                    ],
                    mask: a.segmentation.decode()?,
                    bbox: b,
                });
                if instances.last().is_some_and(|i| i.class == 0 || i.class >= CLASSES) {
                    return Err(Error::Validation(format!("category {} cannot be trained", a.category_id)));
                }
            }
            examples.push(Example {
                input: img.pixels().iter().map(|&p| normalize(p)).collect(),
                instances,
            });
        }
        Ok(Self { width, height, examples })
    }

    /// Reads `file_name`s relative to `image_dir`.
    pub fn load(ds: &CocoDataset, image_dir: impl AsRef<Path>) -> Result<Self> {
        let dir = image_dir.as_ref();
        let images = ds
            .images
            .iter()
            .map(|i| GrayImage::read_pgm(dir.join(&i.file_name)))
            .collect::<Result<Vec<_>>>()?;
        Self::new(ds, &images)
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }
}

/// One SGD step on `batch`; returns the loss before the update.
fn step(model: &mut ProtoModel, opt: &mut Sgd, set: &TrainingSet, batch: &[usize], cfg: &TrainConfig) -> Result<f64> {
    let (w, h) = (set.width, set.height);
    let cells = (w / STRIDE) * (h / STRIDE);
    let mut input = Vec::with_capacity(batch.len() * w * h);
    for &i in batch {
        input.extend_from_slice(&set.examples[i].input);
    }
    let mut g = Graph::new();
    let (params, head, protos) = model.forward_graph(&mut g, Tensor::new(&[batch.len(), 1, h, w], input)?)?;

    let mut class_targets = vec![0usize; batch.len() * cells];
    let mut class_weights = vec![1.0; batch.len() * cells];
    let mut rows = Vec::new();
    let mut owners = Vec::new();
    let mut box_targets = Vec::new();
    let mut mask_targets = Vec::new();
    let mut mask_weights = Vec::new();
    for (b, &i) in batch.iter().enumerate() {
        for inst in &set.examples[i].instances {
            let row = b * cells + inst.cell;
            class_targets[row] = inst.class;
            class_weights[row] = cfg.positive_weight;
            rows.push(row);
            owners.push(b);
            box_targets.extend_from_slice(&inst.box_target);
            for y in 0..h {
                for x in 0..w {
                    mask_targets.push(if inst.mask.get(x, y) { 1.0 } else { 0.0 });
                    let inside = inst.bbox.contains(&BBox::new(x as f64 + 0.5, y as f64 + 0.5, 0.0, 0.0));
                    mask_weights.push(if inside { 1.0 } else { 0.0 });
                }
            }
        }
    }

    let logits = g.cells(head, 0, CLASSES)?;
    let class_loss = g.softmax_ce(logits, &class_targets, Some(&class_weights))?;
    let mut total = g.scale(class_loss, cfg.class_weight)?;
    if !rows.is_empty() {
        let boxes = g.cells(head, CLASSES, CLASSES + 4)?;
        let boxes = g.gather_rows(boxes, &rows)?;
        let box_loss = g.smooth_l1(boxes, &box_targets)?;
        let box_loss = g.scale(box_loss, cfg.box_weight)?;
        total = g.add(total, box_loss)?;

        let coeffs = g.cells(head, CLASSES + 4, HEAD_OUT)?;
        let coeffs = g.gather_rows(coeffs, &rows)?;
        let masks = g.combine_prototypes(coeffs, protos, &owners)?;
        let masks = g.upsample2x(masks)?;
        let masks = g.upsample2x(masks)?;
        let mask_loss = g.bce_with_logits(masks, &mask_targets, Some(&mask_weights))?;
        let mask_loss = g.scale(mask_loss, cfg.mask_weight)?;
        total = g.add(total, mask_loss)?;
    }
    let loss = g.value(total).item();
    g.backward(total)?;
    for (p, v) in model.params_mut().iter_mut().zip(params) {
        let grad = g.take_grad(v).ok_or_else(|| Error::State("parameter received no gradient".into()))?;
        p.set_grad(grad)?;
    }
    opt.step(model.params_mut())?;
    Ok(loss)
}

/// Trains `model` in place with SGD and returns the per-iteration loss.
/// Batches are drawn without replacement from a seeded reshuffle each epoch.
pub fn train(model: &mut ProtoModel, set: &TrainingSet, cfg: &TrainConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    if set.is_empty() {
        return Err(Error::Config("empty training set".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = Sgd::new(cfg.lr, cfg.momentum)?;
    let mut order: Vec<usize> = Vec::new();
    let mut trace = Vec::with_capacity(cfg.iterations);
    for iter in 0..cfg.iterations {
        let mut batch = Vec::with_capacity(cfg.batch_size);
        while batch.len() < cfg.batch_size {
            if order.is_empty() {
                order = (0..set.len()).collect();
                order.shuffle(&mut rng);
            }
            batch.push(order.pop().expect("refilled above"));
        }
        opt.set_lr(cfg.lr_at(iter));
        trace.push(step(model, &mut opt, set, &batch, cfg)?);
    }
    Ok(trace)
}

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{BBox, BinaryMask};
use crate::labels::Category;
use crate::netpbm::GrayImage;
use crate::tensor::kernels::{conv2d_forward, maxpool2d_forward, relu_forward, sigmoid};
use crate::tensor::{read_checkpoint, write_checkpoint, Graph, Tensor, Var};

use super::{nms_order, Detection};

/// Background, femur, tibia.
pub const CLASSES: usize = 3;
pub const PROTOTYPES: usize = 8;
/// Head cell size in pixels.
pub const STRIDE: usize = 8;
/// Prototype map cell size in pixels.
pub const PROTO_STRIDE: usize = 4;
/// One square anchor per cell, four strides wide.
pub const ANCHOR_SIDE: f64 = 4.0 * STRIDE as f64;

pub(crate) const HEAD_OUT: usize = CLASSES + 4 + PROTOTYPES;
/// Box log-size outputs are clamped to this before exponentiation.
const MAX_LOG_SCALE: f64 = 4.0;

/// Conv layers as (name, in, out, kernel).
const LAYERS: [(&str, usize, usize, usize); 8] = [
    ("backbone.0", 1, 16, 3),
    ("backbone.1", 16, 32, 3),
    ("backbone.2", 32, 64, 3),
    ("head.0", 64, 64, 3),
    ("head.1", 64, 64, 3),
    ("head.out", 64, HEAD_OUT, 1),
    ("proto.0", 32, 32, 3),
    ("proto.out", 32, PROTOTYPES, 1),
];

mod layer {
    pub const B0: usize = 0;
    pub const B1: usize = 1;
    pub const B2: usize = 2;
    pub const H0: usize = 3;
    pub const H1: usize = 4;
    pub const HOUT: usize = 5;
    pub const P0: usize = 6;
    pub const POUT: usize = 7;
}

/// Grey level to network input.
pub(crate) fn normalize(p: u8) -> f64 {
    (f64::from(p) - 128.0) / 64.0
}

/// Three conv/pool stages (16, 32, 64 wide); a box/class/coefficient head
/// on the 1/8 features and a prototype branch on the 1/4 features.
#[derive(Debug, Clone, PartialEq)]
pub struct ProtoModel {
    /// Kernel and bias for each layer, interleaved.
    params: Vec<Tensor>,
}

impl ProtoModel {
    pub fn zeros() -> Self {
        let params = LAYERS
            .iter()
            .flat_map(|&(_, cin, cout, k)| [Tensor::zeros(&[cout, cin, k, k]), Tensor::zeros(&[cout])])
            .collect();
        Self { params }
    }

    /// He-normal kernels and zero biases from `seed`.
    pub fn init(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = LAYERS
            .iter()
            .flat_map(|&(_, cin, cout, k)| {
                let std = (2.0 / (cin * k * k) as f64).sqrt();
                [Tensor::randn(&[cout, cin, k, k], std, &mut rng), Tensor::zeros(&[cout])]
            })
            .collect();
        Self { params }
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub(crate) fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(Tensor::numel).sum()
    }

    fn names() -> impl Iterator<Item = String> {
        LAYERS
            .iter()
            .flat_map(|(name, ..)| [format!("{name}.weight"), format!("{name}.bias")])
    }

    pub fn write_to<W: Write>(&self, out: W) -> Result<()> {
        let named: Vec<(String, &Tensor)> = Self::names().zip(&self.params).collect();
        write_checkpoint(out, &named)
    }

    pub fn read_from<R: Read>(input: R) -> Result<Self> {
        let loaded = read_checkpoint(input)?;
        let template = Self::zeros();
        if loaded.len() != template.params.len() {
            return Err(Error::Codec(format!(
                "checkpoint holds {} tensors, model has {}",
                loaded.len(),
                template.params.len()
            )));
        }
        let mut params = Vec::with_capacity(loaded.len());
        for ((name, t), (want, shape)) in loaded.into_iter().zip(Self::names().zip(&template.params)) {
            if name != want || t.shape() != shape.shape() {
                return Err(Error::Codec(format!(
                    "checkpoint tensor {name} {:?} does not fit {want} {:?}",
                    t.shape(),
                    shape.shape()
                )));
            }
            params.push(t);
        }
        Ok(Self { params })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut out = BufWriter::new(File::create(path)?);
        self.write_to(&mut out)?;
        out.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(BufReader::new(File::open(path)?))
    }

    fn check_dims(width: usize, height: usize) -> Result<()> {
        if width == 0 || height == 0 || !width.is_multiple_of(STRIDE) || !height.is_multiple_of(STRIDE) {
            return Err(Error::Shape(format!(
                "image {width}x{height} is not a positive multiple of {STRIDE}"
            )));
        }
        Ok(())
    }

    /// Tape-free inference on one frame.
    pub fn forward(&self, image: &GrayImage) -> Result<RawHeads> {
        let (w, h) = (image.width(), image.height());
        Self::check_dims(w, h)?;
        let input = Tensor::new(&[1, 1, h, w], image.pixels().iter().map(|&p| normalize(p)).collect())?;
        let conv = |x: &Tensor, l: usize, relu: bool| -> Result<Tensor> {
            let pad = LAYERS[l].3 / 2;
            let (y, ..) = conv2d_forward(x, &self.params[2 * l], &self.params[2 * l + 1], 1, pad, false)?;
            Ok(if relu { relu_forward(&y) } else { y })
        };
        // relu is monotone, so pooling first gives the same values on a quarter of the data
        let pool = |x: &Tensor| maxpool2d_forward(x).map(|(y, _)| relu_forward(&y));

        let f1 = pool(&conv(&input, layer::B0, false)?)?;
        let f2 = pool(&conv(&f1, layer::B1, false)?)?;
        let f3 = pool(&conv(&f2, layer::B2, false)?)?;
        let head = conv(&conv(&conv(&f3, layer::H0, true)?, layer::H1, true)?, layer::HOUT, false)?;
        let protos = conv(&conv(&f2, layer::P0, true)?, layer::POUT, false)?;

        let [_, _, gh, gw] = head.dims4()?;
        let cells = gh * gw;
        let split = |first: usize, last: usize| -> Result<Tensor> {
            let width = last - first;
            let mut out = vec![0.0; cells * width];
            for ch in first..last {
                for (p, v) in head.data()[ch * cells..(ch + 1) * cells].iter().enumerate() {
                    out[p * width + ch - first] = *v;
                }
            }
            Tensor::new(&[cells, width], out)
        };
        let [_, k, ph, pw] = protos.dims4()?;
        Ok(RawHeads {
            image_size: (w, h),
            grid: (gw, gh),
            logits: split(0, CLASSES)?,
            boxes: split(CLASSES, CLASSES + 4)?,
            coeffs: split(CLASSES + 4, HEAD_OUT)?,
            prototypes: Tensor::new(&[k, ph, pw], protos.into_data())?,
        })
    }

    /// Records the forward pass on `graph` for a batch `[N,1,H,W]`; returns
    /// the parameter leaves, the head map `[N,15,H/8,W/8]` and the
    /// prototypes `[N,8,H/4,W/4]`.
    pub(crate) fn forward_graph(&self, graph: &mut Graph, input: Tensor) -> Result<(Vec<Var>, Var, Var)> {
        let [_, _, h, w] = input.dims4()?;
        Self::check_dims(w, h)?;
        let params: Vec<Var> = self
            .params
            .iter()
            .map(|p| graph.leaf(p.clone().with_requires_grad(true)))
            .collect();
        let x = graph.constant(input);
        let conv = |g: &mut Graph, x: Var, l: usize, relu: bool| -> Result<Var> {
            let y = g.conv2d(x, params[2 * l], params[2 * l + 1], 1, LAYERS[l].3 / 2)?;
            if relu {
                g.relu(y)
            } else {
                Ok(y)
            }
        };
        let c = conv(graph, x, layer::B0, true)?;
        let f1 = graph.maxpool2d(c)?;
        let c = conv(graph, f1, layer::B1, true)?;
        let f2 = graph.maxpool2d(c)?;
        let c = conv(graph, f2, layer::B2, true)?;
        let f3 = graph.maxpool2d(c)?;
        let hd = conv(graph, f3, layer::H0, true)?;
        let hd = conv(graph, hd, layer::H1, true)?;
        let head = conv(graph, hd, layer::HOUT, false)?;
        let p = conv(graph, f2, layer::P0, true)?;
        let protos = conv(graph, p, layer::POUT, false)?;
        Ok((params, head, protos))
    }
}

/// Raw network outputs for one frame. Cell `i` covers grid column `i % gw`,
/// row `i / gw`.
#[derive(Debug, Clone, PartialEq)]
pub struct RawHeads {
    pub image_size: (usize, usize),
    pub grid: (usize, usize),
    /// `[cells, 3]`
    pub logits: Tensor,
    /// `[cells, 4]`: centre offsets in anchor units, then log width/height ratios.
    pub boxes: Tensor,
    /// `[cells, 8]`
    pub coeffs: Tensor,
    /// `[8, H/4, W/4]`
    pub prototypes: Tensor,
}

impl RawHeads {
    pub fn cells(&self) -> usize {
        self.grid.0 * self.grid.1
    }

    /// Softmax posteriors of one cell.
    pub fn posteriors(&self, cell: usize) -> [f64; CLASSES] {
        let z = &self.logits.data()[cell * CLASSES..(cell + 1) * CLASSES];
        let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
        let s: f64 = e.iter().sum();
        [e[0] / s, e[1] / s, e[2] / s]
    }

    pub fn anchor_center(&self, cell: usize) -> (f64, f64) {
        let (gw, _) = self.grid;
        let s = STRIDE as f64;
        (((cell % gw) as f64 + 0.5) * s, ((cell / gw) as f64 + 0.5) * s)
    }

    /// Decoded box of one cell, clamped to the image.
    pub fn decode_box(&self, cell: usize) -> BBox {
        let t = &self.boxes.data()[cell * 4..cell * 4 + 4];
        let (ax, ay) = self.anchor_center(cell);
        let cx = ax + t[0] * ANCHOR_SIDE;
        let cy = ay + t[1] * ANCHOR_SIDE;
        let bw = ANCHOR_SIDE * t[2].clamp(-MAX_LOG_SCALE, MAX_LOG_SCALE).exp();
        let bh = ANCHOR_SIDE * t[3].clamp(-MAX_LOG_SCALE, MAX_LOG_SCALE).exp();
        BBox::new(cx - bw / 2.0, cy - bh / 2.0, bw, bh).clamp_to(self.image_size.0, self.image_size.1)
    }

    /// `sigmoid(Σ coeff·prototype)` lifted to image resolution by
    /// nearest-neighbour duplication, kept where strictly above 0.5 and
    /// where the pixel centre lies inside `bbox`.
    pub fn instance_mask(&self, cell: usize, bbox: &BBox) -> BinaryMask {
        let (w, h) = self.image_size;
        let mut mask = BinaryMask::new(w, h);
        let [k, ph, pw] = [self.prototypes.shape()[0], self.prototypes.shape()[1], self.prototypes.shape()[2]];
        let (fx, fy) = (w / pw, h / ph);
        // pixel range whose centres fall inside the box
        let lo = |v: f64| (v - 0.5).ceil().max(0.0) as usize;
        let hi = |v: f64, n: usize| ((v - 0.5).floor() as i64 + 1).clamp(0, n as i64) as usize;
        let (x0, x1) = (lo(bbox.x), hi(bbox.right(), w));
        let (y0, y1) = (lo(bbox.y), hi(bbox.bottom(), h));
        if x0 >= x1 || y0 >= y1 {
            return mask;
        }
        let c = &self.coeffs.data()[cell * k..(cell + 1) * k];
        let protos = self.prototypes.data();
        let (gx0, gx1) = (x0 / fx, (x1 - 1) / fx + 1);
        let (gy0, gy1) = (y0 / fy, (y1 - 1) / fy + 1);
        let gw = gx1 - gx0;
        let mut on = vec![false; gw * (gy1 - gy0)];
        for gy in gy0..gy1 {
            for gx in gx0..gx1 {
                let z: f64 = c.iter().enumerate().map(|(j, cj)| cj * protos[(j * ph + gy) * pw + gx]).sum();
                on[(gy - gy0) * gw + gx - gx0] = sigmoid(z) > 0.5;
            }
        }
        for y in y0..y1 {
            for x in x0..x1 {
                if on[(y / fy - gy0) * gw + x / fx - gx0] {
                    mask.set(x, y, true);
                }
            }
        }
        mask
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProtoConfig {
    pub conf_thresh: f64,
    pub nms_iou: f64,
}

impl Default for ProtoConfig {
    fn default() -> Self {
        Self {
            conf_thresh: 0.5,
            nms_iou: 0.5,
        }
    }
}

/// Confidence gate, box decoding and per-category NMS over cells; masks are
/// assembled for the survivors only.
pub fn assemble_detections(heads: &RawHeads, conf_thresh: f64, nms_iou: f64) -> Vec<Detection> {
    let mut candidates: Vec<(usize, Category, f64, BBox)> = Vec::new();
    for cell in 0..heads.cells() {
        let post = heads.posteriors(cell);
        let (class, score) = if post[2] > post[1] { (2, post[2]) } else { (1, post[1]) };
        if score >= conf_thresh {
            let category = Category::from_coco_id(class as u64).expect("foreground class");
            candidates.push((cell, category, score, heads.decode_box(cell)));
        }
    }
    candidates.sort_by(|a, b| b.2.total_cmp(&a.2));
    let boxes: Vec<(Category, BBox)> = candidates.iter().map(|c| (c.1, c.3)).collect();
    nms_order(&boxes, nms_iou)
        .into_iter()
        .map(|i| {
            let (cell, category, score, bbox) = candidates[i];
            Detection {
                category,
                score,
                bbox,
                mask: heads.instance_mask(cell, &bbox),
            }
        })
        .collect()
}

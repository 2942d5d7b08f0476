//! Tape-free forward kernels and the matching backward passes.
//!
//! All image tensors are NCHW. Convolution lowers each image to a column
//! matrix and multiplies it with the flattened kernel.

use crate::error::{Error, Result};

use super::Tensor;

/// `c = a·b + beta·c` for row/column-strided `a` (m×k) and `b` (k×n);
/// `c` is a dense row-major m×n block.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_strides: (usize, usize),
    b: &[f64],
    b_strides: (usize, usize),
    beta: f64,
    c: &mut [f64],
) {
    if m == 0 || n == 0 {
        return;
    }
    let reach = |rows: usize, cols: usize, (rs, cs): (usize, usize)| {
        if rows == 0 || cols == 0 {
            0
        } else {
            (rows - 1) * rs + (cols - 1) * cs + 1
        }
    };
    assert!(a.len() >= reach(m, k, a_strides), "gemm: lhs too short");
    assert!(b.len() >= reach(k, n, b_strides), "gemm: rhs too short");
    assert!(c.len() >= m * n, "gemm: output too short");
    // SAFETY: the asserts above bound every index the kernel touches.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            a_strides.0 as isize,
            a_strides.1 as isize,
            b.as_ptr(),
            b_strides.0 as isize,
            b_strides.1 as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Geometry shared by the forward and backward convolution passes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub batch: usize,
    pub in_channels: usize,
    pub height: usize,
    pub width: usize,
    pub filters: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub pad: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeometry {
    pub fn new(input: &Tensor, kernel: &Tensor, bias: &Tensor, stride: usize, pad: usize) -> Result<Self> {
        let [batch, in_channels, height, width] = input.dims4()?;
        let [filters, kc, kernel_h, kernel_w] = kernel.dims4()?;
        if kc != in_channels {
            return Err(Error::Shape(format!(
                "kernel expects {kc} input channels, input has {in_channels}"
            )));
        }
        if bias.shape() != [filters] {
            return Err(Error::Shape(format!(
                "bias shape {:?} does not match {filters} filters",
                bias.shape()
            )));
        }
        if stride == 0 {
            return Err(Error::Shape("stride must be positive".into()));
        }
        if kernel_h == 0 || kernel_w == 0 || kernel_h > height + 2 * pad || kernel_w > width + 2 * pad {
            return Err(Error::Shape(format!(
                "kernel {kernel_h}x{kernel_w} does not fit padded input {}x{}",
                height + 2 * pad,
                width + 2 * pad
            )));
        }
        Ok(Self {
            batch,
            in_channels,
            height,
            width,
            filters,
            kernel_h,
            kernel_w,
            stride,
            pad,
            out_h: (height + 2 * pad - kernel_h) / stride + 1,
            out_w: (width + 2 * pad - kernel_w) / stride + 1,
        })
    }

    fn patch_len(&self) -> usize {
        self.in_channels * self.kernel_h * self.kernel_w
    }

    fn out_pixels(&self) -> usize {
        self.out_h * self.out_w
    }

    fn is_pointwise(&self) -> bool {
        self.kernel_h == 1 && self.kernel_w == 1 && self.stride == 1 && self.pad == 0
    }
}

fn im2col(g: &ConvGeometry, image: &[f64], cols: &mut [f64]) {
    let p = g.out_pixels();
    for c in 0..g.in_channels {
        let plane = &image[c * g.height * g.width..(c + 1) * g.height * g.width];
        for i in 0..g.kernel_h {
            for j in 0..g.kernel_w {
                let row = (c * g.kernel_h + i) * g.kernel_w + j;
                let dst = &mut cols[row * p..(row + 1) * p];
                for oy in 0..g.out_h {
                    let y = (oy * g.stride + i) as isize - g.pad as isize;
                    let line = &mut dst[oy * g.out_w..(oy + 1) * g.out_w];
                    if y < 0 || y >= g.height as isize {
                        line.iter_mut().for_each(|v| *v = 0.0);
                        continue;
                    }
                    let src = &plane[y as usize * g.width..(y as usize + 1) * g.width];
                    if g.stride == 1 {
                        // valid ox satisfy 0 <= ox + j - pad < width
                        let lo = g.pad.saturating_sub(j).min(g.out_w);
                        let hi = (g.width + g.pad).saturating_sub(j).clamp(lo, g.out_w);
                        line[..lo].iter_mut().for_each(|v| *v = 0.0);
                        line[hi..].iter_mut().for_each(|v| *v = 0.0);
                        let x0 = lo + j - g.pad;
                        line[lo..hi].copy_from_slice(&src[x0..x0 + hi - lo]);
                        continue;
                    }
                    for (ox, v) in line.iter_mut().enumerate() {
                        let x = (ox * g.stride + j) as isize - g.pad as isize;
                        *v = if x < 0 || x >= g.width as isize { 0.0 } else { src[x as usize] };
                    }
                }
            }
        }
    }
}

fn col2im_add(g: &ConvGeometry, cols: &[f64], image: &mut [f64]) {
    let p = g.out_pixels();
    for c in 0..g.in_channels {
        let plane = &mut image[c * g.height * g.width..(c + 1) * g.height * g.width];
        for i in 0..g.kernel_h {
            for j in 0..g.kernel_w {
                let row = (c * g.kernel_h + i) * g.kernel_w + j;
                let src = &cols[row * p..(row + 1) * p];
                for oy in 0..g.out_h {
                    let y = (oy * g.stride + i) as isize - g.pad as isize;
                    if y < 0 || y >= g.height as isize {
                        continue;
                    }
                    let dst = &mut plane[y as usize * g.width..(y as usize + 1) * g.width];
                    for ox in 0..g.out_w {
                        let x = (ox * g.stride + j) as isize - g.pad as isize;
                        if x >= 0 && x < g.width as isize {
                            dst[x as usize] += src[oy * g.out_w + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Zero-padded 2D cross-correlation plus per-filter bias.
///
/// Returns the output and, when `keep_columns` is set, the lowered input
/// columns needed by [`conv2d_backward`].
pub fn conv2d_forward(
    input: &Tensor,
    kernel: &Tensor,
    bias: &Tensor,
    stride: usize,
    pad: usize,
    keep_columns: bool,
) -> Result<(Tensor, ConvGeometry, Vec<f64>)> {
    let g = ConvGeometry::new(input, kernel, bias, stride, pad)?;
    let p = g.out_pixels();
    let patch = g.patch_len();
    let in_plane = g.in_channels * g.height * g.width;
    let out_plane = g.filters * p;
    let mut out = vec![0.0; g.batch * out_plane];
    let mut kept = if keep_columns && !g.is_pointwise() {
        vec![0.0; g.batch * patch * p]
    } else {
        Vec::new()
    };
    let mut scratch = if !keep_columns && !g.is_pointwise() {
        vec![0.0; patch * p]
    } else {
        Vec::new()
    };
    for n in 0..g.batch {
        let image = &input.data()[n * in_plane..(n + 1) * in_plane];
        let cols: &[f64] = if g.is_pointwise() {
            image
        } else if keep_columns {
            let dst = &mut kept[n * patch * p..(n + 1) * patch * p];
            im2col(&g, image, dst);
            dst
        } else {
            im2col(&g, image, &mut scratch);
            &scratch
        };
        let dst = &mut out[n * out_plane..(n + 1) * out_plane];
        for (f, row) in dst.chunks_mut(p).enumerate() {
            row.iter_mut().for_each(|v| *v = bias.data()[f]);
        }
        gemm(g.filters, patch, p, kernel.data(), (patch, 1), cols, (p, 1), 1.0, dst);
    }
    let output = Tensor::new(&[g.batch, g.filters, g.out_h, g.out_w], out)?;
    Ok((output, g, kept))
}

/// Gradients of a convolution with respect to its input, kernel and bias.
///
/// `columns` is what [`conv2d_forward`] kept; for pointwise convolutions it
/// may be empty and the input itself is used. Each gradient is only
/// computed when its flag is set.
pub struct ConvGrads {
    pub input: Option<Vec<f64>>,
    pub kernel: Option<Vec<f64>>,
    pub bias: Option<Vec<f64>>,
}

pub fn conv2d_backward(
    g: &ConvGeometry,
    input: &Tensor,
    kernel: &Tensor,
    columns: &[f64],
    grad_out: &[f64],
    want: (bool, bool, bool),
) -> ConvGrads {
    let p = g.out_pixels();
    let patch = g.patch_len();
    let in_plane = g.in_channels * g.height * g.width;
    let out_plane = g.filters * p;
    let (want_input, want_kernel, want_bias) = want;

    let mut d_input = want_input.then(|| vec![0.0; g.batch * in_plane]);
    let mut d_kernel = want_kernel.then(|| vec![0.0; g.filters * patch]);
    let mut d_bias = want_bias.then(|| vec![0.0; g.filters]);
    let mut d_cols = if want_input && !g.is_pointwise() {
        vec![0.0; patch * p]
    } else {
        Vec::new()
    };

    for n in 0..g.batch {
        let dout = &grad_out[n * out_plane..(n + 1) * out_plane];
        if let Some(db) = d_bias.as_mut() {
            for (f, row) in dout.chunks(p).enumerate() {
                db[f] += row.iter().sum::<f64>();
            }
        }
        if let Some(dk) = d_kernel.as_mut() {
            let cols = if g.is_pointwise() {
                &input.data()[n * in_plane..(n + 1) * in_plane]
            } else {
                &columns[n * patch * p..(n + 1) * patch * p]
            };
            // dK (F×patch) += dOut (F×P) · colsᵀ (P×patch)
            gemm(g.filters, p, patch, dout, (p, 1), cols, (1, p), 1.0, dk);
        }
        if let Some(di) = d_input.as_mut() {
            let dst = &mut di[n * in_plane..(n + 1) * in_plane];
            if g.is_pointwise() {
                gemm(patch, g.filters, p, kernel.data(), (1, patch), dout, (p, 1), 1.0, dst);
            } else {
                // dCols (patch×P) = Kᵀ (patch×F) · dOut (F×P)
                gemm(patch, g.filters, p, kernel.data(), (1, patch), dout, (p, 1), 0.0, &mut d_cols);
                col2im_add(g, &d_cols, dst);
            }
        }
    }
    ConvGrads {
        input: d_input,
        kernel: d_kernel,
        bias: d_bias,
    }
}

pub fn relu_forward(input: &Tensor) -> Tensor {
    let data = input.data().iter().map(|&v| v.max(0.0)).collect();
    Tensor::new(input.shape(), data).expect("shape preserved")
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn sigmoid_forward(input: &Tensor) -> Tensor {
    let data = input.data().iter().map(|&v| sigmoid(v)).collect();
    Tensor::new(input.shape(), data).expect("shape preserved")
}

/// 2×2 stride-2 max pooling. Returns the output and, for each output cell,
/// the flat input index it was taken from (first maximum in row-major order).
pub fn maxpool2d_forward(input: &Tensor) -> Result<(Tensor, Vec<usize>)> {
    let [n, c, h, w] = input.dims4()?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::Shape(format!("max pooling needs even extents, got {h}x{w}")));
    }
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(n * c * oh * ow);
    let mut argmax = Vec::with_capacity(n * c * oh * ow);
    let x = input.data();
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = base + 2 * oy * w + 2 * ox;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = base + (2 * oy + dy) * w + 2 * ox + dx;
                    if x[idx] > x[best] {
                        best = idx;
                    }
                }
                out.push(x[best]);
                argmax.push(best);
            }
        }
    }
    Ok((Tensor::new(&[n, c, oh, ow], out)?, argmax))
}

/// Nearest-neighbour 2× upsampling.
pub fn upsample2x_forward(input: &Tensor) -> Result<Tensor> {
    let [n, c, h, w] = input.dims4()?;
    let (oh, ow) = (2 * h, 2 * w);
    let mut out = vec![0.0; n * c * oh * ow];
    for plane in 0..n * c {
        let src = &input.data()[plane * h * w..(plane + 1) * h * w];
        let dst = &mut out[plane * oh * ow..(plane + 1) * oh * ow];
        for y in 0..oh {
            let row = &src[(y / 2) * w..(y / 2 + 1) * w];
            for (x, v) in dst[y * ow..(y + 1) * ow].iter_mut().enumerate() {
                *v = row[x / 2];
            }
        }
    }
    Tensor::new(&[n, c, oh, ow], out)
}

pub(crate) fn upsample2x_backward(shape: [usize; 4], grad_out: &[f64]) -> Vec<f64> {
    let [n, c, h, w] = shape;
    let ow = 2 * w;
    let mut grad = vec![0.0; n * c * h * w];
    for plane in 0..n * c {
        let src = &grad_out[plane * 4 * h * w..(plane + 1) * 4 * h * w];
        let dst = &mut grad[plane * h * w..(plane + 1) * h * w];
        for (y, line) in src.chunks(ow).enumerate() {
            for (x, g) in line.iter().enumerate() {
                dst[(y / 2) * w + x / 2] += g;
            }
        }
    }
    grad
}

/// Linear combination of prototype maps: `out[i] = Σₖ coeffs[i,k]·protos[owner[i],k]`.
pub fn combine_prototypes_forward(coeffs: &Tensor, protos: &Tensor, owners: &[usize]) -> Result<Tensor> {
    let [instances, k] = coeffs.dims2()?;
    let [n, pk, h, w] = protos.dims4()?;
    if pk != k {
        return Err(Error::Shape(format!("{k} coefficients for {pk} prototypes")));
    }
    if owners.len() != instances {
        return Err(Error::Shape(format!(
            "{} owner indices for {instances} coefficient rows",
            owners.len()
        )));
    }
    if let Some(&bad) = owners.iter().find(|&&o| o >= n) {
        return Err(Error::Shape(format!("owner image {bad} out of range for batch of {n}")));
    }
    let hw = h * w;
    let mut out = vec![0.0; instances * hw];
    for (i, &owner) in owners.iter().enumerate() {
        let row = &coeffs.data()[i * k..(i + 1) * k];
        let planes = &protos.data()[owner * k * hw..(owner + 1) * k * hw];
        gemm(1, k, hw, row, (k, 1), planes, (hw, 1), 0.0, &mut out[i * hw..(i + 1) * hw]);
    }
    Tensor::new(&[instances, 1, h, w], out)
}

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::BinaryMask;
use crate::netpbm::GrayImage;

use super::ScenarioSpec;

pub const BACKGROUND_LEVEL: f64 = 150.0;
pub const IMPLANT_LEVEL: u8 = 40;
/// Intensity swing of the background texture at `noise_amp = 1`.
pub const NOISE_SPAN: f64 = 60.0;

const NOISE_OCTAVES: u32 = 3;

/// Renders a frame: textured mid-gray background, dark implant silhouettes,
/// blur, circular field cut-off and finally the inset screen.
pub fn compose_image(
    width: usize,
    height: usize,
    parts: &[BinaryMask],
    scenario: &ScenarioSpec,
    seed: u64,
) -> Result<GrayImage> {
    if let Some(m) = parts.iter().find(|m| m.dims() != (width, height)) {
        return Err(Error::Shape(format!(
            "part mask is {}x{}, frame is {width}x{height}",
            m.width(),
            m.height()
        )));
    }
    scenario.validate(width, height)?;

    let mut canvas = vec![BACKGROUND_LEVEL; width * height];
    if scenario.noise_amp > 0.0 {
        let texture = value_noise(width, height, seed);
        for (c, t) in canvas.iter_mut().zip(texture) {
            *c += scenario.noise_amp * NOISE_SPAN * t;
        }
    }
    for mask in parts {
        for (c, &b) in canvas.iter_mut().zip(mask.bits()) {
            if b {
                *c = f64::from(IMPLANT_LEVEL);
            }
        }
    }
    if scenario.blur_sigma > 0.0 {
        canvas = gaussian_blur(&canvas, width, height, scenario.blur_sigma);
    }
    if scenario.field_radius.is_finite() {
        let (cx, cy) = (width as f64 / 2.0, height as f64 / 2.0);
        let r2 = scenario.field_radius * scenario.field_radius;
        for y in 0..height {
            for x in 0..width {
                let (dx, dy) = (x as f64 + 0.5 - cx, y as f64 + 0.5 - cy);
                if dx * dx + dy * dy > r2 {
                    canvas[y * width + x] = 0.0;
                }
            }
        }
    }
    if let Some(s) = scenario.subscreen {
        for y in s.y..s.y + s.height {
            for v in &mut canvas[y * width + s.x..y * width + s.x + s.width] {
                *v = f64::from(s.intensity);
            }
        }
    }
    let pixels = canvas.iter().map(|v| v.round().clamp(0.0, 255.0) as u8).collect();
    GrayImage::new(width, height, pixels)
}

/// Separable Gaussian blur with a `⌈3σ⌉` radius and clamp-to-edge borders.
pub fn gaussian_blur(src: &[f64], width: usize, height: usize, sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as isize;
    let mut kernel: Vec<f64> = (-radius..=radius)
        .map(|k| (-((k * k) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|k| *k /= total);

    let clamp = |v: isize, hi: usize| v.clamp(0, hi as isize - 1) as usize;
    let mut tmp = vec![0.0; src.len()];
    for y in 0..height {
        let row = &src[y * width..(y + 1) * width];
        for x in 0..width {
            tmp[y * width + x] = kernel
                .iter()
                .enumerate()
                .map(|(i, k)| k * row[clamp(x as isize + i as isize - radius, width)])
                .sum();
        }
    }
    let mut out = vec![0.0; src.len()];
    for y in 0..height {
        for x in 0..width {
            out[y * width + x] = kernel
                .iter()
                .enumerate()
                .map(|(i, k)| k * tmp[clamp(y as isize + i as isize - radius, height) * width + x])
                .sum();
        }
    }
    out
}

/// Sum of bilinearly interpolated lattice-noise octaves, normalised to `[-1, 1]`.
fn value_noise(width: usize, height: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = vec![0.0; width * height];
    let mut amplitude_sum = 0.0;
    let base_spacing = (width.max(height) as f64 / 4.0).max(2.0);
    for octave in 0..NOISE_OCTAVES {
        let spacing = base_spacing / f64::from(1u32 << octave);
        let amplitude = 0.5f64.powi(octave as i32);
        amplitude_sum += amplitude;
        let gw = (width as f64 / spacing).ceil() as usize + 2;
        let gh = (height as f64 / spacing).ceil() as usize + 2;
        let lattice: Vec<f64> = (0..gw * gh).map(|_| rng.gen_range(-1.0..=1.0)).collect();
        for y in 0..height {
            let fy = y as f64 / spacing;
            let (iy, ty) = (fy.floor() as usize, fy.fract());
            for x in 0..width {
                let fx = x as f64 / spacing;
                let (ix, tx) = (fx.floor() as usize, fx.fract());
                let at = |i: usize, j: usize| lattice[j * gw + i];
                let top = at(ix, iy) * (1.0 - tx) + at(ix + 1, iy) * tx;
                let bottom = at(ix, iy + 1) * (1.0 - tx) + at(ix + 1, iy + 1) * tx;
                out[y * width + x] += amplitude * (top * (1.0 - ty) + bottom * ty);
            }
        }
    }
    out.iter_mut().for_each(|v| *v /= amplitude_sum);
    out
}

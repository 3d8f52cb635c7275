//! Deterministic image corruptions and synthetic out-of-distribution images.

mod image;
mod jpeg;

use std::fmt;
use std::sync::OnceLock;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use self::image::{is_image_path, RasterImage};
pub use self::jpeg::{jpeg_corrupt, scaled_table, CHROMA_QUANT, LUMA_QUANT};
use crate::error::{Error, Result};
use crate::rng::SeededRng;

/// Kind and parameters of one corruption.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Corruption {
    SaltPepper { p: f64 },
    Jpeg { quality: u8 },
    Snow { density: f64, blur_radius: u32, brightness_lift: f64 },
    Cartoon { levels: u32, smooth_iters: u32, edge_threshold: f64 },
}

impl Corruption {
    pub const DEFAULT_SALT_PEPPER: Corruption = Corruption::SaltPepper { p: 0.1 };
    pub const DEFAULT_JPEG: Corruption = Corruption::Jpeg { quality: 10 };
    pub const DEFAULT_SNOW: Corruption = Corruption::Snow {
        density: 0.3,
        blur_radius: 2,
        brightness_lift: 0.2,
    };
    pub const DEFAULT_CARTOON: Corruption = Corruption::Cartoon {
        levels: 6,
        smooth_iters: 3,
        edge_threshold: 0.25,
    };

    pub fn name(&self) -> &'static str {
        match self {
            Corruption::SaltPepper { .. } => "salt_pepper",
            Corruption::Jpeg { .. } => "jpeg",
            Corruption::Snow { .. } => "snow",
            Corruption::Cartoon { .. } => "cartoon",
        }
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        let ok = match *self {
            Corruption::SaltPepper { p } => unit(p),
            Corruption::Jpeg { quality } => (1..=100).contains(&quality),
            Corruption::Snow {
                density,
                brightness_lift,
                ..
            } => unit(density) && unit(brightness_lift),
            Corruption::Cartoon {
                levels,
                smooth_iters,
                edge_threshold,
            } => (2..=256).contains(&levels) && smooth_iters >= 1 && unit(edge_threshold),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("corruption parameters out of range: {self}")))
        }
    }

    /// Applies the corruption; `seed` only matters for the random kinds.
    pub fn apply(&self, img: &RasterImage, seed: u64) -> RasterImage {
        match *self {
            Corruption::SaltPepper { p } => salt_pepper(img, p, seed),
            Corruption::Jpeg { quality } => jpeg_corrupt(img, quality),
            Corruption::Snow {
                density,
                blur_radius,
                brightness_lift,
            } => snow_corrupt(img, density, blur_radius, brightness_lift, seed),
            Corruption::Cartoon {
                levels,
                smooth_iters,
                edge_threshold,
            } => cartoon_corrupt(img, levels, smooth_iters, edge_threshold),
        }
    }
}

impl fmt::Display for Corruption {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Corruption::SaltPepper { p } => write!(f, "salt_pepper(p={p})"),
            Corruption::Jpeg { quality } => write!(f, "jpeg(quality={quality})"),
            Corruption::Snow {
                density,
                blur_radius,
                brightness_lift,
            } => write!(f, "snow(density={density}, blur={blur_radius}, lift={brightness_lift})"),
            Corruption::Cartoon {
                levels,
                smooth_iters,
                edge_threshold,
            } => write!(f, "cartoon(levels={levels}, iters={smooth_iters}, edge={edge_threshold})"),
        }
    }
}

/// A corruption plus its seed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorruptionSpec {
    #[serde(flatten)]
    pub corruption: Corruption,
    #[serde(default)]
    pub seed: u64,
}

impl CorruptionSpec {
    pub fn apply(&self, img: &RasterImage) -> RasterImage {
        self.corruption.apply(img, self.seed)
    }
}

/// Each pixel, with probability `p`, becomes black or white (even odds).
pub fn salt_pepper(img: &RasterImage, p: f64, seed: u64) -> RasterImage {
    let mut rng = SeededRng::new(seed);
    let mut out = img.clone();
    for px in out.pixels_mut().chunks_exact_mut(3) {
        if rng.bernoulli(p) {
            let v = if rng.bernoulli(0.5) { 255 } else { 0 };
            px.fill(v);
        }
    }
    out
}

/// Every channel of every pixel uniform on `0..=255`.
pub fn random_noise_image(width: u32, height: u32, seed: u64) -> RasterImage {
    let mut rng = SeededRng::new(seed);
    let n = 3 * width as usize * height as usize;
    let mut pixels = Vec::with_capacity(n + 8);
    while pixels.len() < n {
        pixels.extend_from_slice(&rng.next_u64().to_le_bytes());
    }
    pixels.truncate(n);
    RasterImage::new(width, height, pixels).expect("positive dimensions")
}

pub fn crop_bbox(img: &RasterImage, x: u32, y: u32, w: u32, h: u32) -> Result<RasterImage> {
    let fits = |start: u32, len: u32, limit: u32| len > 0 && start.checked_add(len).is_some_and(|end| end <= limit);
    if !fits(x, w, img.width()) || !fits(y, h, img.height()) {
        return Err(Error::CropOutOfBounds {
            x,
            y,
            w,
            h,
            width: img.width(),
            height: img.height(),
        });
    }
    Ok(RasterImage::from_fn(w, h, |cx, cy| img.get(x + cx, y + cy)))
}

/// Separable box blur with edge clamping.
fn box_blur(values: &mut [f32], width: usize, height: usize, radius: usize) {
    if radius == 0 {
        return;
    }
    let span = (2 * radius + 1) as f32;
    let mut tmp = vec![0.0f32; values.len()];
    for y in 0..height {
        let row = &values[y * width..(y + 1) * width];
        for x in 0..width {
            let mut acc = 0.0;
            for d in -(radius as isize)..=radius as isize {
                let sx = (x as isize + d).clamp(0, width as isize - 1) as usize;
                acc += row[sx];
            }
            tmp[y * width + x] = acc / span;
        }
    }
    for y in 0..height {
        for x in 0..width {
            let mut acc = 0.0;
            for d in -(radius as isize)..=radius as isize {
                let sy = (y as isize + d).clamp(0, height as isize - 1) as usize;
                acc += tmp[sy * width + x];
            }
            values[y * width + x] = acc / span;
        }
    }
}

/// Snowflake overlay: `ceil(density * W * H / 100)` white discs of radius
/// 1..=3 at seeded positions, box-blurred, alpha-composited, then every
/// channel lifted toward white by `brightness_lift`.
///
/// Discs are drawn in a fixed order, so a higher density with the same seed
/// adds flakes on top of the lower-density overlay.
pub fn snow_corrupt(img: &RasterImage, density: f64, blur_radius: u32, brightness_lift: f64, seed: u64) -> RasterImage {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut alpha = vec![0.0f32; w * h];
    let flakes = (density * (w * h) as f64 / 100.0).ceil() as usize;
    let mut rng = SeededRng::new(seed);
    for _ in 0..flakes {
        let cx = rng.below(w as u64) as i64;
        let cy = rng.below(h as u64) as i64;
        let r = i64::from(rng.range_inclusive(1, 3));
        for y in (cy - r).max(0)..=(cy + r).min(h as i64 - 1) {
            for x in (cx - r).max(0)..=(cx + r).min(w as i64 - 1) {
                if (x - cx).pow(2) + (y - cy).pow(2) <= r * r {
                    alpha[y as usize * w + x as usize] = 1.0;
                }
            }
        }
    }
    box_blur(&mut alpha, w, h, blur_radius as usize);

    let lift = brightness_lift as f32;
    let mut out = img.clone();
    for (px, &a) in out.pixels_mut().chunks_exact_mut(3).zip(&alpha) {
        for c in px.iter_mut() {
            let v = f32::from(*c) * (1.0 - a) + 255.0 * a;
            let v = v + lift * (255.0 - v);
            *c = v.round().clamp(0.0, 255.0) as u8;
        }
    }
    out
}

const SPATIAL_SIGMA: f32 = 2.0;
const RANGE_SIGMA: f32 = 30.0;
/// Largest possible Sobel magnitude on 8-bit luminance.
const SOBEL_MAX: f32 = 1_442.497_5;

/// `exp(-d^2 / (2 sigma_r^2))` per channel difference; the RGB range weight
/// is the product over channels.
fn range_weights() -> &'static [f32; 256] {
    static LUT: OnceLock<[f32; 256]> = OnceLock::new();
    LUT.get_or_init(|| std::array::from_fn(|d| (-((d * d) as f32) / (2.0 * RANGE_SIGMA * RANGE_SIGMA)).exp()))
}

/// One pass of a 5x5 bilateral filter.
fn bilateral_pass(img: &RasterImage) -> RasterImage {
    let (w, h) = (img.width() as i64, img.height() as i64);
    let src = img.pixels();
    let lut = range_weights();
    let mut spatial = [0.0f32; 25];
    for dy in -2i64..=2 {
        for dx in -2i64..=2 {
            spatial[((dy + 2) * 5 + dx + 2) as usize] =
                (-((dx * dx + dy * dy) as f32) / (2.0 * SPATIAL_SIGMA * SPATIAL_SIGMA)).exp();
        }
    }
    // Edge-replicated copy with a 2-pixel border, so taps need no clamping.
    let pw = w + 4;
    let mut padded = Vec::with_capacity(3 * (pw * (h + 4)) as usize);
    for py in -2..h + 2 {
        let sy = py.clamp(0, h - 1);
        for px in -2..w + 2 {
            let si = 3 * (sy * w + px.clamp(0, w - 1)) as usize;
            padded.extend_from_slice(&src[si..si + 3]);
        }
    }
    let offsets: Vec<usize> = (0..5).flat_map(|dy| (0..5).map(move |dx| 3 * (dy * pw + dx) as usize)).collect();
    let mut out = vec![0u8; src.len()];
    out.par_chunks_mut(3 * w as usize).enumerate().for_each(|(y, row)| {
        for x in 0..w as usize {
            // Top-left tap of the window in the padded image.
            let base = 3 * (y * pw as usize + x);
            let center = &padded[base + offsets[12]..base + offsets[12] + 3];
            let mut acc = [0.0f32; 3];
            let mut norm = 0.0f32;
            for (&off, &sw) in offsets.iter().zip(&spatial) {
                let px = &padded[base + off..base + off + 3];
                let wgt = sw
                    * lut[usize::from(px[0].abs_diff(center[0]))]
                    * lut[usize::from(px[1].abs_diff(center[1]))]
                    * lut[usize::from(px[2].abs_diff(center[2]))];
                for c in 0..3 {
                    acc[c] += wgt * f32::from(px[c]);
                }
                norm += wgt;
            }
            for c in 0..3 {
                row[3 * x + c] = (acc[c] / norm).round().clamp(0.0, 255.0) as u8;
            }
        }
    });
    RasterImage::new(img.width(), img.height(), out).expect("same dimensions")
}

/// Sobel gradient magnitude of the luminance divided by its largest
/// possible value; always below 1.
pub fn sobel_magnitude(img: &RasterImage) -> Vec<f32> {
    let (w, h) = (img.width() as i64, img.height() as i64);
    let lum = img.luminance();
    let at = |x: i64, y: i64| lum[(y.clamp(0, h - 1) * w + x.clamp(0, w - 1)) as usize];
    let mut out = Vec::with_capacity(lum.len());
    for y in 0..h {
        for x in 0..w {
            let gx = at(x + 1, y - 1) + 2.0 * at(x + 1, y) + at(x + 1, y + 1)
                - at(x - 1, y - 1)
                - 2.0 * at(x - 1, y)
                - at(x - 1, y + 1);
            let gy = at(x - 1, y + 1) + 2.0 * at(x, y + 1) + at(x + 1, y + 1)
                - at(x - 1, y - 1)
                - 2.0 * at(x, y - 1)
                - at(x + 1, y - 1);
            out.push((gx * gx + gy * gy).sqrt() / SOBEL_MAX);
        }
    }
    out
}

fn quantize(v: u8, levels: u32) -> u8 {
    let steps = (levels - 1) as f32;
    let q = (f32::from(v) * steps / 255.0).round();
    (q * 255.0 / steps).round() as u8
}

/// Bilateral smoothing, per-channel uniform quantization to `levels`
/// values, black outlines where the normalized Sobel magnitude of the
/// smoothed luminance reaches `edge_threshold`. `smooth_iters == 0` skips
/// smoothing.
pub fn cartoon_corrupt(img: &RasterImage, levels: u32, smooth_iters: u32, edge_threshold: f64) -> RasterImage {
    let levels = levels.clamp(2, 256);
    let mut smooth = img.clone();
    for _ in 0..smooth_iters {
        smooth = bilateral_pass(&smooth);
    }
    let edges = sobel_magnitude(&smooth);
    let threshold = edge_threshold as f32;
    let mut out = smooth;
    for (px, &m) in out.pixels_mut().chunks_exact_mut(3).zip(&edges) {
        if m >= threshold {
            px.fill(0);
        } else {
            px.iter_mut().for_each(|c| *c = quantize(*c, levels));
        }
    }
    out
}

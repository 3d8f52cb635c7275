//! Baseline-JPEG-style lossy round trip without entropy coding.
//!
//! RGB -> YCbCr (JFIF), 8x8 forward DCT per plane, quantization with the
//! standard luminance/chrominance tables scaled by quality, dequantization,
//! inverse DCT and conversion back. 4:4:4 sampling; partial edge blocks are
//! padded by replicating the last row/column.

use std::f64::consts::PI;
use std::sync::OnceLock;

use super::RasterImage;

/// Baseline luminance quantization table at quality 50, row-major.
#[rustfmt::skip]
pub const LUMA_QUANT: [u16; 64] = [
    16, 11, 10, 16,  24,  40,  51,  61,
    12, 12, 14, 19,  26,  58,  60,  55,
    14, 13, 16, 24,  40,  57,  69,  56,
    14, 17, 22, 29,  51,  87,  80,  62,
    18, 22, 37, 56,  68, 109, 103,  77,
    24, 35, 55, 64,  81, 104, 113,  92,
    49, 64, 78, 87, 103, 121, 120, 101,
    72, 92, 95, 98, 112, 100, 103,  99,
];

/// Baseline chrominance quantization table at quality 50, row-major.
#[rustfmt::skip]
pub const CHROMA_QUANT: [u16; 64] = [
    17, 18, 24, 47, 99, 99, 99, 99,
    18, 21, 26, 66, 99, 99, 99, 99,
    24, 26, 56, 99, 99, 99, 99, 99,
    47, 66, 99, 99, 99, 99, 99, 99,
    99, 99, 99, 99, 99, 99, 99, 99,
    99, 99, 99, 99, 99, 99, 99, 99,
    99, 99, 99, 99, 99, 99, 99, 99,
    99, 99, 99, 99, 99, 99, 99, 99,
];

/// Base table scaled by the usual quality mapping (5000/q below 50, else
/// 200 - 2q), entries clamped to 1..=255.
pub fn scaled_table(base: &[u16; 64], quality: u8) -> [f64; 64] {
    let q = u32::from(quality.clamp(1, 100));
    let scale = if q < 50 { 5000 / q } else { 200 - 2 * q };
    let mut out = [0.0; 64];
    for (o, &b) in out.iter_mut().zip(base) {
        *o = ((u32::from(b) * scale + 50) / 100).clamp(1, 255) as f64;
    }
    out
}

/// `cos[(2x + 1) u pi / 16] * c(u) / 2`, indexed `[u][x]`.
fn dct_basis() -> &'static [[f64; 8]; 8] {
    static BASIS: OnceLock<[[f64; 8]; 8]> = OnceLock::new();
    BASIS.get_or_init(|| {
        let mut m = [[0.0; 8]; 8];
        for (u, row) in m.iter_mut().enumerate() {
            let c = if u == 0 { 1.0 / 2f64.sqrt() } else { 1.0 };
            for (x, v) in row.iter_mut().enumerate() {
                *v = c / 2.0 * ((2 * x + 1) as f64 * u as f64 * PI / 16.0).cos();
            }
        }
        m
    })
}

fn fdct(block: &[f64; 64]) -> [f64; 64] {
    let b = dct_basis();
    let mut tmp = [0.0; 64];
    for y in 0..8 {
        for u in 0..8 {
            tmp[y * 8 + u] = (0..8).map(|x| b[u][x] * block[y * 8 + x]).sum();
        }
    }
    let mut out = [0.0; 64];
    for v in 0..8 {
        for u in 0..8 {
            out[v * 8 + u] = (0..8).map(|y| b[v][y] * tmp[y * 8 + u]).sum();
        }
    }
    out
}

fn idct(coef: &[f64; 64]) -> [f64; 64] {
    let b = dct_basis();
    let mut tmp = [0.0; 64];
    for y in 0..8 {
        for u in 0..8 {
            tmp[y * 8 + u] = (0..8).map(|v| b[v][y] * coef[v * 8 + u]).sum();
        }
    }
    let mut out = [0.0; 64];
    for y in 0..8 {
        for x in 0..8 {
            out[y * 8 + x] = (0..8).map(|u| b[u][x] * tmp[y * 8 + u]).sum();
        }
    }
    out
}

/// Quantize and dequantize one plane in place, block by block.
fn roundtrip_plane(plane: &mut [f64], width: usize, height: usize, table: &[f64; 64]) {
    for by in (0..height).step_by(8) {
        for bx in (0..width).step_by(8) {
            let mut block = [0.0; 64];
            for y in 0..8 {
                let sy = (by + y).min(height - 1);
                for x in 0..8 {
                    let sx = (bx + x).min(width - 1);
                    block[y * 8 + x] = plane[sy * width + sx] - 128.0;
                }
            }
            let mut coef = fdct(&block);
            for (c, q) in coef.iter_mut().zip(table) {
                *c = (*c / q).round() * q;
            }
            let back = idct(&coef);
            for y in 0..8.min(height - by) {
                for x in 0..8.min(width - bx) {
                    plane[(by + y) * width + bx + x] = back[y * 8 + x] + 128.0;
                }
            }
        }
    }
}

fn to_u8(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

pub fn jpeg_corrupt(img: &RasterImage, quality: u8) -> RasterImage {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let n = w * h;
    let (mut luma, mut cb, mut cr) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    for (i, p) in img.pixels().chunks_exact(3).enumerate() {
        let (r, g, b) = (f64::from(p[0]), f64::from(p[1]), f64::from(p[2]));
        luma[i] = 0.299 * r + 0.587 * g + 0.114 * b;
        cb[i] = -0.168_736 * r - 0.331_264 * g + 0.5 * b + 128.0;
        cr[i] = 0.5 * r - 0.418_688 * g - 0.081_312 * b + 128.0;
    }
    roundtrip_plane(&mut luma, w, h, &scaled_table(&LUMA_QUANT, quality));
    let chroma = scaled_table(&CHROMA_QUANT, quality);
    roundtrip_plane(&mut cb, w, h, &chroma);
    roundtrip_plane(&mut cr, w, h, &chroma);

    let mut pixels = Vec::with_capacity(3 * n);
    for i in 0..n {
        let (y, cb, cr) = (luma[i], cb[i] - 128.0, cr[i] - 128.0);
        pixels.push(to_u8(y + 1.402 * cr));
        pixels.push(to_u8(y - 0.344_136 * cb - 0.714_136 * cr));
        pixels.push(to_u8(y + 1.772 * cb));
    }
    RasterImage::new(img.width(), img.height(), pixels).expect("same dimensions")
}

//! Fixed hand-crafted image features for the toy captioner.
//!
//! The image is average-pooled 2x2 and segmented into connected regions of palette color. Up to
//! [`MAX_SLOTS`] of the largest regions become object slots, ordered left to
//! right like the captions. Each slot carries [`FEATURE_COUNT`] values:
//!
//! * `0`        region present
//! * `[1, 6)`   color histogram over the region's bounding box
//! * `[6, 12)`  match against each canonical shape outline, `IoU^4` after
//!   stretching the region's bounding box onto the template
//! * `12`       elongated bounding box (short side under half the long side)
//! * `13`       another region lies further right
//! * `[14, 17)` slot index one-hot
//! * `17`       constant 1
//!
//! A slot past the last region has only the slot index and bias set.

use std::collections::VecDeque;
use std::sync::OnceLock;

use super::world::{Color, Shape};
use crate::corrupt::RasterImage;

pub const MAX_SLOTS: usize = 3;
const TEMPLATE: usize = 16;
const MATCH_POWER: i32 = 4;

pub const FEATURE_COUNT: usize = 18;
/// Bumped whenever the layout or the extraction changes.
pub const FEATURE_VERSION: u32 = 3;

const PALETTE_RADIUS2: i32 = 8 * 8;
const MIN_REGION_AREA: usize = 8;

const PRESENT: usize = 0;
const COLOR_HIST: usize = 1;
const SHAPE_MATCH: usize = 6;
const ELONGATED: usize = 12;
const HAS_NEXT: usize = 13;
const SLOT_INDEX: usize = 14;
const BIAS: usize = 17;

/// Per-slot feature vectors of one image; slot `MAX_SLOTS` and beyond read
/// as an empty, unindexed slot.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageFeatures {
    slots: Vec<Vec<f64>>,
    overflow: Vec<f64>,
}

impl ImageFeatures {
    pub fn slot(&self, index: usize) -> &[f64] {
        self.slots.get(index).unwrap_or(&self.overflow)
    }

    /// Number of detected regions.
    pub fn regions(&self) -> usize {
        self.slots.iter().filter(|s| s[PRESENT] > 0.0).count()
    }

    /// Arbitrary feature values, for gradient checks and tests.
    pub fn from_slots(slots: Vec<Vec<f64>>) -> Self {
        assert!(slots.iter().all(|s| s.len() == FEATURE_COUNT));
        ImageFeatures {
            slots,
            overflow: empty_slot(None),
        }
    }
}

fn empty_slot(index: Option<usize>) -> Vec<f64> {
    let mut f = vec![0.0; FEATURE_COUNT];
    if let Some(i) = index {
        f[SLOT_INDEX + i] = 1.0;
    }
    f[BIAS] = 1.0;
    f
}

fn classify(p: &[u8]) -> Option<usize> {
    let (best, d2) = Color::ALL
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let rgb = c.rgb();
            let d2: i32 = (0..3).map(|k| (i32::from(p[k]) - i32::from(rgb[k])).pow(2)).sum();
            (i, d2)
        })
        .min_by_key(|&(_, d2)| d2)?;
    (d2 <= PALETTE_RADIUS2).then_some(best)
}

/// Each shape's outline sampled on a `TEMPLATE`x`TEMPLATE` grid spanning its
/// own bounding box. Bars use the horizontal form; the grid stretch makes
/// both orientations the same solid box.
fn templates() -> &'static [[bool; TEMPLATE * TEMPLATE]; 6] {
    static CELLS: OnceLock<[[bool; TEMPLATE * TEMPLATE]; 6]> = OnceLock::new();
    CELLS.get_or_init(|| {
        const FINE: usize = 256;
        let mut out = [[false; TEMPLATE * TEMPLATE]; 6];
        for (k, shape) in Shape::ALL.iter().enumerate() {
            let at = |i: usize| (i as f32 + 0.5) / FINE as f32 * 2.0 - 1.0;
            let inside = |x: usize, y: usize| shape.contains(at(x), at(y), 1.0, false);
            let (mut x0, mut y0, mut x1, mut y1) = (FINE, FINE, 0, 0);
            for y in 0..FINE {
                for x in 0..FINE {
                    if inside(x, y) {
                        (x0, y0, x1, y1) = (x0.min(x), y0.min(y), x1.max(x), y1.max(y));
                    }
                }
            }
            for gy in 0..TEMPLATE {
                for gx in 0..TEMPLATE {
                    let fx = x0 + ((gx as f32 + 0.5) / TEMPLATE as f32 * (x1 - x0 + 1) as f32) as usize;
                    let fy = y0 + ((gy as f32 + 0.5) / TEMPLATE as f32 * (y1 - y0 + 1) as f32) as usize;
                    out[k][gy * TEMPLATE + gx] = inside(fx, fy);
                }
            }
        }
        out
    })
}

struct Region {
    pixels: Vec<usize>,
    x0: usize,
    y0: usize,
    x1: usize,
    y1: usize,
    cx: f64,
}

/// 4-connected regions of equal palette class.
fn regions(classes: &[Option<usize>], w: usize, h: usize) -> Vec<Region> {
    let mut label = vec![usize::MAX; classes.len()];
    let mut out = Vec::new();
    let mut queue = VecDeque::new();
    for start in 0..classes.len() {
        let Some(class) = classes[start] else { continue };
        if label[start] != usize::MAX {
            continue;
        }
        let id = out.len();
        label[start] = id;
        queue.push_back(start);
        let mut pixels = Vec::new();
        while let Some(i) = queue.pop_front() {
            pixels.push(i);
            let (x, y) = (i % w, i / w);
            let mut visit = |j: usize| {
                if label[j] == usize::MAX && classes[j] == Some(class) {
                    label[j] = id;
                    queue.push_back(j);
                }
            };
            if x > 0 {
                visit(i - 1);
            }
            if x + 1 < w {
                visit(i + 1);
            }
            if y > 0 {
                visit(i - w);
            }
            if y + 1 < h {
                visit(i + w);
            }
        }
        let xs = pixels.iter().map(|&i| i % w);
        let ys = pixels.iter().map(|&i| i / w);
        let region = Region {
            x0: xs.clone().min().unwrap_or(0),
            x1: xs.clone().max().unwrap_or(0),
            y0: ys.clone().min().unwrap_or(0),
            y1: ys.max().unwrap_or(0),
            cx: xs.sum::<usize>() as f64 / pixels.len() as f64,
            pixels,
        };
        out.push(region);
    }
    out
}

fn describe(r: &Region, classes: &[Option<usize>], w: usize, slot: usize, has_next: bool) -> Vec<f64> {
    let mut f = empty_slot(Some(slot));
    f[PRESENT] = 1.0;
    let (bw, bh) = (r.x1 - r.x0 + 1, r.y1 - r.y0 + 1);
    let box_area = (bw * bh) as f64;
    for y in r.y0..=r.y1 {
        for x in r.x0..=r.x1 {
            if let Some(c) = classes[y * w + x] {
                f[COLOR_HIST + c] += 1.0 / box_area;
            }
        }
    }
    f[ELONGATED] = f64::from(u8::from(2 * bw.min(bh) < bw.max(bh)));

    let mut inside = vec![false; bw * bh];
    for &i in &r.pixels {
        inside[(i / w - r.y0) * bw + (i % w - r.x0)] = true;
    }
    let mut sampled = [false; TEMPLATE * TEMPLATE];
    for gy in 0..TEMPLATE {
        for gx in 0..TEMPLATE {
            let x = ((gx as f64 + 0.5) / TEMPLATE as f64 * bw as f64) as usize;
            let y = ((gy as f64 + 0.5) / TEMPLATE as f64 * bh as f64) as usize;
            sampled[gy * TEMPLATE + gx] = inside[y * bw + x];
        }
    }
    for (k, template) in templates().iter().enumerate() {
        let both = sampled.iter().zip(template).filter(|(a, b)| **a && **b).count();
        let either = sampled.iter().zip(template).filter(|(a, b)| **a || **b).count();
        let iou = both as f64 / either.max(1) as f64;
        f[SHAPE_MATCH + k] = iou.powi(MATCH_POWER);
    }
    f[HAS_NEXT] = f64::from(u8::from(has_next));
    f
}

/// Mean of each 2x2 block; a trailing odd row or column is dropped.
fn pool2(img: &RasterImage) -> (Vec<[u8; 3]>, usize, usize) {
    let (w, h) = ((img.width() as usize / 2).max(1), (img.height() as usize / 2).max(1));
    let (iw, ih) = (img.width(), img.height());
    let mut out = Vec::with_capacity(w * h);
    for y in 0..h as u32 {
        for x in 0..w as u32 {
            let mut acc = [0u32; 3];
            for (dx, dy) in [(0, 0), (1, 0), (0, 1), (1, 1)] {
                let p = img.get((2 * x + dx).min(iw - 1), (2 * y + dy).min(ih - 1));
                for k in 0..3 {
                    acc[k] += u32::from(p[k]);
                }
            }
            out.push(acc.map(|a| ((a + 2) / 4) as u8));
        }
    }
    (out, w, h)
}

pub fn image_features(img: &RasterImage) -> ImageFeatures {
    let (pooled, w, h) = pool2(img);
    let classes: Vec<Option<usize>> = pooled.iter().map(|p| classify(p)).collect();
    let mut found: Vec<Region> = regions(&classes, w, h)
        .into_iter()
        .filter(|r| r.pixels.len() >= MIN_REGION_AREA)
        .collect();
    found.sort_by(|a, b| b.pixels.len().cmp(&a.pixels.len()).then(a.cx.total_cmp(&b.cx)));
    found.truncate(MAX_SLOTS);
    found.sort_by(|a, b| a.cx.total_cmp(&b.cx));

    let slots = (0..MAX_SLOTS)
        .map(|s| match found.get(s) {
            Some(r) => describe(r, &classes, w, s, s + 1 < found.len()),
            None => empty_slot(Some(s)),
        })
        .collect();
    ImageFeatures {
        slots,
        overflow: empty_slot(None),
    }
}

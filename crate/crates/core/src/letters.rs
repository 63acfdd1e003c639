//! OCR-free letter localisation: Otsu binarization, 8-connected component
//! labelling and median-area filtering.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::GrayImage;

/// Components with area below this multiple of the page median are dropped.
pub const LOWER_AREA_FACTOR: f64 = 0.5;
/// Components with area above this multiple of the page median are dropped.
pub const UPPER_AREA_FACTOR: f64 = 4.0;

/// Axis-aligned box, `(x, y)` is the top-left corner.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BBox {
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
}

impl BBox {
    pub fn area(&self) -> usize {
        self.w * self.h
    }

    pub fn contains(&self, x: usize, y: usize) -> bool {
        x >= self.x && x < self.x + self.w && y >= self.y && y < self.y + self.h
    }

    pub fn intersects(&self, other: &BBox) -> bool {
        self.x < other.x + other.w
            && other.x < self.x + self.w
            && self.y < other.y + other.h
            && other.y < self.y + self.h
    }

    pub fn iou(&self, other: &BBox) -> f64 {
        let x0 = self.x.max(other.x);
        let y0 = self.y.max(other.y);
        let x1 = (self.x + self.w).min(other.x + other.w);
        let y1 = (self.y + self.h).min(other.y + other.h);
        if x1 <= x0 || y1 <= y0 {
            return 0.0;
        }
        let inter = ((x1 - x0) * (y1 - y0)) as f64;
        inter / ((self.area() + other.area()) as f64 - inter)
    }
}

/// Foreground mask; `true` marks ink.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryImage {
    width: usize,
    height: usize,
    threshold: u8,
    mask: Vec<bool>,
}

impl BinaryImage {
    pub fn from_mask(width: usize, height: usize, mask: Vec<bool>) -> Result<Self> {
        if mask.len() != width * height || width == 0 || height == 0 {
            return Err(Error::param("mask", "length does not match dimensions"));
        }
        Ok(Self {
            width,
            height,
            threshold: 0,
            mask,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// Threshold used to produce this mask (foreground is `<= threshold`).
    pub fn threshold(&self) -> u8 {
        self.threshold
    }

    #[inline]
    pub fn is_foreground(&self, x: usize, y: usize) -> bool {
        self.mask[y * self.width + x]
    }

    pub fn foreground_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

/// Otsu's threshold: the `t` maximising between-class variance with classes
/// `{i <= t}` and `{i > t}`. Ties resolve to the smallest `t`.
pub fn otsu_threshold(img: &GrayImage) -> Result<u8> {
    let mut hist = [0u64; 256];
    for &p in img.pixels() {
        hist[p as usize] += 1;
    }
    let total = img.pixels().len() as f64;
    let sum_all: f64 = hist.iter().enumerate().map(|(i, &c)| i as f64 * c as f64).sum();

    let mut best: Option<(u8, f64)> = None;
    let mut w0 = 0.0;
    let mut sum0 = 0.0;
    for t in 0..255usize {
        w0 += hist[t] as f64;
        sum0 += t as f64 * hist[t] as f64;
        let w1 = total - w0;
        if w0 == 0.0 || w1 == 0.0 {
            continue;
        }
        let m0 = sum0 / w0;
        let m1 = (sum_all - sum0) / w1;
        let between = w0 * w1 * (m0 - m1) * (m0 - m1);
        if best.is_none_or(|(_, b)| between > b) {
            best = Some((t as u8, between));
        }
    }
    best.map(|(t, _)| t).ok_or_else(|| {
        Error::Degenerate("constant image has no foreground/background split".into())
    })
}

/// Marks pixels at or below the Otsu threshold as ink.
pub fn binarize(img: &GrayImage) -> Result<BinaryImage> {
    let threshold = otsu_threshold(img)?;
    Ok(BinaryImage {
        width: img.width(),
        height: img.height(),
        threshold,
        mask: img.pixels().iter().map(|&p| p <= threshold).collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Component {
    pub bbox: BBox,
    pub area: usize,
    /// `(x, y)` coordinates, in discovery order.
    pub pixels: Vec<(usize, usize)>,
}

/// 8-connected components of the foreground, sorted by bbox origin
/// (row first, then column).
pub fn connected_components(bin: &BinaryImage) -> Result<Vec<Component>> {
    let (w, h) = (bin.width, bin.height);
    let mut visited = vec![false; w * h];
    let mut comps = Vec::new();
    let mut stack = Vec::new();

    for start in 0..w * h {
        if !bin.mask[start] || visited[start] {
            continue;
        }
        visited[start] = true;
        stack.push(start);
        let mut pixels = Vec::new();
        let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0, 0);
        while let Some(idx) = stack.pop() {
            let (x, y) = (idx % w, idx / w);
            pixels.push((x, y));
            x0 = x0.min(x);
            y0 = y0.min(y);
            x1 = x1.max(x);
            y1 = y1.max(y);
            for ny in y.saturating_sub(1)..=(y + 1).min(h - 1) {
                for nx in x.saturating_sub(1)..=(x + 1).min(w - 1) {
                    let n = ny * w + nx;
                    if bin.mask[n] && !visited[n] {
                        visited[n] = true;
                        stack.push(n);
                    }
                }
            }
        }
        comps.push((
            start,
            Component {
                bbox: BBox {
                    x: x0,
                    y: y0,
                    w: x1 - x0 + 1,
                    h: y1 - y0 + 1,
                },
                area: pixels.len(),
                pixels,
            },
        ));
    }
    if comps.is_empty() {
        return Err(Error::Degenerate("binary image has no foreground".into()));
    }
    comps.sort_by_key(|(start, c)| (c.bbox.y, c.bbox.x, *start));
    Ok(comps.into_iter().map(|(_, c)| c).collect())
}

/// A component accepted as a letter candidate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LetterBox {
    pub bbox: BBox,
    pub area: usize,
    /// Position in raster order among the letters of one page, `0..k`.
    pub index: usize,
}

/// Median of a list of counts; even lengths average the two central values.
pub fn median(values: &[usize]) -> f64 {
    let mut v = values.to_vec();
    v.sort_unstable();
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2] as f64
    } else {
        (v[n / 2 - 1] + v[n / 2]) as f64 / 2.0
    }
}

/// Keeps components whose ink area lies in `[0.5·median, 4·median]`
/// (both ends inclusive) and numbers them in page order.
pub fn filter_components(comps: &[Component]) -> Result<Vec<LetterBox>> {
    if comps.is_empty() {
        return Err(Error::NoLetters);
    }
    let areas: Vec<usize> = comps.iter().map(|c| c.area).collect();
    let m = median(&areas);
    let (lo, hi) = (LOWER_AREA_FACTOR * m, UPPER_AREA_FACTOR * m);
    let kept: Vec<LetterBox> = comps
        .iter()
        .filter(|c| (lo..=hi).contains(&(c.area as f64)))
        .enumerate()
        .map(|(index, c)| LetterBox {
            bbox: c.bbox,
            area: c.area,
            index,
        })
        .collect();
    if kept.is_empty() {
        Err(Error::NoLetters)
    } else {
        Ok(kept)
    }
}

/// Binarize, label and filter in one step.
pub fn find_letters(img: &GrayImage) -> Result<Vec<LetterBox>> {
    let bin = binarize(img)?;
    let comps = connected_components(&bin)?;
    filter_components(&comps)
}

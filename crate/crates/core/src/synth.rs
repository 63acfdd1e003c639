//! Virtual printers: random stroke glyphs rendered with per-printer artifacts.
//!
//! A glyph is an ideal binary mask. Rendering computes a signed distance to
//! the glyph outline, shifts it by the dot gain and turns it into ink
//! coverage through a linear ramp of width `blur` (the scanner's blur).
//! Toner intensity carries spatially correlated noise and a row-periodic
//! banding term; pixels within one pixel of the outline receive extra jitter
//! and paper pixels are lightly speckled. A Gaussian point spread of the
//! scanner is applied last.

use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::GrayImage;
use crate::letters::BBox;

pub const PAPER: u8 = 255;
pub const A4_WIDTH: usize = 2480;
pub const A4_HEIGHT: usize = 3508;
/// Speckles lighten paper by at most this much so they never binarize as ink.
pub const SPECKLE_MAX_DEPTH: f64 = 60.0;
const SPECKLE_MIN_DEPTH: f64 = 25.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrinterProfile {
    pub id: String,
    /// Standard deviation of intensity jitter on outline pixels.
    pub edge_noise_sigma: f64,
    /// Signed outline offset in pixels; positive thickens strokes.
    pub dot_gain: f64,
    pub banding_period: f64,
    pub banding_amplitude: f64,
    /// Probability that a paper pixel carries a speckle.
    pub speckle_density: f64,
    /// Mean toner intensity, in [0, 80].
    pub toner_darkness: f64,
    /// Standard deviation of the toner intensity noise.
    pub ink_noise_sigma: f64,
    /// Box radius of the toner noise correlation; 0 gives white noise.
    pub grain_size: usize,
    /// Width of the ink-to-paper ramp in pixels; 0 renders hard edges.
    pub blur: f64,
    /// Standard deviation of the scanner's Gaussian point spread, pixels.
    pub scan_sigma: f64,
    pub rng_seed: u64,
}

impl PrinterProfile {
    /// A profile without artifacts: toner at `toner_darkness`, paper at 255.
    pub fn ideal(id: &str, toner_darkness: f64) -> Self {
        Self {
            id: id.into(),
            edge_noise_sigma: 0.0,
            dot_gain: 0.0,
            banding_period: 0.0,
            banding_amplitude: 0.0,
            speckle_density: 0.0,
            toner_darkness,
            ink_noise_sigma: 0.0,
            grain_size: 0,
            blur: 0.0,
            scan_sigma: 0.0,
            rng_seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let magnitudes = [
            ("edge_noise_sigma", self.edge_noise_sigma),
            ("banding_amplitude", self.banding_amplitude),
            ("speckle_density", self.speckle_density),
            ("ink_noise_sigma", self.ink_noise_sigma),
            ("blur", self.blur),
            ("scan_sigma", self.scan_sigma),
            ("banding_period", self.banding_period),
        ];
        for (name, v) in magnitudes {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::param(name, format!("profile `{}`: must be a finite value >= 0", self.id)));
            }
        }
        if !self.dot_gain.is_finite() || self.dot_gain.abs() > 3.0 {
            return Err(Error::param("dot_gain", format!("profile `{}`: must lie in [-3, 3]", self.id)));
        }
        if self.banding_amplitude > 0.0 && self.banding_period < 2.0 {
            return Err(Error::param(
                "banding_period",
                format!("profile `{}`: must be at least 2 when banding is on", self.id),
            ));
        }
        if self.speckle_density > 1.0 {
            return Err(Error::param("speckle_density", "must be a probability"));
        }
        if !(0.0..=80.0).contains(&self.toner_darkness) {
            return Err(Error::param("toner_darkness", format!("profile `{}`: must lie in [0, 80]", self.id)));
        }
        if self.id.is_empty() || self.id.contains([',', '/', '\\', ' ']) {
            return Err(Error::param("id", "must be nonempty without commas, slashes or spaces"));
        }
        Ok(())
    }

    fn base(id: &str, rng_seed: u64) -> Self {
        Self {
            id: id.into(),
            edge_noise_sigma: 8.0,
            dot_gain: 0.0,
            banding_period: 0.0,
            banding_amplitude: 0.0,
            speckle_density: 0.0,
            toner_darkness: 50.0,
            ink_noise_sigma: 10.0,
            grain_size: 1,
            blur: 1.5,
            scan_sigma: 1.5,
            rng_seed,
        }
    }
}

/// Four printers, each dominated by a different artifact.
pub fn default_suite() -> Vec<PrinterProfile> {
    vec![
        PrinterProfile {
            edge_noise_sigma: 40.0,
            blur: 1.0,
            ..PrinterProfile::base("edgy", 101)
        },
        PrinterProfile {
            banding_period: 10.0,
            banding_amplitude: 30.0,
            ink_noise_sigma: 5.0,
            grain_size: 2,
            toner_darkness: 45.0,
            blur: 2.0,
            ..PrinterProfile::base("banded", 202)
        },
        PrinterProfile {
            dot_gain: 1.0,
            grain_size: 2,
            toner_darkness: 35.0,
            blur: 2.5,
            ..PrinterProfile::base("bold", 303)
        },
        PrinterProfile {
            speckle_density: 0.02,
            toner_darkness: 70.0,
            ink_noise_sigma: 16.0,
            blur: 1.0,
            ..PrinterProfile::base("speckled", 404)
        },
    ]
}

/// Two printers of one "model" whose edge noise differs by 10%, plus two
/// distinct printers from the default suite.
pub fn same_model_suite() -> Vec<PrinterProfile> {
    let twin = |id: &str, sigma: f64, seed: u64| PrinterProfile {
        edge_noise_sigma: sigma,
        ..PrinterProfile::base(id, seed)
    };
    let suite = default_suite();
    vec![
        twin("twin-a", 20.0, 505),
        twin("twin-b", 22.0, 606),
        suite[1].clone(),
        suite[2].clone(),
    ]
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ProfileFile {
    profile: Vec<PrinterProfile>,
}

/// Parses `[[profile]]` tables from TOML.
pub fn parse_profiles(text: &str) -> Result<Vec<PrinterProfile>> {
    let file: ProfileFile =
        toml::from_str(text).map_err(|e| Error::Validation(format!("profiles: {e}")))?;
    let mut seen = std::collections::BTreeSet::new();
    for p in &file.profile {
        p.validate()?;
        if !seen.insert(p.id.as_str()) {
            return Err(Error::Validation(format!("duplicate profile id `{}`", p.id)));
        }
    }
    if file.profile.is_empty() {
        return Err(Error::Validation("no profiles given".into()));
    }
    Ok(file.profile)
}

pub fn load_profiles(path: &Path) -> Result<Vec<PrinterProfile>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_profiles(&text)
}

pub fn profiles_to_toml(profiles: &[PrinterProfile]) -> String {
    #[derive(Serialize)]
    struct Out<'a> {
        profile: &'a [PrinterProfile],
    }
    toml::to_string(&Out { profile: profiles }).expect("profiles serialize")
}

/// Ideal binary glyph, cropped to its ink.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Glyph {
    width: usize,
    height: usize,
    mask: Vec<bool>,
}

impl Glyph {
    pub fn from_mask(width: usize, height: usize, mask: Vec<bool>) -> Result<Self> {
        if width == 0 || height == 0 || mask.len() != width * height {
            return Err(Error::Format("glyph mask does not match its dimensions".into()));
        }
        Ok(Self { width, height, mask })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn is_ink(&self, x: usize, y: usize) -> bool {
        self.mask[y * self.width + x]
    }

    pub fn area(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    /// True when the ink forms a single 8-connected component.
    pub fn is_connected(&self) -> bool {
        let Some(start) = self.mask.iter().position(|&m| m) else {
            return false;
        };
        let (w, h) = (self.width as isize, self.height as isize);
        let mut seen = vec![false; self.mask.len()];
        seen[start] = true;
        let mut stack = vec![start];
        let mut count = 0;
        while let Some(i) = stack.pop() {
            count += 1;
            let (x, y) = ((i % self.width) as isize, (i / self.width) as isize);
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let (nx, ny) = (x + dx, y + dy);
                    if nx < 0 || ny < 0 || nx >= w || ny >= h {
                        continue;
                    }
                    let j = (ny * w + nx) as usize;
                    if self.mask[j] && !seen[j] {
                        seen[j] = true;
                        stack.push(j);
                    }
                }
            }
        }
        count == self.area()
    }
}

/// Glyph box sides and the ink-area band they are drawn to.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GlyphSpec {
    pub min_size: usize,
    pub max_size: usize,
}

impl Default for GlyphSpec {
    fn default() -> Self {
        Self {
            min_size: 22,
            max_size: 40,
        }
    }
}

impl GlyphSpec {
    pub fn validate(&self) -> Result<()> {
        if self.min_size < 12 || self.max_size > 60 || self.min_size > self.max_size {
            return Err(Error::param("glyph size", "need 12 <= min_size <= max_size <= 60"));
        }
        Ok(())
    }

    /// Every glyph's ink area lies in `[lo, 2·lo)`. For any page of such
    /// glyphs the median m also lies there, so `0.5·m < lo` and `2·lo <= 4·m`
    /// and no glyph is lost to the median-area filter.
    pub fn area_band(&self) -> (usize, usize) {
        let lo = (self.min_size * self.max_size).div_ceil(4);
        (lo, 2 * lo)
    }
}

fn draw_capsule(mask: &mut [bool], w: usize, h: usize, p0: (f64, f64), p1: (f64, f64), width: f64) {
    let r = width / 2.0;
    let (dx, dy) = (p1.0 - p0.0, p1.1 - p0.1);
    let len2 = (dx * dx + dy * dy).max(1e-12);
    for y in 0..h {
        for x in 0..w {
            let (px, py) = (x as f64, y as f64);
            let t = (((px - p0.0) * dx + (py - p0.1) * dy) / len2).clamp(0.0, 1.0);
            let (cx, cy) = (p0.0 + t * dx, p0.1 + t * dy);
            if (px - cx).powi(2) + (py - cy).powi(2) <= r * r {
                mask[y * w + x] = true;
            }
        }
    }
}

/// Arc of radius `radius` around `centre` covering `sweep` radians from `a0`.
fn draw_arc(mask: &mut [bool], w: usize, h: usize, centre: (f64, f64), radius: f64, a0: f64, sweep: f64, width: f64) {
    let r = width / 2.0;
    for y in 0..h {
        for x in 0..w {
            let (px, py) = (x as f64 - centre.0, y as f64 - centre.1);
            let d = (px * px + py * py).sqrt();
            if (d - radius).abs() > r {
                continue;
            }
            let rel = (py.atan2(px) - a0).rem_euclid(2.0 * PI);
            if rel <= sweep {
                mask[y * w + x] = true;
            }
        }
    }
}

fn crop_to_ink(mask: &[bool], w: usize, h: usize) -> Glyph {
    let (mut x0, mut y0, mut x1, mut y1) = (w, h, 0, 0);
    for y in 0..h {
        for x in 0..w {
            if mask[y * w + x] {
                x0 = x0.min(x);
                y0 = y0.min(y);
                x1 = x1.max(x);
                y1 = y1.max(y);
            }
        }
    }
    let (cw, ch) = (x1 - x0 + 1, y1 - y0 + 1);
    let mut out = vec![false; cw * ch];
    for y in 0..ch {
        for x in 0..cw {
            out[y * cw + x] = mask[(y + y0) * w + x + x0];
        }
    }
    Glyph {
        width: cw,
        height: ch,
        mask: out,
    }
}

/// Random figure of 2 to 5 strokes (segments and arcs, 2 to 5 px wide), each
/// starting on ink already drawn so the figure stays connected.
pub fn gen_glyph(rng: &mut impl Rng, spec: &GlyphSpec) -> Result<Glyph> {
    spec.validate()?;
    let (lo, hi) = spec.area_band();
    loop {
        let w = rng.random_range(spec.min_size..=spec.max_size);
        let h = rng.random_range(spec.min_size..=spec.max_size);
        let mut mask = vec![false; w * h];
        let strokes = rng.random_range(2..=5);
        let (fw, fh) = ((w - 1) as f64, (h - 1) as f64);
        for s in 0..strokes {
            let width = rng.random_range(2.0..5.0);
            let start = if s == 0 {
                (rng.random_range(0.0..=fw), rng.random_range(0.0..=fh))
            } else {
                let ink: Vec<usize> = (0..w * h).filter(|&i| mask[i]).collect();
                let i = ink[rng.random_range(0..ink.len())];
                ((i % w) as f64, (i / w) as f64)
            };
            if rng.random_bool(0.7) {
                let end = (rng.random_range(0.0..=fw), rng.random_range(0.0..=fh));
                draw_capsule(&mut mask, w, h, start, end, width);
            } else {
                let radius = rng.random_range(3.0..(w.min(h) as f64 / 2.0).max(4.0));
                let theta = rng.random_range(0.0..2.0 * PI);
                let centre = (start.0 - radius * theta.cos(), start.1 - radius * theta.sin());
                let sweep = rng.random_range(PI / 2.0..1.5 * PI);
                let a0 = theta - rng.random_range(0.0..sweep);
                draw_arc(&mut mask, w, h, centre, radius, a0, sweep, width);
                // the arc passes through `start` only when its centre
                // direction lands inside the sweep; a dot guarantees contact
                draw_capsule(&mut mask, w, h, start, start, width);
            }
        }
        let glyph = crop_to_ink(&mask, w, h);
        let area = glyph.area();
        if (lo..hi).contains(&area) && glyph.is_connected() {
            return Ok(glyph);
        }
    }
}

/// Exact Euclidean distance from each pixel to the nearest `true` pixel.
fn distance_transform(mask: &[bool], w: usize, h: usize) -> Vec<f64> {
    const FAR: f64 = 1e20;
    fn pass(f: &[f64], out: &mut [f64]) {
        let n = f.len();
        let mut v = vec![0usize; n];
        let mut z = vec![0.0f64; n + 1];
        let mut k = 0;
        z[0] = f64::NEG_INFINITY;
        z[1] = f64::INFINITY;
        for q in 1..n {
            let qf = q as f64;
            let meet = |p: usize| {
                let pf = p as f64;
                ((f[q] + qf * qf) - (f[p] + pf * pf)) / (2.0 * qf - 2.0 * pf)
            };
            let mut s = meet(v[k]);
            while s <= z[k] {
                k -= 1;
                s = meet(v[k]);
            }
            k += 1;
            v[k] = q;
            z[k] = s;
            z[k + 1] = f64::INFINITY;
        }
        k = 0;
        for (q, o) in out.iter_mut().enumerate() {
            while z[k + 1] < q as f64 {
                k += 1;
            }
            let d = q as f64 - v[k] as f64;
            *o = d * d + f[v[k]];
        }
    }
    let mut grid: Vec<f64> = mask.iter().map(|&m| if m { 0.0 } else { FAR }).collect();
    let mut col = vec![0.0; h];
    let mut tmp = vec![0.0; h.max(w)];
    for x in 0..w {
        for y in 0..h {
            col[y] = grid[y * w + x];
        }
        pass(&col, &mut tmp[..h]);
        for y in 0..h {
            grid[y * w + x] = tmp[y];
        }
    }
    for y in 0..h {
        let row = grid[y * w..(y + 1) * w].to_vec();
        pass(&row, &mut grid[y * w..(y + 1) * w]);
    }
    grid.iter().map(|d| d.sqrt()).collect()
}

/// Unit-variance noise field, box-correlated over radius `grain`.
fn noise_field(rng: &mut impl Rng, w: usize, h: usize, grain: usize) -> Vec<f64> {
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let (pw, ph) = (w + 2 * grain, h + 2 * grain);
    let white: Vec<f64> = (0..pw * ph).map(|_| normal.sample(rng)).collect();
    if grain == 0 {
        return white;
    }
    let k = 2 * grain + 1;
    let mut rows = vec![0.0; w * ph];
    for y in 0..ph {
        for x in 0..w {
            rows[y * w + x] = white[y * pw + x..y * pw + x + k].iter().sum();
        }
    }
    let norm = 1.0 / k as f64;
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            out[y * w + x] = (0..k).map(|d| rows[(y + d) * w + x]).sum::<f64>() * norm;
        }
    }
    out
}

/// Paper pixels around the glyph in a rendered patch.
pub fn patch_margin(profile: &PrinterProfile) -> usize {
    (profile.dot_gain.max(0.0) + profile.blur).ceil() as usize + scan_radius(profile.scan_sigma) + 2
}

/// A rendered glyph with its rendered-ink truth.
#[derive(Debug, Clone, PartialEq)]
pub struct LetterPatch {
    pub image: GrayImage,
    /// Bounding box of the ink (after dot gain) in patch coordinates.
    pub ink_box: BBox,
    pub ink_count: usize,
}

fn scan_radius(sigma: f64) -> usize {
    (3.0 * sigma).ceil() as usize
}

/// Separable Gaussian blur with replicate borders, in place.
fn gaussian_blur(values: &mut [f64], w: usize, h: usize, sigma: f64) {
    if sigma <= 0.0 {
        return;
    }
    let r = scan_radius(sigma) as isize;
    let mut k: Vec<f64> = (-r..=r).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let total: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= total);
    let mut tmp = vec![0.0; values.len()];
    for y in 0..h {
        let row = &values[y * w..(y + 1) * w];
        for x in 0..w {
            tmp[y * w + x] = k
                .iter()
                .enumerate()
                .map(|(j, kv)| kv * row[(x as isize + j as isize - r).clamp(0, w as isize - 1) as usize])
                .sum();
        }
    }
    for y in 0..h {
        for x in 0..w {
            values[y * w + x] = k
                .iter()
                .enumerate()
                .map(|(j, kv)| kv * tmp[(y as isize + j as isize - r).clamp(0, h as isize - 1) as usize * w + x])
                .sum();
        }
    }
}

fn quantize(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

struct Render {
    width: usize,
    height: usize,
    values: Vec<f64>,
    ink_box: BBox,
    ink_count: usize,
}

/// Printed intensities of a glyph patch before scanning.
fn render(glyph: &Glyph, profile: &PrinterProfile, row_offset: usize, rng: &mut impl Rng) -> Result<Render> {
    let m = patch_margin(profile);
    let (w, h) = (glyph.width + 2 * m, glyph.height + 2 * m);
    let mut ink = vec![false; w * h];
    for y in 0..glyph.height {
        for x in 0..glyph.width {
            ink[(y + m) * w + x + m] = glyph.is_ink(x, y);
        }
    }
    let paper: Vec<bool> = ink.iter().map(|&i| !i).collect();
    let to_paper = distance_transform(&paper, w, h);
    let to_ink = distance_transform(&ink, w, h);
    let grain = noise_field(rng, w, h, profile.grain_size);
    let jitter = Normal::new(0.0, profile.edge_noise_sigma.max(1e-300)).expect("finite sigma");

    let mut values = vec![PAPER as f64; w * h];
    let (mut x0, mut y0, mut x1, mut y1) = (w, h, 0, 0);
    let mut ink_count = 0;
    for y in 0..h {
        let band = if profile.banding_amplitude > 0.0 {
            profile.banding_amplitude * (2.0 * PI * (y + row_offset) as f64 / profile.banding_period).sin()
        } else {
            0.0
        };
        for x in 0..w {
            let i = y * w + x;
            let d = if ink[i] { to_paper[i] - 0.5 } else { 0.5 - to_ink[i] } + profile.dot_gain;
            let cover = if profile.blur > 0.0 {
                (0.5 + d / profile.blur).clamp(0.0, 1.0)
            } else if d > 0.0 {
                1.0
            } else {
                0.0
            };
            if d > 0.0 {
                ink_count += 1;
                x0 = x0.min(x);
                y0 = y0.min(y);
                x1 = x1.max(x);
                y1 = y1.max(y);
            }
            let toner = profile.toner_darkness + profile.ink_noise_sigma * grain[i] + band;
            let mut v = PAPER as f64 - cover * (PAPER as f64 - toner);
            if d.abs() < 1.0 && profile.edge_noise_sigma > 0.0 {
                v += jitter.sample(rng);
            }
            if cover == 0.0 && profile.speckle_density > 0.0 && rng.random_bool(profile.speckle_density) {
                v -= rng.random_range(SPECKLE_MIN_DEPTH..SPECKLE_MAX_DEPTH);
            }
            values[i] = v.clamp(0.0, 255.0);
        }
    }
    if ink_count == 0 {
        return Err(Error::Degenerate("dot gain erased the glyph".into()));
    }
    Ok(Render {
        width: w,
        height: h,
        values,
        ink_box: BBox {
            x: x0,
            y: y0,
            w: x1 - x0 + 1,
            h: y1 - y0 + 1,
        },
        ink_count,
    })
}

/// Renders and scans `glyph` with the artifacts of `profile`; `row_offset`
/// is the page row of the patch's top edge, fixing the banding phase.
pub fn apply_signature(glyph: &Glyph, profile: &PrinterProfile, row_offset: usize, rng: &mut impl Rng) -> Result<LetterPatch> {
    profile.validate()?;
    let mut r = render(glyph, profile, row_offset, rng)?;
    gaussian_blur(&mut r.values, r.width, r.height, profile.scan_sigma);
    Ok(LetterPatch {
        image: GrayImage::new(r.width, r.height, r.values.into_iter().map(quantize).collect())?,
        ink_box: r.ink_box,
        ink_count: r.ink_count,
    })
}

/// Canvas and grid for letter placement.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PageLayout {
    pub width: usize,
    pub height: usize,
    pub margin: usize,
    /// Side of the square cell holding one letter.
    pub cell: usize,
    pub glyph: GlyphSpec,
}

impl Default for PageLayout {
    fn default() -> Self {
        Self {
            width: A4_WIDTH,
            height: A4_HEIGHT,
            margin: 150,
            cell: 72,
            glyph: GlyphSpec::default(),
        }
    }
}

impl PageLayout {
    pub fn columns(&self) -> usize {
        self.width.saturating_sub(2 * self.margin) / self.cell
    }

    pub fn rows(&self) -> usize {
        self.height.saturating_sub(2 * self.margin) / self.cell
    }

    pub fn capacity(&self) -> usize {
        self.columns() * self.rows()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GlyphTruth {
    pub bbox: BBox,
    pub ink_count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticPage {
    pub image: GrayImage,
    pub truth: Vec<GlyphTruth>,
    pub label: String,
}

/// Places `n_letters` rendered glyphs on a grid in reading order, each
/// jittered inside its cell; letters are spread over the whole page.
pub fn gen_page(profile: &PrinterProfile, n_letters: usize, layout: &PageLayout, rng: &mut impl Rng) -> Result<SyntheticPage> {
    profile.validate()?;
    layout.glyph.validate()?;
    let m = patch_margin(profile);
    let patch_max = layout.glyph.max_size + 2 * m;
    if layout.cell < patch_max + 2 {
        return Err(Error::param(
            "cell",
            format!("cell {} cannot hold a {patch_max}px letter patch", layout.cell),
        ));
    }
    if n_letters > layout.capacity() {
        return Err(Error::param(
            "n_letters",
            format!("{n_letters} letters exceed the layout capacity {}", layout.capacity()),
        ));
    }
    let (w, h) = (layout.width, layout.height);
    let mut canvas = vec![PAPER as f64; w * h];
    let mut covered = vec![false; w * h];
    let mut truth = Vec::with_capacity(n_letters);
    let cols = layout.columns();
    let capacity = layout.capacity();
    for i in 0..n_letters {
        // spread letters evenly over the available cells
        let cell = i * capacity / n_letters.max(1);
        let (cx, cy) = (
            layout.margin + (cell % cols) * layout.cell,
            layout.margin + (cell / cols) * layout.cell,
        );
        let glyph = gen_glyph(rng, &layout.glyph)?;
        let (pw, ph) = (glyph.width() + 2 * m, glyph.height() + 2 * m);
        let ox = cx + rng.random_range(0..=layout.cell - pw - 1);
        let oy = cy + rng.random_range(0..=layout.cell - ph - 1);
        let patch = render(&glyph, profile, oy, rng)?;
        for y in 0..ph {
            let row = (oy + y) * w + ox;
            canvas[row..row + pw].copy_from_slice(&patch.values[y * pw..(y + 1) * pw]);
            covered[row..row + pw].iter_mut().for_each(|c| *c = true);
        }
        truth.push(GlyphTruth {
            bbox: BBox {
                x: ox + patch.ink_box.x,
                y: oy + patch.ink_box.y,
                w: patch.ink_box.w,
                h: patch.ink_box.h,
            },
            ink_count: patch.ink_count,
        });
    }
    if profile.speckle_density > 0.0 {
        for (p, &c) in canvas.iter_mut().zip(&covered) {
            if !c && rng.random_bool(profile.speckle_density) {
                *p -= rng.random_range(SPECKLE_MIN_DEPTH..SPECKLE_MAX_DEPTH);
            }
        }
    }
    gaussian_blur(&mut canvas, w, h, profile.scan_sigma);
    Ok(SyntheticPage {
        image: GrayImage::new(w, h, canvas.into_iter().map(quantize).collect())?,
        truth,
        label: profile.id.clone(),
    })
}

/// Seed of page `index` of a printer under a run seed.
pub fn page_seed(run_seed: u64, profile: &PrinterProfile, index: usize) -> u64 {
    let mut z = run_seed
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(profile.rng_seed.wrapping_mul(0xBF58_476D_1CE4_E5B9))
        .wrapping_add(index as u64);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Page `index` of `profile`, deterministic in `(run_seed, profile, index)`.
pub fn gen_printer_page(profile: &PrinterProfile, index: usize, n_letters: usize, layout: &PageLayout, run_seed: u64) -> Result<SyntheticPage> {
    let mut rng = ChaCha8Rng::seed_from_u64(page_seed(run_seed, profile, index));
    gen_page(profile, n_letters, layout, &mut rng)
}

/// Rotates about the image centre by `degrees` (counter-clockwise), bilinear,
/// filling uncovered pixels with paper.
pub fn rotate_bilinear(img: &GrayImage, degrees: f64) -> GrayImage {
    let (w, h) = (img.width(), img.height());
    let (s, c) = degrees.to_radians().sin_cos();
    let (cx, cy) = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
    let sample = |x: isize, y: isize| -> f64 {
        if x < 0 || y < 0 || x as usize >= w || y as usize >= h {
            PAPER as f64
        } else {
            img.get(x as usize, y as usize) as f64
        }
    };
    GrayImage::from_fn(w, h, |x, y| {
        let (dx, dy) = (x as f64 - cx, y as f64 - cy);
        // inverse map: destination to source
        let sx = c * dx - s * dy + cx;
        let sy = s * dx + c * dy + cy;
        let (x0, y0) = (sx.floor(), sy.floor());
        let (fx, fy) = (sx - x0, sy - y0);
        let (x0, y0) = (x0 as isize, y0 as isize);
        let v = sample(x0, y0) * (1.0 - fx) * (1.0 - fy)
            + sample(x0 + 1, y0) * fx * (1.0 - fy)
            + sample(x0, y0 + 1) * (1.0 - fx) * fy
            + sample(x0 + 1, y0 + 1) * fx * fy;
        v.round().clamp(0.0, 255.0) as u8
    })
    .expect("same dimensions as a valid image")
}

/// `page_id,glyph_index,x,y,w,h,ink_count` rows.
pub fn truth_csv(pages: &[(String, &[GlyphTruth])]) -> Result<String> {
    let mut wtr = csv::Writer::from_writer(Vec::new());
    wtr.write_record(["page_id", "glyph_index", "x", "y", "w", "h", "ink_count"])
        .map_err(|e| Error::Format(e.to_string()))?;
    for (page_id, truth) in pages {
        for (i, t) in truth.iter().enumerate() {
            wtr.write_record([
                page_id.clone(),
                i.to_string(),
                t.bbox.x.to_string(),
                t.bbox.y.to_string(),
                t.bbox.w.to_string(),
                t.bbox.h.to_string(),
                t.ink_count.to_string(),
            ])
            .map_err(|e| Error::Format(e.to_string()))?;
        }
    }
    let bytes = wtr.into_inner().map_err(|e| Error::Format(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

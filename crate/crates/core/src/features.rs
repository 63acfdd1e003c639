//! Per-letter tetra-pattern histograms and post-extraction pooling.
//!
//! A letter feature concatenates one 59-bin uniform-pattern histogram per
//! (region, scale, channel) in that nesting order: 2 regions × 3 Gabor scales
//! × 13 channels × 59 bins = 4602 values, or 2 × 13 × 59 = 1534 without
//! Gabor filtering. Each block is a probability distribution, or all zero
//! when no pixel contributed to it.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::artifact::sha256_hex;
use crate::config::{GaborMode, NeighborhoodRule, PipelineConfig};
use crate::error::{Error, Result};
use crate::gabor::{self, GaborBank, KERNEL_SIZE, SCALES};
use crate::ingest::{crop_margins, load_page, GrayImage, ManifestEntry};
use crate::letters::{find_letters, LetterBox};
use crate::regions::{separate_letter, Label, LetterRegion};
use crate::texture::{Channel, GradientField, NeighborhoodOrder, Plane, CHANNELS, UNIFORM_BINS};
use crate::texture::uniform_index;

/// Page context kept around each letter bbox before filtering.
pub const CONTEXT_MARGIN: usize = 5;
pub const FEATURE_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Region {
    Flat,
    Edge,
}

impl Region {
    pub const ALL: [Region; 2] = [Region::Flat, Region::Edge];

    fn label(self) -> Label {
        match self {
            Region::Flat => Label::Flat,
            Region::Edge => Label::Edge,
        }
    }
}

/// Index map of a feature vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FeatureLayout {
    pub mode: GaborMode,
}

impl FeatureLayout {
    pub fn new(mode: GaborMode) -> Self {
        Self { mode }
    }

    pub fn scales(&self) -> usize {
        match self.mode {
            GaborMode::On => SCALES,
            GaborMode::Off => 1,
        }
    }

    pub fn dim(&self) -> usize {
        Region::ALL.len() * self.scales() * CHANNELS * UNIFORM_BINS
    }

    /// Offset of the first bin of a block.
    pub fn block_offset(&self, region: Region, scale: usize, channel: usize) -> usize {
        let r = match region {
            Region::Flat => 0,
            Region::Edge => 1,
        };
        ((r * self.scales() + scale) * CHANNELS + channel) * UNIFORM_BINS
    }

    fn describe(&self) -> String {
        let channels: Vec<String> = Channel::all()
            .iter()
            .map(|c| match c {
                Channel::Tetra { center, target } => {
                    format!("t{}{}", center.value(), target.value())
                }
                Channel::Magnitude => "m".into(),
            })
            .collect();
        format!(
            "regions=F,E;scales={};channels={};bins={}:uniform-asc+rest;dim={}",
            self.scales(),
            channels.join(","),
            UNIFORM_BINS,
            self.dim()
        )
    }

    /// Stable identifier of the index map.
    pub fn hash(&self) -> String {
        sha256_hex(self.describe().as_bytes())[..16].to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector(Vec<f64>);

impl FeatureVector {
    pub fn new(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

/// Mean of `letter_count` consecutive letter features from one page.
#[derive(Debug, Clone, PartialEq)]
pub struct PooledSample {
    pub vector: FeatureVector,
    pub page_id: String,
    pub group_index: usize,
    pub letter_count: usize,
}

/// Options for [`letter_feature`] taken from the pipeline configuration.
#[derive(Debug, Clone)]
pub struct FeatureOptions {
    pub min_region_pixels: usize,
    pub rule: NeighborhoodRule,
    pub order: NeighborhoodOrder,
}

impl From<&PipelineConfig> for FeatureOptions {
    fn from(cfg: &PipelineConfig) -> Self {
        Self {
            min_region_pixels: cfg.min_region_pixels,
            rule: cfg.neighborhood_rule,
            order: cfg.neighborhood,
        }
    }
}

/// Footprint of the tetra operators relative to the centre pixel: the 3×3
/// window plus the right and lower neighbours each gradient needs.
const FOOTPRINT: [(isize, isize); 15] = [
    (-1, -1), (0, -1), (1, -1), (2, -1),
    (-1, 0), (0, 0), (1, 0), (2, 0),
    (-1, 1), (0, 1), (1, 1), (2, 1),
    (-1, 2), (0, 2), (1, 2),
];

/// Pixels (bbox coordinates) of `region` that contribute codes.
fn contributing_pixels(
    letter: &LetterRegion,
    region: Region,
    rule: NeighborhoodRule,
    offset: (usize, usize),
    plane_dims: (usize, usize),
) -> Vec<(usize, usize)> {
    let (w, h) = (letter.bbox.w, letter.bbox.h);
    let want = region.label();
    let mut out = Vec::new();
    for y in 0..h {
        for x in 0..w {
            if letter.label(x, y) != want {
                continue;
            }
            let (px, py) = (x + offset.0, y + offset.1);
            if px < 1 || py < 1 || px + 2 >= plane_dims.0 || py + 2 >= plane_dims.1 {
                continue;
            }
            if rule == NeighborhoodRule::FootprintInRegion {
                let inside = FOOTPRINT.iter().all(|&(dx, dy)| {
                    let (nx, ny) = (x as isize + dx, y as isize + dy);
                    nx >= 0
                        && ny >= 0
                        && (nx as usize) < w
                        && (ny as usize) < h
                        && letter.label(nx as usize, ny as usize) == want
                });
                if !inside {
                    continue;
                }
            }
            out.push((x, y));
        }
    }
    out
}

fn accumulate(
    hist: &mut [f64],
    layout: &FeatureLayout,
    region: Region,
    scale: usize,
    field: &GradientField,
    pixels: &[(usize, usize)],
    offset: (usize, usize),
    order: &NeighborhoodOrder,
) {
    let mag_block = layout.block_offset(region, scale, CHANNELS - 1);
    for &(x, y) in pixels {
        let codes = field.codes(x + offset.0, y + offset.1, order);
        let base = layout.block_offset(region, scale, Channel::tetra_base(codes.center));
        for (k, &pattern) in codes.split.iter().enumerate() {
            hist[base + k * UNIFORM_BINS + uniform_index(pattern)] += 1.0;
        }
        hist[mag_block + uniform_index(codes.magnitude)] += 1.0;
    }
}

fn normalize_blocks(values: &mut [f64]) {
    for block in values.chunks_mut(UNIFORM_BINS) {
        let total: f64 = block.iter().sum();
        if total > 0.0 {
            block.iter_mut().for_each(|v| *v /= total);
        }
    }
}

/// Histogram feature of one segmented letter.
///
/// The letter is cut from `img` with [`CONTEXT_MARGIN`] pixels of page context
/// on each side; with a bank, each scale's energy plane is computed over that
/// window and the codes are read from it.
pub fn letter_feature(
    region: &LetterRegion,
    img: &GrayImage,
    bank: Option<&GaborBank>,
    opts: &FeatureOptions,
) -> Result<FeatureVector> {
    let b = region.bbox;
    let x0 = b.x.saturating_sub(CONTEXT_MARGIN);
    let y0 = b.y.saturating_sub(CONTEXT_MARGIN);
    let x1 = (b.x + b.w + CONTEXT_MARGIN).min(img.width());
    let y1 = (b.y + b.h + CONTEXT_MARGIN).min(img.height());
    let raw = Plane::from_gray_window(img, x0, y0, x1 - x0, y1 - y0)?;
    let offset = (b.x - x0, b.y - y0);
    let dims = (raw.width(), raw.height());

    let per_region: Vec<(Region, Vec<(usize, usize)>)> = Region::ALL
        .iter()
        .map(|&r| (r, contributing_pixels(region, r, opts.rule, offset, dims)))
        .collect();
    let usable: usize = per_region.iter().map(|(_, p)| p.len()).sum();
    if usable < opts.min_region_pixels {
        return Err(Error::LetterSkipped(format!(
            "{usable} usable flat/edge pixels, need {}",
            opts.min_region_pixels
        )));
    }

    let planes = match bank {
        Some(bank) => {
            if dims.0 < KERNEL_SIZE || dims.1 < KERNEL_SIZE {
                return Err(Error::LetterSkipped(format!(
                    "letter window {}x{} smaller than the filter",
                    dims.0, dims.1
                )));
            }
            gabor::responses(&raw, bank)?
        }
        None => vec![raw],
    };
    let layout = FeatureLayout::new(if bank.is_some() {
        GaborMode::On
    } else {
        GaborMode::Off
    });
    let mut values = vec![0.0; layout.dim()];
    for (scale, plane) in planes.iter().enumerate() {
        let field = GradientField::new(plane);
        for (r, pixels) in &per_region {
            accumulate(&mut values, &layout, *r, scale, &field, pixels, offset, &opts.order);
        }
    }
    normalize_blocks(&mut values);
    Ok(FeatureVector(values))
}

/// Averages consecutive, disjoint groups of `group_size` letters; a trailing
/// partial group is dropped.
pub fn poep(letters: &[FeatureVector], group_size: usize, page_id: &str) -> Result<Vec<PooledSample>> {
    if group_size == 0 {
        return Err(Error::param("group_size", "must be at least 1"));
    }
    if letters.len() < group_size {
        return Err(Error::PageSkipped(format!(
            "page `{page_id}` has {} usable letters, fewer than the group size {group_size}",
            letters.len()
        )));
    }
    let dim = letters[0].dim();
    if letters.iter().any(|l| l.dim() != dim) {
        return Err(Error::Validation("letter features differ in dimension".into()));
    }
    Ok(letters
        .chunks_exact(group_size)
        .enumerate()
        .map(|(group_index, group)| {
            // running mean: exact for identical members, never leaves their range
            let mut mean = group[0].0.clone();
            for (k, member) in group.iter().enumerate().skip(1) {
                let n = (k + 1) as f64;
                for (m, &v) in mean.iter_mut().zip(&member.0) {
                    *m += (v - *m) / n;
                }
            }
            PooledSample {
                vector: FeatureVector(mean),
                page_id: page_id.to_string(),
                group_index,
                letter_count: group_size,
            }
        })
        .collect())
}

/// Per-page counts of what happened to each candidate letter.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct PageDiagnostics {
    pub candidates: usize,
    pub too_small: usize,
    pub unimodal: usize,
    pub empty_regions: usize,
    pub used: usize,
}

impl std::ops::AddAssign for PageDiagnostics {
    fn add_assign(&mut self, o: Self) {
        self.candidates += o.candidates;
        self.too_small += o.too_small;
        self.unimodal += o.unimodal;
        self.empty_regions += o.empty_regions;
        self.used += o.used;
    }
}

/// Stateless extractor holding the configuration and the filter bank.
#[derive(Debug, Clone)]
pub struct Extractor {
    config: PipelineConfig,
    bank: Option<GaborBank>,
    opts: FeatureOptions,
}

impl Extractor {
    pub fn new(config: &PipelineConfig) -> Result<Self> {
        config.validate()?;
        let bank = match config.gabor_mode {
            GaborMode::On => Some(gabor::build_bank(&config.gabor)?),
            GaborMode::Off => None,
        };
        Ok(Self {
            config: config.clone(),
            bank,
            opts: FeatureOptions::from(config),
        })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn layout(&self) -> FeatureLayout {
        FeatureLayout::new(self.config.gabor_mode)
    }

    /// Segments and describes one letter box of an already cropped page.
    pub fn letter(&self, page: &GrayImage, letter: &LetterBox) -> Result<FeatureVector> {
        let region = separate_letter(page, letter, self.config.alpha, self.config.beta)?;
        letter_feature(&region, page, self.bank.as_ref(), &self.opts)
    }

    /// Features of every usable letter on the page, in page order.
    pub fn letters(&self, img: &GrayImage) -> Result<(Vec<FeatureVector>, PageDiagnostics)> {
        let page = crop_margins(img, self.config.crop_fraction)?;
        let boxes = find_letters(&page)?;
        let results: Vec<Result<FeatureVector>> =
            boxes.par_iter().map(|b| self.letter(&page, b)).collect();
        let mut diag = PageDiagnostics {
            candidates: boxes.len(),
            ..Default::default()
        };
        let mut feats = Vec::with_capacity(results.len());
        for r in results {
            match r {
                Ok(f) => feats.push(f),
                Err(Error::Unimodal) => diag.unimodal += 1,
                Err(Error::LetterSkipped(msg)) if msg.contains("bbox area") => diag.too_small += 1,
                Err(Error::LetterSkipped(_)) => diag.empty_regions += 1,
                Err(e) => return Err(e),
            }
        }
        diag.used = feats.len();
        if diag.unimodal + diag.too_small > 0 {
            log::debug!("{diag:?}");
        }
        Ok((feats, diag))
    }

    /// Crop, locate letters, segment, describe and pool one page.
    pub fn page(&self, img: &GrayImage, page_id: &str) -> Result<(Vec<PooledSample>, PageDiagnostics)> {
        let (feats, diag) = self.letters(img)?;
        match poep(&feats, self.config.group_size, page_id) {
            Ok(samples) => Ok((samples, diag)),
            Err(Error::PageSkipped(msg)) => {
                log::warn!("{msg} ({diag:?})");
                Err(Error::PageSkipped(msg))
            }
            Err(e) => Err(e),
        }
    }
}

/// What happened to one manifest page.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PageReport {
    pub page_id: String,
    pub samples: usize,
    pub diagnostics: Option<PageDiagnostics>,
    /// Why the page contributed no samples.
    pub skipped: Option<String>,
}

impl Extractor {
    /// Loads and extracts every entry in parallel. Pages with too few
    /// letters are reported and skipped; any other failure aborts. Samples
    /// are sorted by page id whatever the scheduling.
    pub fn extract_entries(&self, entries: &[ManifestEntry]) -> Result<(FeatureSet, Vec<PageReport>)> {
        let results: Vec<Result<(Vec<LabeledSample>, PageReport)>> = entries
            .par_iter()
            .map(|e| {
                let img = load_page(&e.path)?;
                let mut report = PageReport {
                    page_id: e.page_id.clone(),
                    samples: 0,
                    diagnostics: None,
                    skipped: None,
                };
                let samples = match self.letters(&img) {
                    Ok((feats, diag)) => {
                        report.diagnostics = Some(diag);
                        match poep(&feats, self.config.group_size, &e.page_id) {
                            Ok(s) => s,
                            Err(Error::PageSkipped(msg)) => {
                                report.skipped = Some(msg);
                                Vec::new()
                            }
                            Err(err) => return Err(err),
                        }
                    }
                    Err(Error::NoLetters) | Err(Error::Degenerate(_)) => {
                        report.skipped = Some("no letters found".into());
                        Vec::new()
                    }
                    Err(err) => return Err(err),
                };
                report.samples = samples.len();
                let labeled = samples
                    .into_iter()
                    .map(|sample| LabeledSample {
                        sample,
                        label: e.label.clone(),
                    })
                    .collect();
                Ok((labeled, report))
            })
            .collect();
        let mut set = FeatureSet {
            layout: self.layout(),
            extraction_hash: self.config.extraction_hash(),
            samples: Vec::new(),
        };
        let mut reports = Vec::with_capacity(results.len());
        for r in results {
            let (samples, report) = r?;
            if let Some(msg) = &report.skipped {
                log::warn!("skipping page `{}`: {msg}", report.page_id);
            }
            set.samples.extend(samples);
            reports.push(report);
        }
        set.sort();
        reports.sort_by(|a, b| a.page_id.cmp(&b.page_id));
        Ok((set, reports))
    }
}

/// One-shot page extraction.
pub fn extract_page(img: &GrayImage, config: &PipelineConfig, page_id: &str) -> Result<Vec<PooledSample>> {
    Ok(Extractor::new(config)?.page(img, page_id)?.0)
}

/// A pooled sample with its printer label, as stored in feature files.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSample {
    pub sample: PooledSample,
    pub label: String,
}

/// Contents of one feature file.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    pub layout: FeatureLayout,
    pub extraction_hash: String,
    pub samples: Vec<LabeledSample>,
}

const FEATURE_MAGIC: &str = "#printid-features";

impl FeatureSet {
    /// Sorts by page id then group index so output is independent of the
    /// order pages were processed in.
    pub fn sort(&mut self) {
        self.samples.sort_by(|a, b| {
            (&a.sample.page_id, a.sample.group_index).cmp(&(&b.sample.page_id, b.sample.group_index))
        });
    }

    pub fn to_text(&self) -> String {
        let dim = self.layout.dim();
        let mut out = String::new();
        let mode = match self.layout.mode {
            GaborMode::On => "on",
            GaborMode::Off => "off",
        };
        writeln!(
            out,
            "{FEATURE_MAGIC} v{FEATURE_FORMAT_VERSION} layout={} gabor={mode} extraction={} dim={dim}",
            self.layout.hash(),
            self.extraction_hash
        )
        .unwrap();
        out.push_str("page_id,group_index,label");
        for i in 0..dim {
            write!(out, ",v{i}").unwrap();
        }
        out.push('\n');
        for s in &self.samples {
            write!(out, "{},{},{}", s.sample.page_id, s.sample.group_index, s.label).unwrap();
            for v in s.sample.vector.as_slice() {
                write!(out, ",{v}").unwrap();
            }
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Format("empty feature file".into()))?;
        let mut fields = header.split_whitespace();
        if fields.next() != Some(FEATURE_MAGIC) {
            return Err(Error::Format("not a feature file".into()));
        }
        if fields.next() != Some(&format!("v{FEATURE_FORMAT_VERSION}")) {
            return Err(Error::Format("unsupported feature file version".into()));
        }
        let mut kv = std::collections::HashMap::new();
        for f in fields {
            let (k, v) = f
                .split_once('=')
                .ok_or_else(|| Error::Format(format!("bad header field `{f}`")))?;
            kv.insert(k, v);
        }
        let get = |k: &str| {
            kv.get(k)
                .copied()
                .ok_or_else(|| Error::Format(format!("feature header lacks `{k}`")))
        };
        let layout = FeatureLayout::new(match get("gabor")? {
            "on" => GaborMode::On,
            "off" => GaborMode::Off,
            other => return Err(Error::Format(format!("bad gabor mode `{other}`"))),
        });
        if get("layout")? != layout.hash() {
            return Err(Error::Validation(format!(
                "feature layout hash {} does not match this build's {}",
                get("layout")?,
                layout.hash()
            )));
        }
        let dim: usize = get("dim")?
            .parse()
            .map_err(|_| Error::Format("bad dim".into()))?;
        if dim != layout.dim() {
            return Err(Error::Validation(format!(
                "dim {dim} disagrees with layout dim {}",
                layout.dim()
            )));
        }
        let extraction_hash = get("extraction")?.to_string();
        lines.next(); // column names
        let mut samples = Vec::new();
        for (n, line) in lines.enumerate() {
            if line.is_empty() {
                continue;
            }
            let mut cols = line.split(',');
            let bad = || Error::Format(format!("feature row {}", n + 3));
            let page_id = cols.next().ok_or_else(bad)?.to_string();
            let group_index = cols.next().ok_or_else(bad)?.parse().map_err(|_| bad())?;
            let label = cols.next().ok_or_else(bad)?.to_string();
            let values: Vec<f64> = cols
                .map(|c| c.parse::<f64>().map_err(|_| bad()))
                .collect::<Result<_>>()?;
            if values.len() != dim {
                return Err(Error::Validation(format!(
                    "row {} has {} values, expected {dim}",
                    n + 3,
                    values.len()
                )));
            }
            samples.push(LabeledSample {
                sample: PooledSample {
                    vector: FeatureVector(values),
                    page_id,
                    group_index,
                    letter_count: 0,
                },
                label,
            });
        }
        Ok(Self {
            layout,
            extraction_hash,
            samples,
        })
    }
}

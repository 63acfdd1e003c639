//! Page images, margin cropping and dataset manifests.

use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};

use image::{DynamicImage, ImageFormat};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Smallest page that survives margin cropping.
pub const MIN_CROPPED_DIM: usize = 32;

/// 8-bit single channel raster, row-major. 0 is black ink, 255 white paper.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct GrayImage {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl fmt::Debug for GrayImage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("GrayImage")
            .field("width", &self.width)
            .field("height", &self.height)
            .finish_non_exhaustive()
    }
}

impl GrayImage {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Format(format!(
                "image has zero area ({width}x{height})"
            )));
        }
        if pixels.len() != width * height {
            return Err(Error::Format(format!(
                "pixel buffer has {} entries, expected {}",
                pixels.len(),
                width * height
            )));
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    /// A `width`×`height` image filled with `value`.
    pub fn filled(width: usize, height: usize, value: u8) -> Result<Self> {
        Self::new(width, height, vec![value; width * height])
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> u8) -> Result<Self> {
        let mut pixels = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                pixels.push(f(x, y));
            }
        }
        Self::new(width, height, pixels)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.pixels[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: u8) {
        self.pixels[y * self.width + x] = value;
    }

    /// Copy of the `w`×`h` window whose top-left corner is `(x, y)`.
    pub fn sub_image(&self, x: usize, y: usize, w: usize, h: usize) -> Result<GrayImage> {
        if x + w > self.width || y + h > self.height {
            return Err(Error::param(
                "window",
                format!(
                    "({x},{y},{w},{h}) exceeds {}x{} image",
                    self.width, self.height
                ),
            ));
        }
        let mut pixels = Vec::with_capacity(w * h);
        for row in y..y + h {
            let start = row * self.width + x;
            pixels.extend_from_slice(&self.pixels[start..start + w]);
        }
        GrayImage::new(w, h, pixels)
    }

    /// Adds `delta` to every pixel, saturating at both ends.
    pub fn shifted(&self, delta: i32) -> GrayImage {
        let pixels = self
            .pixels
            .iter()
            .map(|&p| (p as i32 + delta).clamp(0, 255) as u8)
            .collect();
        GrayImage {
            width: self.width,
            height: self.height,
            pixels,
        }
    }

    pub(crate) fn to_dynamic(&self) -> DynamicImage {
        let buf = image::GrayImage::from_raw(
            self.width as u32,
            self.height as u32,
            self.pixels.clone(),
        )
        .expect("buffer length checked at construction");
        DynamicImage::ImageLuma8(buf)
    }
}

/// Collapses a decoded raster to one 8-bit channel.
///
/// Single-channel 8-bit data passes through untouched; colour data is the
/// unweighted channel mean rounded half up (alpha ignored).
fn to_gray(img: DynamicImage) -> Result<GrayImage> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    if w == 0 || h == 0 {
        return Err(Error::Format(format!("image has zero area ({w}x{h})")));
    }
    let pixels = match img {
        DynamicImage::ImageLuma8(buf) => buf.into_raw(),
        DynamicImage::ImageLumaA8(buf) => buf.pixels().map(|p| p.0[0]).collect(),
        DynamicImage::ImageLuma16(_) | DynamicImage::ImageLumaA16(_) => {
            img.to_luma8().into_raw()
        }
        other => other
            .to_rgb8()
            .pixels()
            .map(|p| channel_mean(p.0))
            .collect(),
    };
    GrayImage::new(w, h, pixels)
}

/// Mean of three channels, rounding half up.
pub fn channel_mean(rgb: [u8; 3]) -> u8 {
    let sum = rgb.iter().map(|&c| c as u32).sum::<u32>();
    ((2 * sum + 3) / 6) as u8
}

/// Decodes a page image (PGM/PPM or PNG) into a [`GrayImage`].
pub fn load_page(path: impl AsRef<Path>) -> Result<GrayImage> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let img = image::load_from_memory(&bytes)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    to_gray(img)
}

/// Encodes `img` losslessly; the format follows the file extension
/// (`.pgm`/`.pnm` → binary graymap, anything else → PNG).
pub fn save_page(img: &GrayImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_page(img, format_for(path))?;
    crate::artifact::write_atomic(path, &bytes)
}

/// Writes an 8-bit RGB buffer as PNG.
pub fn save_rgb(width: usize, height: usize, rgb: Vec<u8>, path: impl AsRef<Path>) -> Result<()> {
    let img = image::RgbImage::from_raw(width as u32, height as u32, rgb)
        .ok_or_else(|| Error::Format("rgb buffer does not match its dimensions".into()))?;
    let mut out = std::io::Cursor::new(Vec::new());
    DynamicImage::ImageRgb8(img)
        .write_to(&mut out, ImageFormat::Png)
        .map_err(|e| Error::Format(format!("encode failed: {e}")))?;
    crate::artifact::write_atomic(path.as_ref(), &out.into_inner())
}

pub(crate) fn encode_page(img: &GrayImage, format: ImageFormat) -> Result<Vec<u8>> {
    let mut out = std::io::Cursor::new(Vec::new());
    img.to_dynamic()
        .write_to(&mut out, format)
        .map_err(|e| Error::Format(format!("encode failed: {e}")))?;
    Ok(out.into_inner())
}

fn format_for(path: &Path) -> ImageFormat {
    match path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase)
        .as_deref()
    {
        Some("pgm") | Some("pnm") => ImageFormat::Pnm,
        _ => ImageFormat::Png,
    }
}

/// Removes `⌊fraction·dim⌋` pixels from each side of the page.
pub fn crop_margins(img: &GrayImage, fraction: f64) -> Result<GrayImage> {
    if !(0.0..=0.25).contains(&fraction) {
        return Err(Error::param(
            "crop_fraction",
            format!("{fraction} outside [0, 0.25]"),
        ));
    }
    if fraction == 0.0 {
        return Ok(img.clone());
    }
    let dx = (fraction * img.width as f64).floor() as usize;
    let dy = (fraction * img.height as f64).floor() as usize;
    let w = img.width - 2 * dx;
    let h = img.height - 2 * dy;
    if w < MIN_CROPPED_DIM || h < MIN_CROPPED_DIM {
        return Err(Error::param(
            "crop_fraction",
            format!("cropped page {w}x{h} is smaller than {MIN_CROPPED_DIM}x{MIN_CROPPED_DIM}"),
        ));
    }
    img.sub_image(dx, dy, w, h)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
    Unassigned,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
            Split::Unassigned => "unassigned",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            "unassigned" => Ok(Split::Unassigned),
            other => Err(Error::Validation(format!("unknown split `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub label: String,
    pub page_id: String,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetManifest {
    entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    /// Validates label, page-id and path invariants. Relative paths are kept
    /// as given; resolution against a base directory happens in [`load_manifest`].
    pub fn new(entries: Vec<ManifestEntry>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::Validation("manifest has no entries".into()));
        }
        let mut seen = HashSet::new();
        let mut dups = BTreeSet::new();
        for e in &entries {
            if e.label.is_empty() {
                return Err(Error::Validation(format!(
                    "page `{}` has an empty label",
                    e.page_id
                )));
            }
            if !seen.insert(e.page_id.as_str()) {
                dups.insert(e.page_id.clone());
            }
        }
        if !dups.is_empty() {
            return Err(Error::Validation(format!(
                "duplicate page ids: {}",
                dups.into_iter().collect::<Vec<_>>().join(", ")
            )));
        }
        Ok(Self { entries })
    }

    pub fn entries(&self) -> &[ManifestEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Sorted, de-duplicated printer labels.
    pub fn labels(&self) -> BTreeSet<&str> {
        self.entries.iter().map(|e| e.label.as_str()).collect()
    }

    pub fn with_split(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    /// Serializes with the `path,label,page_id,split` header.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for e in &self.entries {
            w.serialize(e)
                .map_err(|e| Error::Format(format!("manifest encode: {e}")))?;
        }
        let bytes = w
            .into_inner()
            .map_err(|e| Error::Format(format!("manifest encode: {e}")))?;
        String::from_utf8(bytes).map_err(|e| Error::Format(e.to_string()))
    }
}

/// Parses a manifest file, resolving relative image paths against the
/// manifest's own directory and checking that every image exists.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<DatasetManifest> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let manifest = parse_manifest(&text, base)?;
    let missing: Vec<String> = manifest
        .entries
        .iter()
        .filter(|e| !e.path.is_file())
        .map(|e| e.path.display().to_string())
        .collect();
    if !missing.is_empty() {
        return Err(Error::Validation(format!(
            "manifest references missing files: {}",
            missing.join(", ")
        )));
    }
    Ok(manifest)
}

/// Parses manifest text without touching the filesystem.
pub fn parse_manifest(text: &str, base: &Path) -> Result<DatasetManifest> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| Error::Format(format!("manifest header: {e}")))?
        .clone();
    let expected = ["path", "label", "page_id", "split"];
    if headers.iter().ne(expected.iter().copied()) {
        return Err(Error::Format(format!(
            "manifest header must be `{}`, found `{}`",
            expected.join(","),
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut entries = Vec::new();
    for (line, row) in reader.deserialize::<ManifestEntry>().enumerate() {
        let mut entry =
            row.map_err(|e| Error::Format(format!("manifest row {}: {e}", line + 2)))?;
        if entry.path.is_relative() {
            entry.path = base.join(&entry.path);
        }
        entries.push(entry);
    }
    DatasetManifest::new(entries)
}

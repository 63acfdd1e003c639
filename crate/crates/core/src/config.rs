//! Pipeline configuration, its canonical text form and content hashes.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::artifact::sha256_hex;
use crate::classifier::ClassifierParams;
use crate::error::{Error, Result};
use crate::gabor::GaborParams;
use crate::regions::{DEFAULT_ALPHA, DEFAULT_BETA};
use crate::texture::NeighborhoodOrder;

pub const DEFAULT_GROUP_SIZE: usize = 40;
pub const DEFAULT_MIN_REGION_PIXELS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GaborMode {
    /// Three Gabor energy planes per letter (4602-dim features).
    On,
    /// Raw intensities only (1534-dim features).
    Off,
}

/// Which pixels of a region contribute pattern codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NeighborhoodRule {
    /// Every pixel labelled with the region contributes; its neighbours are
    /// read from the letter plane whatever their label.
    CenterInRegion,
    /// Only pixels whose whole operator footprint carries the region's label.
    FootprintInRegion,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub crop_fraction: f64,
    pub alpha: f64,
    pub beta: f64,
    /// Letters pooled per classification sample.
    pub group_size: usize,
    pub gabor_mode: GaborMode,
    pub min_region_pixels: usize,
    pub neighborhood_rule: NeighborhoodRule,
    pub seed: u64,
    pub gabor: GaborParams,
    pub neighborhood: NeighborhoodOrder,
    pub classifier: ClassifierParams,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            crop_fraction: 0.0,
            alpha: DEFAULT_ALPHA,
            beta: DEFAULT_BETA,
            group_size: DEFAULT_GROUP_SIZE,
            gabor_mode: GaborMode::On,
            min_region_pixels: DEFAULT_MIN_REGION_PIXELS,
            neighborhood_rule: NeighborhoodRule::CenterInRegion,
            seed: 0,
            gabor: GaborParams::default(),
            neighborhood: NeighborhoodOrder::default(),
            classifier: ClassifierParams::default(),
        }
    }
}

/// The subset of [`PipelineConfig`] that determines extracted features.
#[derive(Serialize)]
struct ExtractionView<'a> {
    crop_fraction: f64,
    alpha: f64,
    beta: f64,
    group_size: usize,
    gabor_mode: GaborMode,
    min_region_pixels: usize,
    neighborhood_rule: NeighborhoodRule,
    gabor: &'a GaborParams,
    neighborhood: &'a NeighborhoodOrder,
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=0.25).contains(&self.crop_fraction) {
            return Err(Error::param("crop_fraction", "must lie in [0, 0.25]"));
        }
        if !(self.alpha > 0.0) || !(self.beta > self.alpha) {
            return Err(Error::param("alpha/beta", "need 0 < alpha < beta"));
        }
        if self.group_size == 0 {
            return Err(Error::param("group_size", "must be at least 1"));
        }
        NeighborhoodOrder::new(*self.neighborhood.offsets())?;
        self.gabor.validate()?;
        self.classifier.validate()
    }

    /// Canonical TOML form; field order is fixed by the struct.
    pub fn to_canonical(&self) -> String {
        toml::to_string(self).expect("config is always representable as TOML")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: PipelineConfig =
            toml::from_str(text).map_err(|e| Error::Validation(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn hash(&self) -> String {
        sha256_hex(self.to_canonical().as_bytes())[..16].to_string()
    }

    /// Hash of the extraction-relevant fields; feature files and models must
    /// agree on it.
    pub fn extraction_hash(&self) -> String {
        let view = ExtractionView {
            crop_fraction: self.crop_fraction,
            alpha: self.alpha,
            beta: self.beta,
            group_size: self.group_size,
            gabor_mode: self.gabor_mode,
            min_region_pixels: self.min_region_pixels,
            neighborhood_rule: self.neighborhood_rule,
            gabor: &self.gabor,
            neighborhood: &self.neighborhood,
        };
        let text = toml::to_string(&view).expect("representable as TOML");
        sha256_hex(text.as_bytes())[..16].to_string()
    }
}

//! Source printer attribution from scanned text pages.
//!
//! Pages are binarized to find letters, each letter is split into flat and
//! edge regions, and local tetra pattern histograms of Gabor energy planes
//! over those regions are pooled over groups of letters and classified by a
//! one-vs-one linear SVM. [`synth`] generates virtual-printer pages for
//! end-to-end testing.

pub mod artifact;
pub mod classifier;
pub mod config;
pub mod error;
pub mod features;
pub mod gabor;
pub mod ingest;
pub mod letters;
pub mod regions;
pub mod synth;
pub mod texture;

pub use classifier::{Classifier, ClassifierParams, ConfusionMatrix, Evaluation, GroupPrediction, Model};
pub use config::{GaborMode, NeighborhoodRule, PipelineConfig};
pub use error::{Error, Result};
pub use features::{Extractor, FeatureLayout, FeatureSet, FeatureVector, LabeledSample, PooledSample};
pub use ingest::{DatasetManifest, GrayImage, ManifestEntry, Split};

//! Patch-level histopathology classification.
//!
//! Images are cut into 150x150 tiles, optionally screened by a relevance
//! filter trained on a second labelled tile corpus, described with PFTAS
//! texture statistics (or externally computed deep features, optionally
//! PCA-reduced), classified with an RBF support vector machine and finally
//! aggregated back to image and patient level under a patient-wise
//! five-fold protocol.

pub mod cache;
pub mod classifier;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod features;
pub mod filterbank;
pub mod imaging;
pub mod pipeline;
pub mod seed;

pub use classifier::{GridSearchReport, KernelParams, TrainedClassifier};
pub use dataset::{BinaryLabel, CorpusKind, CorpusManifest, FoldAssignment, ImageEntry, Magnification};
pub use error::{Error, Result};
pub use features::{FeatureKind, FeatureMatrix, PatchKey, PcaModel};
pub use filterbank::{FilterSpec, RelevanceModel, RetentionStats};
pub use imaging::{BinaryMask, PatchRecord, Raster};

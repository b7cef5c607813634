//! Weakly supervised scene parsing from image-level tags.
//!
//! A target image is parsed by alternating two steps until its inferred
//! label set stops changing:
//!
//! 1. **Retrieval.** The target's global feature is sparse-coded over a
//!    codebook built from a tagged exemplar database, with a graph-Laplacian
//!    penalty that ties together coefficients of images sharing tags and a
//!    diagonal penalty against images whose tags disagree with the current
//!    label estimate ([`sparse_coder`], [`semantics`]).
//! 2. **Propagation.** Superpixels of the target are linked to their nearest
//!    superpixels in each retrieved exemplar; a density prior plus a
//!    contrast-weighted Potts term is minimised with alpha-beta swap graph
//!    cuts ([`mrf`]).
//!
//! The same retrieval codes drive tag annotation by weighted label transfer
//! ([`pipeline::annotate`]). [`eval`] holds the accuracy / MAP metrics and a
//! deterministic synthetic dataset generator.

pub mod color;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod features;
pub mod mrf;
pub mod pipeline;
pub mod semantics;
pub mod sparse_coder;
pub mod superpixel;

pub use dataset::{AuxiliaryDatabase, GroundTruth, Label, LabelSet, TaggedImage};
pub use error::{Error, Result};
pub use features::{Codebook, FeatureConfig, GlobalFeature, RegionFeature};
pub use mrf::{LabelAssignment, PairwiseMode, PropagationGraph, UnaryMode, UnaryParams, UnaryTable};
pub use pipeline::{AnnotationResult, ParseResult, PreparedDatabase, RunConfig};
pub use semantics::{ConstraintMatrix, DissimilarityDiag, SemanticAffinity};
pub use sparse_coder::{CoderConfig, ReferenceSet, SemanticCode};
pub use superpixel::{AdjacencyList, SuperpixelDecomposition};

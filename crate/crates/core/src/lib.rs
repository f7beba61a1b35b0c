//! Graph-free representation and comparison of articulated 2-D shapes.
//!
//! A shape mask is described per pixel by thirty screened-Poisson responses
//! at increasing scales. Robust PCA splits that feature matrix into a
//! low-rank body and a sparse part whose row norms ("distinctness") light up
//! articulations. Each shape is cut into regions by distinctness, regions
//! are summarized by histograms, and two shapes are compared by an optimal
//! partial matching of their regions in six feature spaces. The fused
//! dissimilarities feed t-SNE, affinity propagation and NMI.

pub mod cluster;
pub mod error;
pub mod features;
pub mod geometry;
pub mod hungarian;
pub mod io;
pub mod mask;
pub mod matching;
pub mod partition;
pub mod pipeline;
pub mod report;
pub mod rpca;
pub mod synth;

pub use cluster::{ClusterAssignment, Embedding2D, NmiScore};
pub use error::{Error, Result};
pub use features::{FeatureMatrix, FeatureSpace};
pub use geometry::{DistanceField, ShapeMeasurements};
pub use io::{DatasetManifest, LoadOptions};
pub use mask::ShapeMask;
pub use matching::{DissimilarityMatrix, RegionDescriptor, ShapeSignature};
pub use partition::RegionLabeling;
pub use pipeline::{AnalysisConfig, PipelineConfig, RunSummary};
pub use rpca::DistinctnessField;

//! Depth-sensitive fully connected CRF refinement for RGB-D semantic segmentation.
//!
//! The crate turns per-pixel class scores from an upstream network into a
//! refined labeling. Pixels are coupled by a Potts pairwise term whose weight
//! is a sum of Gaussian kernels over position, color and depth; the posterior
//! is approximated by mean-field iterations that filter the marginals with a
//! permutohedral lattice (or, for small images, exactly).
//!
//! Modules follow the pipeline: [`ingest`] reads rasters and score maps,
//! [`depthprep`] screens and rescales depth, [`potentials`] defines the energy,
//! [`inference`] minimizes it, [`metrics`] scores the result and [`tuner`]
//! searches the kernel parameters. [`synth`] builds labelled test scenes and
//! [`receptive`] is a small receptive-field calculator for dilated stacks.

pub mod depthprep;
pub mod error;
pub mod inference;
pub mod ingest;
pub mod metrics;
pub mod potentials;
pub mod receptive;
pub mod synth;
pub mod tuner;
pub mod types;

pub use error::{Error, Result};
pub use inference::{run_inference, Backend, InferenceConfig, InferenceOutput};
pub use potentials::{CrfParams, KernelVariant, PixelFeature};
pub use types::{
    argmax_labels, validate_dimensions, ClassPalette, DepthImage, DimensionReport, LabelMap,
    MarginalField, NormalizedDepth, RgbImage, UnaryField, IGNORE_LABEL,
};

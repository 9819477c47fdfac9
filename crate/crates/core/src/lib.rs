//! Latent-space inspection for deconvolutional generators.
//!
//! The crate bundles a small inference engine for generator networks
//! (fully-connected projection, transposed convolution, inference-mode
//! batchnorm, activations), the latent traversal and arithmetic schemes
//! used to probe them, image-grid rendering, a persistent anchor store and
//! a declarative experiment runner with reproducibility manifests.

pub mod anchors;
pub mod arithmetic;
pub mod error;
pub mod experiment;
pub mod format;
pub mod fsutil;
pub mod image;
pub mod latent;
pub mod layers;
pub mod model;
pub mod tensor;
pub mod traverse;

pub use anchors::{AnchorStore, AnchorSummary};
pub use arithmetic::{
    average_anchors, evaluate_arithmetic, parse_expression, AnchorSet, ArithmeticExpression, Sign,
};
pub use error::{Error, Result};
pub use experiment::{
    rerun_check, run, ExperimentKind, ExperimentSpec, RerunReport, RunManifest, RunOptions,
};
pub use format::{load_model, save_model};
pub use image::{compose_grid, encode_png, tensor_to_image, GridLayout, ImageBuffer};
pub use latent::{sample_latents, LatentSpace, LatentVector};
pub use layers::{
    apply_activation, batchnorm_infer, conv_transpose, Activation, BatchNormInfer, FullyConnected,
    LayerSpec, TransposedConv,
};
pub use model::{dcgan64_architecture, Dcgan64, GeneratorModel};
pub use tensor::Tensor;
pub use traverse::{
    circular_paper, extrapolate_two_sided, lerp, slerp, traverse, TraversalKind, TraversalSequence,
};

/// Engine version recorded in run manifests.
pub const ENGINE_VERSION: &str = env!("CARGO_PKG_VERSION");

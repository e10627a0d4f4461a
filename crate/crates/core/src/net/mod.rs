//! Deterministic 3D CNN engine: the strided-convolution classifier, its
//! reverse-mode gradients and Adam training with non-positive biases.

mod adam;
pub mod conv;
mod layer;
mod model;
mod train;

pub use adam::{clamp_biases, flat_params, AdamConfig, AdamState};
pub use layer::{resolve_shapes, Activation, Architecture, LayerKind, LayerSpec, Shape, WeightInit};
pub use model::{bce_loss, softmax, Gradients, Layer, Model, Trace, LOSS_EPS};
pub use train::{
    evaluate, predict_all, predicted_class, train, ConvergenceCriterion, Hyperparams, Partition, Sample, TrainCurves, TrainOutcome,
};

//! Toy backbone, prototype classifier, and adapter-restricted gradients.

mod backbone;
mod classifier;
mod grad;

pub use backbone::{forward, Activation, Backbone, ForwardTrace, InputNorm, Layer, DEFAULT_WIDTHS};
pub use classifier::{classify, PrototypeClassifier, DEFAULT_TEMPERATURE};
pub use grad::{apply_update, loss_and_grads, GradientTape, LayerGrad, Sample, TrainableSet};


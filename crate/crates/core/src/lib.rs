//! Covariance-guided knowledge-preserving decomposition (CKPD) and adaptive
//! layer selection for few-shot class-incremental learning.
//!
//! The crate is organised bottom-up:
//!
//! - [`numkernel`]: dense `f64` matrices, Jacobi SVD, regularized inversion.
//! - [`covariance`]: one-exemplar-per-class buffer and per-layer input covariance.
//! - [`kpd`]: splitting a weight into a frozen residual and a low-rank adapter.
//! - [`als`]: adapter sensitivity ratio and top-K layer selection.
//! - [`net`]: toy backbone, prototype classifier and adapter gradients.
//! - [`fscil`]: synthetic benchmark and the select-decompose-train-merge loop.
//! - [`config`]: strict JSON experiment configuration.

use std::fmt;

use serde::{Deserialize, Serialize};

pub mod als;
pub mod checkpoint;
pub mod config;
pub mod covariance;
pub mod error;
pub mod fscil;
pub mod kpd;
pub mod net;
pub mod numkernel;
pub mod rng;

pub use als::{compute_asr, select_layers, session_selection, AsrReport, LayerAsr, LayerSelection};
pub use config::ExperimentConfig;
pub use covariance::{
    capture_activations, compute_input_covariance, update_buffer, ActivationCapture,
    ClassExemplar, CovarianceBuffer,
};
pub use error::{Error, Result};
pub use fscil::{
    compute_metrics, dropout_probe, generate_task, run_experiment, RunMetrics, SessionSpec,
    Strategy, SyntheticTask,
};
pub use kpd::{decompose, forward_decomposed, merge, DecomposedLayer, KpdConfig};
pub use net::{
    apply_update, classify, forward, loss_and_grads, Activation, Backbone, GradientTape, Layer,
    PrototypeClassifier, Sample, TrainableSet,
};
pub use numkernel::{regularized_inverse, spectral_norm, svd, Matrix, RegularizedInverse, SvdResult};

/// Class label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ClassId(pub u32);

impl fmt::Display for ClassId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

/// Index of a linear layer in the backbone, counted from the input.
pub type LayerId = usize;

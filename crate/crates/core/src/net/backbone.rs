use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::kpd::DecomposedLayer;
use crate::numkernel::{norm2, Matrix};
use crate::rng;
use crate::LayerId;

/// Default widths: 32 → 64 ×5 → 32 (six linear layers).
pub const DEFAULT_WIDTHS: [usize; 7] = [32, 64, 64, 64, 64, 64, 32];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Identity => z,
        }
    }

    /// Derivative expressed through the activation output `a = f(z)`.
    #[inline]
    pub fn derivative_from_output(self, a: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - a * a,
            Activation::Identity => 1.0,
        }
    }
}

/// Normalization applied to the input of every linear layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputNorm {
    /// `x / ‖x‖₂`
    L2,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Layer {
    Plain(Matrix),
    Decomposed(DecomposedLayer),
}

impl Layer {
    pub fn shape(&self) -> (usize, usize) {
        match self {
            Layer::Plain(w) => w.shape(),
            Layer::Decomposed(d) => d.w_frozen.shape(),
        }
    }

    /// The weight this layer currently computes.
    pub fn effective_weight(&self) -> Matrix {
        match self {
            Layer::Plain(w) => w.clone(),
            Layer::Decomposed(d) => d.merge(),
        }
    }

    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        match self {
            Layer::Plain(w) => w.matvec(x),
            Layer::Decomposed(d) => d.forward(x),
        }
    }

    pub fn param_count(&self) -> usize {
        let (o, i) = self.shape();
        match self {
            Layer::Plain(_) => o * i,
            Layer::Decomposed(d) => o * i + d.trainable_params(),
        }
    }

    /// Multiplications in one forward pass of a single vector.
    pub fn multiply_count(&self) -> usize {
        self.param_count()
    }
}

/// Inputs recorded during a forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    pub feature: Vec<f64>,
    /// `layer_inputs[l]` is the vector multiplied by layer `l`'s weight
    /// (after input normalization).
    pub layer_inputs: Vec<Vec<f64>>,
}

/// Feed-forward stack: per layer, normalize → linear → activation (the
/// activation is skipped after the last layer).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Backbone {
    layers: Vec<Layer>,
    activation: Activation,
    input_norm: InputNorm,
    widths: Vec<usize>,
}

impl Backbone {
    pub fn new(weights: Vec<Matrix>, activation: Activation, input_norm: InputNorm) -> Result<Self> {
        Self::from_layers(weights.into_iter().map(Layer::Plain).collect(), activation, input_norm)
    }

    pub fn from_layers(layers: Vec<Layer>, activation: Activation, input_norm: InputNorm) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Shape("backbone needs at least one layer".into()));
        }
        let mut widths = vec![layers[0].shape().1];
        for (l, layer) in layers.iter().enumerate() {
            let (d_out, d_in) = layer.shape();
            if d_in != *widths.last().unwrap() {
                return Err(Error::Shape(format!(
                    "layer {l} expects width {d_in}, previous layer produces {}",
                    widths.last().unwrap()
                )));
            }
            widths.push(d_out);
        }
        Ok(Self {
            layers,
            activation,
            input_norm,
            widths,
        })
    }

    /// Gaussian initialization with unit-variance entries; inputs to every
    /// layer are unit-norm, so pre-activations start at unit scale.
    pub fn random(widths: &[usize], seed: u64) -> Result<Self> {
        if widths.len() < 2 || widths.contains(&0) {
            return Err(Error::Shape(format!("invalid widths {widths:?}")));
        }
        let mut g = rng::stream(seed, rng::STREAM_INIT);
        let weights = widths
            .windows(2)
            .map(|w| Matrix::new(w[1], w[0], rng::normal_vec(&mut g, w[0] * w[1], 1.0)))
            .collect::<Result<Vec<_>>>()?;
        Self::new(weights, Activation::Tanh, InputNorm::L2)
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layer(&self, l: LayerId) -> &Layer {
        &self.layers[l]
    }

    pub(crate) fn layer_mut(&mut self, l: LayerId) -> &mut Layer {
        &mut self.layers[l]
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn input_norm(&self) -> InputNorm {
        self.input_norm
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn feature_dim(&self) -> usize {
        *self.widths.last().unwrap()
    }

    /// Effective weight of layer `l` (merged if decomposed).
    pub fn weight(&self, l: LayerId) -> Matrix {
        self.layers[l].effective_weight()
    }

    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        self.layers.iter().map(Layer::shape).collect()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Layer::param_count).sum()
    }

    pub fn multiply_count(&self) -> usize {
        self.layers.iter().map(Layer::multiply_count).sum()
    }

    pub fn decomposed_layers(&self) -> impl Iterator<Item = &DecomposedLayer> {
        self.layers.iter().filter_map(|l| match l {
            Layer::Decomposed(d) => Some(d),
            Layer::Plain(_) => None,
        })
    }

    pub fn has_decomposed(&self) -> bool {
        self.decomposed_layers().next().is_some()
    }

    /// Replaces layer `d.layer_id` with its decomposed form.
    pub fn install(&mut self, d: DecomposedLayer) -> Result<()> {
        let l = d.layer_id;
        if l >= self.layers.len() {
            return Err(Error::Shape(format!("no layer {l} in a {}-layer backbone", self.layers.len())));
        }
        if self.layers[l].shape() != d.w_frozen.shape() {
            return Err(Error::Shape(format!(
                "decomposed layer {l} is {:?}, slot is {:?}",
                d.w_frozen.shape(),
                self.layers[l].shape()
            )));
        }
        self.layers[l] = Layer::Decomposed(d);
        Ok(())
    }

    /// Folds every adapter back into a plain weight and returns the
    /// decomposed layers that were removed.
    pub fn merge_all(&mut self) -> Vec<DecomposedLayer> {
        let mut removed = Vec::new();
        for slot in &mut self.layers {
            if let Layer::Decomposed(d) = slot {
                let merged = d.merge();
                let Layer::Decomposed(d) = std::mem::replace(slot, Layer::Plain(merged)) else {
                    unreachable!()
                };
                removed.push(d);
            }
        }
        removed
    }

    /// Copy of the model with every adapter merged.
    pub fn merged(&self) -> Backbone {
        let mut m = self.clone();
        m.merge_all();
        m
    }

    /// SHA-256 over the shapes and bit patterns of the effective weights.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        for layer in &self.layers {
            let w = layer.effective_weight();
            h.update((w.rows() as u64).to_le_bytes());
            h.update((w.cols() as u64).to_le_bytes());
            for v in w.as_slice() {
                h.update(v.to_bits().to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    pub(crate) fn normalize(&self, x: &[f64], l: LayerId) -> Result<(Vec<f64>, f64)> {
        match self.input_norm {
            InputNorm::None => Ok((x.to_vec(), 1.0)),
            InputNorm::L2 => {
                let n = norm2(x);
                if !(n > 0.0 && n.is_finite()) {
                    return Err(Error::DegenerateInput(format!(
                        "input to layer {l} has norm {n}; cannot normalize"
                    )));
                }
                Ok((x.iter().map(|v| v / n).collect(), n))
            }
        }
    }

    pub fn forward(&self, x: &[f64]) -> Result<ForwardTrace> {
        self.forward_with_adapter_mask(x, &mut |_, _| {})
    }

    /// Forward pass where `mask(layer_id, out)` may edit the adapter output of
    /// each decomposed layer before it joins the frozen path.
    pub fn forward_with_adapter_mask(
        &self,
        x: &[f64],
        mask: &mut dyn FnMut(LayerId, &mut [f64]),
    ) -> Result<ForwardTrace> {
        if x.len() != self.input_dim() {
            return Err(Error::Shape(format!(
                "input has length {}, backbone expects {}",
                x.len(),
                self.input_dim()
            )));
        }
        if x.iter().all(|v| *v == 0.0) {
            return Err(Error::DegenerateInput("zero input vector".into()));
        }
        let last = self.layers.len() - 1;
        let mut layer_inputs = Vec::with_capacity(self.layers.len());
        let mut h = x.to_vec();
        for (l, layer) in self.layers.iter().enumerate() {
            let (n, _) = self.normalize(&h, l)?;
            let mut z = match layer {
                Layer::Plain(w) => w.matvec(&n)?,
                Layer::Decomposed(d) => d.forward_masked(&n, |out| mask(l, out))?,
            };
            layer_inputs.push(n);
            if l != last {
                z.iter_mut().for_each(|v| *v = self.activation.apply(*v));
            }
            h = z;
        }
        Ok(ForwardTrace {
            feature: h,
            layer_inputs,
        })
    }
}

pub fn forward(model: &Backbone, x: &[f64]) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let t = model.forward(x)?;
    Ok((t.feature, t.layer_inputs))
}

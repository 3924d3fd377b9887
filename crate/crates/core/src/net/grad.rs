//! Softmax cross-entropy over cosine logits and its exact reverse-mode
//! gradients with respect to adapters, trainable plain weights and
//! trainable prototypes.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::backbone::{Backbone, InputNorm, Layer};
use super::classifier::PrototypeClassifier;
use crate::error::{Error, Result};
use crate::numkernel::{dot, norm2, Matrix};
use crate::{ClassId, LayerId};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub input: Vec<f64>,
    pub label: ClassId,
}

/// Which parameters receive gradients. Adapters of decomposed layers are
/// always trainable; plain layers only when listed.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TrainableSet {
    pub dense_layers: BTreeSet<LayerId>,
    pub prototypes: BTreeSet<ClassId>,
}

impl TrainableSet {
    pub fn adapters_only(prototypes: impl IntoIterator<Item = ClassId>) -> Self {
        Self {
            dense_layers: BTreeSet::new(),
            prototypes: prototypes.into_iter().collect(),
        }
    }

    pub fn all_dense(model: &Backbone, prototypes: impl IntoIterator<Item = ClassId>) -> Self {
        Self {
            dense_layers: (0..model.num_layers()).collect(),
            prototypes: prototypes.into_iter().collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum LayerGrad {
    Adapter { db: Matrix, da: Matrix },
    Dense { dw: Matrix },
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientTape {
    /// Indexed by layer id; `None` for layers without trainable parameters.
    pub layers: Vec<Option<LayerGrad>>,
    pub prototypes: BTreeMap<ClassId, Vec<f64>>,
}

impl GradientTape {
    pub fn zeros_like(model: &Backbone, clf: &PrototypeClassifier, trainable: &TrainableSet) -> Self {
        let layers = model
            .layers()
            .iter()
            .enumerate()
            .map(|(l, layer)| match layer {
                Layer::Decomposed(d) => Some(LayerGrad::Adapter {
                    db: Matrix::zeros(d.b.rows(), d.b.cols()),
                    da: Matrix::zeros(d.a.rows(), d.a.cols()),
                }),
                Layer::Plain(w) if trainable.dense_layers.contains(&l) => Some(LayerGrad::Dense {
                    dw: Matrix::zeros(w.rows(), w.cols()),
                }),
                Layer::Plain(_) => None,
            })
            .collect();
        let prototypes = trainable
            .prototypes
            .iter()
            .filter_map(|c| clf.prototype(*c).map(|p| (*c, vec![0.0; p.len()])))
            .collect();
        Self { layers, prototypes }
    }

    pub fn is_zero(&self) -> bool {
        let layers_zero = self.layers.iter().flatten().all(|g| match g {
            LayerGrad::Adapter { db, da } => db.max_abs() == 0.0 && da.max_abs() == 0.0,
            LayerGrad::Dense { dw } => dw.max_abs() == 0.0,
        });
        layers_zero && self.prototypes.values().all(|g| g.iter().all(|v| *v == 0.0))
    }

    /// Flattened gradient entries in a fixed order: layers ascending (B then
    /// A, or W), then prototypes by class id.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for g in self.layers.iter().flatten() {
            match g {
                LayerGrad::Adapter { db, da } => {
                    out.extend_from_slice(db.as_slice());
                    out.extend_from_slice(da.as_slice());
                }
                LayerGrad::Dense { dw } => out.extend_from_slice(dw.as_slice()),
            }
        }
        for g in self.prototypes.values() {
            out.extend_from_slice(g);
        }
        out
    }
}

struct LayerCache {
    /// ‖raw input‖ (1 without normalization)
    in_norm: f64,
    /// normalized input
    n: Vec<f64>,
    /// `A·n` for decomposed layers
    h: Option<Vec<f64>>,
    /// activation output (pre-activation for the last layer)
    out: Vec<f64>,
}

fn forward_cached(model: &Backbone, x: &[f64]) -> Result<Vec<LayerCache>> {
    if x.len() != model.input_dim() {
        return Err(Error::Shape(format!(
            "input has length {}, backbone expects {}",
            x.len(),
            model.input_dim()
        )));
    }
    let last = model.num_layers() - 1;
    let act = model.activation();
    let mut caches: Vec<LayerCache> = Vec::with_capacity(model.num_layers());
    for (l, layer) in model.layers().iter().enumerate() {
        let input = caches.last().map_or(x, |c| c.out.as_slice());
        let (n, in_norm) = model.normalize(input, l)?;
        let (mut z, h) = match layer {
            Layer::Plain(w) => (w.matvec(&n)?, None),
            Layer::Decomposed(d) => {
                let h = d.a.matvec(&n)?;
                let mut z = d.w_frozen.matvec(&n)?;
                let bh = d.b.matvec(&h)?;
                z.iter_mut().zip(&bh).for_each(|(a, b)| *a += b);
                (z, Some(h))
            }
        };
        if l != last {
            z.iter_mut().for_each(|v| *v = act.apply(*v));
        }
        caches.push(LayerCache { in_norm, n, h, out: z });
    }
    Ok(caches)
}

#[inline]
fn outer_acc(m: &mut Matrix, col: &[f64], row: &[f64]) {
    for (i, &c) in col.iter().enumerate() {
        if c == 0.0 {
            continue;
        }
        for (v, &r) in m.row_mut(i).iter_mut().zip(row) {
            *v += c * r;
        }
    }
}

/// Mean cross-entropy of `softmax(logits)` over `batch` and its gradients.
pub fn loss_and_grads(
    model: &Backbone,
    clf: &PrototypeClassifier,
    batch: &[Sample],
    trainable: &TrainableSet,
) -> Result<(f64, GradientTape)> {
    if batch.is_empty() {
        return Err(Error::InvalidConfig("empty batch".into()));
    }
    for s in batch {
        if clf.prototype(s.label).is_none() {
            return Err(Error::UnknownLabel(s.label));
        }
    }
    let mut tape = GradientTape::zeros_like(model, clf, trainable);
    let lowest_trainable = tape.layers.iter().position(Option::is_some);
    let temperature = clf.temperature();
    let protos: Vec<(ClassId, &Vec<f64>, f64)> = clf
        .prototypes()
        .iter()
        .map(|(c, p)| (*c, p, norm2(p)))
        .collect();
    let inv_batch = 1.0 / batch.len() as f64;
    let act = model.activation();
    let last = model.num_layers() - 1;
    let mut total_loss = 0.0;

    for sample in batch {
        let caches = forward_cached(model, &sample.input)?;
        let f = &caches[last].out;
        let fnorm = norm2(f);
        if !(fnorm > 0.0 && fnorm.is_finite()) {
            return Err(Error::DegenerateInput(format!("feature has norm {fnorm}")));
        }
        let f_hat: Vec<f64> = f.iter().map(|v| v / fnorm).collect();

        let cos: Vec<f64> = protos.iter().map(|(_, p, pn)| dot(&f_hat, p) / pn).collect();
        let logits: Vec<f64> = cos.iter().map(|c| temperature * c).collect();
        let zmax = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum_exp: f64 = logits.iter().map(|z| (z - zmax).exp()).sum();
        let lse = zmax + sum_exp.ln();
        let y = protos.iter().position(|(c, _, _)| *c == sample.label).unwrap();
        total_loss += lse - logits[y];

        // dL/dz_c for this sample, already divided by the batch size
        let g: Vec<f64> = logits
            .iter()
            .enumerate()
            .map(|(c, z)| ((z - lse).exp() - if c == y { 1.0 } else { 0.0 }) * inv_batch)
            .collect();

        let mut g_f = vec![0.0; f.len()];
        for (ci, (class, p, pn)) in protos.iter().enumerate() {
            let gc = g[ci] * temperature;
            if gc == 0.0 {
                continue;
            }
            for (k, gf) in g_f.iter_mut().enumerate() {
                *gf += gc * (p[k] / pn - cos[ci] * f_hat[k]) / fnorm;
            }
            if let Some(gp) = tape.prototypes.get_mut(class) {
                for (k, v) in gp.iter_mut().enumerate() {
                    *v += gc * (f_hat[k] - cos[ci] * p[k] / pn) / pn;
                }
            }
        }

        let Some(lowest) = lowest_trainable else {
            continue;
        };
        // g_out holds dL/d(layer output) for layer l, before the activation.
        let mut g_out = g_f;
        for l in (lowest..=last).rev() {
            let cache = &caches[l];
            if l != last {
                for (gz, a) in g_out.iter_mut().zip(&cache.out) {
                    *gz *= act.derivative_from_output(*a);
                }
            }
            let g_n = match (model.layer(l), tape.layers[l].as_mut()) {
                (Layer::Decomposed(d), Some(LayerGrad::Adapter { db, da })) => {
                    let h = cache.h.as_ref().expect("decomposed cache has A·n");
                    outer_acc(db, &g_out, h);
                    let g_h = d.b.matvec_t(&g_out)?;
                    outer_acc(da, &g_h, &cache.n);
                    if l == lowest {
                        break;
                    }
                    let mut g_n = d.w_frozen.matvec_t(&g_out)?;
                    let from_a = d.a.matvec_t(&g_h)?;
                    g_n.iter_mut().zip(&from_a).for_each(|(a, b)| *a += b);
                    g_n
                }
                (Layer::Plain(w), grad) => {
                    if let Some(LayerGrad::Dense { dw }) = grad {
                        outer_acc(dw, &g_out, &cache.n);
                    }
                    if l == lowest {
                        break;
                    }
                    w.matvec_t(&g_out)?
                }
                _ => unreachable!("tape layout mirrors the model"),
            };
            g_out = match model.input_norm() {
                InputNorm::None => g_n,
                InputNorm::L2 => {
                    let proj = dot(&g_n, &cache.n);
                    g_n.iter()
                        .zip(&cache.n)
                        .map(|(g, n)| (g - proj * n) / cache.in_norm)
                        .collect()
                }
            };
        }
    }
    Ok((total_loss * inv_batch, tape))
}

/// Plain SGD step on every parameter in `tape`. Weights use `lr_adapter`,
/// prototypes `lr_clf`; updated prototypes are re-normalized.
pub fn apply_update(
    model: &mut Backbone,
    clf: &mut PrototypeClassifier,
    tape: &GradientTape,
    lr_adapter: f64,
    lr_clf: f64,
) -> Result<()> {
    apply_update_inner(model, clf, tape, lr_adapter, lr_clf, true)
}

fn apply_update_inner(
    model: &mut Backbone,
    clf: &mut PrototypeClassifier,
    tape: &GradientTape,
    lr_adapter: f64,
    lr_clf: f64,
    renormalize: bool,
) -> Result<()> {
    if tape.layers.len() != model.num_layers() {
        return Err(Error::Shape(format!(
            "tape covers {} layers, model has {}",
            tape.layers.len(),
            model.num_layers()
        )));
    }
    for (l, grad) in tape.layers.iter().enumerate() {
        let Some(grad) = grad else { continue };
        match (model.layer_mut(l), grad) {
            (Layer::Decomposed(d), LayerGrad::Adapter { db, da }) => {
                d.b.axpy(-lr_adapter, db)?;
                d.a.axpy(-lr_adapter, da)?;
            }
            (Layer::Plain(w), LayerGrad::Dense { dw }) => w.axpy(-lr_adapter, dw)?,
            _ => {
                return Err(Error::Shape(format!(
                    "gradient kind for layer {l} does not match the layer variant"
                )))
            }
        }
    }
    for (class, g) in &tape.prototypes {
        let p = clf
            .prototype_mut(*class)
            .ok_or(Error::UnknownLabel(*class))?;
        if p.len() != g.len() {
            return Err(Error::Shape(format!("prototype gradient for class {class} has wrong length")));
        }
        if g.iter().all(|v| *v == 0.0) {
            continue;
        }
        p.iter_mut().zip(g).for_each(|(v, d)| *v -= lr_clf * d);
        if renormalize {
            let n = norm2(p);
            if !(n > 0.0 && n.is_finite()) {
                return Err(Error::NumericalFailure(format!(
                    "prototype for class {class} collapsed to norm {n}"
                )));
            }
            p.iter_mut().for_each(|v| *v /= n);
        }
    }
    Ok(())
}

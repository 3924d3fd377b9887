//! Adapter sensitivity ratio (ASR) and per-session top-K layer selection.
//!
//! ASR is the share of a layer's singular-value mass held by its `r` weakest
//! components. Layers with the smallest ratio are the safest to adapt.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::covariance::{capture_activations, compute_input_covariance, CovarianceBuffer};
use crate::error::{Error, Result};
use crate::kpd::{decompose, DecomposedLayer, KpdConfig};
use crate::net::Backbone;
use crate::LayerId;

pub const DEFAULT_K_LAYERS: usize = 2;

/// `Σ_{i>R-r} s_i / Σ_i s_i` for a descending spectrum.
pub fn compute_asr(singular_values: &[f64], r: usize) -> Result<f64> {
    let (bottom, total) = asr_sums(singular_values, r)?;
    Ok(bottom / total)
}

fn asr_sums(singular_values: &[f64], r: usize) -> Result<(f64, f64)> {
    let len = singular_values.len();
    if r == 0 || r > len {
        return Err(Error::InvalidRank { rank: r, len });
    }
    if singular_values.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
        return Err(Error::NumericalFailure(
            "singular values must be finite and non-negative".into(),
        ));
    }
    let total: f64 = singular_values.iter().sum();
    if total == 0.0 {
        return Err(Error::ZeroEnergy);
    }
    let bottom: f64 = singular_values[len - r..].iter().sum();
    // r = R sums the same values in the same order, so bottom == total exactly.
    Ok((bottom, total))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSelection {
    /// All layer ids, ascending by ASR, ties by ascending id.
    pub ranking: Vec<LayerId>,
    /// First `k` entries of the ranking, sorted by id.
    pub selected: Vec<LayerId>,
}

impl LayerSelection {
    pub fn is_selected(&self, layer_id: LayerId) -> bool {
        self.selected.binary_search(&layer_id).is_ok()
    }
}

pub fn select_layers(scores: &[(LayerId, f64)], k: usize) -> Result<LayerSelection> {
    if k > scores.len() {
        return Err(Error::TooManyLayers { k, n: scores.len() });
    }
    if scores.iter().any(|(_, s)| !s.is_finite()) {
        return Err(Error::NumericalFailure("ASR scores must be finite".into()));
    }
    let mut ranked: Vec<(LayerId, f64)> = scores.to_vec();
    ranked.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    let ranking: Vec<LayerId> = ranked.iter().map(|(id, _)| *id).collect();
    let mut selected = ranking[..k].to_vec();
    selected.sort_unstable();
    Ok(LayerSelection { ranking, selected })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerAsr {
    pub layer_id: LayerId,
    pub asr: f64,
    pub singular_sum_total: f64,
    pub singular_sum_bottom_r: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AsrReport {
    pub session_id: usize,
    pub rank_r: usize,
    pub per_layer: Vec<LayerAsr>,
    pub ranking: Vec<LayerId>,
    pub selected: Vec<LayerId>,
}

impl AsrReport {
    pub fn from_spectra(
        session_id: usize,
        spectra: &[(LayerId, &[f64])],
        r: usize,
        k: usize,
    ) -> Result<Self> {
        let per_layer = spectra
            .iter()
            .map(|(layer_id, s)| {
                let (bottom, total) = asr_sums(s, r)?;
                Ok(LayerAsr {
                    layer_id: *layer_id,
                    asr: bottom / total,
                    singular_sum_total: total,
                    singular_sum_bottom_r: bottom,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let scores: Vec<(LayerId, f64)> = per_layer.iter().map(|l| (l.layer_id, l.asr)).collect();
        let sel = select_layers(&scores, k)?;
        Ok(Self {
            session_id,
            rank_r: r,
            per_layer,
            ranking: sel.ranking,
            selected: sel.selected,
        })
    }

    pub fn is_selected(&self, layer_id: LayerId) -> bool {
        self.selected.contains(&layer_id)
    }

    /// `layer_id,asr,selected` with one row per layer in id order.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("layer_id,asr,selected\n");
        for l in &self.per_layer {
            let _ = writeln!(
                out,
                "{},{},{}",
                l.layer_id,
                crate::numkernel::io::format_f64(l.asr),
                u8::from(self.is_selected(l.layer_id))
            );
        }
        out
    }
}

/// Decomposes every layer against the buffer covariance, ranks them by ASR
/// and keeps the decompositions of the `k` lowest-ASR layers.
///
/// The returned layers are ordered by layer id; the model is not modified.
pub fn session_selection(
    model: &Backbone,
    buffer: &CovarianceBuffer,
    cfg: &KpdConfig,
    k: usize,
    session_id: usize,
) -> Result<(AsrReport, Vec<DecomposedLayer>)> {
    let n = model.num_layers();
    if k > n {
        return Err(Error::TooManyLayers { k, n });
    }
    let captures = capture_activations(model, buffer)?;
    let mut layers = Vec::with_capacity(n);
    for cap in &captures {
        let sigma = compute_input_covariance(cap)?;
        let w = model.weight(cap.layer_id);
        layers.push(decompose(&w, &sigma, cfg)?.with_layer_id(cap.layer_id));
    }
    let spectra: Vec<(LayerId, &[f64])> = layers
        .iter()
        .map(|l| (l.layer_id, l.singular_values.as_slice()))
        .collect();
    let report = AsrReport::from_spectra(session_id, &spectra, cfg.rank_r, k)?;
    let chosen = layers
        .into_iter()
        .filter(|l| report.is_selected(l.layer_id))
        .collect();
    Ok((report, chosen))
}

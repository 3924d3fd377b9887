//! Model checkpoints: a directory holding one CKPD-MAT file per plain layer,
//! one subdirectory per decomposed layer, `prototypes.mat` and
//! `manifest.json`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kpd::DecomposedLayer;
use crate::net::{Activation, Backbone, InputNorm, Layer, PrototypeClassifier};
use crate::numkernel::io::{load_matrix, save_matrix};
use crate::numkernel::Matrix;
use crate::ClassId;

const FORMAT: &str = "ckpd-checkpoint";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub widths: Vec<usize>,
    pub activation: Activation,
    pub input_norm: InputNorm,
    pub layers: Vec<LayerEntry>,
    pub temperature: f64,
    /// Class id of each row of `prototypes.mat`.
    pub prototype_classes: Vec<ClassId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, tag = "kind", rename_all = "snake_case")]
pub enum LayerEntry {
    Plain { file: String },
    Decomposed { dir: String },
}

pub fn save(dir: impl AsRef<Path>, model: &Backbone, clf: &PrototypeClassifier) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let mut layers = Vec::with_capacity(model.num_layers());
    for (l, layer) in model.layers().iter().enumerate() {
        match layer {
            Layer::Plain(w) => {
                let file = format!("layer_{l}.mat");
                save_matrix(dir.join(&file), w)?;
                layers.push(LayerEntry::Plain { file });
            }
            Layer::Decomposed(d) => {
                let sub = format!("layer_{l}");
                d.save_dir(dir.join(&sub))?;
                layers.push(LayerEntry::Decomposed { dir: sub });
            }
        }
    }
    let prototype_classes: Vec<ClassId> = clf.classes().collect();
    if let Some(dim) = clf.dim() {
        let rows: Vec<Vec<f64>> = clf.prototypes().values().cloned().collect();
        let m = Matrix::from_rows(&rows)?;
        debug_assert_eq!(m.cols(), dim);
        save_matrix(dir.join("prototypes.mat"), &m)?;
    }
    let manifest = Manifest {
        format: FORMAT.into(),
        version: VERSION,
        widths: model.widths().to_vec(),
        activation: model.activation(),
        input_norm: model.input_norm(),
        layers,
        temperature: clf.temperature(),
        prototype_classes,
    };
    fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(())
}

pub fn load(dir: impl AsRef<Path>) -> Result<(Backbone, PrototypeClassifier)> {
    let dir = dir.as_ref();
    let manifest: Manifest = serde_json::from_slice(&fs::read(dir.join("manifest.json"))?)?;
    if manifest.format != FORMAT || manifest.version != VERSION {
        return Err(Error::Format(format!(
            "unsupported checkpoint {} v{}",
            manifest.format, manifest.version
        )));
    }
    let mut layers = Vec::with_capacity(manifest.layers.len());
    for (l, entry) in manifest.layers.iter().enumerate() {
        layers.push(match entry {
            LayerEntry::Plain { file } => Layer::Plain(load_matrix(dir.join(file))?),
            LayerEntry::Decomposed { dir: sub } => {
                let d = DecomposedLayer::load_dir(dir.join(sub))?;
                if d.layer_id != l {
                    return Err(Error::Format(format!(
                        "decomposed layer in slot {l} claims id {}",
                        d.layer_id
                    )));
                }
                Layer::Decomposed(d)
            }
        });
    }
    let model = Backbone::from_layers(layers, manifest.activation, manifest.input_norm)?;
    if model.widths() != manifest.widths {
        return Err(Error::Format(format!(
            "manifest widths {:?} disagree with layers {:?}",
            manifest.widths,
            model.widths()
        )));
    }
    let mut prototypes = BTreeMap::new();
    if !manifest.prototype_classes.is_empty() {
        let m = load_matrix(dir.join("prototypes.mat"))?;
        if m.rows() != manifest.prototype_classes.len() {
            return Err(Error::Format(format!(
                "{} prototype rows for {} classes",
                m.rows(),
                manifest.prototype_classes.len()
            )));
        }
        for (i, c) in manifest.prototype_classes.iter().enumerate() {
            if prototypes.insert(*c, m.row(i).to_vec()).is_some() {
                return Err(Error::DuplicateClass(*c));
            }
        }
    }
    let clf = PrototypeClassifier::from_prototypes(manifest.temperature, prototypes)?;
    Ok((model, clf))
}

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkernel::{dot, norm2};
use crate::ClassId;

pub const DEFAULT_TEMPERATURE: f64 = 16.0;

/// Cosine classifier over one prototype per class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrototypeClassifier {
    prototypes: BTreeMap<ClassId, Vec<f64>>,
    temperature: f64,
}

impl PrototypeClassifier {
    pub fn new(temperature: f64) -> Result<Self> {
        if !(temperature > 0.0 && temperature.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "temperature must be positive, got {temperature}"
            )));
        }
        Ok(Self {
            prototypes: BTreeMap::new(),
            temperature,
        })
    }

    /// Restores a classifier from stored prototypes without renormalizing
    /// them, so saved values come back bit for bit.
    pub fn from_prototypes(temperature: f64, prototypes: BTreeMap<ClassId, Vec<f64>>) -> Result<Self> {
        let mut clf = Self::new(temperature)?;
        let mut dim = None;
        for (c, p) in &prototypes {
            if *dim.get_or_insert(p.len()) != p.len() {
                return Err(Error::Shape(format!("prototype {c} has length {}", p.len())));
            }
            if p.iter().all(|v| *v == 0.0) || p.iter().any(|v| !v.is_finite()) {
                return Err(Error::DegenerateInput(format!("prototype {c} is zero or non-finite")));
            }
        }
        clf.prototypes = prototypes;
        Ok(clf)
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    pub fn len(&self) -> usize {
        self.prototypes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prototypes.is_empty()
    }

    pub fn classes(&self) -> impl Iterator<Item = ClassId> + '_ {
        self.prototypes.keys().copied()
    }

    pub fn prototypes(&self) -> &BTreeMap<ClassId, Vec<f64>> {
        &self.prototypes
    }

    pub fn prototype(&self, class: ClassId) -> Option<&[f64]> {
        self.prototypes.get(&class).map(Vec::as_slice)
    }

    pub fn dim(&self) -> Option<usize> {
        self.prototypes.values().next().map(Vec::len)
    }

    /// Stores `v / ‖v‖` as the prototype of `class`, replacing any previous one.
    pub fn set_prototype(&mut self, class: ClassId, v: &[f64]) -> Result<()> {
        if let Some(d) = self.dim() {
            if d != v.len() {
                return Err(Error::Shape(format!(
                    "prototype for class {class} has dimension {}, expected {d}",
                    v.len()
                )));
            }
        }
        let n = norm2(v);
        if !(n > 0.0 && n.is_finite()) {
            return Err(Error::DegenerateInput(format!(
                "prototype for class {class} has norm {n}"
            )));
        }
        self.prototypes.insert(class, v.iter().map(|x| x / n).collect());
        Ok(())
    }

    pub(crate) fn prototype_mut(&mut self, class: ClassId) -> Option<&mut Vec<f64>> {
        self.prototypes.get_mut(&class)
    }

    /// `temperature · cos(feature, prototype)` per class, in class-id order.
    pub fn logits(&self, feature: &[f64]) -> Result<Vec<(ClassId, f64)>> {
        if self.prototypes.is_empty() {
            return Err(Error::InvalidConfig("classifier has no prototypes".into()));
        }
        let fnorm = norm2(feature);
        if !(fnorm > 0.0 && fnorm.is_finite()) {
            return Err(Error::DegenerateInput(format!("feature has norm {fnorm}")));
        }
        self.prototypes
            .iter()
            .map(|(c, p)| {
                if p.len() != feature.len() {
                    return Err(Error::Shape(format!(
                        "feature has dimension {}, prototypes have {}",
                        feature.len(),
                        p.len()
                    )));
                }
                Ok((*c, self.temperature * dot(feature, p) / (fnorm * norm2(p))))
            })
            .collect()
    }

    /// Arg-max class (lowest id on ties) and the logits.
    pub fn classify(&self, feature: &[f64]) -> Result<(ClassId, Vec<(ClassId, f64)>)> {
        let logits = self.logits(feature)?;
        let mut best = logits[0];
        for &(c, z) in &logits[1..] {
            if z > best.1 {
                best = (c, z);
            }
        }
        Ok((best.0, logits))
    }
}

pub fn classify(
    clf: &PrototypeClassifier,
    feature: &[f64],
) -> Result<(ClassId, Vec<(ClassId, f64)>)> {
    clf.classify(feature)
}

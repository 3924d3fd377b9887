//! Representative-sample buffer and per-layer input covariance.
//!
//! The buffer keeps exactly one randomly chosen training sample for every
//! class seen so far. Forwarding those exemplars through the backbone gives
//! the input features of each linear layer, whose second moment
//! `(1/M)·F·Fᵀ` guides the decomposition.

use std::collections::BTreeSet;
use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::Backbone;
use crate::numkernel::io::format_f64;
use crate::numkernel::Matrix;
use crate::rng;
use crate::{ClassId, LayerId};

pub const BUF_MAGIC: &str = "CKPD-BUF";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassExemplar {
    pub class_id: ClassId,
    pub input: Vec<f64>,
}

/// One exemplar per seen class. Grows monotonically; exemplars are never
/// replaced once chosen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovarianceBuffer {
    exemplars: Vec<ClassExemplar>,
    rng_seed: u64,
}

impl CovarianceBuffer {
    pub fn new(rng_seed: u64) -> Self {
        Self {
            exemplars: Vec::new(),
            rng_seed,
        }
    }

    pub fn from_exemplars(exemplars: Vec<ClassExemplar>, rng_seed: u64) -> Result<Self> {
        let mut seen = BTreeSet::new();
        let dim = exemplars.first().map(|e| e.input.len());
        for e in &exemplars {
            if !seen.insert(e.class_id) {
                return Err(Error::DuplicateClass(e.class_id));
            }
            if Some(e.input.len()) != dim {
                return Err(Error::Shape(format!(
                    "exemplar for class {} has dimension {}, expected {}",
                    e.class_id,
                    e.input.len(),
                    dim.unwrap_or(0)
                )));
            }
        }
        Ok(Self { exemplars, rng_seed })
    }

    pub fn exemplars(&self) -> &[ClassExemplar] {
        &self.exemplars
    }

    pub fn len(&self) -> usize {
        self.exemplars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.exemplars.is_empty()
    }

    pub fn rng_seed(&self) -> u64 {
        self.rng_seed
    }

    pub fn dim(&self) -> Option<usize> {
        self.exemplars.first().map(|e| e.input.len())
    }

    pub fn contains(&self, class_id: ClassId) -> bool {
        self.exemplars.iter().any(|e| e.class_id == class_id)
    }

    pub fn class_ids(&self) -> Vec<ClassId> {
        self.exemplars.iter().map(|e| e.class_id).collect()
    }

    /// Appends one uniformly chosen sample per new class.
    ///
    /// The choice depends only on the buffer seed and current size, so the
    /// same buffer and input always yield the same result.
    pub fn update(&self, new_classes: &[(ClassId, Vec<Vec<f64>>)]) -> Result<Self> {
        let mut next = self.clone();
        let mut pending = BTreeSet::new();
        for (class_id, samples) in new_classes {
            if self.contains(*class_id) || !pending.insert(*class_id) {
                return Err(Error::DuplicateClass(*class_id));
            }
            if samples.is_empty() {
                return Err(Error::EmptyClass(*class_id));
            }
        }
        let mut rng = rng::stream(
            rng::mix(&[self.rng_seed, self.exemplars.len() as u64]),
            rng::STREAM_BUFFER,
        );
        for (class_id, samples) in new_classes {
            let pick = rng.random_range(0..samples.len());
            let input = samples[pick].clone();
            if let Some(d) = next.dim() {
                if input.len() != d {
                    return Err(Error::Shape(format!(
                        "sample for class {class_id} has dimension {}, buffer holds {d}",
                        input.len()
                    )));
                }
            }
            next.exemplars.push(ClassExemplar {
                class_id: *class_id,
                input,
            });
        }
        Ok(next)
    }

    /// Writes `CKPD-BUF v1 <count> <dim>` followed by `<class_id> <floats>` lines.
    pub fn write<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "{BUF_MAGIC} v1 {} {}", self.len(), self.dim().unwrap_or(0))?;
        for e in &self.exemplars {
            let mut line = e.class_id.to_string();
            for v in &e.input {
                line.push(' ');
                line.push_str(&format_f64(*v));
            }
            writeln!(out, "{line}")?;
        }
        Ok(())
    }

    pub fn read<R: Read>(input: R, rng_seed: u64) -> Result<Self> {
        let mut lines = BufReader::new(input).lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Format("empty buffer file".into()))??;
        let parts: Vec<&str> = header.split_whitespace().collect();
        if parts.len() != 4 || parts[0] != BUF_MAGIC || parts[1] != "v1" {
            return Err(Error::Format(format!("bad buffer header `{header}`")));
        }
        let count: usize = parts[2]
            .parse()
            .map_err(|_| Error::Format(format!("bad count in `{header}`")))?;
        let dim: usize = parts[3]
            .parse()
            .map_err(|_| Error::Format(format!("bad dimension in `{header}`")))?;
        let mut exemplars = Vec::with_capacity(count);
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let mut toks = line.split_whitespace();
            let class_id = toks
                .next()
                .and_then(|t| t.parse().ok())
                .map(ClassId)
                .ok_or_else(|| Error::Format(format!("bad class id in `{line}`")))?;
            let input = toks
                .map(|t| {
                    t.parse::<f64>()
                        .ok()
                        .filter(|v| v.is_finite())
                        .ok_or_else(|| Error::Format(format!("bad float `{t}`")))
                })
                .collect::<Result<Vec<_>>>()?;
            if input.len() != dim {
                return Err(Error::Format(format!(
                    "exemplar of class {class_id} has {} values, expected {dim}",
                    input.len()
                )));
            }
            exemplars.push(ClassExemplar { class_id, input });
        }
        if exemplars.len() != count {
            return Err(Error::Format(format!(
                "expected {count} exemplars, found {}",
                exemplars.len()
            )));
        }
        Self::from_exemplars(exemplars, rng_seed)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut buf = Vec::new();
        self.write(&mut buf)?;
        fs::write(path, buf)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>, rng_seed: u64) -> Result<Self> {
        Self::read(fs::File::open(path)?, rng_seed)
    }
}

pub fn update_buffer(
    buffer: &CovarianceBuffer,
    new_classes: &[(ClassId, Vec<Vec<f64>>)],
) -> Result<CovarianceBuffer> {
    buffer.update(new_classes)
}

/// Inputs seen by one linear layer, one column per exemplar token.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationCapture {
    pub layer_id: LayerId,
    /// `d_in × M`
    pub features: Matrix,
}

/// `(1/M)·F·Fᵀ` without centering. The result is exactly symmetric.
pub fn compute_input_covariance(capture: &ActivationCapture) -> Result<Matrix> {
    input_covariance(&capture.features)
}

pub fn input_covariance(features: &Matrix) -> Result<Matrix> {
    let (d, m) = features.shape();
    if m == 0 {
        return Err(Error::DegenerateCovariance(
            "activation capture has no columns".into(),
        ));
    }
    let inv_m = 1.0 / m as f64;
    let mut sigma = Matrix::zeros(d, d);
    for i in 0..d {
        let ri = features.row(i);
        for j in i..d {
            let v = crate::numkernel::dot(ri, features.row(j)) * inv_m;
            sigma[(i, j)] = v;
            sigma[(j, i)] = v;
        }
    }
    Ok(sigma)
}

/// Forwards every buffered exemplar and records the input of each linear
/// layer as a column of that layer's capture.
pub fn capture_activations(
    model: &Backbone,
    buffer: &CovarianceBuffer,
) -> Result<Vec<ActivationCapture>> {
    if buffer.is_empty() {
        return Err(Error::EmptyBuffer);
    }
    let n_layers = model.num_layers();
    let mut columns: Vec<Vec<Vec<f64>>> = vec![Vec::with_capacity(buffer.len()); n_layers];
    for e in buffer.exemplars() {
        let trace = model.forward(&e.input)?;
        for (l, input) in trace.layer_inputs.into_iter().enumerate() {
            columns[l].push(input);
        }
    }
    columns
        .into_iter()
        .enumerate()
        .map(|(layer_id, cols)| {
            Ok(ActivationCapture {
                layer_id,
                features: Matrix::from_columns(&cols)?,
            })
        })
        .collect()
}

//! Synthetic class-incremental benchmark: Gaussian clusters around class
//! means drawn uniformly on the unit sphere.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::Sample;
use crate::numkernel::norm2;
use crate::rng;
use crate::ClassId;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SessionSpec {
    pub base_classes: usize,
    pub base_samples_per_class: usize,
    /// Number of incremental sessions `T`.
    pub num_incremental: usize,
    /// `p`, new classes per incremental session.
    pub ways: usize,
    /// `q`, training samples per new class.
    pub shots: usize,
    pub test_samples_per_class: usize,
    pub noise_sigma: f64,
    pub input_dim: usize,
    pub seed: u64,
}

impl Default for SessionSpec {
    fn default() -> Self {
        Self {
            base_classes: 20,
            base_samples_per_class: 100,
            num_incremental: 4,
            ways: 5,
            shots: 5,
            test_samples_per_class: 50,
            noise_sigma: 0.25,
            input_dim: 32,
            seed: 1,
        }
    }
}

impl SessionSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidSpec(m.to_string()));
        if self.ways == 0 || self.shots == 0 {
            return bad("ways and shots must be positive");
        }
        if self.base_classes == 0 || self.base_samples_per_class == 0 {
            return bad("base session needs at least one class and one sample per class");
        }
        if self.test_samples_per_class == 0 {
            return bad("test_samples_per_class must be positive");
        }
        if self.input_dim == 0 {
            return bad("input_dim must be positive");
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad("noise_sigma must be finite and non-negative");
        }
        Ok(())
    }

    pub fn total_classes(&self) -> usize {
        self.base_classes + self.num_incremental * self.ways
    }

    /// Class ids introduced in session `t` (0 = base).
    pub fn session_classes(&self, t: usize) -> Vec<ClassId> {
        let (start, count) = if t == 0 {
            (0, self.base_classes)
        } else {
            (self.base_classes + (t - 1) * self.ways, self.ways)
        };
        (start..start + count).map(|c| ClassId(c as u32)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionData {
    pub session: usize,
    pub classes: Vec<ClassId>,
    pub train: Vec<Sample>,
    pub test: Vec<Sample>,
}

impl SessionData {
    /// Training inputs grouped by class, in class order.
    pub fn train_by_class(&self) -> Vec<(ClassId, Vec<Vec<f64>>)> {
        self.classes
            .iter()
            .map(|c| {
                let xs = self
                    .train
                    .iter()
                    .filter(|s| s.label == *c)
                    .map(|s| s.input.clone())
                    .collect();
                (*c, xs)
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticTask {
    pub spec: SessionSpec,
    /// Unit-norm mean per class, indexed by class id.
    pub means: Vec<Vec<f64>>,
    pub sessions: Vec<SessionData>,
}

impl SyntheticTask {
    pub fn base(&self) -> &SessionData {
        &self.sessions[0]
    }

    pub fn incremental(&self) -> &[SessionData] {
        &self.sessions[1..]
    }
}

/// Deterministic in `spec.seed`.
pub fn generate_task(spec: &SessionSpec) -> Result<SyntheticTask> {
    spec.validate()?;
    let mut g = rng::stream(spec.seed, rng::STREAM_TASK);
    let d = spec.input_dim;
    let mut means = Vec::with_capacity(spec.total_classes());
    for _ in 0..spec.total_classes() {
        let mean = loop {
            let v = rng::normal_vec(&mut g, d, 1.0);
            let n = norm2(&v);
            if n > 1e-12 {
                break v.into_iter().map(|x| x / n).collect::<Vec<f64>>();
            }
        };
        means.push(mean);
    }

    let draw = |class: ClassId, count: usize, g: &mut rng::Rng| -> Vec<Sample> {
        let mean = &means[class.0 as usize];
        (0..count)
            .map(|_| {
                let noise = rng::normal_vec(g, d, spec.noise_sigma);
                Sample {
                    input: mean.iter().zip(&noise).map(|(m, e)| m + e).collect(),
                    label: class,
                }
            })
            .collect()
    };

    let mut sessions = Vec::with_capacity(spec.num_incremental + 1);
    for t in 0..=spec.num_incremental {
        let classes = spec.session_classes(t);
        let per_class = if t == 0 { spec.base_samples_per_class } else { spec.shots };
        let mut train = Vec::new();
        let mut test = Vec::new();
        for &c in &classes {
            train.extend(draw(c, per_class, &mut g));
            test.extend(draw(c, spec.test_samples_per_class, &mut g));
        }
        sessions.push(SessionData {
            session: t,
            classes,
            train,
            test,
        });
    }
    Ok(SyntheticTask {
        spec: spec.clone(),
        means,
        sessions,
    })
}

//! Base and incremental session drivers.

use std::collections::BTreeSet;

use log::{debug, info};
use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::metrics::SessionRecord;
use super::strategy::Strategy;
use super::task::{SessionData, SyntheticTask};
use crate::als::{session_selection, AsrReport, DEFAULT_K_LAYERS};
use crate::covariance::CovarianceBuffer;
use crate::error::{Error, Result};
use crate::kpd::{decompose_plain, lora_random, DecomposedLayer, KpdConfig};
use crate::net::{
    apply_update, loss_and_grads, Backbone, PrototypeClassifier, Sample, TrainableSet,
    DEFAULT_TEMPERATURE,
};
use crate::rng;
use crate::{ClassId, LayerId};

/// Optimisation settings shared by every strategy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub kpd: KpdConfig,
    /// Number of layers adapted per incremental session.
    pub k_layers: usize,
    pub base_epochs: usize,
    pub base_lr: f64,
    pub base_batch_size: usize,
    /// Step size for prototypes in incremental sessions.
    pub lr_clf: f64,
    /// Step size for backbone parameters; `None` means `0.1 * lr_clf`.
    pub lr_adapter: Option<f64>,
    pub iterations: usize,
    /// Upper bound on exemplars replayed per step.
    pub rehearsal_batch_size: usize,
    pub temperature: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            kpd: KpdConfig::default(),
            k_layers: DEFAULT_K_LAYERS,
            base_epochs: 30,
            base_lr: 2.0,
            base_batch_size: 64,
            lr_clf: 1.0,
            lr_adapter: None,
            iterations: 200,
            rehearsal_batch_size: 64,
            temperature: DEFAULT_TEMPERATURE,
        }
    }
}

impl TrainConfig {
    pub fn lr_adapter(&self) -> f64 {
        self.lr_adapter.unwrap_or(0.1 * self.lr_clf)
    }

    pub fn validate(&self) -> Result<()> {
        self.kpd.validate()?;
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.base_batch_size == 0 || self.rehearsal_batch_size == 0 {
            return bad("batch sizes must be positive");
        }
        for (name, v) in [
            ("base_lr", self.base_lr),
            ("lr_clf", self.lr_clf),
            ("lr_adapter", self.lr_adapter()),
            ("temperature", self.temperature),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidConfig(format!("{name} must be finite and non-negative")));
            }
        }
        if self.temperature == 0.0 {
            return bad("temperature must be positive");
        }
        Ok(())
    }
}

/// Request to measure adapter dropout right after training one session,
/// before its adapters are merged.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeRequest {
    pub session: usize,
    pub rate: f64,
    pub mask_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeOutcome {
    pub session: usize,
    pub rate: f64,
    pub clean_base: f64,
    pub clean_novel: f64,
    pub base_acc: f64,
    pub novel_acc: f64,
}

/// Everything carried from one session to the next.
#[derive(Debug, Clone)]
pub struct LearnerState {
    pub model: Backbone,
    pub classifier: PrototypeClassifier,
    pub buffer: CovarianceBuffer,
    pub base_classes: BTreeSet<ClassId>,
    /// Test samples of every class seen so far.
    pub seen_test: Vec<Sample>,
    pub session: usize,
    pub history: Vec<SessionRecord>,
    pub seed: u64,
    base_shapes: Vec<(usize, usize)>,
    base_params: usize,
    base_multiplies: usize,
    /// Split kept across sessions by `kpd_static`.
    static_layers: Option<Vec<DecomposedLayer>>,
}

impl LearnerState {
    /// Fails unless the merged model has exactly the base architecture.
    pub fn check_zero_overhead(&self) -> Result<()> {
        let m = &self.model;
        if m.has_decomposed() {
            return Err(Error::Invariant("adapters left unmerged".into()));
        }
        if m.layer_shapes() != self.base_shapes {
            return Err(Error::Invariant("layer shapes changed".into()));
        }
        if m.param_count() != self.base_params || m.multiply_count() != self.base_multiplies {
            return Err(Error::Invariant(format!(
                "cost changed: params {} -> {}, multiplies {} -> {}",
                self.base_params,
                m.param_count(),
                self.base_multiplies,
                m.multiply_count()
            )));
        }
        Ok(())
    }
}

/// Result of one incremental session.
#[derive(Debug, Clone)]
pub struct SessionOutcome {
    pub record: SessionRecord,
    pub asr_report: Option<AsrReport>,
    pub probe: Option<ProbeOutcome>,
    pub backbone_hash: String,
}

fn mean_feature(model: &Backbone, xs: &[&[f64]]) -> Result<Vec<f64>> {
    let mut acc = vec![0.0; model.feature_dim()];
    for x in xs {
        let f = model.forward(x)?.feature;
        acc.iter_mut().zip(&f).for_each(|(a, v)| *a += v);
    }
    Ok(acc)
}

fn init_prototypes(
    model: &Backbone,
    clf: &mut PrototypeClassifier,
    data: &SessionData,
) -> Result<()> {
    for &c in &data.classes {
        let xs: Vec<&[f64]> = data
            .train
            .iter()
            .filter(|s| s.label == c)
            .map(|s| s.input.as_slice())
            .collect();
        if xs.is_empty() {
            return Err(Error::EmptyClass(c));
        }
        clf.set_prototype(c, &mean_feature(model, &xs)?)?;
    }
    Ok(())
}

/// Trains backbone and base prototypes on the base session, then seeds the
/// exemplar buffer. With `base_epochs == 0` the backbone is returned as given.
pub fn run_base_session(
    model: Backbone,
    task: &SyntheticTask,
    cfg: &TrainConfig,
) -> Result<LearnerState> {
    cfg.validate()?;
    let base = task.base();
    let seed = task.spec.seed;
    if model.input_dim() != task.spec.input_dim {
        return Err(Error::Shape(format!(
            "backbone input {} vs task input {}",
            model.input_dim(),
            task.spec.input_dim
        )));
    }
    let mut model = model;
    let mut clf = PrototypeClassifier::new(cfg.temperature)?;
    init_prototypes(&model, &mut clf, base)?;

    let trainable = TrainableSet::all_dense(&model, base.classes.iter().copied());
    let mut order: Vec<usize> = (0..base.train.len()).collect();
    let mut g = rng::stream(seed, rng::STREAM_BASE_SHUFFLE);
    for epoch in 0..cfg.base_epochs {
        order.shuffle(&mut g);
        let mut total = 0.0;
        let mut steps = 0;
        for chunk in order.chunks(cfg.base_batch_size) {
            let batch: Vec<Sample> = chunk.iter().map(|&i| base.train[i].clone()).collect();
            let (loss, tape) = loss_and_grads(&model, &clf, &batch, &trainable)?;
            apply_update(&mut model, &mut clf, &tape, cfg.base_lr, cfg.base_lr)?;
            total += loss;
            steps += 1;
        }
        debug!("base epoch {epoch}: mean loss {:.4}", total / steps as f64);
    }

    let buffer = CovarianceBuffer::new(seed).update(&base.train_by_class())?;
    let base_classes: BTreeSet<ClassId> = base.classes.iter().copied().collect();
    let (acc_all, acc_base, _) = evaluate(&model, &clf, &base.test, &base_classes)?;
    let record = SessionRecord {
        session: 0,
        acc_all,
        acc_base,
        acc_novel: None,
    };
    info!("session 0: acc {acc_all:.4}");
    Ok(LearnerState {
        base_shapes: model.layer_shapes(),
        base_params: model.param_count(),
        base_multiplies: model.multiply_count(),
        model,
        classifier: clf,
        buffer,
        base_classes,
        seen_test: base.test.clone(),
        session: 0,
        history: vec![record],
        seed,
        static_layers: None,
    })
}

/// Installs the strategy's adapters for session `t` and returns the ASR
/// report when one was computed.
fn prepare_adapters(
    state: &mut LearnerState,
    strategy: Strategy,
    cfg: &TrainConfig,
    t: usize,
) -> Result<Option<AsrReport>> {
    let adapters: Vec<DecomposedLayer>;
    let report;
    match strategy {
        Strategy::Freeze | Strategy::FullAdapt => return Ok(None),
        Strategy::KpdStatic if state.static_layers.is_some() => {
            adapters = state.static_layers.clone().unwrap_or_default();
            report = None;
        }
        Strategy::Ckpd | Strategy::KpdStatic => {
            let (r, layers) =
                session_selection(&state.model, &state.buffer, &cfg.kpd, cfg.k_layers, t)?;
            adapters = layers;
            report = Some(r);
        }
        Strategy::LoraRandom | Strategy::SvdPlain => {
            let (r, _) =
                session_selection(&state.model, &state.buffer, &cfg.kpd, cfg.k_layers, t)?;
            let mut out = Vec::with_capacity(r.selected.len());
            for &l in &r.selected {
                let w = state.model.weight(l);
                let d = if strategy == Strategy::LoraRandom {
                    lora_random(&w, cfg.kpd.rank_r, rng::mix(&[state.seed, t as u64, l as u64]))?
                } else {
                    decompose_plain(&w, &cfg.kpd)?
                };
                out.push(d.with_layer_id(l));
            }
            adapters = out;
            report = Some(r);
        }
    }
    let ids: Vec<LayerId> = adapters.iter().map(|d| d.layer_id).collect();
    debug!("session {t}: adapting layers {ids:?}");
    for d in adapters {
        state.model.install(d)?;
    }
    Ok(report)
}

/// Batch for step `it` of session `t`: every current-session sample plus
/// the whole buffer, or a seeded subsample of `rehearsal_batch_size`
/// exemplars when the buffer is larger.
pub fn training_batch(
    session: &SessionData,
    buffer: &CovarianceBuffer,
    cfg: &TrainConfig,
    seed: u64,
    it: usize,
) -> Vec<Sample> {
    let all = buffer.exemplars();
    let cap = cfg.rehearsal_batch_size;
    let pick: Vec<usize> = if all.len() <= cap {
        (0..all.len()).collect()
    } else {
        let mut g = rng::stream(
            rng::mix(&[seed, session.session as u64, it as u64]),
            rng::STREAM_REHEARSAL,
        );
        rand::seq::index::sample(&mut g, all.len(), cap).into_vec()
    };
    let mut batch = session.train.clone();
    batch.extend(pick.into_iter().map(|i| Sample {
        input: all[i].input.clone(),
        label: all[i].class_id,
    }));
    batch
}

/// One incremental session: select and decompose, train adapters and new
/// prototypes with rehearsal, merge, verify the architecture, extend the
/// buffer, evaluate.
pub fn run_incremental_session(
    state: &mut LearnerState,
    session: &SessionData,
    strategy: Strategy,
    cfg: &TrainConfig,
    probe: Option<&ProbeRequest>,
) -> Result<SessionOutcome> {
    cfg.validate()?;
    let t = state.session + 1;
    if session.session != t {
        return Err(Error::InvalidConfig(format!(
            "expected data for session {t}, got session {}",
            session.session
        )));
    }
    if let Some(c) = session.classes.iter().find(|c| state.classifier.prototype(**c).is_some()) {
        return Err(Error::DuplicateClass(*c));
    }

    let asr_report = prepare_adapters(state, strategy, cfg, t)?;
    init_prototypes(&state.model, &mut state.classifier, session)?;

    let trainable = match strategy {
        Strategy::FullAdapt => {
            TrainableSet::all_dense(&state.model, session.classes.iter().copied())
        }
        _ => TrainableSet::adapters_only(session.classes.iter().copied()),
    };
    let lr_w = if strategy == Strategy::Freeze { 0.0 } else { cfg.lr_adapter() };
    for it in 0..cfg.iterations {
        let batch = training_batch(session, &state.buffer, cfg, state.seed, it);
        let (loss, tape) = loss_and_grads(&state.model, &state.classifier, &batch, &trainable)?;
        if !loss.is_finite() {
            return Err(Error::NumericalFailure(format!(
                "loss became {loss} at iteration {it} of session {t}"
            )));
        }
        apply_update(&mut state.model, &mut state.classifier, &tape, lr_w, cfg.lr_clf)?;
        if it % 50 == 0 {
            debug!("session {t} iter {it}: loss {loss:.4}");
        }
    }

    state.seen_test.extend(session.test.iter().cloned());
    let probe = match probe {
        Some(p) if p.session == t => {
            let (clean_base, clean_novel) = dropout_probe(state, 0.0, &state.seen_test, p.mask_seed)?;
            let (base_acc, novel_acc) = dropout_probe(state, p.rate, &state.seen_test, p.mask_seed)?;
            Some(ProbeOutcome {
                session: t,
                rate: p.rate,
                clean_base,
                clean_novel,
                base_acc,
                novel_acc,
            })
        }
        _ => None,
    };

    let merged = state.model.merge_all();
    if strategy == Strategy::KpdStatic {
        state.static_layers = Some(merged);
    }
    state.check_zero_overhead()?;
    state.buffer = state.buffer.update(&session.train_by_class())?;
    state.session = t;

    let (acc_all, acc_base, acc_novel) =
        evaluate(&state.model, &state.classifier, &state.seen_test, &state.base_classes)?;
    let record = SessionRecord {
        session: t,
        acc_all,
        acc_base,
        acc_novel: Some(acc_novel),
    };
    info!("session {t} ({strategy}): acc {acc_all:.4} base {acc_base:.4} novel {acc_novel:.4}");
    state.history.push(record.clone());
    Ok(SessionOutcome {
        record,
        asr_report,
        probe,
        backbone_hash: state.model.content_hash(),
    })
}

fn fraction(hit: usize, n: usize) -> f64 {
    if n == 0 {
        f64::NAN
    } else {
        hit as f64 / n as f64
    }
}

/// Micro-averaged `(all, base, novel)` accuracy; `novel` is NaN when `test`
/// holds no novel sample.
pub fn evaluate(
    model: &Backbone,
    clf: &PrototypeClassifier,
    test: &[Sample],
    base_classes: &BTreeSet<ClassId>,
) -> Result<(f64, f64, f64)> {
    evaluate_with(test, base_classes, |_, x| {
        Ok(clf.classify(&model.forward(x)?.feature)?.0)
    })
}

fn evaluate_with(
    test: &[Sample],
    base_classes: &BTreeSet<ClassId>,
    mut predict: impl FnMut(usize, &[f64]) -> Result<ClassId>,
) -> Result<(f64, f64, f64)> {
    let (mut hit, mut hit_b, mut n_b, mut hit_n, mut n_n) = (0, 0, 0, 0, 0);
    for (i, s) in test.iter().enumerate() {
        let ok = predict(i, &s.input)? == s.label;
        hit += ok as usize;
        if base_classes.contains(&s.label) {
            n_b += 1;
            hit_b += ok as usize;
        } else {
            n_n += 1;
            hit_n += ok as usize;
        }
    }
    Ok((fraction(hit, test.len()), fraction(hit_b, n_b), fraction(hit_n, n_n)))
}

/// Base and novel accuracy on `eval` when each coordinate of every adapter
/// output is zeroed with probability `rate` (no rescaling). Masks depend only
/// on `(mask_seed, sample index, layer id)`, so two models probed with the
/// same seed see identical masks. Models without adapters are evaluated as is.
pub fn dropout_probe(
    state: &LearnerState,
    rate: f64,
    eval: &[Sample],
    mask_seed: u64,
) -> Result<(f64, f64)> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::InvalidRate(rate));
    }
    let (_, base, novel) = evaluate_with(eval, &state.base_classes, |i, x| {
        let mut mask = |l: LayerId, out: &mut [f64]| {
            let mut g = rng::stream(rng::mix(&[mask_seed, i as u64, l as u64]), rng::STREAM_DROPOUT);
            for v in out.iter_mut() {
                if g.random::<f64>() < rate {
                    *v = 0.0;
                }
            }
        };
        let f = state.model.forward_with_adapter_mask(x, &mut mask)?.feature;
        Ok(state.classifier.classify(&f)?.0)
    })?;
    Ok((base, novel))
}

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::{adam_step, AdamHyper, AdamState};
use super::batch::{make_batches, pad_batch, Batch, Example};
use super::config::{LossKind, ModelConfig, TrainConfig};
use super::layers::{forward, Bound, Mode};
use super::loss::{class_weights, focal_loss, weighted_bce, LossWeights};
use super::model::Model;
use crate::autodiff::{Graph, Var};
use crate::doc::ClassSchema;
use crate::error::{Error, Result};
use crate::features::augment;
use crate::metrics::{EvalReport, Split, Tally};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    /// Class-averaged body F1 on the validation split.
    pub val_body_f1: Option<f64>,
    pub improved: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    /// Snapshot with the lowest validation loss.
    pub model: Model,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub weights: LossWeights,
}

/// Tracks the best validation loss; signals a stop after `patience`
/// consecutive epochs without strict improvement.
#[derive(Debug, Clone, PartialEq)]
pub struct EarlyStopping {
    patience: usize,
    best: f64,
    best_epoch: usize,
    since_best: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping {
            patience,
            best: f64::INFINITY,
            best_epoch: 0,
            since_best: 0,
        }
    }

    /// Returns whether `loss` is a new best.
    pub fn observe(&mut self, epoch: usize, loss: f64) -> bool {
        if loss < self.best {
            self.best = loss;
            self.best_epoch = epoch;
            self.since_best = 0;
            true
        } else {
            self.since_best += 1;
            false
        }
    }

    pub fn should_stop(&self) -> bool {
        self.since_best >= self.patience
    }

    pub fn best(&self) -> (usize, f64) {
        (self.best_epoch, self.best)
    }
}

fn batch_loss<'g>(
    probs: Var<'g>,
    batch: &Batch,
    weights: &LossWeights,
    cfg: &TrainConfig,
) -> Result<Var<'g>> {
    match cfg.loss {
        LossKind::Bce => weighted_bce(probs, &batch.labels, &batch.mask, weights),
        LossKind::Focal => focal_loss(probs, &batch.labels, &batch.mask, weights, cfg.focal_gamma),
    }
}

/// Mean loss over all rows of all batches, dropout off.
pub fn dataset_loss(
    model: &Model,
    batches: &[Batch],
    weights: &LossWeights,
    cfg: &TrainConfig,
) -> Result<f64> {
    let mut num = 0.0;
    let mut den = 0.0;
    for batch in batches {
        let g = Graph::new();
        let p = Bound::new(&g, model);
        let probs = forward(&g, &p, &model.config, batch, Mode::Eval)?;
        let d = weights.denominator(&batch.mask);
        num += batch_loss(probs, batch, weights, cfg)?.value().item() * d;
        den += d;
    }
    Ok(num / den)
}

fn require_labels(examples: &[Example], what: &str) -> Result<()> {
    if examples.is_empty() {
        return Err(Error::invalid(format!("{what} split is empty")));
    }
    if let Some(i) = examples.iter().position(|e| e.labels.is_none() || e.is_empty()) {
        return Err(Error::invalid(format!(
            "{what} example {i} is empty or unlabeled"
        )));
    }
    Ok(())
}

pub fn train(
    train_set: &[Example],
    val_set: &[Example],
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    schema: &ClassSchema,
) -> Result<TrainOutcome> {
    train_with(train_set, val_set, model_cfg, cfg, schema, |_| {})
}

/// [`train`] with a callback after every epoch.
pub fn train_with(
    train_set: &[Example],
    val_set: &[Example],
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    schema: &ClassSchema,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    model_cfg.validate()?;
    cfg.validate()?;
    if model_cfg.class_count != schema.class_count() {
        return Err(Error::Config(format!(
            "model has {} classes, schema {}",
            model_cfg.class_count,
            schema.class_count()
        )));
    }
    require_labels(train_set, "training")?;
    require_labels(val_set, "validation")?;
    if let Some(e) = train_set
        .iter()
        .chain(val_set)
        .find(|e| e.graph.n_neighbors() != model_cfg.n_neighbors)
    {
        return Err(Error::Config(format!(
            "examples built with {} neighbors, model expects {}",
            e.graph.n_neighbors(),
            model_cfg.n_neighbors
        )));
    }
    let c = model_cfg.class_count;
    let active = cfg.targets.active(schema);
    let weights = LossWeights {
        class_weights: class_weights(train_set.iter().filter_map(|e| e.labels.as_ref()), c),
        active: active.clone(),
    };
    let hyper = AdamHyper {
        learning_rate: cfg.learning_rate,
        beta1: cfg.beta1,
        beta2: cfg.beta2,
        epsilon: cfg.epsilon,
    };

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = Model::init(model_cfg.clone(), rng.random())?;
    let mut adam = AdamState::new(&model.params);
    let val_order: Vec<usize> = (0..val_set.len()).collect();
    let val_batches = make_batches(val_set, &val_order, cfg.batch_size, c)?;

    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut best = model.clone();
    let mut history = Vec::new();
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut num = 0.0;
        let mut den = 0.0;
        for (step, idx) in order.chunks(cfg.batch_size).enumerate() {
            let group: Vec<&Example> = idx.iter().map(|&i| &train_set[i]).collect();
            let augmented: Option<Vec<_>> = cfg.augment.then(|| {
                group
                    .iter()
                    .map(|e| augment(&e.rows, rng.random()))
                    .collect()
            });
            let batch = pad_batch(&group, augmented.as_deref(), c)?;
            let g = Graph::new();
            let p = Bound::new(&g, &model);
            let probs = forward(&g, &p, model_cfg, &batch, Mode::Train { seed: rng.random() })?;
            let loss = batch_loss(probs, &batch, &weights, cfg)?;
            let value = loss.value().item();
            if !value.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    step,
                    loss: value,
                });
            }
            let grads = g.backward(loss)?;
            let grads: Vec<_> = p.vars().iter().map(|&v| grads.get_or_zeros(v)).collect();
            adam_step(&mut model.params, &grads, &mut adam, hyper)?;
            let d = weights.denominator(&batch.mask);
            num += value * d;
            den += d;
        }
        if !model.is_finite() {
            return Err(Error::Divergence {
                epoch,
                step: order.len().div_ceil(cfg.batch_size),
                loss: f64::NAN,
            });
        }
        let val_loss = dataset_loss(&model, &val_batches, &weights, cfg)?;
        if !val_loss.is_finite() {
            return Err(Error::Divergence {
                epoch,
                step: 0,
                loss: val_loss,
            });
        }
        let report = evaluate_batches(&model, val_set, &val_batches, schema, &active, Split::Adaptation)?;
        let improved = stopper.observe(epoch, val_loss);
        if improved {
            best = model.clone();
        }
        let record = EpochRecord {
            epoch,
            train_loss: num / den,
            val_loss,
            val_body_f1: report.body_f1.map(|s| s.value),
            improved,
        };
        on_epoch(&record);
        history.push(record);
        if stopper.should_stop() {
            break;
        }
    }
    let (best_epoch, best_val_loss) = stopper.best();
    Ok(TrainOutcome {
        model: best,
        history,
        best_epoch,
        best_val_loss,
        weights,
    })
}

/// Per-example probabilities, `rows x class_count` in sequence order.
pub fn predict(model: &Model, examples: &[Example], batch_size: usize) -> Result<Vec<Vec<f64>>> {
    let order: Vec<usize> = (0..examples.len()).collect();
    let batches = make_batches(examples, &order, batch_size, model.config.class_count)?;
    predict_batches(model, &batches)
}

fn predict_batches(model: &Model, batches: &[Batch]) -> Result<Vec<Vec<f64>>> {
    let c = model.config.class_count;
    let mut out = Vec::new();
    for batch in batches {
        let g = Graph::new();
        let p = Bound::new(&g, model);
        let probs = forward(&g, &p, &model.config, batch, Mode::Eval)?.value();
        for (b, &len) in batch.lengths.iter().enumerate() {
            let start = b * batch.len * c;
            out.push(probs.data()[start..start + len * c].to_vec());
        }
    }
    Ok(out)
}

fn evaluate_batches(
    model: &Model,
    examples: &[Example],
    batches: &[Batch],
    schema: &ClassSchema,
    active: &[bool],
    split: Split,
) -> Result<EvalReport> {
    let probs = predict_batches(model, batches)?;
    let mut tally = Tally::new(schema.class_count());
    for (ex, p) in examples.iter().zip(&probs) {
        let labels = ex
            .labels
            .as_ref()
            .ok_or_else(|| Error::invalid("cannot evaluate unlabeled examples"))?;
        tally.add(p, labels)?;
    }
    EvalReport::from_tally(&tally, schema, active, split)
}

/// Scores `model` on a labeled split; padded rows never reach the counts.
pub fn evaluate(
    model: &Model,
    examples: &[Example],
    schema: &ClassSchema,
    active: &[bool],
    split: Split,
    batch_size: usize,
) -> Result<EvalReport> {
    let order: Vec<usize> = (0..examples.len()).collect();
    let batches = make_batches(examples, &order, batch_size, model.config.class_count)?;
    evaluate_batches(model, examples, &batches, schema, active, split)
}

//! Per-class logistic regression over the network's feature rows, optionally
//! widened with the rows of the `k` nearest neighbors on each edge.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::doc::{ClassSchema, LabelMatrix};
use crate::error::{Error, Result};
use crate::features::{FeatureRow, FEATURE_DIM};
use crate::geometry::{Edge, NeighborGraph};
use crate::metrics::{EvalReport, Split, Tally};
use crate::network::adam::{adam_step, AdamHyper, AdamState};
use crate::network::loss::class_weights;
use crate::network::{Example, Param};

pub const DEFAULT_L2: f64 = 1e-4;
/// Columns whose training spread is below this are left unscaled.
const MIN_SCALE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineConfig {
    pub k_neighbors: usize,
    pub l2: f64,
    pub epochs: usize,
    pub learning_rate: f64,
    /// Pages per update.
    pub batch_size: usize,
    /// Stop once the epoch loss changes by at most this much (relative).
    pub tolerance: f64,
    pub seed: u64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        BaselineConfig {
            k_neighbors: 1,
            l2: DEFAULT_L2,
            epochs: 30,
            learning_rate: 1e-2,
            batch_size: 4,
            tolerance: 1e-6,
            seed: 0,
        }
    }
}

impl BaselineConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.l2 >= 0.0 && self.l2.is_finite()) {
            return Err(Error::Config(format!("l2 must be finite and >= 0, got {}", self.l2)));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.tolerance >= 0.0) {
            return Err(Error::Config("tolerance must be >= 0".into()));
        }
        Ok(())
    }
}

pub fn design_width(k: usize) -> usize {
    FEATURE_DIM * (1 + 4 * k)
}

fn design_from_values(values: &[f64], graph: &NeighborGraph, k: usize) -> Result<Vec<f64>> {
    let n = values.len() / FEATURE_DIM;
    if k > graph.n_neighbors() {
        return Err(Error::invalid(format!(
            "baseline wants {k} neighbors per edge, graph holds {}",
            graph.n_neighbors()
        )));
    }
    if k > 0 && graph.node_count() != Some(n) {
        return Err(Error::invalid(format!(
            "graph covers {:?} boxes, feature rows {n}",
            graph.node_count()
        )));
    }
    let width = design_width(k);
    let mut out = vec![0.0; n * width];
    for i in 0..n {
        let row = &mut out[i * width..(i + 1) * width];
        row[..FEATURE_DIM].copy_from_slice(&values[i * FEATURE_DIM..(i + 1) * FEATURE_DIM]);
        for (e, edge) in Edge::ALL.into_iter().enumerate() {
            for (r, slot) in graph.neighbors(i, edge)[..k].iter().enumerate() {
                if let Some(j) = *slot {
                    let at = (1 + e * k + r) * FEATURE_DIM;
                    row[at..at + FEATURE_DIM]
                        .copy_from_slice(&values[j * FEATURE_DIM..(j + 1) * FEATURE_DIM]);
                }
            }
        }
    }
    Ok(out)
}

fn row_values(rows: &[FeatureRow]) -> Vec<f64> {
    rows.iter().flat_map(FeatureRow::values).collect()
}

/// `[n, 237 * (1 + 4k)]`: each row is the box's own features followed by
/// its neighbors' rows, edge-major (left, top, right, bottom), nearest
/// first, zeros where a neighbor is missing.
pub fn build_design_matrix(rows: &[FeatureRow], graph: &NeighborGraph, k: usize) -> Result<Tensor> {
    let data = design_from_values(&row_values(rows), graph, k)?;
    Tensor::new([rows.len(), design_width(k)], data)
}

/// Independent logistic regressions sharing one standardization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineModel {
    pub k_neighbors: usize,
    pub class_count: usize,
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
    /// `width x class_count`, row-major, acting on standardized columns.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub class_weights: Vec<f64>,
    pub epochs_run: usize,
    pub final_loss: f64,
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

impl BaselineModel {
    pub fn width(&self) -> usize {
        self.mean.len()
    }

    fn logits(&self, design: &[f64]) -> Vec<f64> {
        let (d, c) = (self.width(), self.class_count);
        let n = design.len() / d;
        let mut z = Vec::with_capacity(n * c);
        let mut x = vec![0.0; d];
        for row in design.chunks_exact(d) {
            for ((xi, v), (m, s)) in x.iter_mut().zip(row).zip(self.mean.iter().zip(&self.scale)) {
                *xi = (v - m) / s;
            }
            let mut acc = self.bias.clone();
            for (xi, w) in x.iter().zip(self.weights.chunks_exact(c)) {
                for (a, wc) in acc.iter_mut().zip(w) {
                    *a += xi * wc;
                }
            }
            z.extend(acc);
        }
        z
    }

    /// Probabilities for a raw (unstandardized) design matrix, `n x C`.
    pub fn predict_design(&self, design: &[f64]) -> Result<Vec<f64>> {
        if !design.len().is_multiple_of(self.width()) {
            return Err(Error::invalid(format!(
                "design of {} values is not a multiple of width {}",
                design.len(),
                self.width()
            )));
        }
        Ok(self.logits(design).into_iter().map(sigmoid).collect())
    }

    /// Per-box probabilities in the example's sequence order.
    pub fn predict(&self, example: &Example) -> Result<Vec<f64>> {
        let design = design_from_values(&row_values(&example.rows), &example.graph, self.k_neighbors)?;
        self.predict_design(&design)
    }
}

/// Fits `C` independent logistic regressions with Adam on mini-batches of
/// blocks. `block(i)` yields the raw design rows of block `i`, whose labels
/// are `labels[i]`. Positive labels are weighted by `class_weights`.
pub fn fit_logistic(
    block: &dyn Fn(usize) -> Result<Vec<f64>>,
    labels: &[&LabelMatrix],
    width: usize,
    class_weights: &[f64],
    k_neighbors: usize,
    cfg: &BaselineConfig,
) -> Result<BaselineModel> {
    cfg.validate()?;
    let c = class_weights.len();
    let rows: usize = labels.iter().map(|l| l.rows()).sum();
    if rows == 0 {
        return Err(Error::invalid("baseline training needs at least one box"));
    }
    if labels.iter().any(|l| l.class_count() != c) {
        return Err(Error::invalid("label matrices disagree with the class count"));
    }

    let mut sum = vec![0.0; width];
    let mut sq = vec![0.0; width];
    for i in 0..labels.len() {
        let d = block(i)?;
        for row in d.chunks_exact(width) {
            for ((s, q), v) in sum.iter_mut().zip(sq.iter_mut()).zip(row) {
                *s += v;
                *q += v * v;
            }
        }
    }
    let n = rows as f64;
    let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
    let scale: Vec<f64> = sq
        .iter()
        .zip(&mean)
        .map(|(q, m)| {
            let var = (q / n - m * m).max(0.0);
            let sd = var.sqrt();
            if sd < MIN_SCALE {
                1.0
            } else {
                sd
            }
        })
        .collect();

    let mut model = BaselineModel {
        k_neighbors,
        class_count: c,
        mean,
        scale,
        weights: vec![0.0; width * c],
        bias: vec![0.0; c],
        class_weights: class_weights.to_vec(),
        epochs_run: 0,
        final_loss: f64::NAN,
    };
    let mut params = vec![
        Param {
            name: "w".into(),
            value: Tensor::zeros([width, c]),
        },
        Param {
            name: "b".into(),
            value: Tensor::zeros([c]),
        },
    ];
    let mut state = AdamState::new(&params);
    let hyper = AdamHyper {
        learning_rate: cfg.learning_rate,
        ..AdamHyper::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..labels.len()).collect();
    let mut previous: Option<f64> = None;
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let mut gw = vec![0.0; width * c];
            let mut gb = vec![0.0; c];
            let mut count = 0usize;
            let mut x = vec![0.0; width];
            for &bi in chunk {
                let design = block(bi)?;
                let z = model.logits(&design);
                let l = labels[bi];
                for (r, row) in design.chunks_exact(width).enumerate() {
                    for ((xi, v), (m, s)) in x.iter_mut().zip(row).zip(model.mean.iter().zip(&model.scale)) {
                        *xi = (v - m) / s;
                    }
                    let mut g = vec![0.0; c];
                    for k in 0..c {
                        let y = l.get(r, k);
                        let zk = z[r * c + k];
                        let w = if y { class_weights[k] } else { 1.0 };
                        // ln(1 + e^-|z|) keeps the loss finite for large logits.
                        let softplus = (-zk.abs()).exp().ln_1p();
                        let nll = if y { softplus + (-zk).max(0.0) } else { softplus + zk.max(0.0) };
                        epoch_loss += w * nll;
                        g[k] = w * (sigmoid(zk) - f64::from(u8::from(y)));
                        gb[k] += g[k];
                    }
                    for (xi, gwr) in x.iter().zip(gw.chunks_exact_mut(c)) {
                        for (a, gk) in gwr.iter_mut().zip(&g) {
                            *a += xi * gk;
                        }
                    }
                }
                count += l.rows();
            }
            if count == 0 {
                continue;
            }
            let inv = 1.0 / count as f64;
            for (g, w) in gw.iter_mut().zip(&model.weights) {
                *g = *g * inv + cfg.l2 * w;
            }
            gb.iter_mut().for_each(|g| *g *= inv);
            let grads = [Tensor::new([width, c], gw)?, Tensor::new([c], gb)?];
            adam_step(&mut params, &grads, &mut state, hyper)?;
            model.weights.copy_from_slice(params[0].value.data());
            model.bias.copy_from_slice(params[1].value.data());
            step += 1;
        }
        let loss = epoch_loss / n;
        if !loss.is_finite() || model.weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::Divergence { epoch, step, loss });
        }
        model.epochs_run = epoch + 1;
        model.final_loss = loss;
        if let Some(p) = previous {
            if (p - loss).abs() <= cfg.tolerance * p.abs().max(1.0) {
                break;
            }
        }
        previous = Some(loss);
    }
    Ok(model)
}

/// Trains on labeled examples using the network's class-weighting scheme.
pub fn train_baseline(examples: &[Example], class_count: usize, cfg: &BaselineConfig) -> Result<BaselineModel> {
    let labels: Vec<&LabelMatrix> = examples
        .iter()
        .map(|e| {
            e.labels
                .as_ref()
                .ok_or_else(|| Error::invalid("baseline training needs labeled examples"))
        })
        .collect::<Result<_>>()?;
    if let Some(l) = labels.iter().find(|l| l.class_count() != class_count) {
        return Err(Error::invalid(format!(
            "labels have {} classes, expected {class_count}",
            l.class_count()
        )));
    }
    let weights = class_weights(labels.iter().copied(), class_count);
    let values: Vec<Vec<f64>> = examples.iter().map(|e| row_values(&e.rows)).collect();
    let k = cfg.k_neighbors;
    let block = |i: usize| design_from_values(&values[i], &examples[i].graph, k);
    fit_logistic(&block, &labels, design_width(k), &weights, k, cfg)
}

/// Scores the baseline through the same tally as the network.
pub fn evaluate_baseline(
    model: &BaselineModel,
    examples: &[Example],
    schema: &ClassSchema,
    active: &[bool],
    split: Split,
) -> Result<EvalReport> {
    let mut tally = Tally::new(schema.class_count());
    for ex in examples {
        let labels = ex
            .labels
            .as_ref()
            .ok_or_else(|| Error::invalid("cannot evaluate unlabeled examples"))?;
        tally.add(&model.predict(ex)?, labels)?;
    }
    EvalReport::from_tally(&tally, schema, active, split)
}

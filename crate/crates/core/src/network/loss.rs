use crate::autodiff::{Tensor, Var};
use crate::doc::LabelMatrix;
use crate::error::{Error, Result};

/// Probabilities are clamped to `[PROB_EPS, 1 - PROB_EPS]` before the log.
pub const PROB_EPS: f64 = 1e-12;
pub const CLASS_WEIGHT_MIN: f64 = 1.0;
pub const CLASS_WEIGHT_MAX: f64 = 100.0;

/// `clamp(total / (class_count * positives_c), 1, 100)` per class, counted
/// over every box of every label matrix.
pub fn class_weights<'a>(labels: impl IntoIterator<Item = &'a LabelMatrix>, class_count: usize) -> Vec<f64> {
    let mut total = 0usize;
    let mut positives = vec![0usize; class_count];
    for l in labels {
        total += l.rows();
        for (c, p) in positives.iter_mut().enumerate() {
            *p += l.positives(c);
        }
    }
    positives
        .iter()
        .map(|&p| {
            let w = total as f64 / (class_count * p) as f64;
            if w.is_nan() {
                CLASS_WEIGHT_MIN
            } else {
                w.clamp(CLASS_WEIGHT_MIN, CLASS_WEIGHT_MAX)
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossWeights {
    /// Applied to positive labels only.
    pub class_weights: Vec<f64>,
    /// Classes outside the training targets contribute nothing.
    pub active: Vec<bool>,
}

impl LossWeights {
    pub fn uniform(class_count: usize) -> Self {
        LossWeights {
            class_weights: vec![1.0; class_count],
            active: vec![true; class_count],
        }
    }

    /// `sum(sample_weights) * active classes`: the loss normalizer.
    pub fn denominator(&self, sample_weights: &[f64]) -> f64 {
        let active = self.active.iter().filter(|&&a| a).count();
        sample_weights.iter().sum::<f64>() * active as f64
    }
}

/// Weighted mean of `-(1 - p_t)^gamma ln p_t` over rows and active classes,
/// with `p_t = p` for positive labels and `1 - p` otherwise. `gamma = None`
/// omits the modulating factor entirely.
fn weighted_loss<'g>(
    probs: Var<'g>,
    labels: &Tensor,
    sample_weights: &[f64],
    w: &LossWeights,
    gamma: Option<f64>,
) -> Result<Var<'g>> {
    let shape = probs.shape();
    if labels.shape() != shape.as_slice() {
        return Err(Error::Shape {
            op: "loss",
            lhs: shape,
            rhs: labels.shape().to_vec(),
        });
    }
    let c = *shape.last().unwrap_or(&0);
    if c == 0 || w.class_weights.len() != c || w.active.len() != c {
        return Err(Error::invalid(format!(
            "loss weights cover {} classes, probabilities have {c}",
            w.class_weights.len()
        )));
    }
    if sample_weights.len() * c != labels.len() {
        return Err(Error::invalid(format!(
            "{} sample weights for {} rows",
            sample_weights.len(),
            labels.len() / c
        )));
    }
    if let Some(bad) = labels.data().iter().find(|&&y| y != 0.0 && y != 1.0) {
        return Err(Error::invalid(format!("label {bad} is not 0 or 1")));
    }
    if sample_weights
        .iter()
        .chain(&w.class_weights)
        .any(|&v| !(v >= 0.0 && v.is_finite()))
    {
        return Err(Error::invalid("loss weights must be finite and non-negative"));
    }
    let denom = w.denominator(sample_weights);
    if denom <= 0.0 {
        return Err(Error::invalid("loss has zero total weight"));
    }

    let g = probs.graph();
    let y = labels.data();
    let sign: Vec<f64> = y.iter().map(|&v| 2.0 * v - 1.0).collect();
    let offset: Vec<f64> = y.iter().map(|&v| 1.0 - v).collect();
    let weight: Vec<f64> = y
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let class = i % c;
            let cw = if v == 1.0 { w.class_weights[class] } else { 1.0 };
            let on = if w.active[class] { 1.0 } else { 0.0 };
            sample_weights[i / c] * cw * on
        })
        .collect();
    let constant = |data: Vec<f64>| -> Result<Var<'g>> { Ok(g.constant(Tensor::new(shape.clone(), data)?)) };

    let p = probs.clamp(PROB_EPS, 1.0 - PROB_EPS);
    let p_t = p.mul(constant(sign)?)?.add(constant(offset)?)?;
    let mut terms = p_t.ln();
    if let Some(gamma) = gamma {
        terms = terms.mul(p_t.scale(-1.0).add_scalar(1.0).powf(gamma))?;
    }
    Ok(terms.mul(constant(weight)?)?.sum().scale(-1.0 / denom))
}

/// Class- and sample-weighted binary cross-entropy.
pub fn weighted_bce<'g>(
    probs: Var<'g>,
    labels: &Tensor,
    sample_weights: &[f64],
    w: &LossWeights,
) -> Result<Var<'g>> {
    weighted_loss(probs, labels, sample_weights, w, None)
}

/// Cross-entropy terms scaled by `(1 - p_t)^gamma`, same weighting.
pub fn focal_loss<'g>(
    probs: Var<'g>,
    labels: &Tensor,
    sample_weights: &[f64],
    w: &LossWeights,
    gamma: f64,
) -> Result<Var<'g>> {
    weighted_loss(probs, labels, sample_weights, w, Some(gamma))
}

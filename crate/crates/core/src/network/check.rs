//! Finite-difference checks of every trainable layer and both losses.

use std::rc::Rc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::batch::{pad_batch, Example};
use super::config::ModelConfig;
use super::layers::{
    char_embed, dense, forward, graph_conv, mask_rows, self_attention, seq_conv, AttentionParams,
    Bound, Mode,
};
use super::loss::{focal_loss, weighted_bce, LossWeights};
use super::model::Model;
use crate::autodiff::{grad_check, GradCheckConfig, GradCheckReport, Tensor, Var};
use crate::doc::{Page, Rect, WordBox};
use crate::error::Result;
use crate::features::{ALPHABET_SIZE, MAX_CHARS, PAD};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayerCheck {
    pub layer: String,
    pub max_rel_error: f64,
    pub checked: usize,
    pub passed: bool,
}

impl LayerCheck {
    fn new(layer: &str, r: GradCheckReport) -> Self {
        LayerCheck {
            layer: layer.to_string(),
            max_rel_error: r.max_rel_error,
            checked: r.checked,
            passed: r.passed,
        }
    }
}

struct Draw(ChaCha8Rng);

impl Draw {
    fn tensor(&mut self, shape: &[usize]) -> Tensor {
        let n = shape.iter().product();
        let data = (0..n).map(|_| self.0.random_range(-1.0..1.0)).collect();
        Tensor::new(shape.to_vec(), data).expect("length matches shape")
    }
}

/// Projects onto fixed random weights so every output element matters.
fn project<'g>(x: Var<'g>, seed: u64) -> Result<Var<'g>> {
    let w = Draw(ChaCha8Rng::seed_from_u64(seed)).tensor(&x.shape());
    Ok(x.mul(x.graph().constant(w))?.sum())
}

fn tiny_model_config() -> ModelConfig {
    ModelConfig {
        char_filters: 2,
        hidden_width: 4,
        attention_heads: 2,
        ffn_width: 4,
        seq_conv_kernel: 3,
        class_count: 3,
        ..ModelConfig::default()
    }
}

fn tiny_page(n: usize, seed: u64) -> Page {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let boxes = (0..n)
        .map(|i| {
            let (l, t) = (rng.random_range(0.0..0.8), rng.random_range(0.0..0.9));
            WordBox::new(i, Some(format!("x{}", rng.random_range(0..50))), Rect::new(l, t, l + 0.1, t + 0.02))
        })
        .collect();
    Page::new(1.0, 1.0, boxes).expect("boxes are normalized")
}

/// Runs the check suite with the given tolerance and fault injection.
pub fn layer_grad_checks(config: GradCheckConfig, seed: u64) -> Result<Vec<LayerCheck>> {
    let mut d = Draw(ChaCha8Rng::seed_from_u64(seed));
    let mut out = Vec::new();

    let inputs = [d.tensor(&[2, 3, 4]), d.tensor(&[4, 3]), d.tensor(&[3])];
    let r = grad_check(|_, v| project(dense(v[0], v[1], v[2])?.relu(), 1), &inputs, config)?;
    out.push(LayerCheck::new("dense", r));

    let mut chars = vec![PAD as u8; 2 * MAX_CHARS];
    for c in chars.iter_mut().take(12) {
        *c = d.0.random_range(0..ALPHABET_SIZE as u8);
    }
    let inputs = [d.tensor(&[3 * ALPHABET_SIZE, 3]), d.tensor(&[3])];
    let r = grad_check(|_, v| project(char_embed(&chars, 3, v[0], v[1])?, 2), &inputs, config)?;
    out.push(LayerCheck::new("char_conv", r));

    let neighbors = [None, None, Some(1), None, Some(0), None, Some(2), Some(0), Some(1), Some(0), None, None];
    let inputs = [d.tensor(&[1, 3, 2]), d.tensor(&[10, 3]), d.tensor(&[3])];
    let r = grad_check(
        |_, v| project(graph_conv(v[0], &neighbors, 4, v[1], v[2])?, 3),
        &inputs,
        config,
    )?;
    out.push(LayerCheck::new("graph_conv", r));

    let inputs = [d.tensor(&[2, 4, 2]), d.tensor(&[10, 3]), d.tensor(&[3])];
    let r = grad_check(|_, v| project(seq_conv(v[0], 5, v[1], v[2])?, 4), &inputs, config)?;
    out.push(LayerCheck::new("seq_conv", r));

    let (h, ffn) = (4, 6);
    let mut inputs = vec![d.tensor(&[2, 3, h])];
    for (a, b) in [(h, h), (h, h), (h, h), (h, h), (h, ffn), (ffn, h)] {
        inputs.push(d.tensor(&[a, b]));
        inputs.push(d.tensor(&[b]));
    }
    let mask = [1.0, 1.0, 1.0, 1.0, 1.0, 0.0];
    let r = grad_check(
        |_, v| {
            let p = AttentionParams {
                q: (v[1], v[2]),
                k: (v[3], v[4]),
                v: (v[5], v[6]),
                o: (v[7], v[8]),
                ffn1: (v[9], v[10]),
                ffn2: (v[11], v[12]),
            };
            let y = self_attention(v[0], &mask, 2, &p)?.output;
            project(mask_rows(y, &Rc::new(mask.to_vec()))?, 5)
        },
        &inputs,
        config,
    )?;
    out.push(LayerCheck::new("attention", r));

    let probs = Tensor::new(
        vec![2, 3, 2],
        (0..12).map(|_| d.0.random_range(0.05..0.95)).collect(),
    )?;
    let labels = Tensor::new(vec![2, 3, 2], (0..12).map(|_| f64::from(d.0.random_bool(0.4))).collect())?;
    let sw = [1.0, 1.0, 0.5, 1.0, 1.0, 0.0];
    let w = LossWeights {
        class_weights: vec![3.0, 1.5],
        active: vec![true, true],
    };
    let r = grad_check(|_, v| weighted_bce(v[0], &labels, &sw, &w), std::slice::from_ref(&probs), config)?;
    out.push(LayerCheck::new("bce_loss", r));
    let r = grad_check(|_, v| focal_loss(v[0], &labels, &sw, &w, 2.0), &[probs], config)?;
    out.push(LayerCheck::new("focal_loss", r));

    let cfg = tiny_model_config();
    let model = Model::init(cfg.clone(), seed)?;
    let pages = [tiny_page(4, seed), tiny_page(2, seed.wrapping_add(1))];
    let examples: Vec<Example> = pages
        .iter()
        .map(|p| Example::from_page(p, None, cfg.n_neighbors))
        .collect::<Result<_>>()?;
    let batch = pad_batch(&examples.iter().collect::<Vec<_>>(), None, cfg.class_count)?;
    let names: Vec<String> = model.params.iter().map(|p| p.name.clone()).collect();
    let values: Vec<Tensor> = model.params.iter().map(|p| p.value.clone()).collect();
    let r = grad_check(
        |g, v| {
            let bound = Bound::from_vars(names.clone(), v.to_vec())?;
            let probs = forward(g, &bound, &cfg, &batch, Mode::Eval)?;
            let y = mask_rows(probs, &Rc::new(batch.mask.clone()))?;
            project(y, 6)
        },
        &values,
        config,
    )?;
    out.push(LayerCheck::new("full_model", r));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_layers_pass() {
        let checks = layer_grad_checks(GradCheckConfig::default(), 0).unwrap();
        assert_eq!(checks.len(), 8);
        for c in &checks {
            assert!(c.passed && c.max_rel_error < 1e-4, "{c:?}");
        }
    }

    #[test]
    fn injected_fault_fails_every_layer() {
        let cfg = GradCheckConfig {
            fault: 1e-2,
            ..GradCheckConfig::default()
        };
        for c in layer_grad_checks(cfg, 0).unwrap() {
            assert!(!c.passed, "{c:?}");
        }
    }
}

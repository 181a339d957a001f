use std::rc::Rc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::batch::Batch;
use super::config::ModelConfig;
use super::model::Model;
use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::features::{ALPHABET_SIZE, MAX_CHARS, POSITION_DIM};

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Model parameters registered on a graph.
pub struct Bound<'g> {
    names: Vec<String>,
    vars: Vec<Var<'g>>,
}

impl<'g> Bound<'g> {
    pub fn new(g: &'g Graph, model: &Model) -> Self {
        Bound {
            names: model.params.iter().map(|p| p.name.clone()).collect(),
            vars: model.params.iter().map(|p| g.param(p.value.clone())).collect(),
        }
    }

    /// Binds existing variables under parameter names, e.g. for gradient checks.
    pub fn from_vars(names: Vec<String>, vars: Vec<Var<'g>>) -> Result<Self> {
        if names.len() != vars.len() {
            return Err(Error::invalid(format!("{} names for {} variables", names.len(), vars.len())));
        }
        Ok(Bound { names, vars })
    }

    pub fn get(&self, name: &str) -> Result<Var<'g>> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| self.vars[i])
            .ok_or_else(|| Error::invalid(format!("model has no parameter {name}")))
    }

    pub fn dense(&self, prefix: &str) -> Result<(Var<'g>, Var<'g>)> {
        Ok((self.get(&format!("{prefix}.w"))?, self.get(&format!("{prefix}.b"))?))
    }

    pub fn vars(&self) -> &[Var<'g>] {
        &self.vars
    }
}

/// `x W + b` over the last axis.
pub fn dense<'g>(x: Var<'g>, w: Var<'g>, b: Var<'g>) -> Result<Var<'g>> {
    x.matmul(w)?.add(b)
}

/// Zeroes padded rows; `mask` has one entry per row.
pub fn mask_rows<'g>(x: Var<'g>, mask: &Rc<Vec<f64>>) -> Result<Var<'g>> {
    x.scale_rows(Rc::clone(mask))
}

/// Character convolution with "same" zero padding over the 40 positions,
/// relu, then max over positions. `w` is `[kernel * ALPHABET_SIZE, filters]`
/// with offset-major rows, so the convolution of a one-hot input reduces to
/// gathering one weight row per (position, offset).
pub fn char_embed<'g>(
    chars: &[u8],
    kernel: usize,
    w: Var<'g>,
    b: Var<'g>,
) -> Result<Var<'g>> {
    if !chars.len().is_multiple_of(MAX_CHARS) || kernel == 0 {
        return Err(Error::invalid(format!(
            "char input of length {} is not a multiple of {MAX_CHARS}",
            chars.len()
        )));
    }
    let rows = chars.len() / MAX_CHARS;
    let filters = *w.shape().last().unwrap_or(&0);
    let pad = (kernel - 1) / 2;
    let mut acc: Option<Var<'g>> = None;
    for o in 0..kernel {
        let index: Vec<Option<usize>> = (0..rows * MAX_CHARS)
            .map(|i| {
                let (r, p) = (i / MAX_CHARS, i % MAX_CHARS);
                let src = p + o;
                (src >= pad && src - pad < MAX_CHARS)
                    .then(|| o * ALPHABET_SIZE + chars[r * MAX_CHARS + src - pad] as usize)
            })
            .collect();
        let term = w.gather(&index)?;
        acc = Some(match acc {
            Some(a) => a.add(term)?,
            None => term,
        });
    }
    let pre = acc.expect("kernel >= 1").add(b)?;
    pre.relu().reshape(&[rows, MAX_CHARS, filters])?.max_axis(1)
}

/// Concatenates each row with its neighbor rows (slot order, zero for
/// missing) and applies dense + relu. `neighbors` holds `slots` entries per
/// row of the flattened `[batch * len]` rows.
pub fn graph_conv<'g>(
    x: Var<'g>,
    neighbors: &[Option<usize>],
    slots: usize,
    w: Var<'g>,
    b: Var<'g>,
) -> Result<Var<'g>> {
    let shape = x.shape();
    let width = *shape.last().ok_or_else(|| Error::invalid("graph_conv on a scalar"))?;
    let rows = x.value().len() / width.max(1);
    if neighbors.len() != rows * slots {
        return Err(Error::invalid(format!(
            "graph has {} slots for {rows} rows x {slots}",
            neighbors.len()
        )));
    }
    let mut index = Vec::with_capacity(rows * (1 + slots));
    for r in 0..rows {
        index.push(Some(r));
        index.extend_from_slice(&neighbors[r * slots..(r + 1) * slots]);
    }
    let gathered = x.reshape(&[rows, width])?.gather(&index)?;
    let mut out_shape = shape.clone();
    *out_shape.last_mut().expect("rank >= 1") = (1 + slots) * width;
    Ok(dense(gathered.reshape(&out_shape)?, w, b)?.relu())
}

/// 1-D convolution along the sequence axis of `[batch, len, width]`.
pub fn seq_conv<'g>(x: Var<'g>, kernel: usize, w: Var<'g>, b: Var<'g>) -> Result<Var<'g>> {
    Ok(dense(x.unfold(kernel)?, w, b)?.relu())
}

pub struct AttentionParams<'g> {
    pub q: (Var<'g>, Var<'g>),
    pub k: (Var<'g>, Var<'g>),
    pub v: (Var<'g>, Var<'g>),
    pub o: (Var<'g>, Var<'g>),
    pub ffn1: (Var<'g>, Var<'g>),
    pub ffn2: (Var<'g>, Var<'g>),
}

impl<'g> AttentionParams<'g> {
    pub fn from_bound(p: &Bound<'g>) -> Result<Self> {
        Ok(AttentionParams {
            q: p.dense("attn.q")?,
            k: p.dense("attn.k")?,
            v: p.dense("attn.v")?,
            o: p.dense("attn.o")?,
            ffn1: p.dense("ffn.1")?,
            ffn2: p.dense("ffn.2")?,
        })
    }
}

pub struct AttentionOutput<'g> {
    pub output: Var<'g>,
    /// `[batch, heads, len, len]`, rows over keys.
    pub weights: Var<'g>,
}

/// Multi-head scaled dot-product self-attention over `[batch, len, width]`
/// with padded keys masked out, followed by residual + layer norm, a
/// position-wise feed-forward block, and another residual + layer norm.
pub fn self_attention<'g>(
    x: Var<'g>,
    mask: &[f64],
    heads: usize,
    p: &AttentionParams<'g>,
) -> Result<AttentionOutput<'g>> {
    let shape = x.shape();
    let [b, l, h] = shape[..] else {
        return Err(Error::invalid(format!("attention expects rank 3, got {shape:?}")));
    };
    if heads == 0 || h % heads != 0 || mask.len() != b * l {
        return Err(Error::invalid(format!(
            "attention: width {h}, heads {heads}, mask {} for {b}x{l}",
            mask.len()
        )));
    }
    let dh = h / heads;
    let split = |v: Var<'g>, perm: &[usize]| -> Result<Var<'g>> {
        v.reshape(&[b, l, heads, dh])?.transpose(perm)
    };
    let q = split(dense(x, p.q.0, p.q.1)?, &[0, 2, 1, 3])?;
    let k = split(dense(x, p.k.0, p.k.1)?, &[0, 2, 3, 1])?;
    let v = split(dense(x, p.v.0, p.v.1)?, &[0, 2, 1, 3])?;
    let scores = q.matmul(k)?.scale(1.0 / (dh as f64).sqrt());
    let mut keep = Vec::with_capacity(b * heads * l * l);
    for bi in 0..b {
        for _ in 0..heads * l {
            keep.extend(mask[bi * l..(bi + 1) * l].iter().map(|&m| m > 0.0));
        }
    }
    let weights = scores
        .softmax(Some(&keep))
        .map_err(|_| Error::invalid("attention over a fully padded sequence"))?;
    let ctx = weights
        .matmul(v)?
        .transpose(&[0, 2, 1, 3])?
        .reshape(&[b, l, h])?;
    let attended = dense(ctx, p.o.0, p.o.1)?;
    let x1 = x.add(attended)?.layer_norm(LAYER_NORM_EPS);
    let ff = dense(dense(x1, p.ffn1.0, p.ffn1.1)?.relu(), p.ffn2.0, p.ffn2.1)?;
    Ok(AttentionOutput {
        output: x1.add(ff)?.layer_norm(LAYER_NORM_EPS),
        weights,
    })
}

/// Inverted dropout: surviving entries are scaled by `1 / (1 - rate)`.
pub fn dropout<'g>(x: Var<'g>, rate: f64, rng: &mut ChaCha8Rng) -> Result<Var<'g>> {
    if rate == 0.0 {
        return Ok(x);
    }
    let keep = 1.0 / (1.0 - rate);
    let n = x.value().len();
    let data = (0..n)
        .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
        .collect();
    let m = x.graph().constant(Tensor::new(x.shape(), data)?);
    x.mul(m)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Eval,
    /// Dropout active, drawn from the given seed.
    Train { seed: u64 },
}

/// Per-box class probabilities `[batch, len, class_count]`.
pub fn forward<'g>(
    g: &'g Graph,
    p: &Bound<'g>,
    cfg: &ModelConfig,
    batch: &Batch,
    mode: Mode,
) -> Result<Var<'g>> {
    if batch.n_neighbors != cfg.n_neighbors {
        return Err(Error::invalid(format!(
            "batch built with {} neighbors, model expects {}",
            batch.n_neighbors, cfg.n_neighbors
        )));
    }
    let (b, l) = (batch.batch, batch.len);
    let mask = Rc::new(batch.mask.clone());
    let features = g.constant(batch.features.clone());
    let mut parts = vec![if cfg.use_text_features {
        features
    } else {
        features.slice(2, 0, POSITION_DIM)?
    }];
    if cfg.use_char_embed {
        let (w, bias) = p.dense("char")?;
        let ce = char_embed(&batch.chars, cfg.char_kernel, w, bias)?;
        parts.push(ce.reshape(&[b, l, cfg.char_filters])?);
    }
    let x = if parts.len() == 1 {
        parts[0]
    } else {
        g.concat(&parts, 2)?
    };
    let (w, bias) = p.dense("input")?;
    let mut x = mask_rows(dense(x, w, bias)?.relu(), &mask)?;

    let (w, bias) = p.dense("graph")?;
    x = mask_rows(
        graph_conv(x, &batch.neighbors, 4 * cfg.n_neighbors, w, bias)?,
        &mask,
    )?;
    if cfg.use_seq_conv {
        let (w, bias) = p.dense("seq")?;
        x = mask_rows(seq_conv(x, cfg.seq_conv_kernel, w, bias)?, &mask)?;
    }
    if cfg.use_attention {
        let ap = AttentionParams::from_bound(p)?;
        x = mask_rows(self_attention(x, &batch.mask, cfg.attention_heads, &ap)?.output, &mask)?;
    }
    if cfg.use_dropout_block {
        let (w, bias) = p.dense("post")?;
        let mut y = dense(x.unfold(cfg.post_conv_kernel)?, w, bias)?;
        if let Mode::Train { seed } = mode {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            y = dropout(y, cfg.dropout_rate, &mut rng)?;
        }
        x = mask_rows(y.relu(), &mask)?;
    }
    let (w, bias) = p.dense("out")?;
    Ok(dense(x, w, bias)?.sigmoid())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{grad_check, GradCheckConfig};
    use crate::features::PAD;
    use crate::network::batch::{pad_batch, Example};
    use crate::network::model::Model;

    fn t(shape: &[usize], data: Vec<f64>) -> Tensor {
        Tensor::new(shape.to_vec(), data).unwrap()
    }

    fn pseudo(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    fn small_cfg() -> ModelConfig {
        ModelConfig {
            char_filters: 4,
            hidden_width: 8,
            attention_heads: 2,
            ffn_width: 8,
            seq_conv_kernel: 3,
            ..Default::default()
        }
    }

    fn example_batch(cfg: &ModelConfig) -> Batch {
        let p = crate::network::batch::tests::page(4);
        let q = crate::network::batch::tests::page(2);
        let a = Example::from_page(&p, None, cfg.n_neighbors).unwrap();
        let b = Example::from_page(&q, None, cfg.n_neighbors).unwrap();
        pad_batch(&[&a, &b], None, cfg.class_count).unwrap()
    }

    fn gc() -> GradCheckConfig {
        GradCheckConfig::default()
    }

    fn weighted<'g>(x: Var<'g>) -> Result<Var<'g>> {
        let n = x.value().len();
        let w = x.graph().constant(t(&x.shape(), pseudo(n, 77)));
        Ok(x.mul(w)?.sum())
    }

    #[test]
    fn char_embed_matches_dense_one_hot_convolution() {
        let mut chars = vec![PAD as u8; 2 * MAX_CHARS];
        for (i, c) in [3u8, 17, 40, 3, 52].iter().enumerate() {
            chars[i] = *c;
        }
        chars[MAX_CHARS] = 9;
        let (k, f) = (3, 5);
        let wd = pseudo(k * ALPHABET_SIZE * f, 1);
        let bd = pseudo(f, 2);
        let g = Graph::new();
        let w = g.constant(t(&[k * ALPHABET_SIZE, f], wd.clone()));
        let b = g.constant(t(&[f], bd.clone()));
        let out = char_embed(&chars, k, w, b).unwrap();
        assert_eq!(out.shape(), vec![2, f]);
        // Oracle: explicit one-hot sequence, explicit window, explicit max.
        for r in 0..2 {
            let onehot = crate::features::CharTensor(chars[r * MAX_CHARS..(r + 1) * MAX_CHARS].try_into().unwrap()).one_hot();
            for fi in 0..f {
                let mut best = f64::NEG_INFINITY;
                for pos in 0..MAX_CHARS {
                    let mut s = bd[fi];
                    for o in 0..k {
                        let src = pos as isize + o as isize - 1;
                        if src < 0 || src >= MAX_CHARS as isize {
                            continue;
                        }
                        for a in 0..ALPHABET_SIZE {
                            s += onehot[src as usize * ALPHABET_SIZE + a] * wd[(o * ALPHABET_SIZE + a) * f + fi];
                        }
                    }
                    best = best.max(s.max(0.0));
                }
                assert!((out.value().data()[r * f + fi] - best).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn all_pad_rows_embed_identically() {
        let chars = vec![PAD as u8; 3 * MAX_CHARS];
        let g = Graph::new();
        let w = g.constant(t(&[3 * ALPHABET_SIZE, 4], pseudo(3 * ALPHABET_SIZE * 4, 5)));
        let b = g.constant(t(&[4], pseudo(4, 6)));
        let out = char_embed(&chars, 3, w, b).unwrap().value();
        assert_eq!(out.data()[0..4], out.data()[4..8]);
        assert_eq!(out.data()[0..4], out.data()[8..12]);
    }

    #[test]
    fn char_embed_is_equivariant_to_box_permutation() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let chars: Vec<u8> = (0..4 * MAX_CHARS).map(|_| rng.random_range(0..ALPHABET_SIZE as u8)).collect();
        let perm = [2usize, 0, 3, 1];
        let permuted: Vec<u8> = perm
            .iter()
            .flat_map(|&r| chars[r * MAX_CHARS..(r + 1) * MAX_CHARS].to_vec())
            .collect();
        let g = Graph::new();
        let w = g.constant(t(&[3 * ALPHABET_SIZE, 4], pseudo(3 * ALPHABET_SIZE * 4, 5)));
        let b = g.constant(t(&[4], pseudo(4, 6)));
        let a = char_embed(&chars, 3, w, b).unwrap().value();
        let c = char_embed(&permuted, 3, w, b).unwrap().value();
        for (i, &r) in perm.iter().enumerate() {
            assert_eq!(c.data()[i * 4..(i + 1) * 4], a.data()[r * 4..(r + 1) * 4]);
        }
    }

    #[test]
    fn graph_conv_three_box_chain_by_hand() {
        // Rows 0 - 1 - 2 in a horizontal chain, width 1, one neighbor per edge.
        // Slots per row: [left, top, right, bottom].
        let neighbors = vec![
            None, None, Some(1), None,
            Some(0), None, Some(2), None,
            Some(1), None, None, None,
        ];
        let g = Graph::new();
        let x = g.constant(t(&[1, 3, 1], vec![1.0, 2.0, 3.0]));
        // Weights for [self, left, top, right, bottom] -> 1 output.
        let w = g.constant(t(&[5, 1], vec![1.0, 10.0, 100.0, -0.5, 7.0]));
        let b = g.constant(t(&[1], vec![0.25]));
        let out = graph_conv(x, &neighbors, 4, w, b).unwrap().value();
        let expected = [
            1.0 - 0.5 * 2.0 + 0.25,
            2.0 + 10.0 * 1.0 - 0.5 * 3.0 + 0.25,
            3.0 + 10.0 * 2.0 + 0.25,
        ];
        assert_eq!(out.data(), expected);
    }

    #[test]
    fn graph_conv_without_neighbors_is_dense() {
        let g = Graph::new();
        let x = g.constant(t(&[1, 3, 2], pseudo(6, 3)));
        let w = g.constant(t(&[2, 3], pseudo(6, 4)));
        let b = g.constant(t(&[3], pseudo(3, 5)));
        let gc = graph_conv(x, &[], 0, w, b).unwrap().value();
        let d = dense(x, w, b).unwrap().relu().value();
        assert_eq!(gc.data(), d.data());
        // All slots missing: same as dense over [self, 0, 0, 0, 0].
        let w5 = g.constant(t(&[10, 3], pseudo(30, 6)));
        let own = graph_conv(x, &[None; 12], 4, w5, b).unwrap().value();
        let w_self = w5.slice(0, 0, 2).unwrap();
        let d5 = dense(x, w_self, b).unwrap().relu().value();
        assert_eq!(own.data(), d5.data());
    }

    #[test]
    fn graph_conv_rejects_bad_index() {
        let g = Graph::new();
        let x = g.constant(t(&[1, 2, 1], vec![1.0, 2.0]));
        let w = g.constant(t(&[2, 1], vec![1.0, 1.0]));
        let b = g.constant(t(&[1], vec![0.0]));
        assert!(graph_conv(x, &[Some(5), None], 1, w, b).is_err());
    }

    #[test]
    fn seq_conv_kernel_one_is_per_box_dense() {
        let g = Graph::new();
        let x = g.constant(t(&[2, 3, 2], pseudo(12, 1)));
        let w = g.constant(t(&[2, 4], pseudo(8, 2)));
        let b = g.constant(t(&[4], pseudo(4, 3)));
        let s = seq_conv(x, 1, w, b).unwrap().value();
        let d = dense(x, w, b).unwrap().relu().value();
        assert_eq!(s.data(), d.data());
    }

    #[test]
    fn seq_conv_hand_kernel() {
        // width 1, kernel 3 with taps [1, 2, 3] applied to [1, 2, 3, 4], zero padded.
        let g = Graph::new();
        let x = g.constant(t(&[1, 4, 1], vec![1.0, 2.0, 3.0, 4.0]));
        let w = g.constant(t(&[3, 1], vec![1.0, 2.0, 3.0]));
        let b = g.constant(t(&[1], vec![0.0]));
        let s = seq_conv(x, 3, w, b).unwrap().value();
        assert_eq!(s.data(), [2.0 + 6.0, 1.0 + 4.0 + 9.0, 2.0 + 6.0 + 12.0, 3.0 + 8.0]);
    }

    #[test]
    fn seq_conv_of_constant_sequence_is_constant_inside() {
        let g = Graph::new();
        let x = g.constant(Tensor::full([1, 9, 2], 0.7));
        let w = g.constant(t(&[10, 3], pseudo(30, 9)));
        let b = g.constant(t(&[3], pseudo(3, 10)));
        let s = seq_conv(x, 5, w, b).unwrap().value();
        for pos in 3..7 {
            assert_eq!(s.data()[pos * 3..pos * 3 + 3], s.data()[2 * 3..2 * 3 + 3]);
        }
    }

    fn attention_params<'g>(g: &'g Graph, h: usize, ffn: usize, seed: u64) -> AttentionParams<'g> {
        let mut s = seed;
        let mut d = |a: usize, b: usize| {
            s += 2;
            (g.param(t(&[a, b], pseudo(a * b, s))), g.param(t(&[b], pseudo(b, s + 1))))
        };
        AttentionParams {
            q: d(h, h),
            k: d(h, h),
            v: d(h, h),
            o: d(h, h),
            ffn1: d(h, ffn),
            ffn2: d(ffn, h),
        }
    }

    #[test]
    fn singleton_attends_to_itself() {
        let g = Graph::new();
        let p = attention_params(&g, 4, 4, 1);
        let x = g.constant(t(&[1, 1, 4], pseudo(4, 1)));
        let out = self_attention(x, &[1.0], 2, &p).unwrap();
        assert_eq!(out.weights.value().data(), [1.0, 1.0]);
    }

    #[test]
    fn attention_rows_sum_to_one_over_real_keys() {
        let g = Graph::new();
        let p = attention_params(&g, 4, 4, 2);
        let x = g.constant(t(&[2, 3, 4], pseudo(24, 2)));
        let mask = [1.0, 1.0, 1.0, 1.0, 0.0, 0.0];
        let out = self_attention(x, &mask, 2, &p).unwrap();
        let w = out.weights.value();
        for (r, row) in w.data().chunks(3).enumerate() {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            if r >= 6 {
                assert_eq!(&row[1..], &[0.0, 0.0]);
            }
        }
        assert!(self_attention(x, &[1.0, 1.0, 1.0, 0.0, 0.0, 0.0], 2, &p).is_err());
    }

    #[test]
    fn attention_is_permutation_equivariant() {
        let g = Graph::new();
        let p = attention_params(&g, 4, 6, 3);
        let data = pseudo(5 * 4, 3);
        let perm = [3usize, 0, 4, 1, 2];
        let permuted: Vec<f64> = perm.iter().flat_map(|&r| data[r * 4..(r + 1) * 4].to_vec()).collect();
        let a = self_attention(g.constant(t(&[1, 5, 4], data)), &[1.0; 5], 2, &p).unwrap().output.value();
        let b = self_attention(g.constant(t(&[1, 5, 4], permuted)), &[1.0; 5], 2, &p).unwrap().output.value();
        for (i, &r) in perm.iter().enumerate() {
            for c in 0..4 {
                assert!((b.data()[i * 4 + c] - a.data()[r * 4 + c]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn dense_layer_passes_grad_check() {
        let r = grad_check(
            |_, v| weighted(dense(v[0], v[1], v[2])?.relu()),
            &[t(&[2, 3, 4], pseudo(24, 1)), t(&[4, 3], pseudo(12, 2)), t(&[3], pseudo(3, 3))],
            gc(),
        )
        .unwrap();
        assert!(r.passed, "{r:?}");
    }

    #[test]
    fn char_embed_passes_grad_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut chars = vec![PAD as u8; 2 * MAX_CHARS];
        for c in chars.iter_mut().take(12) {
            *c = rng.random_range(0..ALPHABET_SIZE as u8);
        }
        let r = grad_check(
            |_, v| weighted(char_embed(&chars, 3, v[0], v[1])?),
            &[t(&[3 * ALPHABET_SIZE, 3], pseudo(3 * ALPHABET_SIZE * 3, 5)), t(&[3], pseudo(3, 6))],
            gc(),
        )
        .unwrap();
        assert!(r.passed, "{r:?}");
    }

    #[test]
    fn graph_conv_passes_grad_check() {
        let neighbors = vec![None, None, Some(1), None, Some(0), None, Some(2), Some(0), Some(1), Some(0), None, None];
        let r = grad_check(
            |_, v| weighted(graph_conv(v[0], &neighbors, 4, v[1], v[2])?),
            &[t(&[1, 3, 2], pseudo(6, 1)), t(&[10, 3], pseudo(30, 2)), t(&[3], pseudo(3, 3))],
            gc(),
        )
        .unwrap();
        assert!(r.passed, "{r:?}");
    }

    #[test]
    fn seq_conv_passes_grad_check() {
        let r = grad_check(
            |_, v| weighted(seq_conv(v[0], 5, v[1], v[2])?),
            &[t(&[2, 4, 2], pseudo(16, 1)), t(&[10, 3], pseudo(30, 2)), t(&[3], pseudo(3, 3))],
            gc(),
        )
        .unwrap();
        assert!(r.passed, "{r:?}");
    }

    #[test]
    fn attention_passes_grad_check() {
        let (h, ffn) = (4, 6);
        let mut inputs = vec![t(&[2, 3, h], pseudo(2 * 3 * h, 1))];
        for (i, (a, b)) in [(h, h), (h, h), (h, h), (h, h), (h, ffn), (ffn, h)].iter().enumerate() {
            inputs.push(t(&[*a, *b], pseudo(a * b, 10 + i as u64)));
            inputs.push(t(&[*b], pseudo(*b, 20 + i as u64)));
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
                let out = self_attention(v[0], &mask, 2, &p)?.output;
                weighted(mask_rows(out, &Rc::new(mask.to_vec()))?)
            },
            &inputs,
            gc(),
        )
        .unwrap();
        assert!(r.passed, "{r:?}");
    }

    #[test]
    fn zero_output_layer_gives_one_half() {
        let cfg = small_cfg();
        let mut m = Model::init(cfg.clone(), 1).unwrap();
        for name in ["out.w", "out.b"] {
            m.get_mut(name).unwrap().data_mut().fill(0.0);
        }
        let batch = example_batch(&cfg);
        let g = Graph::new();
        let p = Bound::new(&g, &m);
        let probs = forward(&g, &p, &cfg, &batch, Mode::Eval).unwrap().value();
        assert!(probs.data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn forward_probabilities_are_in_open_unit_interval() {
        let cfg = small_cfg();
        let m = Model::init(cfg.clone(), 2).unwrap();
        let batch = example_batch(&cfg);
        let g = Graph::new();
        let p = Bound::new(&g, &m);
        let probs = forward(&g, &p, &cfg, &batch, Mode::Eval).unwrap();
        assert_eq!(probs.shape(), vec![2, 4, cfg.class_count]);
        assert!(probs.value().data().iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn eval_is_deterministic_and_train_mode_drops() {
        let cfg = ModelConfig {
            dropout_rate: 0.5,
            ..small_cfg()
        };
        let m = Model::init(cfg.clone(), 2).unwrap();
        let batch = example_batch(&cfg);
        let run = |mode| {
            let g = Graph::new();
            let p = Bound::new(&g, &m);
            forward(&g, &p, &cfg, &batch, mode).unwrap().value().data().to_vec()
        };
        assert_eq!(run(Mode::Eval), run(Mode::Eval));
        assert_eq!(run(Mode::Train { seed: 1 }), run(Mode::Train { seed: 1 }));
        assert_ne!(run(Mode::Eval), run(Mode::Train { seed: 1 }));
    }

    #[test]
    fn extra_padding_leaves_real_rows_unchanged() {
        let cfg = small_cfg();
        let m = Model::init(cfg.clone(), 4).unwrap();
        let p4 = crate::network::batch::tests::page(4);
        let p7 = crate::network::batch::tests::page(7);
        let a = Example::from_page(&p4, None, 1).unwrap();
        let long = Example::from_page(&p7, None, 1).unwrap();
        let run = |exs: &[&Example]| {
            let batch = pad_batch(exs, None, cfg.class_count).unwrap();
            let g = Graph::new();
            let p = Bound::new(&g, &m);
            forward(&g, &p, &cfg, &batch, Mode::Eval).unwrap().value().data()[..4 * cfg.class_count].to_vec()
        };
        assert_eq!(run(&[&a]), run(&[&a, &long]));
    }

    #[test]
    fn forward_is_consistent_under_box_permutation() {
        // Reordering the page's boxes must not change any per-box output,
        // since reading order and graph are rebuilt from geometry.
        let cfg = small_cfg();
        let m = Model::init(cfg.clone(), 6).unwrap();
        let base = crate::network::batch::tests::page(5);
        let mut shuffled = base.wordboxes.clone();
        shuffled.reverse();
        let q = crate::doc::Page::new(1.0, 1.0, shuffled).unwrap();
        let run = |page: &crate::doc::Page| {
            let ex = Example::from_page(page, None, 1).unwrap();
            let batch = pad_batch(&[&ex], None, cfg.class_count).unwrap();
            let g = Graph::new();
            let p = Bound::new(&g, &m);
            let probs = forward(&g, &p, &cfg, &batch, Mode::Eval).unwrap().value();
            ex.to_page_order(probs.data(), cfg.class_count)
        };
        let a = run(&base);
        let b = run(&q);
        let c = cfg.class_count;
        for i in 0..5 {
            assert_eq!(b[(4 - i) * c..(5 - i) * c], a[i * c..(i + 1) * c]);
        }
    }
}

use std::rc::Rc;

use proptest::prelude::*;

use super::*;
use crate::error::Result;

fn t(shape: &[usize], data: &[f64]) -> Tensor {
    Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
}

/// Weighted sum against fixed coefficients so every output element gets a
/// distinct upstream gradient.
fn weighted_sum<'g>(x: Var<'g>) -> Result<Var<'g>> {
    let n = x.value().len();
    let w: Vec<f64> = (0..n).map(|i| 0.3 + 0.17 * ((i * 7) % 11) as f64).collect();
    let w = x.graph().constant(Tensor::new(x.shape(), w)?);
    Ok(x.mul(w)?.sum())
}

fn check<F>(f: F, inputs: &[Tensor]) -> GradCheckReport
where
    F: for<'g> Fn(&'g Graph, &[Var<'g>]) -> Result<Var<'g>>,
{
    grad_check(f, inputs, GradCheckConfig::default()).unwrap()
}

#[test]
fn add_zero_is_identity() {
    let g = Graph::new();
    let x = g.param(t(&[2, 3], &[1., -2., 3.5, 0., 7., -1e-3]));
    let z = g.constant(Tensor::zeros([2, 3]));
    assert_eq!(x.add(z).unwrap().value().data(), x.value().data());
}

#[test]
fn softmax_of_constant_row_is_uniform() {
    let g = Graph::new();
    let x = g.constant(Tensor::full([2, 4], 3.7));
    let y = x.softmax(None).unwrap();
    assert!(y.value().data().iter().all(|&p| (p - 0.25).abs() < 1e-15));
}

#[test]
fn masked_softmax_zeroes_dropped_entries() {
    let g = Graph::new();
    let x = g.constant(t(&[1, 3], &[1.0, 50.0, 1.0]));
    let y = x.softmax(Some(&[true, false, true])).unwrap();
    assert_eq!(y.value().data(), &[0.5, 0.0, 0.5]);
    assert!(x.softmax(Some(&[false, false, false])).is_err());
}

#[test]
fn matmul_2x3_by_3x2() {
    let g = Graph::new();
    let a = g.constant(t(&[2, 3], &[1., 2., 3., 4., 5., 6.]));
    let b = g.constant(t(&[3, 2], &[7., 8., 9., 10., 11., 12.]));
    let c = a.matmul(b).unwrap();
    assert_eq!(c.shape(), vec![2, 2]);
    assert_eq!(c.value().data(), &[58., 64., 139., 154.]);
}

#[test]
fn shape_errors_name_both_shapes() {
    let g = Graph::new();
    let a = g.constant(Tensor::zeros([2, 3]));
    let b = g.constant(Tensor::zeros([2, 3]));
    let msg = a.matmul(b).unwrap_err().to_string();
    assert!(msg.contains("[2, 3]") && msg.contains("matmul"), "{msg}");
    let c = g.constant(Tensor::zeros([4]));
    assert!(a.add(c).is_err());
}

#[test]
fn sum_gradient_is_ones() {
    let g = Graph::new();
    let x = g.param(t(&[3], &[1., 2., 3.]));
    let grads = g.backward(x.sum()).unwrap();
    assert_eq!(grads.get(x).unwrap().data(), &[1., 1., 1.]);
}

#[test]
fn square_sum_gradient_is_twice_x() {
    let g = Graph::new();
    let data = [1.5, -2., 0.25, 4.];
    let x = g.param(t(&[2, 2], &data));
    let grads = g.backward(x.mul(x).unwrap().sum()).unwrap();
    let expected: Vec<f64> = data.iter().map(|v| 2. * v).collect();
    assert_eq!(grads.get(x).unwrap().data(), expected.as_slice());
}

#[test]
fn backward_rejects_non_scalar() {
    let g = Graph::new();
    let x = g.param(Tensor::zeros([2]));
    assert!(g.backward(x.relu()).is_err());
}

#[test]
fn constants_get_no_gradient() {
    let g = Graph::new();
    let x = g.param(t(&[2], &[1., 2.]));
    let c = g.constant(t(&[2], &[3., 4.]));
    let grads = g.backward(x.mul(c).unwrap().sum()).unwrap();
    assert!(grads.get(c).is_none());
    assert_eq!(grads.get(x).unwrap().data(), &[3., 4.]);
}

#[test]
fn grad_check_of_sum_passes_tightly() {
    let x = t(&[5], &[0.1, -3., 7., 2e3, 0.]);
    let cfg = GradCheckConfig {
        tol: 1e-8,
        ..Default::default()
    };
    let r = grad_check(|_, v| Ok(v[0].sum()), &[x], cfg).unwrap();
    assert!(r.passed, "{r:?}");
    assert_eq!(r.checked, 5);
}

#[test]
fn sigmoid_derivative_at_zero_is_a_quarter() {
    let g = Graph::new();
    let x = g.param(Tensor::zeros([3]));
    let grads = g.backward(x.sigmoid().sum()).unwrap();
    assert_eq!(grads.get(x).unwrap().data(), &[0.25; 3]);
    let r = check(|_, v| Ok(v[0].sigmoid().sum()), &[Tensor::zeros([3])]);
    assert!(r.passed, "{r:?}");
}

#[test]
fn injected_fault_is_caught() {
    let x = t(&[3], &[0.5, -1., 2.]);
    let cfg = GradCheckConfig {
        fault: 1e-2,
        ..Default::default()
    };
    let r = grad_check(|_, v| Ok(v[0].sigmoid().sum()), &[x], cfg).unwrap();
    assert!(!r.passed);
    assert!(r.max_rel_error > 5e-3);
}

#[test]
fn gather_backward_scatters_and_sums() {
    let g = Graph::new();
    let x = g.param(t(&[3, 2], &[1., 2., 3., 4., 5., 6.]));
    let y = x.gather(&[Some(2), None, Some(0), Some(2)]).unwrap();
    assert_eq!(y.value().data(), &[5., 6., 0., 0., 1., 2., 5., 6.]);
    let loss = weighted_sum(y).unwrap();
    let grads = g.backward(loss).unwrap();
    let gx = grads.get(x).unwrap();
    // Row 2 collects two copies, row 1 none.
    assert_eq!(&gx.data()[2..4], &[0., 0.]);
    assert!(x.gather(&[Some(3)]).is_err());
}

#[test]
fn random_three_layer_composition_matches_finite_differences() {
    let mut seed = 0x9e3779b97f4a7c15u64;
    let mut next = move || {
        seed ^= seed << 13;
        seed ^= seed >> 7;
        seed ^= seed << 17;
        (seed >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
    };
    let x = Tensor::new([4, 3], (0..12).map(|_| next()).collect()).unwrap();
    let w1 = Tensor::new([3, 5], (0..15).map(|_| next()).collect()).unwrap();
    let w2 = Tensor::new([5, 4], (0..20).map(|_| next()).collect()).unwrap();
    let w3 = Tensor::new([4, 1], (0..4).map(|_| next()).collect()).unwrap();
    let r = check(
        |_, v| {
            let h = v[0].matmul(v[1])?.sigmoid();
            let h = h.matmul(v[2])?.layer_norm(1e-5);
            Ok(h.matmul(v[3])?.sigmoid().ln().mean())
        },
        &[x, w1, w2, w3],
    );
    assert!(r.passed, "{r:?}");
}

#[test]
fn backward_is_bitwise_deterministic() {
    let run = || {
        let g = Graph::new();
        let x = g.param(t(&[2, 3], &[0.1, 0.7, -0.3, 1.1, -2.0, 0.4]));
        let w = g.param(t(&[3, 3], &[0.2, -0.5, 0.9, 0.3, 0.1, -0.7, 0.8, 0.6, -0.2]));
        let h = x.matmul(w).unwrap().softmax(None).unwrap().layer_norm(1e-5);
        let loss = weighted_sum(h.relu()).unwrap();
        let grads = g.backward(loss).unwrap();
        (grads.get(x).unwrap(), grads.get(w).unwrap())
    };
    let (a, b) = (run(), run());
    let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&a.0), bits(&b.0));
    assert_eq!(bits(&a.1), bits(&b.1));
}

#[test]
fn max_axis_and_unfold_values() {
    let g = Graph::new();
    let x = g.constant(t(&[1, 3, 2], &[1., 6., 5., 2., 3., 4.]));
    assert_eq!(x.max_axis(1).unwrap().value().data(), &[5., 6.]);
    let u = x.unfold(3).unwrap();
    assert_eq!(u.shape(), vec![1, 3, 6]);
    assert_eq!(&u.value().data()[..6], &[0., 0., 1., 6., 5., 2.]);
    assert_eq!(&u.value().data()[12..], &[5., 2., 3., 4., 0., 0.]);
}

#[test]
fn transpose_and_concat_values() {
    let g = Graph::new();
    let x = g.constant(t(&[2, 3], &[1., 2., 3., 4., 5., 6.]));
    assert_eq!(x.transpose(&[1, 0]).unwrap().value().data(), &[1., 4., 2., 5., 3., 6.]);
    let y = g.constant(t(&[2, 1], &[9., 8.]));
    let c = g.concat(&[x, y], 1).unwrap();
    assert_eq!(c.value().data(), &[1., 2., 3., 9., 4., 5., 6., 8.]);
    assert!(g.concat(&[x, y], 0).is_err());
}

/// Shapes with at most 32 elements.
fn small_shape() -> impl Strategy<Value = Vec<usize>> {
    prop::collection::vec(1usize..=4, 1..=3)
        .prop_filter("at most 32 elements", |s| s.iter().product::<usize>() <= 32)
}

fn tensor_in(lo: f64, hi: f64) -> impl Strategy<Value = Tensor> {
    small_shape().prop_flat_map(move |s| {
        let n: usize = s.iter().product();
        prop::collection::vec(lo..hi, n).prop_map(move |d| Tensor::new(s.clone(), d).unwrap())
    })
}

/// Values bounded away from zero, for ops with a kink there.
fn tensor_off_zero() -> impl Strategy<Value = Tensor> {
    tensor_in(0.05, 2.0).prop_flat_map(|x| {
        let n = x.len();
        prop::collection::vec(any::<bool>(), n).prop_map(move |signs| {
            let d = x
                .data()
                .iter()
                .zip(&signs)
                .map(|(v, s)| if *s { *v } else { -v })
                .collect();
            Tensor::new(x.shape().to_vec(), d).unwrap()
        })
    })
}

fn matmul_pair() -> impl Strategy<Value = (Tensor, Tensor, bool)> {
    (1usize..=2, 1usize..=4, 1usize..=4, 1usize..=4, any::<bool>()).prop_flat_map(
        |(b, m, k, n, shared)| {
            let a_shape = vec![b, m, k];
            let b_shape = if shared { vec![k, n] } else { vec![b, k, n] };
            let na = b * m * k;
            let nb: usize = b_shape.iter().product();
            (
                prop::collection::vec(-2.0..2.0f64, na),
                prop::collection::vec(-2.0..2.0f64, nb),
            )
                .prop_map(move |(da, db)| {
                    (
                        Tensor::new(a_shape.clone(), da).unwrap(),
                        Tensor::new(b_shape.clone(), db).unwrap(),
                        shared,
                    )
                })
        },
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn prop_add_mul_broadcast(x in tensor_in(-2.0, 2.0), take in 0usize..3) {
        let rank = x.shape().len();
        let suffix = x.shape()[rank - take.min(rank)..].to_vec();
        let n: usize = suffix.iter().product();
        let y = Tensor::new(suffix, (0..n).map(|i| 0.5 - 0.3 * i as f64).collect()).unwrap();
        let r = check(|_, v| weighted_sum(v[0].add(v[1])?.mul(v[1])?.mul(v[0])?), &[x, y]);
        prop_assert!(r.passed, "{r:?}");
    }

    #[test]
    fn prop_scale_and_add_scalar(x in tensor_in(-2.0, 2.0), f in -3.0..3.0f64) {
        let r = check(move |_, v| weighted_sum(v[0].scale(f).add_scalar(f)), &[x]);
        prop_assert!(r.passed, "{r:?}");
    }

    #[test]
    fn prop_matmul((a, b, _shared) in matmul_pair()) {
        let r = check(|_, v| weighted_sum(v[0].matmul(v[1])?), &[a, b]);
        prop_assert!(r.passed, "{r:?}");
    }

    #[test]
    fn prop_concat_slice(x in tensor_in(-2.0, 2.0), axis_pick in 0usize..3) {
        let axis = axis_pick % x.shape().len();
        let y = Tensor::full(x.shape().to_vec(), 0.7);
        let len = x.shape()[axis];
        let r = check(move |g, v| {
            let c = g.concat(&[v[0], v[1], v[0]], axis)?;
            weighted_sum(c.slice(axis, len / 2, len + 1)?)
        }, &[x, y]);
        prop_assert!(r.passed, "{r:?}");
    }

    #[test]
    fn prop_gather(x in tensor_in(-2.0, 2.0), picks in prop::collection::vec(prop::option::of(0usize..8), 1..6)) {
        let rows = x.shape()[0];
        let index: Vec<Option<usize>> = picks.iter().map(|p| p.map(|r| r % rows)).collect();
        let r = check(|_, v| weighted_sum(v[0].gather(&index)?), &[x]);
        prop_assert!(r.passed, "{r:?}");
    }

    #[test]
    fn prop_gather_scatter_preserves_total(x in tensor_in(-2.0, 2.0), picks in prop::collection::vec(prop::option::of(0usize..8), 1..6)) {
        let rows = x.shape()[0];
        let index: Vec<Option<usize>> = picks.iter().map(|p| p.map(|r| r % rows)).collect();
        let g = Graph::new();
        let xv = g.param(x);
        let y = xv.gather(&index).unwrap();
        let upstream: Vec<f64> = (0..y.value().len()).map(|i| 1.0 + i as f64).collect();
        let up = g.constant(Tensor::new(y.shape(), upstream.clone()).unwrap());
        let grads = g.backward(y.mul(up).unwrap().sum()).unwrap();
        let width = y.value().len() / index.len();
        let incoming: f64 = upstream
            .chunks(width)
            .zip(&index)
            .filter(|(_, i)| i.is_some())
            .map(|(c, _)| c.iter().sum::<f64>())
            .sum();
        let scattered: f64 = grads.get_or_zeros(xv).data().iter().sum();
        prop_assert!((incoming - scattered).abs() < 1e-9);
    }

    #[test]
    fn prop_reshape_transpose(x in tensor_in(-2.0, 2.0), rot in 0usize..3) {
        let rank = x.shape().len();
        let perm: Vec<usize> = (0..rank).map(|i| (i + rot) % rank).collect();
        let n = x.len();
        let r = check(|_, v| weighted_sum(v[0].transpose(&perm)?.reshape(&[n])?), &[x]);
        prop_assert!(r.passed, "{r:?}");
    }

    #[test]
    fn prop_relu_clamp(x in tensor_off_zero()) {
        let r = check(|_, v| weighted_sum(v[0].relu().add(v[0].clamp(-1.0, 1.0).scale(0.5))?), &[x]);
        prop_assert!(r.passed, "{r:?}");
    }

    #[test]
    fn prop_sigmoid(x in tensor_in(-6.0, 6.0)) {
        let r = check(|_, v| weighted_sum(v[0].sigmoid()), &[x]);
        prop_assert!(r.passed, "{r:?}");
    }

    #[test]
    fn prop_ln_powf(x in tensor_in(0.2, 3.0), p in -1.5..2.5f64) {
        let r = check(move |_, v| weighted_sum(v[0].ln().add(v[0].powf(p))?), &[x]);
        prop_assert!(r.passed, "{r:?}");
    }

    #[test]
    fn prop_softmax(x in tensor_in(-3.0, 3.0), mask_seed in any::<u64>()) {
        let n = *x.shape().last().unwrap();
        let keep: Vec<bool> = (0..x.len())
            .map(|i| i % n == 0 || (mask_seed >> (i % 64)) & 1 == 1)
            .collect();
        let r = check(|_, v| weighted_sum(v[0].softmax(Some(&keep))?), &[x]);
        prop_assert!(r.passed, "{r:?}");
    }

    #[test]
    fn prop_layer_norm(x in tensor_in(-3.0, 3.0)) {
        let r = check(|_, v| weighted_sum(v[0].layer_norm(1e-5)), &[x]);
        prop_assert!(r.passed, "{r:?}");
    }

    #[test]
    fn prop_max_axis(x in tensor_in(-2.0, 2.0), axis_pick in 0usize..3) {
        // Replace values by their ranks so every gap dwarfs the probe step.
        let mut order: Vec<usize> = (0..x.len()).collect();
        order.sort_by(|&a, &b| x.data()[a].total_cmp(&x.data()[b]).then(a.cmp(&b)));
        let mut d = vec![0.0; x.len()];
        for (rank, &i) in order.iter().enumerate() {
            d[i] = 0.1 * rank as f64 - 1.0;
        }
        let x = Tensor::new(x.shape().to_vec(), d).unwrap();
        let axis = axis_pick % x.shape().len();
        let r = check(|_, v| weighted_sum(v[0].max_axis(axis)?), &[x]);
        prop_assert!(r.passed, "{r:?}");
    }

    #[test]
    fn prop_sum_mean(x in tensor_in(-2.0, 2.0)) {
        let r = check(|_, v| v[0].sum().add(v[0].mul(v[0])?.mean()), &[x]);
        prop_assert!(r.passed, "{r:?}");
    }

    #[test]
    fn prop_unfold(b in 1usize..=2, l in 1usize..=4, c in 1usize..=3, k in prop::sample::select(vec![1usize, 2, 3, 5]), seed in any::<u64>()) {
        let n = b * l * c;
        let d: Vec<f64> = (0..n).map(|i| ((seed.wrapping_add(i as u64 * 2654435761)) % 1000) as f64 / 500.0 - 1.0).collect();
        let x = Tensor::new([b, l, c], d).unwrap();
        let r = check(|_, v| weighted_sum(v[0].unfold(k)?), &[x]);
        prop_assert!(r.passed, "{r:?}");
    }

    #[test]
    fn prop_scale_rows(x in tensor_in(-2.0, 2.0)) {
        let width = *x.shape().last().unwrap();
        let rows = x.len() / width;
        let factors = Rc::new((0..rows).map(|i| if i % 3 == 0 { 0.0 } else { 1.0 + i as f64 }).collect::<Vec<_>>());
        let r = check(|_, v| weighted_sum(v[0].scale_rows(Rc::clone(&factors))?), &[x]);
        prop_assert!(r.passed, "{r:?}");
    }
}

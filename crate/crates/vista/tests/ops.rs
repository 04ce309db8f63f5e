mod common;

use cdqag_core::rng::SplitMix64;
use cdqag_vista::nn::{ffn, mha, Init};
use cdqag_vista::ops::*;
use cdqag_vista::{Error, Tensor};
use common::{inner, random};
use proptest::prelude::*;

#[test]
fn matmul_identity_and_transpose_rule() {
    let mut rng = SplitMix64::new(1);
    let x = random(&mut rng, &[4, 4], 1.0);
    let mut eye = Tensor::zeros(&[4, 4]);
    for i in 0..4 {
        eye.data_mut()[i * 5] = 1.0;
    }
    assert_eq!(matmul(&eye, &x).unwrap(), x);

    let a = random(&mut rng, &[5, 7], 1.0);
    let b = random(&mut rng, &[7, 3], 1.0);
    let lhs = matmul(&a, &b).unwrap().transpose().unwrap();
    let rhs = matmul(&b.transpose().unwrap(), &a.transpose().unwrap()).unwrap();
    assert!(lhs.max_abs_diff(&rhs) < 1e-14);
}

#[test]
fn deconv_is_adjoint_of_strided_conv() {
    let mut rng = SplitMix64::new(2);
    for _ in 0..20 {
        let (c_in, c_out, h, w) = (
            1 + rng.below(4) as usize,
            1 + rng.below(4) as usize,
            1 + rng.below(5) as usize,
            1 + rng.below(5) as usize,
        );
        let kernel = random(&mut rng, &[c_in, c_out, 2, 2], 1.0);
        let x = random(&mut rng, &[c_in, h, w], 1.0);
        let z = random(&mut rng, &[c_out, 2 * h, 2 * w], 1.0);
        let up = deconv2d(&x, &kernel, None, 2).unwrap();
        assert_eq!(up.shape(), &[c_out, 2 * h, 2 * w]);
        let down = conv2d(&z, &kernel, None, 2, 0).unwrap();
        assert_eq!(down.shape(), x.shape());
        let (l, r) = (inner(&up, &z), inner(&x, &down));
        assert!((l - r).abs() < 1e-12 * l.abs().max(1.0), "{l} vs {r}");
    }
}

#[test]
fn bilinear_adjoint_matches_forward() {
    let mut rng = SplitMix64::new(3);
    for factor in 1..5 {
        let x = random(&mut rng, &[2, 3, 5], 1.0);
        let y = random(&mut rng, &[2, 3 * factor, 5 * factor], 1.0);
        let l = inner(&bilinear_upsample(&x, factor).unwrap(), &y);
        let r = inner(&x, &bilinear_upsample_adjoint(&y, factor).unwrap());
        assert!((l - r).abs() < 1e-12, "factor {factor}: {l} vs {r}");
    }
}

#[test]
fn softmax_shift_invariance() {
    let mut rng = SplitMix64::new(4);
    for axis in 0..3 {
        let x = random(&mut rng, &[3, 4, 5], 5.0);
        let shifted = x.map("shift", |v| v + 123.456).unwrap();
        let a = softmax(&x, axis).unwrap();
        assert!(a.max_abs_diff(&softmax(&shifted, axis).unwrap()) < 1e-12);
    }
    let big = Tensor::vector(vec![1000.0, 999.0]).unwrap();
    let s = softmax(&big, 0).unwrap();
    assert!((s.data()[0] - sigmoid_scalar(1.0)).abs() < 1e-15);
}

#[test]
fn sigmoid_range_and_saturation() {
    let x = Tensor::vector(vec![-800.0, -3.0, 0.0, 3.0, 800.0]).unwrap();
    let s = sigmoid(&x).unwrap();
    assert_eq!(s.data()[2], 0.5);
    assert!(s.data().iter().all(|v| (0.0..=1.0).contains(v)));
    assert!((s.data()[1] + s.data()[3] - 1.0).abs() < 1e-15);
}

/// Straight-line scaled dot-product attention used as the reference.
fn attention_oracle(q: &[Vec<f64>], k: &[Vec<f64>], v: &[Vec<f64>], heads: usize) -> Vec<Vec<f64>> {
    let d = q[0].len() / heads;
    let mut out = vec![vec![0.0; q[0].len()]; q.len()];
    for h in 0..heads {
        for (i, qi) in q.iter().enumerate() {
            let s: Vec<f64> = k
                .iter()
                .map(|kj| {
                    (h * d..(h + 1) * d).map(|t| qi[t] * kj[t]).sum::<f64>() / (d as f64).sqrt()
                })
                .collect();
            let m = s.iter().cloned().fold(f64::MIN, f64::max);
            let z: f64 = s.iter().map(|x| (x - m).exp()).sum();
            for (j, vj) in v.iter().enumerate() {
                for t in h * d..(h + 1) * d {
                    out[i][t] += (s[j] - m).exp() / z * vj[t];
                }
            }
        }
    }
    out
}

fn rows(t: &Tensor) -> Vec<Vec<f64>> {
    (0..t.shape()[0]).map(|i| t.row(i).to_vec()).collect()
}

#[test]
fn mha_matches_brute_force_oracle() {
    let mut rng = SplitMix64::new(5);
    let mut init = Init::new(6);
    for _ in 0..10 {
        let p = init.mha(8, 2);
        let q = random(&mut rng, &[4, 8], 1.0);
        let kv = random(&mut rng, &[4, 8], 1.0);
        let (out, attn) = mha(&q, &kv, &kv, &p).unwrap();
        let qp = p.q.forward(&q).unwrap();
        let kp = p.k.forward(&kv).unwrap();
        let vp = p.v.forward(&kv).unwrap();
        let mixed = attention_oracle(&rows(&qp), &rows(&kp), &rows(&vp), 2);
        let mixed = Tensor::new(vec![4, 8], mixed.concat()).unwrap();
        let expected = p.out.forward(&mixed).unwrap();
        assert!(out.max_abs_diff(&expected) < 1e-10);
        assert!(attn.max_row_error() < 1e-12);
        assert!(attn.min_weight() >= 0.0);
    }
}

#[test]
fn ffn_matches_composed_matmuls() {
    let mut rng = SplitMix64::new(7);
    let p = Init::new(8).ffn(6);
    let x = random(&mut rng, &[5, 6], 2.0);
    let hidden = matmul(&x, &p.hidden.weight)
        .unwrap()
        .add_row(&p.hidden.bias)
        .unwrap();
    assert_eq!(hidden.shape(), &[5, 24]);
    let hidden = relu(&hidden).unwrap();
    assert!(hidden.data().iter().all(|&v| v >= 0.0));
    let expected = matmul(&hidden, &p.out.weight)
        .unwrap()
        .add_row(&p.out.bias)
        .unwrap();
    assert_eq!(ffn(&x, &p).unwrap(), expected);
}

#[test]
fn ops_are_bit_deterministic() {
    let mut rng = SplitMix64::new(9);
    let x = random(&mut rng, &[3, 8, 8], 1.0);
    let w = random(&mut rng, &[4, 3, 3, 3], 1.0);
    let a = conv2d(&x, &w, None, 2, 1).unwrap();
    let b = conv2d(&x.clone(), &w.clone(), None, 2, 1).unwrap();
    assert_eq!(a.data(), b.data());
}

proptest! {
    #[test]
    fn matmul_shape_algebra(m in 1usize..6, k in 1usize..6, k2 in 1usize..6, n in 1usize..6) {
        let a = Tensor::zeros(&[m, k]);
        let b = Tensor::zeros(&[k2, n]);
        match matmul(&a, &b) {
            Ok(c) => { prop_assert_eq!(k, k2); prop_assert_eq!(c.shape(), &[m, n]); }
            Err(Error::ShapeMismatch { .. }) => prop_assert_ne!(k, k2),
            Err(e) => prop_assert!(false, "unexpected error {e}"),
        }
    }

    #[test]
    fn conv_shape_algebra(
        c_in in 1usize..4, c_w in 1usize..4, h in 1usize..9, w in 1usize..9,
        k in prop::sample::select(vec![1usize, 3, 5]), stride in 1usize..4,
    ) {
        let x = Tensor::zeros(&[c_in, h, w]);
        let kernel = Tensor::zeros(&[2, c_w, k, k]);
        let pad = k / 2;
        match conv2d(&x, &kernel, None, stride, pad) {
            Ok(y) => {
                prop_assert_eq!(c_in, c_w);
                let ho = (h + 2 * pad - k) / stride + 1;
                let wo = (w + 2 * pad - k) / stride + 1;
                prop_assert_eq!(y.shape(), &[2, ho, wo]);
            }
            Err(Error::ShapeMismatch { .. }) => prop_assert!(c_in != c_w),
            Err(e) => prop_assert!(false, "unexpected error {e}"),
        }
    }

    #[test]
    fn elementwise_shape_algebra(a in prop::collection::vec(1usize..4, 1..4), b in prop::collection::vec(1usize..4, 1..4)) {
        let x = Tensor::zeros(&a);
        let y = Tensor::zeros(&b);
        match x.add(&y) {
            Ok(z) => prop_assert_eq!(z.shape(), &a[..]),
            Err(Error::ShapeMismatch { .. }) => prop_assert_ne!(a, b),
            Err(e) => prop_assert!(false, "unexpected error {e}"),
        }
    }
}

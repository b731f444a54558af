mod common;

use pcnprobe_core::numerics::ops::*;
use pcnprobe_core::numerics::{
    gemm, grad_check, FnOp, GradCheckConfig, OptimizerConfig, OptimizerState, RngStream, Tensor,
};
use proptest::prelude::*;

fn vec_strategy(len: usize) -> impl Strategy<Value = Vec<f32>> {
    proptest::collection::vec(-30.0f32..30.0, len)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn softmax_sums_to_one_and_argmax_is_shift_invariant(z in vec_strategy(10), c in -50.0f32..50.0) {
        let t = Tensor::new(&[1, 10], z.clone()).unwrap();
        let p = softmax(&t).unwrap();
        let s: f64 = p.data().iter().map(|&v| v as f64).sum();
        prop_assert!((s - 1.0).abs() < 1e-5);
        let shifted = softmax(&t.map(|v| v + c)).unwrap();
        let argmax = |x: &[f32]| {
            let mut b = 0;
            for i in 1..x.len() { if x[i] > x[b] { b = i; } }
            b
        };
        let mut sorted = z.clone();
        sorted.sort_by(|a, b| b.total_cmp(a));
        // an f32 shift can merge logits closer than its rounding step
        prop_assume!(sorted[0] - sorted[1] > 1e-3);
        prop_assert_eq!(argmax(p.data()), argmax(&z));
        prop_assert_eq!(argmax(shifted.data()), argmax(&z));
    }

    #[test]
    fn log_softmax_matches_logsumexp_identity(z in proptest::collection::vec(-1e3f32..1e3, 10)) {
        let t = Tensor::new(&[1, 10], z.clone()).unwrap();
        let l = log_softmax(&t).unwrap();
        let zd: Vec<f64> = z.iter().map(|&v| v as f64).collect();
        let m = zd.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + zd.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        for (k, &v) in l.data().iter().enumerate() {
            prop_assert!(v.is_finite());
            prop_assert!((v as f64 - (zd[k] - lse)).abs() < 1e-5 * (1.0 + (zd[k] - lse).abs()));
        }
    }

    #[test]
    fn maxpool_routes_one_unit_per_window(x in vec_strategy(2 * 3 * 4 * 6)) {
        let t = Tensor::new(&[2, 3, 4, 6], x).unwrap();
        let (out, arg) = maxpool2_forward(&t).unwrap();
        let g = maxpool2_backward(t.shape(), &arg, &Tensor::full(out.shape(), 1.0f32)).unwrap();
        for p in 0..6 {
            for wy in 0..2 {
                for wx in 0..3 {
                    let mut sum = 0.0;
                    let mut nonzero = 0;
                    for dy in 0..2 {
                        for dx in 0..2 {
                            let v = g.data()[p * 24 + (2 * wy + dy) * 6 + 2 * wx + dx];
                            sum += v;
                            nonzero += (v != 0.0) as usize;
                        }
                    }
                    prop_assert_eq!(sum, 1.0);
                    prop_assert_eq!(nonzero, 1);
                }
            }
        }
    }

    #[test]
    fn conv_matches_direct_summation(seed in any::<u64>()) {
        let mut rng = RngStream::new(seed);
        let x: Tensor<f32> = rng.normal_tensor(&[2, 3, 8, 8], 1.0);
        let k: Tensor<f32> = rng.normal_tensor(&[4, 3, 3, 3], 0.5);
        let b: Tensor<f32> = rng.normal_tensor(&[4], 0.5);
        let y = conv2d_forward(&x, &k, &b).unwrap();
        let want = common::conv(&common::to_f64(&x), 2, 3, 8, 8, &common::to_f64(&k), &common::to_f64(&b), 4);
        for (a, w) in y.data().iter().zip(&want) {
            prop_assert!((*a as f64 - w).abs() < 1e-5);
        }
    }

    #[test]
    fn gemm_matches_triple_loop(m in 1usize..7, n in 1usize..7, k in 1usize..7, ta: bool, tb: bool, seed in any::<u64>()) {
        let mut rng = RngStream::new(seed);
        let a: Tensor<f64> = rng.normal_tensor(&[m * k], 1.0);
        let b: Tensor<f64> = rng.normal_tensor(&[k * n], 1.0);
        let mut c = vec![0.5; m * n];
        gemm(ta, tb, m, n, k, 2.0, a.data(), b.data(), 1.0, &mut c);
        for i in 0..m {
            for j in 0..n {
                let s: f64 = (0..k).map(|q| {
                    let av = if ta { a.data()[q * m + i] } else { a.data()[i * k + q] };
                    let bv = if tb { b.data()[j * k + q] } else { b.data()[q * n + j] };
                    av * bv
                }).sum();
                prop_assert!((c[i * n + j] - (0.5 + 2.0 * s)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn optimizers_leave_params_on_zero_gradient(v in -5.0f64..5.0) {
        for cfg in [OptimizerConfig::adamw(1e-3, 0.0), OptimizerConfig::sgd_momentum(0.05, 0.5)] {
            let mut st = OptimizerState::<f64>::new(cfg);
            let mut p = Tensor::new(&[1], vec![v]).unwrap();
            let z = Tensor::zeros(&[1]);
            st.step(&mut [&mut p], &[&z]).unwrap();
            st.step(&mut [&mut p], &[&z]).unwrap();
            prop_assert_eq!(p.data()[0], v);
            prop_assert_eq!(st.step_count(), 2);
        }
    }
}

#[test]
fn conv_zero_kernel_and_identity_kernel() {
    let x = Tensor::<f32>::full(&[1, 1, 3, 3], 1.0);
    let y = conv2d_forward(&x, &Tensor::zeros(&[1, 1, 3, 3]), &Tensor::full(&[1], 0.5)).unwrap();
    assert!(y.data().iter().all(|&v| v == 0.5));

    let mut rng = RngStream::new(3);
    let x: Tensor<f32> = rng.normal_tensor(&[2, 1, 5, 4], 1.0);
    let mut k = Tensor::zeros(&[1, 1, 3, 3]);
    k.data_mut()[4] = 1.0;
    assert_eq!(conv2d_forward(&x, &k, &Tensor::zeros(&[1])).unwrap(), x);
}

#[test]
fn conv_rejects_channel_mismatch() {
    let x = Tensor::<f32>::zeros(&[1, 2, 4, 4]);
    assert!(conv2d_forward(&x, &Tensor::zeros(&[1, 3, 3, 3]), &Tensor::zeros(&[1])).is_err());
}

#[test]
fn gelu_derivative_at_zero() {
    let op = FnOp {
        value: |x: &Tensor<f64>| Ok(gelu_forward(x).data()[0]),
        gradient: |x: &Tensor<f64>| gelu_backward(x, &Tensor::full(&[1], 1.0)),
    };
    let x = Tensor::zeros(&[1]);
    assert_eq!(gelu_derivative(0.0f64), 0.5);
    let mut rng = RngStream::new(0);
    let r = grad_check(&op, &x, &mut rng, GradCheckConfig::for_precision::<f64>()).unwrap();
    assert!(r.max_rel_error < 1e-4);
}

#[test]
fn rng_replays_from_seed_and_position() {
    let mut a = RngStream::new(42);
    let _ = a.normal();
    let pos = a.position();
    let first: Vec<f64> = (0..8).map(|_| a.normal()).collect();
    let mut b = RngStream::new(42);
    b.set_position(pos);
    let again: Vec<f64> = (0..8).map(|_| b.normal()).collect();
    assert_eq!(first, again);
}

#[test]
fn adamw_closed_form_one_step() {
    let mut st = OptimizerState::<f32>::new(OptimizerConfig::adamw(1e-4, 0.0));
    let mut p = Tensor::new(&[1], vec![1.0f32]).unwrap();
    st.step(&mut [&mut p], &[&Tensor::new(&[1], vec![1.0]).unwrap()]).unwrap();
    assert!((p.data()[0] - (1.0 - 1e-4)).abs() < 1e-7);
}
